fn main() {
    std::process::exit(cnnselect_cli::run(std::env::args_os()));
}
