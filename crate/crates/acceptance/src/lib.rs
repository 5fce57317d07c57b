//! Acceptance criteria live under tests/.
