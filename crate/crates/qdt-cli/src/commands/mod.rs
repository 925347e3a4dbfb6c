pub mod ablate;
pub mod eval;
pub mod gen_data;
pub mod generalize;
pub mod report;
pub mod train;
pub mod verify;
