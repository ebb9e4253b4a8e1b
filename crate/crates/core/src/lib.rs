pub mod fields;
pub mod fit;
pub mod grid;
pub mod solver;
pub mod cell;
pub mod interface;
pub mod homogen;
#[cfg(feature = "cli")]
pub mod cli;
