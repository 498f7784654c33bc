pub mod error;
pub mod field;
pub mod filter;
pub mod fock;
pub mod gaussian;
pub mod grid;
pub mod herald;
pub mod opo;

pub use error::{Error, Result};
