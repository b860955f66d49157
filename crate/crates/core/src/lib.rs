pub mod affine_policy;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod network;
pub mod opf;
pub mod robust_dispatch;
pub mod solver;
pub mod thermal;
pub mod uncertainty;

pub use error::{Error, Result};
