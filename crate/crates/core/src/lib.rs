pub mod classify;
pub mod cli;
pub mod error;
pub mod estim;
pub mod family;
pub mod io;
pub mod metrics;
pub mod sal;
pub mod select;
pub mod special;

pub use error::{PsalmError, Result};
