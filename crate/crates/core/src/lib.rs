pub mod assembly;
pub mod check;
pub mod config;
pub mod derham;
pub mod driver;
pub mod error;
pub mod integrators;
pub mod linsolve;
pub mod mapping;
pub mod particles;
pub mod quadrature;
pub mod sparse;
pub mod splines;

pub use error::{Error, Result};
