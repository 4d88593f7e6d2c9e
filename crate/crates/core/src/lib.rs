pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod evaldiag;
pub mod model;
pub mod rng;
pub mod synth;
pub mod uda;

pub use autodiff::{Graph, Real, Tensor, Var};
pub use error::{Error, Result};
