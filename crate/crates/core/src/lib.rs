pub mod bev;
pub mod bvl;
pub mod error;
pub mod eval;
pub mod gsdl;
pub mod harness;
pub mod reparam;
pub mod tensor;
pub mod view;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
