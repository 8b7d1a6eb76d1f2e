pub mod driver;
pub mod error;
pub mod material;
pub mod microstructure;
pub mod spectral;
pub mod tensors;
pub mod verify;

pub use error::{Error, ErrorKind, Result};
pub use material::{Integrator, MaterialParams, PointState, TangentOperator, UpdateResult};
pub use tensors::{SymTensor2, SymTensor4};
