pub mod attention;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod image_io;
pub mod metrics;
pub mod params;
pub mod pipeline;
pub mod selftest;
pub mod ssm;
pub mod tensor;
pub mod transform;

pub use error::{BitstreamError, Error, Result, WeightsError};
pub use tensor::Tensor;
