pub mod ablation;
pub mod attention;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod init;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod param;
pub mod settings;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
