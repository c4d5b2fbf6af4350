pub mod app;
pub mod autograd;
pub mod codec;
pub mod edit;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod novel_view;
pub mod optim;
pub mod pipeline;
pub mod position;
pub mod scene;
pub mod service;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
