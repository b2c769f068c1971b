//! Hybrid spatio-temporal graph convolutional network for travel-time
//! forecasting, together with everything needed to exercise it end to
//! end on synthetic data: a dense-tensor reverse-mode autodiff engine, a
//! spectral graph-convolution toolkit, a feature pipeline that fuses
//! observed travel times with planned-route volume counts, a mesoscopic
//! traffic simulator, a training loop, and an evaluation suite with
//! congestion-aware metric slicing.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod grid;
pub mod io;
pub mod model;
pub mod navlog;
pub mod network;
pub mod optim;
pub mod seed;
pub mod sim;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
