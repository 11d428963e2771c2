//! Densely connected convolutional sequence-to-sequence translation.

pub mod autodiff;
pub mod bleu;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod model;
pub mod runconfig;
pub mod search;
pub mod train;

pub use error::{Error, Result};
