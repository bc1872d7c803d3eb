//! Command-line pipeline and HTTP review service for batch OCR correction.

pub mod app;
pub mod review;
pub mod server;

pub use app::{run, Cli};
