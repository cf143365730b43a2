pub mod bench;
pub mod error;
pub mod features;
pub mod fft;
pub mod imaging;
pub mod kv;
pub mod logpolar;
pub mod optimizer;
pub mod peaks;
pub mod rsi;
pub mod synth;
pub mod tdd;
pub mod tracker;

pub use error::{Error, Result};
