//! Channel shortening for ISI channels: MILB-optimal shortener design,
//! information-rate bounds, a reduced-state soft-output Viterbi equalizer
//! and a Monte Carlo harness around them.

pub mod channel;
pub mod design;
pub mod error;
pub mod exec;
pub mod modulation;
pub mod rates;
pub mod sim;
pub mod sove;
pub mod spectral;

pub use error::{Error, Result};
pub use exec::Exec;
pub use spectral::{FrequencyGrid, Spectrum, TapVector, C64};
