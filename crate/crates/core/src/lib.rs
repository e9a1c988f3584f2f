//! Iterative STFT phase retrieval.
//!
//! The crate provides a least-squares STFT with the magnitude and consistency
//! projections, a family of offline projection algorithms (Griffin-Lim, fast
//! Griffin-Lim, accelerated Griffin-Lim, RAAR and the difference map) and a
//! streaming engine that runs any of them frame by frame with optional
//! look-ahead.
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`). The `*64`
//! aliases at the crate root cover the common double-precision case.

pub mod algorithms;
pub mod error;
pub mod metrics;
pub mod online;
pub mod scalar;
pub mod signal_io;
pub mod stft;
pub mod synth;

pub use algorithms::{run_offline, Algorithm, AlgorithmSpec, IterState, OfflineResult, Projector};
pub use error::{Error, Result};
pub use metrics::{magnitude_snr_db, spectral_convergence, MetricReport};
pub use online::{stream_reconstruct, Commit, Flushed, OnlineState};
pub use scalar::Real;
pub use stft::{MagnitudeSpectrogram, Spectrogram, Stft, StftConfig, WindowKind};

pub use num_complex::Complex;

pub type StftConfig64 = StftConfig<f64>;
pub type Stft64 = Stft<f64>;
pub type Spectrogram64 = Spectrogram<f64>;
pub type MagnitudeSpectrogram64 = MagnitudeSpectrogram<f64>;
pub type AlgorithmSpec64 = AlgorithmSpec<f64>;
pub type OnlineState64 = OnlineState<f64>;

pub type StftConfig32 = StftConfig<f32>;
pub type Stft32 = Stft<f32>;
pub type Spectrogram32 = Spectrogram<f32>;
pub type MagnitudeSpectrogram32 = MagnitudeSpectrogram<f32>;
