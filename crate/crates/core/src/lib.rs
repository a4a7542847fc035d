//! Streaming shifting seasonal matrix factorization.
//!
//! A stream of sparse `(m x n)` count matrices is factorized online into
//! nonnegative community factors `U`, `V` and a growable bank of seasonal
//! regimes. New regimes are created when a minimum-description-length
//! comparison says the latest season is better explained by a fresh seasonal
//! pattern than by any existing one. The fitted state forecasts future frames.

pub mod cache;
pub mod checkpoint;
pub mod engine;
pub mod error;
pub mod factors;
pub mod forecast;
pub mod ingest;
pub mod init;
pub mod mdl;
pub mod stream;
pub mod synth;

pub use engine::{run_stream, Engine, EngineConfig, IndexCost, RegimeRecord, RegimeTrace, SelectionCadence};
pub use error::{Error, Result};
pub use factors::{FactorState, RegimeId, SeasonalTensor};
pub use stream::{MatrixFrame, SeasonQueue, StreamConfig};
