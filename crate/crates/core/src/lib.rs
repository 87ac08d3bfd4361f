//! Retrieval-augmented, iteratively refined prompting for time-series forecasting.
//!
//! A forecaster model is prompted with recent history, optionally augmented with the
//! most correlated historical windows. A refiner model reviews each batch of forecasts
//! and their errors, and a synthesis step turns its learnings into the next set of
//! forecasting instructions. [`session::run_session`] runs that loop; [`bench`] runs
//! grids of sessions and writes reports.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases below name
//! the common instantiations.

pub mod backend;
pub mod bench;
pub mod metrics;
pub mod prompt;
pub mod retrieval;
pub mod scalar;
pub mod scaler;
pub mod series;
pub mod session;

pub use backend::{AgentTag, Backend, BackendError, Backends, CompletionReply, CompletionRequest};
pub use metrics::{mae, median};
pub use retrieval::{pearson, AnalogSegment, HistDb};
pub use scalar::Scalar;
pub use scaler::Scaler;
pub use series::{ScaledSplit, SeriesError, TimeSeries, WindowPair};
pub use session::{run_session, SessionConfig, SessionContext, SessionResult};

pub type TimeSeriesF32 = TimeSeries<f32>;
pub type TimeSeriesF64 = TimeSeries<f64>;
pub type HistDbF32 = HistDb<f32>;
pub type HistDbF64 = HistDb<f64>;
pub type ScalerF32 = Scaler<f32>;
pub type ScalerF64 = Scaler<f64>;
pub type WindowPairF32 = WindowPair<f32>;
pub type WindowPairF64 = WindowPair<f64>;
