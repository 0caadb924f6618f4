//! Wideband near-field beamforming for intelligent reflecting surfaces.
//!
//! The crate models a uniform planar reflecting panel between a
//! single-antenna base station and a single-antenna user, and provides
//!
//! * exact spherical-wave and piece-wise far-field line-of-sight channels,
//! * three reflection designs: phase-only (narrowband), double-layer
//!   delta-delay (DLDD) true-time-delay networks, and one delay line per
//!   element,
//! * array-gain, beam-pattern and achievable-rate metrics,
//! * scenario files and experiment runners producing CSV/JSON tables.

pub mod beamforming;
pub mod channel;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod metrics;

pub use beamforming::{
    BeamformerConfig, DelayNetwork, DesignKind, DlddDelayNetwork, PerElementDelayConfig,
    PhaseShiftConfig,
};
pub use channel::{CascadedDecomposition, ChannelModel, ChannelSet, PiecewiseForm};
pub use error::{Error, Result};
pub use experiments::{ResultTable, Scenario};
pub use geometry::{
    Endpoint, FrequencyGrid, IrsLayout, Point3, SceneGeometry, SubsurfacePartition, SPEED_OF_LIGHT,
};
pub use metrics::{BeamPattern, GainProfile, RateResult};
