//! Two-stage cooperative sensing for OFDM integrated sensing and communication
//! (ISAC) networks.
//!
//! Each base station scans its sector with multibeam OFDM frames, builds a
//! range-angle periodogram map, and reports coarse detections to a fusion
//! center. The fusion center combines them into a coarse position, opens a
//! region of interest (RoI) around it, and all base stations illuminate that
//! RoI so that a cooperative maximum-likelihood grid search can refine the
//! position to centimetre level.
//!
//! Module map:
//!
//! - [`config`]: waveform numerology, base stations, simulation settings
//! - [`array`]: steering vectors and transmit/receive beamformers
//! - [`channel`]: target echoes, channel matrices, received symbols
//! - [`sensing`]: reciprocal filtering, periodograms, range-angle maps, detection
//! - [`geometry`]: global/local coordinate conversions
//! - [`fusion`]: coarse fusion-center estimators
//! - [`refine`]: cooperative ML position refinement over a RoI
//! - [`montecarlo`]: end-to-end trials and campaign metrics

pub mod array;
pub mod channel;
pub mod config;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod montecarlo;
pub mod refine;
pub mod sensing;

pub use config::{BsDescriptor, FrameConfig, Scenario, ScenarioDoc, SimConfig};
pub use error::{Error, Result};
pub use geometry::{GlobalPoint, LocalPolar};

/// Propagation speed used for all delay/range conversions, m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;
