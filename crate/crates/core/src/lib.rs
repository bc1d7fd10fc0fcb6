//! Evidential occupancy grid maps (eOGMs) for environment prediction.
//!
//! * [`mass`] – Dempster–Shafer belief algebra on `{O, F}`.
//! * [`grid`] – egocentric grid containers and the pignistic transform.
//! * [`sensor`] – inverse sensor model and recursive map update.
//! * [`sim`] – synthetic driving scenes and range scans.
//! * [`masking`] – moving-object masks and the static/dynamic split.
//! * [`metrics`] – MSE, dynamic MSE and image similarity.
//! * [`format`] – binary tensor and text table formats.

pub mod error;
pub mod format;
pub mod geometry;
pub mod grid;
pub mod mass;
pub mod masking;
pub mod metrics;
pub mod sensor;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{Pose, PoseDelta};
pub use grid::{Eogm, GridSpec, Ogm};
pub use mass::{discount_mass, ds_fuse, ds_fuse_unnormalized, normalize_mass, pignistic, BeliefMass, UnnormalizedMass};
pub use masking::{classify_moving, rasterize_mask, split_eogm, DynamicMask, ThresholdConfig};
pub use sensor::{ego_transform, inverse_sensor_model, temporal_update, LidarScan, SensorModel};
pub use sim::{simulate, FrameSequence, SceneConfig, TrackedBox};
