//! World-model-driven recovery-data aggregation for eye-in-hand imitation
//! learning, end to end at desk scale.
//!
//! The pipeline: a deterministic ray-cast manipulation simulator with an
//! eye-in-hand camera ([`envsim`]), exact camera/SE(3) geometry that turns
//! actions into dense per-pixel motion conditions ([`geometry`]), an
//! action-conditioned world model with oracle and learned rectified-flow
//! backends ([`worldmodel`]), corrective recovery-trajectory synthesis
//! ([`synthesis`]), consistency-guided filtering of hallucinated rollouts
//! ([`filtering`]), action-chunked behavioral-cloning policies ([`policy`]),
//! durable dataset/checkpoint persistence ([`storage`]), and a seeded
//! experiment harness comparing aggregation strategies ([`harness`]).
//!
//! Coordinate conventions, used everywhere: world frame is right-handed with
//! +z up; the camera looks down its own +z axis; image `v` grows downward.
//! Quaternions are `(w, x, y, z)` Hamilton products, normalized with `w >= 0`
//! on construction.

pub mod config;
pub mod envsim;
pub mod filtering;
pub mod geometry;
pub mod harness;
pub mod math;
pub mod nn;
pub mod policy;
pub(crate) mod par;
pub mod rng;
pub mod stats;
pub mod storage;
pub mod synthesis;
pub mod trajectory;
pub mod worldmodel;

pub use geometry::{Action, CameraIntrinsics, CameraPose, DenseGeoCondition, HandEyeCalib};
pub use trajectory::{Provenance, TimeStep, Trajectory};
