//! Action-conditioned world models: given `p` history frames and `p + q`
//! aligned actions, predict the next `q` frames.
//!
//! Two backends share the [`WorldModel`] interface. [`OracleWm`] replays the
//! simulator and renders, optionally corrupting its output with a seeded
//! hallucination process (silhouette morph plus object-position drift, both
//! growing with the step index) so that downstream filtering has something
//! real to catch. [`FlowWm`] is a small learned rectified-flow predictor
//! over block-averaged latent frames.
//!
//! Action alignment in a request: `actions[i]` for `i < p` is the command
//! whose execution produced `history_frames[i]` (so its pose is that frame's
//! camera pose); `actions[p + j]` is the future command producing predicted
//! frame `j`.

mod flow;
mod tokenizer;

pub use flow::{
    build_flow_examples, rf_loss, rf_loss_grad, rf_noise, rf_sample, rf_train, FlowBatchItem,
    FlowConditions, FlowExample, FlowNet, FlowTrainConfig, FlowWm, LambdaWeight, Velocity,
};
pub use tokenizer::{LatentFrame, Tokenizer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envsim::{self, EnvState, Frame, SimParams};
use crate::envsim::Renderer;
use crate::geometry::{Action, GeometryError};
use crate::math;
use crate::nn::TrainError;

#[derive(Debug, Error)]
pub enum WmError {
    #[error("request mismatch: {0}")]
    RequestMismatch(String),
    #[error("oracle world model needs the simulator state at the last history frame")]
    MissingAnchor,
    #[error("noise scale {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Prediction request: `p` history frames (oldest first), `p + q` aligned
/// actions, and the horizon `q`.
#[derive(Debug, Clone)]
pub struct WmRequest {
    pub history_frames: Vec<Frame>,
    pub actions: Vec<Action>,
    pub horizon: usize,
    /// Simulator state at the last history frame; consumed by the oracle
    /// backend, ignored by learned backends.
    pub sim_anchor: Option<EnvState>,
}

impl WmRequest {
    pub fn p(&self) -> usize {
        self.history_frames.len()
    }

    pub fn validate(&self) -> Result<(), WmError> {
        if self.history_frames.is_empty() {
            return Err(WmError::RequestMismatch("no history frames".into()));
        }
        if self.horizon == 0 {
            return Err(WmError::RequestMismatch("horizon must be >= 1".into()));
        }
        let expected = self.history_frames.len() + self.horizon;
        if self.actions.len() != expected {
            return Err(WmError::RequestMismatch(format!(
                "got {} actions for p={} q={} (need p+q={})",
                self.actions.len(),
                self.history_frames.len(),
                self.horizon,
                expected
            )));
        }
        Ok(())
    }

    /// The q future commands.
    pub fn future_actions(&self) -> &[Action] {
        &self.actions[self.p()..]
    }

    /// Stable content hash, used to derive per-request noise streams.
    pub fn content_hash(&self) -> u64 {
        const PRIME: u64 = 0x100000001b3;
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |x: f64| {
            for b in x.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(PRIME);
            }
        };
        for a in &self.actions {
            for x in a.to_array() {
                eat(x);
            }
        }
        eat(self.horizon as f64);
        h
    }
}

pub trait WorldModel: Sync {
    /// Predict exactly `q` frames for a valid request.
    fn predict(&self, req: &WmRequest) -> Result<Vec<Frame>, WmError>;
}

/// Injectable corruption for the oracle: with probability
/// `corruption_probability` per request, predicted frames get a silhouette
/// morph and an object-position drift whose amplitudes grow linearly with
/// the step index. Zero amplitude and drift leave output pixel-exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HallucinationConfig {
    pub morph_amplitude: f64,
    pub drift_rate: f64,
    pub corruption_probability: f64,
    pub seed: u64,
}

impl HallucinationConfig {
    pub fn clean() -> HallucinationConfig {
        HallucinationConfig {
            morph_amplitude: 0.0,
            drift_rate: 0.0,
            corruption_probability: 0.0,
            seed: 0,
        }
    }

    pub fn is_active(&self) -> bool {
        self.corruption_probability > 0.0 && (self.morph_amplitude > 0.0 || self.drift_rate > 0.0)
    }

    pub fn validate(&self) -> Result<(), WmError> {
        if self.morph_amplitude < 0.0 || self.drift_rate < 0.0 {
            return Err(WmError::RequestMismatch(
                "hallucination amplitudes must be >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.corruption_probability) {
            return Err(WmError::RequestMismatch(
                "corruption probability outside [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step drift distance per unit `drift_rate` (meters).
const DRIFT_STEP: f64 = 0.01;
/// Per-step fractional axis change per unit `morph_amplitude`.
const MORPH_STEP: f64 = 0.04;

/// Simulator-backed world model: steps the environment from the request's
/// anchor state and renders, then applies the hallucination process.
pub struct OracleWm {
    params: SimParams,
    renderer: Renderer,
    hallucination: HallucinationConfig,
}

impl OracleWm {
    pub fn new(params: SimParams, hallucination: HallucinationConfig) -> OracleWm {
        let renderer = Renderer::new(params.intrinsics, params.calib);
        OracleWm {
            params,
            renderer,
            hallucination,
        }
    }

    pub fn hallucination(&self) -> &HallucinationConfig {
        &self.hallucination
    }
}

impl WorldModel for OracleWm {
    fn predict(&self, req: &WmRequest) -> Result<Vec<Frame>, WmError> {
        req.validate()?;
        self.hallucination.validate()?;
        let anchor = req.sim_anchor.as_ref().ok_or(WmError::MissingAnchor)?;

        // Per-request corruption draw and perturbation directions.
        let mut corrupted = false;
        let mut drift_dir = [0.0f64; 3];
        let mut morph_gain = [0.0f64; 3];
        if self.hallucination.is_active() {
            use rand::Rng;
            use rand_distr::StandardNormal;
            let mut rng = crate::rng::stream(
                self.hallucination.seed,
                "hallucination",
                req.content_hash(),
            );
            corrupted = rng.gen_bool(self.hallucination.corruption_probability);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            drift_dir = [angle.cos(), angle.sin(), 0.0];
            for g in &mut morph_gain {
                *g = rng.sample::<f64, _>(StandardNormal);
            }
        }

        let mut frames = Vec::with_capacity(req.horizon);
        let mut state = anchor.clone();
        for (j, action) in req.future_actions().iter().enumerate() {
            state = envsim::step(&state, action, &self.params);
            let frame = if corrupted {
                let step_idx = (j + 1) as f64;
                let morph = [
                    1.0 + self.hallucination.morph_amplitude * step_idx * MORPH_STEP * morph_gain[0],
                    1.0 + self.hallucination.morph_amplitude * step_idx * MORPH_STEP * morph_gain[1],
                    1.0 + self.hallucination.morph_amplitude * step_idx * MORPH_STEP * morph_gain[2],
                ];
                let mut shape = crate::envsim::object_shape(&state, Some(morph));
                let drift = math::scale(drift_dir, self.hallucination.drift_rate * step_idx * DRIFT_STEP);
                shape.center = math::add(shape.center, drift);
                crate::envsim::render_with_shape(&self.renderer, &state, &shape)
            } else {
                self.renderer.render(&state)
            };
            frames.push(frame);
        }
        Ok(frames)
    }
}
