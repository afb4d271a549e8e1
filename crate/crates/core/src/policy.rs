//! Action-chunking behavioral cloning.
//!
//! The policy maps a down-sampled frame to a chunk of `H` future actions and
//! is trained with plain MSE over the raw 8-dim action vectors, averaged as
//! `(1/H) * sum_i ||a_hat_i - a_i||^2` per chunk.
//!
//! Action encoding: chunk translations are offsets from the gripper position
//! at observation time (the eye-in-hand observation only carries relative
//! geometry, so world-absolute targets would not generalize across object
//! placements); orientation quaternions and the gripper scalar are raw.
//! Quaternions are trained as unconstrained 4-vectors and only normalized at
//! execution time.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envsim::{self, EnvState, Frame, Renderer, SimParams, TaskId};
use crate::geometry::Action;
use crate::math;
use crate::nn::{Activation, Adam, Mlp, TrainError, TrainReport};
use crate::par;
use crate::rng::stream;
use crate::trajectory::{Provenance, Trajectory};

pub const ACTION_DIM: usize = 8;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("frame is {got_h}x{got_w}, policy expects {want_h}x{want_w}")]
    ResolutionMismatch {
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },
    #[error("observation {h}x{w} not divisible by down-sampled size {obs}")]
    BadDownsample { h: usize, w: usize, obs: usize },
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTrainConfig {
    pub chunk_horizon: usize,
    pub execution_stride: usize,
    /// Side length of the square observation after block-mean down-sampling.
    pub obs_size: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub heldout_frac: f64,
    pub eval_every: usize,
}

impl Default for PolicyTrainConfig {
    fn default() -> PolicyTrainConfig {
        PolicyTrainConfig {
            chunk_horizon: 8,
            execution_stride: 4,
            obs_size: 32,
            hidden: vec![64],
            activation: Activation::LeakyRelu,
            steps: 2500,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            heldout_frac: 0.05,
            eval_every: 100,
        }
    }
}

/// Feedforward chunk predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub mlp: Mlp,
    pub chunk_horizon: usize,
    pub obs_size: usize,
    /// Full frame resolution the observation is down-sampled from.
    pub frame_h: usize,
    pub frame_w: usize,
}

impl PolicyNet {
    pub fn init(cfg: &PolicyTrainConfig, frame_h: usize, frame_w: usize, rng: &mut impl Rng) -> PolicyNet {
        let input = cfg.obs_size * cfg.obs_size;
        let mut dims = vec![input];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(cfg.chunk_horizon * ACTION_DIM);
        PolicyNet {
            mlp: Mlp::init_with(&dims, cfg.activation, rng),
            chunk_horizon: cfg.chunk_horizon,
            obs_size: cfg.obs_size,
            frame_h,
            frame_w,
        }
    }

    /// Stable hash of the architecture, stored in checkpoints.
    pub fn config_hash(&self) -> u64 {
        let desc = format!(
            "policy:{:?}:h{}:obs{}:{}x{}",
            self.mlp.dims, self.chunk_horizon, self.obs_size, self.frame_h, self.frame_w
        );
        crate::rng::derive_seed(0, &desc, 0)
    }

    /// Block-mean the frame down to `obs_size^2` mid-gray-centered features.
    pub fn featurize(&self, frame: &Frame) -> Result<Vec<f64>, PolicyError> {
        featurize(frame, self.obs_size, self.frame_h, self.frame_w)
    }
}

fn featurize(
    frame: &Frame,
    obs_size: usize,
    want_h: usize,
    want_w: usize,
) -> Result<Vec<f64>, PolicyError> {
    let (h, w) = (frame.height(), frame.width());
    if h != want_h || w != want_w {
        return Err(PolicyError::ResolutionMismatch {
            got_h: h,
            got_w: w,
            want_h,
            want_w,
        });
    }
    if h % obs_size != 0 || w % obs_size != 0 {
        return Err(PolicyError::BadDownsample { h, w, obs: obs_size });
    }
    let (sh, sw) = (h / obs_size, w / obs_size);
    let mut out = Vec::with_capacity(obs_size * obs_size);
    let count = (sh * sw) as f64;
    for bv in 0..obs_size {
        for bu in 0..obs_size {
            let mut sum = 0.0f64;
            for v in bv * sh..(bv + 1) * sh {
                for u in bu * sw..(bu + 1) * sw {
                    sum += f64::from(frame.get(v, u));
                }
            }
            // Centered around mid-gray: all-positive inputs bias every
            // hidden pre-activation to one sign and starve the units.
            out.push(sum / count - 0.5);
        }
    }
    Ok(out)
}

/// Relative chunk-target encoding for the action at trajectory step `t + i`
/// seen from the pose at step `t`.
fn encode_target(action: &Action, obs_pose: &Action, out: &mut Vec<f64>) {
    let rel = math::sub(action.translation, obs_pose.translation);
    out.extend_from_slice(&rel);
    out.push(action.orientation.w);
    out.push(action.orientation.x);
    out.push(action.orientation.y);
    out.push(action.orientation.z);
    out.push(action.gripper);
}

/// One training pair: down-sampled observation and its `H x 8` target chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPair {
    pub features: Vec<f64>,
    pub target: Vec<f64>,
    pub provenance: Provenance,
    pub source_trajectory: u64,
}

/// Chunked training set assembled from expert and retained synthesized
/// trajectories.
#[derive(Debug, Clone, Default)]
pub struct AggregatedDataset {
    pub pairs: Vec<ChunkPair>,
    pub chunk_horizon: usize,
    /// `(trajectory id, provenance, pairs contributed)`.
    pub per_trajectory: Vec<(u64, Provenance, usize)>,
    /// Trajectories skipped for being empty.
    pub skipped: usize,
}

impl AggregatedDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn count_by(&self, provenance: Provenance) -> usize {
        self.pairs.iter().filter(|p| p.provenance == provenance).count()
    }
}

/// Sliding-window chunk extraction: a trajectory of length `n` contributes
/// `n` pairs; windows crossing the end repeat the final action.
pub fn make_chunks(
    trajs: &[Trajectory],
    horizon: usize,
    obs_size: usize,
) -> Result<AggregatedDataset, PolicyError> {
    assert!(horizon >= 1, "chunk horizon must be >= 1");
    let mut ds = AggregatedDataset {
        chunk_horizon: horizon,
        ..AggregatedDataset::default()
    };
    for traj in trajs {
        if traj.is_empty() {
            ds.skipped += 1;
            continue;
        }
        let n = traj.len();
        let (h, w) = (traj.steps[0].frame.height(), traj.steps[0].frame.width());
        for t in 0..n {
            let obs = &traj.steps[t];
            let features = featurize(&obs.frame, obs_size, h, w)?;
            let mut target = Vec::with_capacity(horizon * ACTION_DIM);
            for i in 0..horizon {
                let idx = (t + i).min(n - 1);
                encode_target(&traj.steps[idx].action, &obs.observed_pose, &mut target);
            }
            ds.pairs.push(ChunkPair {
                features,
                target,
                provenance: traj.provenance,
                source_trajectory: traj.id,
            });
        }
        ds.per_trajectory.push((traj.id, traj.provenance, n));
    }
    Ok(ds)
}

/// Chunk MSE: mean over the batch of `(1/H) * sum_i ||pred_i - target_i||^2`
/// over raw 8-dim vectors.
pub fn policy_loss(net: &PolicyNet, batch: &[&ChunkPair]) -> f64 {
    assert!(!batch.is_empty(), "policy_loss needs a nonempty batch");
    let h = net.chunk_horizon as f64;
    let mut total = 0.0;
    for pair in batch {
        let pred = net.mlp.forward(&pair.features);
        let sq: f64 = pred
            .iter()
            .zip(&pair.target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += sq / h;
    }
    total / batch.len() as f64
}

/// Loss plus analytic parameter gradient.
pub fn policy_loss_grad(net: &PolicyNet, batch: &[&ChunkPair]) -> (f64, Vec<f64>) {
    assert!(!batch.is_empty());
    let h = net.chunk_horizon as f64;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; net.mlp.n_params()];
    let mut total = 0.0;
    for pair in batch {
        let pred = net.mlp.forward(&pair.features);
        let mut d_out = vec![0.0; pred.len()];
        let mut sq = 0.0;
        for i in 0..pred.len() {
            let r = pred[i] - pair.target[i];
            sq += r * r;
            d_out[i] = 2.0 * r / h / n;
        }
        total += sq / h;
        net.mlp.accumulate_grad(&pair.features, &d_out, &mut grad);
    }
    (total / n, grad)
}

/// Mini-batch Adam on the chunk MSE; deterministic per seed. Parameters are
/// quantized through `f32` at the end so checkpoints round-trip exactly.
pub fn train_policy(
    dataset: &AggregatedDataset,
    cfg: &PolicyTrainConfig,
    frame_h: usize,
    frame_w: usize,
) -> Result<(PolicyNet, TrainReport), PolicyError> {
    if dataset.is_empty() {
        return Err(PolicyError::Train(TrainError::EmptyDataset));
    }
    let mut rng = stream(cfg.seed, "policy-train", 0);
    let mut net = PolicyNet::init(cfg, frame_h, frame_w, &mut rng);

    // Start the output head at the dataset's mean chunk; the constant
    // orientation/gripper channels are then fit from step zero.
    let out_dim = net.mlp.output_dim();
    let mut mean_target = vec![0.0; out_dim];
    for pair in &dataset.pairs {
        for (m, t) in mean_target.iter_mut().zip(&pair.target) {
            *m += t;
        }
    }
    for m in &mut mean_target {
        *m /= dataset.len() as f64;
    }
    let bias_start = net.mlp.n_params() - out_dim;
    net.mlp.params[bias_start..].copy_from_slice(&mean_target);

    // Held-out split on a seeded shuffle.
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_held = ((dataset.len() as f64 * cfg.heldout_frac) as usize).min(dataset.len() - 1);
    let (held_idx, train_idx) = order.split_at(n_held);
    let held: Vec<&ChunkPair> = held_idx.iter().map(|i| &dataset.pairs[*i]).collect();
    let train: Vec<&ChunkPair> = train_idx.iter().map(|i| &dataset.pairs[*i]).collect();

    let mut opt = Adam::new(cfg.learning_rate, net.mlp.n_params());
    let mut report = TrainReport::default();
    for step in 0..cfg.steps {
        // Datasets smaller than a batch get exact full-batch gradients.
        let batch: Vec<&ChunkPair> = if cfg.batch_size >= train.len() {
            train.clone()
        } else {
            (0..cfg.batch_size)
                .map(|_| train[rng.gen_range(0..train.len())])
                .collect()
        };
        let (loss, grad) = policy_loss_grad(&net, &batch);
        if !loss.is_finite() {
            return Err(PolicyError::Train(TrainError::NanLoss { step }));
        }
        opt.lr = Adam::cosine_lr(cfg.learning_rate, step, cfg.steps);
        opt.step(&mut net.mlp.params, &grad);
        if step % cfg.eval_every == 0 || step + 1 == cfg.steps {
            report.train.push((step, loss));
            if !held.is_empty() {
                report.heldout.push((step, policy_loss(&net, &held)));
            }
        }
    }
    if !net.mlp.is_finite() {
        return Err(PolicyError::Train(TrainError::NanLoss { step: cfg.steps }));
    }
    net.mlp.quantize_f32();
    report.judge();
    Ok((net, report))
}

/// Predict the `H`-action chunk for one observation. Translations are
/// offsets from the current gripper position; quaternions come back
/// normalized and the gripper clamped.
pub fn predict_chunk(net: &PolicyNet, obs: &Frame) -> Result<Vec<Action>, PolicyError> {
    let features = net.featurize(obs)?;
    let raw = net.mlp.forward(&features);
    let mut out = Vec::with_capacity(net.chunk_horizon);
    for i in 0..net.chunk_horizon {
        let row: [f64; ACTION_DIM] = raw[i * ACTION_DIM..(i + 1) * ACTION_DIM]
            .try_into()
            .expect("row width");
        out.push(Action::sanitize_from_array(&row));
    }
    Ok(out)
}

/// Closed-loop episode record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub success: bool,
    pub steps_taken: u32,
    pub final_state: EnvState,
}

/// Run the policy closed-loop: observe, predict a chunk, execute its first
/// `stride` actions (resolved against the observation pose), re-observe.
/// Terminates on success or after `max_steps` environment steps.
pub fn rollout(
    net: &PolicyNet,
    initial: &EnvState,
    task: TaskId,
    max_steps: u32,
    stride: usize,
    params: &SimParams,
    renderer: &Renderer,
) -> Result<EpisodeRecord, PolicyError> {
    let stride = stride.clamp(1, net.chunk_horizon);
    let mut state = initial.clone();
    let mut taken = 0u32;
    while taken < max_steps {
        if envsim::success(&state, task) {
            break;
        }
        let obs_pose = state.gripper.translation;
        let frame = renderer.render(&state);
        let chunk = predict_chunk(net, &frame)?;
        for rel in chunk.iter().take(stride) {
            let cmd = Action {
                translation: math::add(obs_pose, rel.translation),
                orientation: rel.orientation,
                gripper: rel.gripper,
            };
            state = envsim::step(&state, &cmd, params);
            taken += 1;
            if envsim::success(&state, task) || taken >= max_steps {
                break;
            }
        }
    }
    Ok(EpisodeRecord {
        success: envsim::success(&state, task),
        steps_taken: taken,
        final_state: state,
    })
}

/// Success count over seeded evaluation episodes, rolled out in parallel;
/// episode `i` uses scene stream `(eval_seed, i)` and is scheduling-
/// independent.
pub fn evaluate(
    net: &PolicyNet,
    task: TaskId,
    trials: usize,
    eval_seed: u64,
    max_steps: u32,
    stride: usize,
    params: &SimParams,
) -> Result<(u32, Vec<bool>), PolicyError> {
    let renderer = Renderer::new(params.intrinsics, params.calib);
    let outcomes: Vec<Result<bool, PolicyError>> = par::map_indexed(trials, |i| {
        let mut rng = stream(eval_seed, "eval-scene", i as u64);
        let state = envsim::initial_state(task, params, &mut rng);
        Ok(rollout(net, &state, task, max_steps, stride, params, &renderer)?.success)
    });
    let mut flags = Vec::with_capacity(trials);
    for o in outcomes {
        flags.push(o?);
    }
    Ok((flags.iter().filter(|s| **s).count() as u32, flags))
}
