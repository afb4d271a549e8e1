//! Rectified-flow latent predictor.
//!
//! Training noises future latents along the straight path
//! `z_lambda = (1 - lambda) x + lambda eps` and regresses the velocity
//! `eps - x` with an MSE objective; history latents are never noised and
//! enter only as conditioning, together with an 8-value summary of the dense
//! geometric condition. Sampling integrates the learned field from pure
//! noise (`lambda = 1`) to data (`lambda = 0`) with fixed-step Euler.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tokenizer::{LatentFrame, Tokenizer};
use super::{WmError, WmRequest, WorldModel};
use crate::envsim::Frame;
use crate::geometry::{dense_geo_condition, pose_from_action, CameraIntrinsics, HandEyeCalib};
use crate::nn::{Adam, Mlp, TrainError, TrainReport};
use crate::rng::stream;
use crate::trajectory::Trajectory;

/// Conditioning for one predicted latent: flattened history latents plus the
/// geometric-condition summary.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowConditions {
    pub context: Vec<f64>,
    pub geo: [f64; 8],
}

/// A velocity field over latents; implemented by [`FlowNet`] and by test
/// oracles.
pub trait Velocity {
    fn velocity(&self, z: &[f64], lambda: f64, cond: &FlowConditions) -> Vec<f64>;
}

/// Loss weighting `w(lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaWeight {
    /// `w = 1`.
    #[default]
    Constant,
    /// `w = lambda`, emphasizing the high-noise end.
    Lambda,
}

impl LambdaWeight {
    pub fn eval(&self, lambda: f64) -> f64 {
        match self {
            LambdaWeight::Constant => 1.0,
            LambdaWeight::Lambda => lambda,
        }
    }
}

/// MLP velocity field over flattened latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowNet {
    pub mlp: Mlp,
    pub latent_h: usize,
    pub latent_w: usize,
    pub context_frames: usize,
}

impl FlowNet {
    pub fn latent_dim(&self) -> usize {
        self.latent_h * self.latent_w
    }

    pub fn context_dim(&self) -> usize {
        self.context_frames * self.latent_dim()
    }

    pub fn input_dim(latent_dim: usize, context_frames: usize) -> usize {
        latent_dim + 1 + context_frames * latent_dim + 8
    }

    /// Fresh network with the given hidden widths.
    pub fn init<R: Rng>(
        latent_h: usize,
        latent_w: usize,
        context_frames: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> FlowNet {
        let latent_dim = latent_h * latent_w;
        let mut dims = vec![Self::input_dim(latent_dim, context_frames)];
        dims.extend_from_slice(hidden);
        dims.push(latent_dim);
        FlowNet {
            mlp: Mlp::init(&dims, rng),
            latent_h,
            latent_w,
            context_frames,
        }
    }

    fn assemble_input(&self, z: &[f64], lambda: f64, cond: &FlowConditions) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.mlp.input_dim());
        input.extend_from_slice(z);
        input.push(lambda);
        input.extend_from_slice(&cond.context);
        input.extend_from_slice(&cond.geo);
        input
    }

    /// Stable hash of the architecture, stored in checkpoints.
    pub fn config_hash(&self) -> u64 {
        let desc = format!(
            "flow:{:?}:{}x{}:p{}",
            self.mlp.dims, self.latent_h, self.latent_w, self.context_frames
        );
        crate::rng::derive_seed(0, &desc, 0)
    }
}

impl Velocity for FlowNet {
    fn velocity(&self, z: &[f64], lambda: f64, cond: &FlowConditions) -> Vec<f64> {
        self.mlp.forward(&self.assemble_input(z, lambda, cond))
    }
}

/// Linear interpolation toward noise: `(1 - lambda) x + lambda eps`.
/// Exact at both endpoints.
pub fn rf_noise(x: &LatentFrame, lambda: f64, eps: &LatentFrame) -> Result<LatentFrame, WmError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(WmError::LambdaOutOfRange(lambda));
    }
    if x.tokens.dim() != eps.tokens.dim() {
        return Err(WmError::ShapeMismatch(format!(
            "latent {:?} vs noise {:?}",
            x.tokens.dim(),
            eps.tokens.dim()
        )));
    }
    let mut out = x.clone();
    for (o, e) in out.tokens.iter_mut().zip(eps.tokens.iter()) {
        *o = (1.0 - lambda) * *o + lambda * e;
    }
    Ok(out)
}

/// One dataset entry: a future latent with its conditioning. Noise and the
/// noise scale are drawn fresh at every training step.
#[derive(Debug, Clone)]
pub struct FlowExample {
    pub x: Vec<f64>,
    pub cond: FlowConditions,
}

/// One loss-evaluation item with its noise realization.
#[derive(Debug, Clone)]
pub struct FlowBatchItem {
    pub x: Vec<f64>,
    pub eps: Vec<f64>,
    pub lambda: f64,
    pub cond: FlowConditions,
}

/// Velocity-matching loss: mean over the batch of
/// `w(lambda) * ||phi(z, lambda, c) - (eps - x)||^2 / latent_dim`.
pub fn rf_loss(net: &FlowNet, batch: &[FlowBatchItem], weight: LambdaWeight) -> f64 {
    assert!(!batch.is_empty(), "rf_loss needs a nonempty batch");
    let latent_dim = net.latent_dim() as f64;
    let mut total = 0.0;
    for item in batch {
        let z = noised(&item.x, item.lambda, &item.eps);
        let pred = net.velocity(&z, item.lambda, &item.cond);
        let mut sq = 0.0;
        for i in 0..pred.len() {
            let r = pred[i] - (item.eps[i] - item.x[i]);
            sq += r * r;
        }
        total += weight.eval(item.lambda) * sq / latent_dim;
    }
    total / batch.len() as f64
}

/// Loss plus its analytic gradient with respect to the network parameters.
pub fn rf_loss_grad(
    net: &FlowNet,
    batch: &[FlowBatchItem],
    weight: LambdaWeight,
) -> (f64, Vec<f64>) {
    assert!(!batch.is_empty());
    let latent_dim = net.latent_dim() as f64;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; net.mlp.n_params()];
    let mut total = 0.0;
    for item in batch {
        let z = noised(&item.x, item.lambda, &item.eps);
        let input = net.assemble_input(&z, item.lambda, &item.cond);
        let pred = net.mlp.forward(&input);
        let w = weight.eval(item.lambda);
        let mut sq = 0.0;
        let mut d_out = vec![0.0; pred.len()];
        for i in 0..pred.len() {
            let r = pred[i] - (item.eps[i] - item.x[i]);
            sq += r * r;
            d_out[i] = w * 2.0 * r / latent_dim / n;
        }
        total += w * sq / latent_dim;
        net.mlp.accumulate_grad(&input, &d_out, &mut grad);
    }
    (total / n, grad)
}

fn noised(x: &[f64], lambda: f64, eps: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(eps)
        .map(|(a, e)| (1.0 - lambda) * a + lambda * e)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fraction of examples held out for the evaluation curve.
    pub heldout_frac: f64,
    pub weight: LambdaWeight,
    pub eval_every: usize,
}

impl Default for FlowTrainConfig {
    fn default() -> FlowTrainConfig {
        FlowTrainConfig {
            steps: 3000,
            batch_size: 32,
            learning_rate: 3e-3,
            seed: 0,
            heldout_frac: 0.1,
            weight: LambdaWeight::Constant,
            eval_every: 100,
        }
    }
}

/// Gradient-descent training of the velocity field. History latents enter
/// only through the conditioning of each example; they are never noised.
pub fn rf_train(
    net: &mut FlowNet,
    examples: &[FlowExample],
    cfg: &FlowTrainConfig,
) -> Result<TrainReport, WmError> {
    if examples.is_empty() {
        return Err(WmError::Train(TrainError::EmptyDataset));
    }
    let n_held = ((examples.len() as f64 * cfg.heldout_frac) as usize).min(examples.len() - 1);
    let (held, train) = examples.split_at(n_held);
    let train = if train.is_empty() { examples } else { train };

    // Fixed noise realizations for the held-out curve, so successive
    // evaluations are comparable.
    let mut held_rng = stream(cfg.seed, "flow-heldout", 0);
    let held_batch: Vec<FlowBatchItem> = held
        .iter()
        .map(|ex| FlowBatchItem {
            x: ex.x.clone(),
            eps: draw_eps(ex.x.len(), &mut held_rng),
            lambda: held_rng.gen_range(0.0..=1.0),
            cond: ex.cond.clone(),
        })
        .collect();

    let mut rng = stream(cfg.seed, "flow-train", 0);
    let mut opt = Adam::new(cfg.learning_rate, net.mlp.n_params());
    let mut report = TrainReport::default();

    for step in 0..cfg.steps {
        let batch: Vec<FlowBatchItem> = (0..cfg.batch_size)
            .map(|_| {
                let ex = &train[rng.gen_range(0..train.len())];
                FlowBatchItem {
                    x: ex.x.clone(),
                    eps: draw_eps(ex.x.len(), &mut rng),
                    lambda: rng.gen_range(0.0..=1.0),
                    cond: ex.cond.clone(),
                }
            })
            .collect();
        let (loss, grad) = rf_loss_grad(net, &batch, cfg.weight);
        if !loss.is_finite() {
            return Err(WmError::Train(TrainError::NanLoss { step }));
        }
        opt.lr = Adam::cosine_lr(cfg.learning_rate, step, cfg.steps);
        opt.step(&mut net.mlp.params, &grad);
        if step % cfg.eval_every == 0 || step + 1 == cfg.steps {
            report.train.push((step, loss));
            if !held_batch.is_empty() {
                report.heldout.push((step, rf_loss(net, &held_batch, cfg.weight)));
            }
        }
    }
    if !net.mlp.is_finite() {
        return Err(WmError::Train(TrainError::NanLoss { step: cfg.steps }));
    }
    net.mlp.quantize_f32();
    report.judge();
    Ok(report)
}

fn draw_eps<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Euler integration of a velocity field from pure noise (`lambda = 1`) to
/// data (`lambda = 0`) in `n_steps` uniform steps. Deterministic per seed.
pub fn rf_sample<V: Velocity>(
    field: &V,
    cond: &FlowConditions,
    latent_dim: usize,
    n_steps: usize,
    seed: u64,
) -> Vec<f64> {
    assert!(n_steps >= 1);
    let mut rng = stream(seed, "flow-sample", 0);
    let mut z = draw_eps(latent_dim, &mut rng);
    let dt = 1.0 / n_steps as f64;
    for k in 0..n_steps {
        let lambda = 1.0 - k as f64 * dt;
        let v = field.velocity(&z, lambda, cond);
        for (zi, vi) in z.iter_mut().zip(&v) {
            *zi -= dt * vi;
        }
    }
    z
}

/// Build flow training examples from aligned trajectories: for each window
/// of `p` history frames, each future offset up to `q` contributes one
/// example whose context is the (unnoised) history latents and whose
/// geometric summary spans last-history pose to future pose.
pub fn build_flow_examples(
    trajs: &[Trajectory],
    p: usize,
    q: usize,
    tokenizer: &Tokenizer,
    intrinsics: &CameraIntrinsics,
    calib: &HandEyeCalib,
) -> Result<Vec<FlowExample>, WmError> {
    let mut out = Vec::new();
    for traj in trajs {
        if traj.len() < p + 1 {
            continue;
        }
        let latents: Vec<LatentFrame> = traj
            .steps
            .iter()
            .map(|s| tokenizer.encode(&s.frame))
            .collect::<Result<_, _>>()
            .map_err(|e| WmError::ShapeMismatch(e.to_string()))?;
        for t in (p - 1)..traj.len() {
            let context: Vec<f64> = (t + 1 - p..=t)
                .flat_map(|i| latents[i].flat())
                .collect();
            let pose_t = pose_from_action(&traj.steps[t].observed_pose, calib)?;
            for k in 1..=q {
                let Some(step_future) = traj.steps.get(t + k) else {
                    break;
                };
                let pose_f = pose_from_action(&step_future.observed_pose, calib)?;
                let geo = dense_geo_condition(
                    &pose_t,
                    &pose_f,
                    intrinsics,
                    step_future.observed_pose.gripper,
                )?
                .summary();
                out.push(FlowExample {
                    x: latents[t + k].flat(),
                    cond: FlowConditions {
                        context: context.clone(),
                        geo,
                    },
                });
            }
        }
    }
    Ok(out)
}

/// Learned world model: encodes history frames, samples each future latent
/// conditioned on the geometric summary of its action, and decodes.
#[derive(Debug, Clone)]
pub struct FlowWm {
    pub net: FlowNet,
    pub tokenizer: Tokenizer,
    pub sample_steps: usize,
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    pub calib: HandEyeCalib,
}

impl WorldModel for FlowWm {
    fn predict(&self, req: &WmRequest) -> Result<Vec<Frame>, WmError> {
        req.validate()?;
        let p = req.p();
        if p != self.net.context_frames {
            return Err(WmError::RequestMismatch(format!(
                "model conditions on {} history frames, request has {p}",
                self.net.context_frames
            )));
        }
        let context: Vec<f64> = req
            .history_frames
            .iter()
            .map(|f| self.tokenizer.encode(f))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| WmError::ShapeMismatch(e.to_string()))?
            .iter()
            .flat_map(LatentFrame::flat)
            .collect();

        let pose_t = pose_from_action(&req.actions[p - 1], &self.calib)?;
        let mut frames = Vec::with_capacity(req.horizon);
        let base = req.content_hash();
        for (j, action) in req.future_actions().iter().enumerate() {
            let pose_f = pose_from_action(action, &self.calib)?;
            let geo =
                dense_geo_condition(&pose_t, &pose_f, &self.intrinsics, action.gripper)?.summary();
            let cond = FlowConditions {
                context: context.clone(),
                geo,
            };
            let z = rf_sample(
                &self.net,
                &cond,
                self.net.latent_dim(),
                self.sample_steps,
                crate::rng::derive_seed(self.seed, "flow-predict", base ^ j as u64),
            );
            let latent = LatentFrame::from_flat(&z, self.net.latent_h, self.net.latent_w);
            frames.push(self.tokenizer.decode(&latent));
        }
        Ok(frames)
    }
}
