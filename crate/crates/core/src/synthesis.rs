//! Corrective recovery-trajectory synthesis.
//!
//! For a random pivot step `m` of an expert trajectory, sample a deviation
//! direction `v_d` at least `angular_threshold` away from the expert's next
//! motion, build `2k` actions that walk out along `v_d` at the expert-matched
//! step size and retrace the same waypoints back to the pivot pose, roll all
//! of them through the world model, and keep only the recovery half.
//!
//! Supervision alignment: the retained step `j` pairs the frame observed at
//! excursion `(k - j + 1) * delta` with the action targeting the next waypoint
//! inward, so every kept pair teaches motion back toward the expert manifold
//! and no outward-teaching (deviation-phase) pair survives. The final frame
//! produced by the last recovery action sits at the pivot pose itself and is
//! attached separately as the terminal frame for consistency filtering.

use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envsim::{replay, Aabb, SimParams};
use crate::geometry::Action;
use crate::math::{self, Vec3};
use crate::par;
use crate::rng::stream;
use crate::trajectory::{Provenance, TimeStep, Trajectory};
use crate::worldmodel::{WmError, WmRequest, WorldModel};

/// Minimum expert step displacement for a well-defined deviation angle.
pub const STATIONARY_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("dataset has no trajectories")]
    EmptyDataset,
    #[error("dataset has no transitions to average")]
    NoTransitions,
    #[error("expert step at the pivot is stationary; resample the pivot")]
    StationaryStep,
    #[error("deviation path leaves the workspace")]
    OutOfWorkspace,
    #[error("no admissible pivot found within the retry budget")]
    PivotBudgetExhausted,
    #[error("direction sampling exhausted its draw budget")]
    DirectionBudgetExhausted,
    #[error("synthesis requires expert-tagged trajectories, got {0:?}")]
    NotExpert(Provenance),
    #[error("source trajectory carries no simulator state")]
    MissingSimState,
    #[error("trajectory too short for pivot margin {margin} (len {len})")]
    TrajectoryTooShort { margin: usize, len: usize },
    #[error("bad synthesis config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Wm(#[from] WmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    /// Deviation horizon k: steps walked outward (and back).
    pub deviation_horizon: usize,
    /// Directions closer than this to the expert's next motion are rejected.
    pub angular_threshold_deg: f64,
    /// Minimum pivot distance from the trajectory start; must cover the
    /// world model's history length.
    pub pivot_margin: usize,
    /// Episodes synthesized per task per round.
    pub episodes: usize,
    pub seed: u64,
    /// Disable to sample unconstrained directions (the "w/o Dir." ablation).
    pub enforce_direction: bool,
}

impl Default for SynthesisConfig {
    fn default() -> SynthesisConfig {
        SynthesisConfig {
            deviation_horizon: 8,
            angular_threshold_deg: 120.0,
            pivot_margin: 2,
            episodes: 1500,
            seed: 0,
            enforce_direction: true,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self, history_len: usize) -> Result<(), SynthesisError> {
        if self.deviation_horizon < 1 {
            return Err(SynthesisError::BadConfig("deviation horizon must be >= 1".into()));
        }
        if !(self.angular_threshold_deg > 90.0 && self.angular_threshold_deg <= 180.0) {
            return Err(SynthesisError::BadConfig(format!(
                "angular threshold {} outside (90, 180]",
                self.angular_threshold_deg
            )));
        }
        if self.pivot_margin < history_len {
            return Err(SynthesisError::BadConfig(format!(
                "pivot margin {} below history length {history_len}",
                self.pivot_margin
            )));
        }
        Ok(())
    }
}

/// The retained recovery half of one synthesized episode.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedTrajectory {
    /// k steps, provenance [`Provenance::Synthesized`], pivot and source set.
    pub recovery: Trajectory,
    /// Last world-model frame, at the pivot pose; filtering anchor.
    pub terminal_frame: crate::envsim::Frame,
    pub pivot: u32,
    pub source_id: u64,
    pub deviation_dir: Vec3,
}

/// Counters from a synthesis run; order-independent across workers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisStats {
    pub direction_attempts: u64,
    pub direction_accepts: u64,
    pub stationary_rejections: u64,
    pub workspace_rejections: u64,
    pub failed_episodes: u64,
}

impl SynthesisStats {
    pub fn acceptance_rate(&self) -> f64 {
        self.direction_accepts as f64 / self.direction_attempts.max(1) as f64
    }

    pub fn merge(&mut self, other: &SynthesisStats) {
        self.direction_attempts += other.direction_attempts;
        self.direction_accepts += other.direction_accepts;
        self.stationary_rejections += other.stationary_rejections;
        self.workspace_rejections += other.workspace_rejections;
        self.failed_episodes += other.failed_episodes;
    }
}

/// Mean translation norm over all consecutive pose pairs of all
/// trajectories: the expert-matched step size for synthesized actions.
pub fn mean_step_displacement(trajs: &[Trajectory]) -> Result<f64, SynthesisError> {
    if trajs.is_empty() {
        return Err(SynthesisError::EmptyDataset);
    }
    let mut sum = 0.0;
    let mut n = 0u64;
    for t in trajs {
        for d in t.step_displacements() {
            sum += d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(SynthesisError::NoTransitions);
    }
    Ok(sum / n as f64)
}

/// Whether a direction is far enough from the expert's next motion.
pub fn direction_admissible(v_d: Vec3, next_step: Vec3, threshold_deg: f64) -> bool {
    let Some(t_hat) = math::normalize(next_step, STATIONARY_EPS) else {
        return false;
    };
    math::dot(v_d, t_hat) <= threshold_deg.to_radians().cos()
}

/// An accepted deviation direction plus how many draws it took.
#[derive(Debug, Clone, Copy)]
pub struct DirectionSample {
    pub direction: Vec3,
    pub attempts: u32,
}

/// Rejection-sample a unit deviation direction at least `threshold_deg`
/// away from the expert's next translation `next_step`. A stationary step
/// (`||next_step|| < STATIONARY_EPS`) signals the caller to resample the
/// pivot.
pub fn sample_deviation_direction(
    next_step: Vec3,
    threshold_deg: f64,
    rng: &mut impl Rng,
) -> Result<DirectionSample, SynthesisError> {
    if math::norm(next_step) < STATIONARY_EPS {
        return Err(SynthesisError::StationaryStep);
    }
    const DRAW_BUDGET: u32 = 10_000;
    for attempts in 1..=DRAW_BUDGET {
        let v: [f64; 3] = UnitSphere.sample(rng);
        if direction_admissible(v, next_step, threshold_deg) {
            return Ok(DirectionSample {
                direction: v,
                attempts,
            });
        }
    }
    Err(SynthesisError::DirectionBudgetExhausted)
}

/// Uniform unit direction with no angular constraint (ablation arm).
pub fn sample_unconstrained_direction(rng: &mut impl Rng) -> DirectionSample {
    DirectionSample {
        direction: UnitSphere.sample(rng),
        attempts: 1,
    }
}

/// The `2k` symmetric deviation/recovery actions anchored at pivot `m`:
/// out along `v_d` in steps of `delta`, then back over the same waypoints,
/// ending exactly at the pivot pose. Orientation and gripper stay at the
/// pivot values.
pub fn build_corrective_actions(
    traj: &Trajectory,
    m: usize,
    k: usize,
    v_d: Vec3,
    delta: f64,
    workspace: &Aabb,
) -> Result<Vec<Action>, SynthesisError> {
    let anchor = &traj.steps[m].observed_pose;
    let step_vec = math::scale(v_d, delta);
    // Farthest waypoint decides workspace admissibility.
    let far = math::add(anchor.translation, math::scale(step_vec, k as f64));
    if !workspace.contains(far) {
        return Err(SynthesisError::OutOfWorkspace);
    }
    let mut actions = Vec::with_capacity(2 * k);
    for j in 1..=2 * k {
        let excursion = if j <= k { j } else { 2 * k - j } as f64;
        actions.push(Action {
            translation: math::add(anchor.translation, math::scale(step_vec, excursion)),
            orientation: anchor.orientation,
            gripper: anchor.gripper,
        });
    }
    Ok(actions)
}

fn gripper_transition_near(traj: &Trajectory, m: usize) -> bool {
    let lo = m.saturating_sub(1);
    let hi = (m + 1).min(traj.len() - 1);
    (lo..hi).any(|i| {
        (traj.steps[i + 1].action.gripper - traj.steps[i].action.gripper).abs() > 0.25
    })
}

/// Synthesize one recovery episode from an expert trajectory through a
/// world model. `history_len` is the model's `p`.
pub fn synthesize_recovery(
    traj: &Trajectory,
    wm: &dyn WorldModel,
    cfg: &SynthesisConfig,
    mean_delta: f64,
    history_len: usize,
    params: &SimParams,
    rng: &mut impl Rng,
    stats: &mut SynthesisStats,
) -> Result<SynthesizedTrajectory, SynthesisError> {
    cfg.validate(history_len)?;
    if traj.provenance != Provenance::Expert {
        return Err(SynthesisError::NotExpert(traj.provenance));
    }
    let len = traj.len();
    let margin = cfg.pivot_margin;
    if len < margin + 1 {
        return Err(SynthesisError::TrajectoryTooShort { margin, len });
    }
    let initial = traj
        .initial_state
        .as_ref()
        .ok_or(SynthesisError::MissingSimState)?;
    let k = cfg.deviation_horizon;

    const PIVOT_BUDGET: usize = 32;
    const DIRECTION_RETRIES: usize = 16;

    'pivots: for _ in 0..PIVOT_BUDGET {
        let m = rng.gen_range(margin..len);
        if gripper_transition_near(traj, m) {
            continue;
        }
        let pivot_step = &traj.steps[m];
        let next_step = math::sub(
            pivot_step.action.translation,
            pivot_step.observed_pose.translation,
        );
        if math::norm(next_step) < STATIONARY_EPS {
            stats.stationary_rejections += 1;
            continue;
        }

        for _ in 0..DIRECTION_RETRIES {
            let sample = if cfg.enforce_direction {
                sample_deviation_direction(next_step, cfg.angular_threshold_deg, rng)?
            } else {
                sample_unconstrained_direction(rng)
            };
            stats.direction_attempts += u64::from(sample.attempts);
            stats.direction_accepts += 1;
            let v_d = sample.direction;

            let actions =
                match build_corrective_actions(traj, m, k, v_d, mean_delta, &params.workspace) {
                    Ok(a) => a,
                    Err(SynthesisError::OutOfWorkspace) => {
                        stats.workspace_rejections += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };

            // Assemble the prediction request: p history frames ending at
            // the pivot, their incoming actions, then the 2k future actions.
            let p = history_len;
            let history_frames: Vec<_> = traj.steps[m + 1 - p..=m]
                .iter()
                .map(|s| s.frame.clone())
                .collect();
            let mut request_actions: Vec<Action> = traj.steps[m - p..m]
                .iter()
                .map(|s| s.action)
                .collect();
            request_actions.extend_from_slice(&actions);
            let anchor_state = {
                let cmds: Vec<Action> = traj.steps[..m].iter().map(|s| s.action).collect();
                replay(initial, &cmds, params).pop().expect("nonempty")
            };
            let request = WmRequest {
                history_frames,
                actions: request_actions,
                horizon: 2 * k,
                sim_anchor: Some(anchor_state),
            };
            let frames = wm.predict(&request)?;
            debug_assert_eq!(frames.len(), 2 * k);

            // Keep the recovery half: step j observes the frame at excursion
            // (k - j + 1) and commands the next waypoint inward.
            let mut steps = Vec::with_capacity(k);
            for jj in 0..k {
                let observed_pose = actions[k - 1 + jj]; // pose of frame (k + jj)
                let action = actions[k + jj];
                steps.push(TimeStep {
                    observed_pose,
                    action,
                    frame: frames[k - 1 + jj].clone(),
                });
            }
            let mut recovery = Trajectory::new(0, Provenance::Synthesized, steps);
            recovery.pivot = Some(m as u32);
            recovery.source_id = Some(traj.id);
            return Ok(SynthesizedTrajectory {
                recovery,
                terminal_frame: frames[2 * k - 1].clone(),
                pivot: m as u32,
                source_id: traj.id,
                deviation_dir: v_d,
            });
        }
        continue 'pivots;
    }
    Err(SynthesisError::PivotBudgetExhausted)
}

/// Synthesize a batch of episodes in parallel. Episode `i` draws from its
/// own `(seed, i)` stream and picks its source trajectory from it, so the
/// result is independent of worker scheduling.
pub fn synthesize_batch(
    trajs: &[Trajectory],
    wm: &dyn WorldModel,
    cfg: &SynthesisConfig,
    history_len: usize,
    params: &SimParams,
) -> Result<(Vec<SynthesizedTrajectory>, SynthesisStats), SynthesisError> {
    cfg.validate(history_len)?;
    if trajs.is_empty() {
        return Err(SynthesisError::EmptyDataset);
    }
    let mean_delta = mean_step_displacement(trajs)?;

    let episodes: Vec<(Option<SynthesizedTrajectory>, SynthesisStats)> =
        par::map_indexed(cfg.episodes, |i| {
            let mut rng = stream(cfg.seed, "synthesis-episode", i as u64);
            let source = &trajs[rng.gen_range(0..trajs.len())];
            let mut stats = SynthesisStats::default();
            match synthesize_recovery(
                source,
                wm,
                cfg,
                mean_delta,
                history_len,
                params,
                &mut rng,
                &mut stats,
            ) {
                Ok(mut s) => {
                    s.recovery.id = i as u64;
                    (Some(s), stats)
                }
                Err(_) => {
                    stats.failed_episodes += 1;
                    (None, stats)
                }
            }
        });

    let mut out = Vec::with_capacity(cfg.episodes);
    let mut stats = SynthesisStats::default();
    for (episode, s) in episodes {
        stats.merge(&s);
        if let Some(e) = episode {
            out.push(e);
        }
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{initial_state, Renderer, scripted_expert, SimParams, TaskId};
    use crate::geometry::Action;
    use crate::math::Quat;
    use crate::worldmodel::{HallucinationConfig, OracleWm};

    fn straight_traj(n: usize, step: f64) -> Trajectory {
        let frame = crate::envsim::Frame::constant(4, 4, 0.5);
        let steps = (0..n)
            .map(|i| {
                let pose = Action {
                    translation: [i as f64 * step, 0.0, 0.05],
                    orientation: Quat::IDENTITY,
                    gripper: 1.0,
                };
                let action = Action {
                    translation: [(i + 1) as f64 * step, 0.0, 0.05],
                    orientation: Quat::IDENTITY,
                    gripper: 1.0,
                };
                TimeStep {
                    observed_pose: pose,
                    action,
                    frame: frame.clone(),
                }
            })
            .collect();
        Trajectory::new(0, Provenance::Expert, steps)
    }

    #[test]
    fn mean_displacement_uniform_and_mixed() {
        let t = straight_traj(6, 0.01);
        assert!((mean_step_displacement(&[t]).unwrap() - 0.01).abs() < 1e-12);

        let a = straight_traj(2, 0.01);
        let b = straight_traj(2, 0.03);
        let m = mean_step_displacement(&[a, b]).unwrap();
        assert!((m - 0.02).abs() < 1e-12);
    }

    #[test]
    fn mean_displacement_rejects_empty_input() {
        assert!(matches!(
            mean_step_displacement(&[]),
            Err(SynthesisError::EmptyDataset)
        ));
        let t = straight_traj(1, 0.01); // one step, zero transitions
        assert!(matches!(
            mean_step_displacement(&[t]),
            Err(SynthesisError::NoTransitions)
        ));
    }

    #[test]
    fn direction_admissibility_examples() {
        // Antipodal: 180 degrees, admissible at the 120-degree threshold.
        assert!(direction_admissible([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], 120.0));
        // Orthogonal: 90 degrees < 120, rejected.
        assert!(!direction_admissible([0.0, 1.0, 0.0], [1.0, 0.0, 0.0], 120.0));
        // Just past the threshold.
        let cos121 = 121f64.to_radians().cos();
        let v = [cos121, (1.0 - cos121 * cos121).sqrt(), 0.0];
        assert!(direction_admissible(v, [1.0, 0.0, 0.0], 120.0));
    }

    #[test]
    fn sampler_only_returns_admissible_directions() {
        let mut rng = stream(1, "synth-test", 0);
        for _ in 0..200 {
            let s = sample_deviation_direction([0.0, 0.02, 0.0], 120.0, &mut rng).unwrap();
            assert!((math::norm(s.direction) - 1.0).abs() < 1e-9);
            assert!(math::dot(s.direction, [0.0, 1.0, 0.0]) <= -0.5 + 1e-9);
        }
    }

    #[test]
    fn sampler_rejects_stationary_steps() {
        let mut rng = stream(2, "synth-test", 1);
        assert!(matches!(
            sample_deviation_direction([0.0, 0.0, 1e-9], 120.0, &mut rng),
            Err(SynthesisError::StationaryStep)
        ));
    }

    #[test]
    fn acceptance_rate_matches_spherical_cap_area() {
        // Cap of half-angle 60 degrees: area fraction (1 - cos 60)/2 = 0.25.
        let mut rng = stream(3, "synth-test", 2);
        let mut attempts = 0u64;
        let accepts = 100_000u64;
        for _ in 0..accepts {
            let s = sample_deviation_direction([0.013, -0.004, 0.002], 120.0, &mut rng).unwrap();
            attempts += u64::from(s.attempts);
        }
        let rate = accepts as f64 / attempts as f64;
        let sigma = (0.25 * 0.75 / attempts as f64).sqrt();
        assert!(
            (rate - 0.25).abs() < 3.0 * sigma,
            "rate {rate} outside 3 sigma of 0.25 (sigma {sigma})"
        );
    }

    #[test]
    fn corrective_actions_smallest_case() {
        let traj = straight_traj(4, 0.01);
        let ws = Aabb::new([-1.0; 3], [1.0; 3]);
        let actions =
            build_corrective_actions(&traj, 2, 1, [0.0, 0.0, 1.0], 0.02, &ws).unwrap();
        assert_eq!(actions.len(), 2);
        let anchor = traj.steps[2].observed_pose.translation;
        assert_eq!(actions[0].translation, [anchor[0], anchor[1], anchor[2] + 0.02]);
        assert_eq!(actions[1].translation, anchor);
    }

    #[test]
    fn corrective_actions_hand_computed_waypoints() {
        let traj = straight_traj(8, 0.01);
        let ws = Aabb::new([-1.0; 3], [1.0; 3]);
        let k = 3;
        let delta = 0.01;
        let actions =
            build_corrective_actions(&traj, 4, k, [0.0, 0.0, 1.0], delta, &ws).unwrap();
        assert_eq!(actions.len(), 6);
        let anchor = traj.steps[4].observed_pose.translation;
        // Action 6 (index 5) returns exactly to the anchor.
        assert_eq!(actions[5].translation, anchor);
        // Max excursion of k * delta at action 3 (index 2).
        let apex = actions[2].translation;
        assert!((apex[2] - (anchor[2] + 0.03)).abs() < 1e-15);
        // Every consecutive displacement norm equals delta.
        let mut prev = anchor;
        for a in &actions {
            let d = math::norm(math::sub(a.translation, prev));
            assert!((d - delta).abs() < 1e-12, "step {d} != {delta}");
            prev = a.translation;
        }
        // Orientation and gripper frozen at pivot values.
        for a in &actions {
            assert_eq!(a.orientation, traj.steps[4].observed_pose.orientation);
            assert_eq!(a.gripper, traj.steps[4].observed_pose.gripper);
        }
    }

    #[test]
    fn corrective_actions_reject_out_of_workspace_paths() {
        let traj = straight_traj(4, 0.01);
        let ws = Aabb::new([-0.05; 3], [0.05, 0.05, 0.06]);
        assert!(matches!(
            build_corrective_actions(&traj, 2, 8, [0.0, 0.0, 1.0], 0.01, &ws),
            Err(SynthesisError::OutOfWorkspace)
        ));
    }

    fn expert_demo(seed: u64) -> (Trajectory, SimParams) {
        let params = SimParams::default();
        let renderer = Renderer::new(params.intrinsics, params.calib);
        let mut rng = stream(seed, "synth-demo", 0);
        let state = initial_state(TaskId::Push, &params, &mut rng);
        let mut traj = scripted_expert(&state, TaskId::Push, seed, &params, &renderer).unwrap();
        traj.id = 7;
        (traj, params)
    }

    #[test]
    fn oracle_synthesis_returns_k_recovery_steps_closing_on_the_anchor() {
        let (traj, params) = expert_demo(11);
        let wm = OracleWm::new(params.clone(), HallucinationConfig::clean());
        let cfg = SynthesisConfig {
            episodes: 1,
            seed: 5,
            ..SynthesisConfig::default()
        };
        let mean_delta = mean_step_displacement(std::slice::from_ref(&traj)).unwrap();
        let mut rng = stream(5, "synth-run", 0);
        let mut stats = SynthesisStats::default();
        let s = synthesize_recovery(
            &traj, &wm, &cfg, mean_delta, 2, &params, &mut rng, &mut stats,
        )
        .unwrap();

        let k = cfg.deviation_horizon;
        assert_eq!(s.recovery.len(), k);
        assert_eq!(s.recovery.provenance, Provenance::Synthesized);
        assert_eq!(s.recovery.pivot, Some(s.pivot));
        assert_eq!(s.recovery.source_id, Some(7));

        // Angular constraint against the pivot's expert motion.
        let pivot_step = &traj.steps[s.pivot as usize];
        let next = math::sub(
            pivot_step.action.translation,
            pivot_step.observed_pose.translation,
        );
        let t_hat = math::normalize(next, 0.0).unwrap();
        assert!(math::dot(s.deviation_dir, t_hat) <= -0.5 + 1e-9);

        // Anchor closure: the last action returns exactly to the pivot pose.
        let anchor = pivot_step.observed_pose.translation;
        let last = s.recovery.steps.last().unwrap();
        for c in 0..3 {
            assert!((last.action.translation[c] - anchor[c]).abs() < 1e-12);
        }

        // Step-size conformance over every kept displacement.
        for st in &s.recovery.steps {
            let d = math::norm(math::sub(
                st.action.translation,
                st.observed_pose.translation,
            ));
            assert!((d - mean_delta).abs() < 1e-12);
        }

        // Recovery steps retrace the constructed waypoints in reverse.
        let ws = params.workspace;
        let rebuilt = build_corrective_actions(
            &traj,
            s.pivot as usize,
            k,
            s.deviation_dir,
            mean_delta,
            &ws,
        )
        .unwrap();
        for (jj, st) in s.recovery.steps.iter().enumerate() {
            assert_eq!(st.observed_pose.translation, rebuilt[k - 1 + jj].translation);
            assert_eq!(st.action.translation, rebuilt[k + jj].translation);
        }
    }

    #[test]
    fn clean_oracle_terminal_frame_matches_anchor_render_when_contact_free() {
        let (traj, params) = expert_demo(13);
        let wm = OracleWm::new(params.clone(), HallucinationConfig::clean());
        let cfg = SynthesisConfig {
            episodes: 1,
            seed: 9,
            ..SynthesisConfig::default()
        };
        let mean_delta = mean_step_displacement(std::slice::from_ref(&traj)).unwrap();
        let renderer = Renderer::new(params.intrinsics, params.calib);

        let mut matched = 0;
        for i in 0..8u64 {
            let mut rng = stream(9, "synth-terminal", i);
            let mut stats = SynthesisStats::default();
            let Ok(s) = synthesize_recovery(
                &traj, &wm, &cfg, mean_delta, 2, &params, &mut rng, &mut stats,
            ) else {
                continue;
            };
            // Expected: render of the replayed pivot state (pose returns to
            // the anchor; the object may only differ if the excursion touched
            // it, which the anti-expert direction makes rare).
            let cmds: Vec<Action> = traj.steps[..s.pivot as usize]
                .iter()
                .map(|s| s.action)
                .collect();
            let anchor_state = replay(traj.initial_state.as_ref().unwrap(), &cmds, &params)
                .pop()
                .unwrap();
            if s.terminal_frame == renderer.render(&anchor_state) {
                matched += 1;
            }
        }
        assert!(matched >= 6, "only {matched}/8 terminal frames bit-matched");
    }

    #[test]
    fn batch_synthesis_is_deterministic_and_tracks_stats() {
        let (traj, params) = expert_demo(17);
        let wm = OracleWm::new(params.clone(), HallucinationConfig::clean());
        let cfg = SynthesisConfig {
            episodes: 24,
            seed: 3,
            ..SynthesisConfig::default()
        };
        let trajs = vec![traj];
        let (a, stats_a) = synthesize_batch(&trajs, &wm, &cfg, 2, &params).unwrap();
        let (b, stats_b) = synthesize_batch(&trajs, &wm, &cfg, 2, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(stats_a, stats_b);
        assert!(!a.is_empty());
        assert!(stats_a.direction_attempts >= stats_a.direction_accepts);
        // Roughly a quarter of draws are admissible.
        assert!(stats_a.acceptance_rate() > 0.1 && stats_a.acceptance_rate() < 0.5);
    }
}
