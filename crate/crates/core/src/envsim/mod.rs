//! Deterministic synthetic manipulation environment with an eye-in-hand
//! camera: kinematic gripper motion with a planar contact rule, an analytic
//! ray-cast renderer, a scripted expert, goal-agnostic play collection, and
//! the task success predicate.
//!
//! Everything here is a pure function of `(state, action, seed)`; replaying
//! logged actions from a logged initial state reproduces every frame
//! bit-for-bit.

mod expert;
mod render;

pub use expert::{collect_play_data, count_contact_events, scripted_expert, ExpertFailure, ExpertParams};
pub use render::{project_point, render, Renderer};

pub(crate) use render::ObjectShape;

/// Object geometry for one render, optionally warped by per-axis scale
/// factors. Crate-internal hook for the hallucination process.
pub(crate) fn object_shape(state: &EnvState, morph_scale: Option<crate::math::Vec3>) -> ObjectShape {
    ObjectShape::from_state(state, morph_scale)
}

/// Render with an overridden object shape. Crate-internal hook for the
/// hallucination process.
pub(crate) fn render_with_shape(renderer: &Renderer, state: &EnvState, shape: &ObjectShape) -> Frame {
    renderer.render_shape(state, shape)
}

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Action, CameraIntrinsics, HandEyeCalib};
use crate::math::{self, Quat, Vec3};

/// Closed axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Aabb {
        Aabb { min, max }
    }

    /// Boundary points are inside (closed region).
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }

    pub fn center(&self) -> Vec3 {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn volume(&self) -> f64 {
        (0..3)
            .map(|i| (self.max[i] - self.min[i]).max(0.0))
            .product()
    }

    pub fn clamp(&self, p: Vec3) -> Vec3 {
        [
            p[0].clamp(self.min[0], self.max[0]),
            p[1].clamp(self.min[1], self.max[1]),
            p[2].clamp(self.min[2], self.max[2]),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    /// Rigid cube, rendered as an axis-aligned box.
    Block,
    /// Soft bag, rendered as a superellipsoid (exponent-2, i.e. ellipsoid)
    /// that squashes against the table in proportion to its softness when
    /// the gripper presses into it.
    Bag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Push,
    Pick,
}

impl TaskId {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskId::Push => "push",
            TaskId::Pick => "pick",
        }
    }
}

impl std::str::FromStr for TaskId {
    type Err = String;
    fn from_str(s: &str) -> Result<TaskId, String> {
        match s {
            "push" => Ok(TaskId::Push),
            "pick" => Ok(TaskId::Pick),
            other => Err(format!("unknown task `{other}` (expected push|pick)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub object_pos: Vec3,
    pub object_kind: ObjectKind,
    /// Radius of the object (half-extent for a block).
    pub object_radius: f64,
    /// Bag deformation coefficient in [0, 1]; 0 keeps the bag spherical.
    pub softness: f64,
    pub target_region: Aabb,
    pub table_height: f64,
    pub texture_seed: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("target region has no volume")]
    DegenerateTarget,
    #[error("object outside workspace bounds")]
    ObjectOutOfBounds,
}

impl Scene {
    pub fn validate(&self, workspace: &Aabb) -> Result<(), SceneError> {
        if self.target_region.volume() <= 0.0 {
            return Err(SceneError::DegenerateTarget);
        }
        if !workspace.contains(self.object_pos) {
            return Err(SceneError::ObjectOutOfBounds);
        }
        Ok(())
    }

    /// Rest height of the object center when sitting on the table.
    pub fn rest_z(&self, params: &SimParams) -> f64 {
        let squash = match self.object_kind {
            ObjectKind::Block => 1.0,
            ObjectKind::Bag => 1.0 - params.bag_rest_squash * self.softness,
        };
        self.table_height + self.object_radius * squash
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub scene: Scene,
    /// Gripper pose and opening, action-shaped.
    pub gripper: Action,
    pub held: bool,
    pub step_count: u32,
    /// Set when the last step had to clamp the gripper at a workspace bound.
    pub clamped: bool,
}

impl EnvState {
    pub fn new(scene: Scene, gripper: Action) -> EnvState {
        EnvState {
            scene,
            gripper,
            held: false,
            step_count: 0,
            clamped: false,
        }
    }
}

/// Grayscale image, values in [0, 1], stored `H x W x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pixels: Array3<f32>,
}

impl Frame {
    pub fn new(pixels: Array3<f32>) -> Frame {
        Frame { pixels }
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn constant(h: usize, w: usize, value: f32) -> Frame {
        Frame {
            pixels: Array3::from_elem((h, w, 1), value),
        }
    }

    pub fn get(&self, v: usize, u: usize) -> f32 {
        self.pixels[(v, u, 0)]
    }
}

/// Fixed physical and camera parameters of the simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub intrinsics: CameraIntrinsics,
    pub calib: HandEyeCalib,
    pub workspace: Aabb,
    /// Per-step gripper displacement clamp (meters).
    pub max_step: f64,
    /// Gripper tip contact radius.
    pub tip_radius: f64,
    /// Tip must be below `table + contact_height` to touch the object.
    pub contact_height: f64,
    /// Grasp engages when gripper < `grasp_close` within this distance.
    pub grasp_radius: f64,
    pub grasp_close: f64,
    pub grasp_open: f64,
    /// Free-fall distance per step for a released object.
    pub fall_per_step: f64,
    /// Fractional squash of a resting bag at softness 1.
    pub bag_rest_squash: f64,
    pub expert: ExpertParams,
}

impl Default for SimParams {
    fn default() -> SimParams {
        SimParams {
            intrinsics: CameraIntrinsics {
                fx: 48.0,
                fy: 48.0,
                cx: 32.0,
                cy: 32.0,
                width: 64,
                height: 64,
            },
            calib: eye_in_hand_calib(35.0, [0.0, 0.0, 0.06]),
            workspace: Aabb::new([-0.35, -0.35, 0.0], [0.35, 0.35, 0.40]),
            max_step: 0.05,
            tip_radius: 0.016,
            contact_height: 0.05,
            grasp_radius: 0.035,
            grasp_close: 0.45,
            grasp_open: 0.55,
            fall_per_step: 0.04,
            bag_rest_squash: 0.25,
            expert: ExpertParams::default(),
        }
    }
}

/// Camera mounted above the gripper tip, pitched forward (toward +x) by
/// `pitch_deg` from straight down. At pitch 0 the camera looks straight at
/// the table with image-up toward +x.
pub fn eye_in_hand_calib(pitch_deg: f64, offset: Vec3) -> HandEyeCalib {
    let th = pitch_deg.to_radians();
    let (s, c) = (th.sin(), th.cos());
    // Columns: camera x, y, z axes expressed in the gripper frame.
    let rotation = [[0.0, -c, s], [-1.0, 0.0, 0.0], [0.0, -s, -c]];
    HandEyeCalib::new(rotation, offset).expect("proper rotation by construction")
}

/// Deterministic transition: move the gripper toward the commanded pose
/// (displacement clamped to `max_step`, position clamped to the workspace),
/// update grasp state, carry or push the object, and settle gravity.
pub fn step(state: &EnvState, action: &Action, params: &SimParams) -> EnvState {
    let mut next = state.clone();
    next.step_count = state.step_count.saturating_add(1);

    // Gripper motion.
    let current = state.gripper.translation;
    let mut delta = math::sub(action.translation, current);
    let d = math::norm(delta);
    if d > params.max_step {
        delta = math::scale(delta, params.max_step / d);
    }
    let unclamped = math::add(current, delta);
    let clamped_pos = params.workspace.clamp(unclamped);
    next.clamped = clamped_pos != unclamped;
    next.gripper = Action {
        translation: clamped_pos,
        orientation: action.orientation,
        gripper: action.gripper.clamp(0.0, 1.0),
    };

    let tip = next.gripper.translation;
    let obj = state.scene.object_pos;
    let g = next.gripper.gripper;

    // Grasp handling with hysteresis, before contact resolution.
    let mut held = state.held;
    if held {
        if g > params.grasp_open {
            held = false;
        }
    } else if g < params.grasp_close && math::norm(math::sub(obj, tip)) <= params.grasp_radius {
        held = true;
    }
    next.held = held;

    if held {
        // Carried: the object keeps its grasp-time offset from the tip, but
        // the table still pushes back from below.
        let offset = if state.held {
            math::sub(state.scene.object_pos, state.gripper.translation)
        } else {
            math::sub(obj, tip)
        };
        let mut pos = math::add(tip, offset);
        pos[2] = pos[2].max(state.scene.rest_z(params));
        next.scene.object_pos = pos;
    } else {
        let mut pos = obj;
        // Gravity: settle toward the rest height, bounded per step.
        let rest = state.scene.rest_z(params);
        if pos[2] > rest {
            pos[2] = (pos[2] - params.fall_per_step).max(rest);
        } else {
            pos[2] = rest;
        }
        // Planar push: a soft object in the contact ring is first carried
        // with the tip's motion (table friction against a wide pusher),
        // then pushed radially out of any remaining overlap. A nearly
        // closed gripper pinches instead of pushing, so the rule only
        // applies while open.
        let contact_r = state.scene.object_radius + params.tip_radius;
        if g >= params.grasp_close && tip[2] - state.scene.table_height < params.contact_height {
            let dist = math::norm([pos[0] - tip[0], pos[1] - tip[1], 0.0]);
            if dist < contact_r {
                pos[0] += tip[0] - state.gripper.translation[0];
                pos[1] += tip[1] - state.gripper.translation[1];
                let away = [pos[0] - tip[0], pos[1] - tip[1], 0.0];
                let residual = math::norm(away);
                if residual < contact_r {
                    let dir = math::normalize(away, 1e-9).unwrap_or([1.0, 0.0, 0.0]);
                    pos[0] = tip[0] + dir[0] * contact_r;
                    pos[1] = tip[1] + dir[1] * contact_r;
                }
            }
        }
        next.scene.object_pos = pos;
    }
    next.scene.object_pos = params.workspace.clamp(next.scene.object_pos);
    next
}

/// Task success: the object centroid lies inside the (closed) target region.
pub fn success(state: &EnvState, _task: TaskId) -> bool {
    state.scene.target_region.contains(state.scene.object_pos)
}

/// Replay actions from an initial state, returning every visited state
/// (`out[0]` is the initial state, `out[i]` the state after `actions[i-1]`).
pub fn replay(initial: &EnvState, actions: &[Action], params: &SimParams) -> Vec<EnvState> {
    let mut states = Vec::with_capacity(actions.len() + 1);
    states.push(initial.clone());
    for a in actions {
        let next = step(states.last().unwrap(), a, params);
        states.push(next);
    }
    states
}

/// Default pose the gripper starts episodes from, with a small seeded offset.
pub fn start_gripper(task: TaskId, rng: &mut impl rand::Rng) -> Action {
    let (base_x, base_y) = match task {
        TaskId::Push => (-0.12, 0.0),
        TaskId::Pick => (-0.12, 0.0),
    };
    Action {
        translation: [
            base_x + rng.gen_range(-0.015..0.015),
            base_y + rng.gen_range(-0.015..0.015),
            0.12,
        ],
        orientation: Quat::IDENTITY,
        gripper: 1.0,
    }
}

/// Randomized solvable scene for a task. The object spawn region and the
/// fixed target region are disjoint, so fresh scenes are never already
/// solved.
pub fn sample_scene(task: TaskId, rng: &mut impl rand::Rng) -> Scene {
    let texture_seed = rng.gen::<u64>();
    match task {
        TaskId::Push => Scene {
            object_pos: [
                rng.gen_range(-0.02..0.10),
                rng.gen_range(-0.09..0.09),
                0.0, // settled by the first step
            ],
            object_kind: ObjectKind::Bag,
            object_radius: 0.042,
            softness: 0.5,
            target_region: Aabb::new([0.155, -0.065, 0.0], [0.265, 0.065, 0.08]),
            table_height: 0.0,
            texture_seed,
        },
        TaskId::Pick => Scene {
            object_pos: [
                rng.gen_range(-0.02..0.10),
                rng.gen_range(-0.04..0.09),
                0.0,
            ],
            object_kind: ObjectKind::Block,
            object_radius: 0.026,
            softness: 0.0,
            // Low ceiling so a carried object over the bin does not count
            // as deposited before release.
            target_region: Aabb::new([0.10, -0.21, 0.0], [0.21, -0.11, 0.05]),
            table_height: 0.0,
            texture_seed,
        },
    }
}

/// Fresh initial state for a task on a seeded RNG, object settled at rest.
pub fn initial_state(task: TaskId, params: &SimParams, rng: &mut impl rand::Rng) -> EnvState {
    let mut scene = sample_scene(task, rng);
    scene.object_pos[2] = scene.rest_z(params);
    EnvState::new(scene, start_gripper(task, rng))
}
