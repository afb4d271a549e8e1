//! Time-aligned trajectories of (pose, action, frame) steps with a
//! provenance tag.
//!
//! Alignment convention used everywhere: step `i` stores the gripper pose at
//! observation time, the frame observed from that pose, and the action
//! commanded from it. Executing `steps[i].action` produces the state whose
//! pose is `steps[i + 1].observed_pose`.

use serde::{Deserialize, Serialize};

use crate::envsim::{EnvState, Frame};
use crate::geometry::Action;

/// Where a trajectory's supervision came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Expert,
    Play,
    Synthesized,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Expert => "expert",
            Provenance::Play => "play",
            Provenance::Synthesized => "synthesized",
        }
    }
}

/// One aligned step: the pose the frame was observed from, the observation,
/// and the action taken from it.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeStep {
    /// Gripper pose (and gripper opening) at observation time, action-shaped.
    pub observed_pose: Action,
    /// Command issued from this state.
    pub action: Action,
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub provenance: Provenance,
    pub steps: Vec<TimeStep>,
    /// Simulator state at step 0; present for sim-collected data (expert,
    /// play), absent for world-model output. Replaying `steps[..].action`
    /// from here reproduces every logged frame exactly.
    pub initial_state: Option<EnvState>,
    /// Pivot index into the source trajectory, for synthesized recoveries.
    pub pivot: Option<u32>,
    /// Id of the source trajectory, for synthesized recoveries.
    pub source_id: Option<u64>,
}

impl Trajectory {
    pub fn new(id: u64, provenance: Provenance, steps: Vec<TimeStep>) -> Trajectory {
        Trajectory {
            id,
            provenance,
            steps,
            initial_state: None,
            pivot: None,
            source_id: None,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Translation deltas between consecutive observed poses.
    pub fn step_displacements(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.windows(2).map(|w| {
            crate::math::norm(crate::math::sub(
                w[1].observed_pose.translation,
                w[0].observed_pose.translation,
            ))
        })
    }
}
