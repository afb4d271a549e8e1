//! Camera/SE(3) geometry for action-to-image conditioning.
//!
//! An 8-dim control action (translation, unit quaternion, gripper scalar)
//! fixes the eye-in-hand camera pose through a constant hand-eye calibration.
//! Each pixel `(u, v)` then carries a unit viewing ray `R K^-1 [u, v, 1]^T /
//! ||.||`, and a pair of poses yields a dense `H x W x 7` condition tensor:
//! a spatially constant origin-displacement grid (3 channels), a per-pixel
//! normalized ray-direction shift (3 channels), and a broadcast gripper
//! channel (1).
//!
//! Frames: world is right-handed, +z up. The camera looks down its own +z;
//! image `v` grows downward. Quaternions are `(w, x, y, z)` Hamilton with
//! canonical sign `w >= 0`, normalized on construction.

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{self, Mat3, Quat, Vec3};

/// Tolerance for the unit-quaternion check on action inputs.
pub const QUAT_TOL: f64 = 1e-9;
/// Below this direction-difference norm, the directional shift is defined
/// as zero (no directional motion at that pixel).
pub const ZERO_MOTION_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("quaternion norm {norm} deviates from 1 beyond tolerance")]
    NonUnitQuaternion { norm: f64 },
    #[error("zero quaternion cannot represent an orientation")]
    ZeroQuaternion,
    #[error("gripper value {0} outside [0, 1]")]
    GripperOutOfRange(f64),
    #[error("camera intrinsics are singular or invalid: {0}")]
    BadIntrinsics(String),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds {
        u: u32,
        v: u32,
        width: u32,
        height: u32,
    },
    #[error("matrix is not a proper rotation (defect {0})")]
    NotARotation(f64),
}

/// 8-dim control command: where the gripper should go and how open it is.
/// Translation is in meters, world frame; orientation is a unit quaternion
/// `(w, x, y, z)`; gripper is in `[0, 1]` (0 closed, 1 open).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub translation: Vec3,
    pub orientation: Quat,
    pub gripper: f64,
}

impl Action {
    /// Normalizes the quaternion (canonical sign `w >= 0`) and validates the
    /// gripper range.
    pub fn new(
        translation: Vec3,
        orientation: (f64, f64, f64, f64),
        gripper: f64,
    ) -> Result<Action, GeometryError> {
        let (w, x, y, z) = orientation;
        let q = Quat::new(w, x, y, z).ok_or(GeometryError::ZeroQuaternion)?;
        if !(0.0..=1.0).contains(&gripper) {
            return Err(GeometryError::GripperOutOfRange(gripper));
        }
        Ok(Action {
            translation,
            orientation: q,
            gripper,
        })
    }

    /// Identity orientation, open gripper.
    pub fn from_translation(translation: Vec3) -> Action {
        Action {
            translation,
            orientation: Quat::IDENTITY,
            gripper: 1.0,
        }
    }

    /// The action as the flat 8-vector `[t(3), q(4), g(1)]`.
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.translation[0],
            self.translation[1],
            self.translation[2],
            self.orientation.w,
            self.orientation.x,
            self.orientation.y,
            self.orientation.z,
            self.gripper,
        ]
    }

    /// Inverse of [`Action::to_array`]; normalizes the quaternion, clamps the
    /// gripper into `[0, 1]`, and falls back to the identity orientation for a
    /// degenerate quaternion. Intended for raw network output.
    pub fn sanitize_from_array(v: &[f64; 8]) -> Action {
        let q = Quat::new(v[3], v[4], v[5], v[6]).unwrap_or(Quat::IDENTITY);
        Action {
            translation: [v[0], v[1], v[2]],
            orientation: q,
            gripper: v[7].clamp(0.0, 1.0),
        }
    }

    fn check_unit_quat(&self) -> Result<(), GeometryError> {
        let n = self.orientation.norm();
        if (n - 1.0).abs() > QUAT_TOL {
            return Err(GeometryError::NonUnitQuaternion { norm: n });
        }
        Ok(())
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<CameraIntrinsics, GeometryError> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0) || !(self.fy > 0.0) {
            return Err(GeometryError::BadIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::BadIntrinsics("empty image".into()));
        }
        if !(0.0 <= self.cx && self.cx < f64::from(self.width))
            || !(0.0 <= self.cy && self.cy < f64::from(self.height))
        {
            return Err(GeometryError::BadIntrinsics(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// The matrix `[[fx,0,cx],[0,fy,cy],[0,0,1]]`.
    pub fn matrix(&self) -> Mat3 {
        [
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ]
    }
}

/// Fixed gripper-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandEyeCalib {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl HandEyeCalib {
    pub fn identity() -> HandEyeCalib {
        HandEyeCalib {
            rotation: math::IDENTITY3,
            translation: [0.0; 3],
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<HandEyeCalib, GeometryError> {
        let defect = math::orthonormality_defect(&rotation);
        if defect > 1e-9 || (math::det(&rotation) - 1.0).abs() > 1e-9 {
            return Err(GeometryError::NotARotation(defect));
        }
        Ok(HandEyeCalib {
            rotation,
            translation,
        })
    }
}

/// Camera-to-world rotation and camera origin in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub origin: Vec3,
}

/// Camera pose implied by an action through the hand-eye calibration:
/// `R = R(q) * R_calib`, `o = R(q) * t_calib + t`.
pub fn pose_from_action(a: &Action, calib: &HandEyeCalib) -> Result<CameraPose, GeometryError> {
    a.check_unit_quat()?;
    let rq = a.orientation.to_matrix();
    Ok(CameraPose {
        rotation: math::mat_mul(&rq, &calib.rotation),
        origin: math::add(math::mat_vec(&rq, calib.translation), a.translation),
    })
}

/// Unit viewing direction of pixel `(u, v)`: `R K^-1 [u, v, 1]^T`, normalized.
pub fn pixel_ray_direction(
    pose: &CameraPose,
    k: &CameraIntrinsics,
    u: u32,
    v: u32,
) -> Result<Vec3, GeometryError> {
    k.validate()?;
    if u >= k.width || v >= k.height {
        return Err(GeometryError::PixelOutOfBounds {
            u,
            v,
            width: k.width,
            height: k.height,
        });
    }
    Ok(ray_dir_unchecked(pose, k, f64::from(u), f64::from(v)))
}

/// Ray direction without bounds/validity checks; also used at fractional
/// pixel coordinates by the renderer.
pub(crate) fn ray_dir_unchecked(pose: &CameraPose, k: &CameraIntrinsics, u: f64, v: f64) -> Vec3 {
    // K^-1 [u, v, 1] in closed form for the pinhole K.
    let cam = [(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0];
    let world = math::mat_vec(&pose.rotation, cam);
    math::normalize(world, 0.0).expect("pinhole ray has nonzero length")
}

/// All pixel rays as an `H x W x 3` tensor; element `(v, u, :)` equals
/// [`pixel_ray_direction`] at `(u, v)`.
pub fn ray_grid(pose: &CameraPose, k: &CameraIntrinsics) -> Result<Array3<f64>, GeometryError> {
    k.validate()?;
    let (h, w) = (k.height as usize, k.width as usize);
    let mut grid = Array3::zeros((h, w, 3));
    for v in 0..h {
        for u in 0..w {
            let d = ray_dir_unchecked(pose, k, u as f64, v as f64);
            for c in 0..3 {
                grid[(v, u, c)] = d[c];
            }
        }
    }
    Ok(grid)
}

/// Dense geometric condition tensor, `H x W x 7`, channel layout
/// `[delta_origin(3), delta_direction(3), gripper(1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGeoCondition {
    pub data: Array3<f64>,
}

impl DenseGeoCondition {
    /// The constant origin-displacement vector (channels 0..3 at any pixel).
    pub fn origin_shift(&self) -> Vec3 {
        [self.data[(0, 0, 0)], self.data[(0, 0, 1)], self.data[(0, 0, 2)]]
    }

    /// The constant gripper value (channel 6).
    pub fn gripper(&self) -> f64 {
        self.data[(0, 0, 6)]
    }

    /// Per-channel means plus the mean per-pixel norm of the directional
    /// shift: the 8-value summary used to condition the latent flow model.
    pub fn summary(&self) -> [f64; 8] {
        let (h, w, _) = self.data.dim();
        let n = (h * w) as f64;
        let mut out = [0.0; 8];
        for v in 0..h {
            for u in 0..w {
                for c in 0..7 {
                    out[c] += self.data[(v, u, c)];
                }
                let dd = [
                    self.data[(v, u, 3)],
                    self.data[(v, u, 4)],
                    self.data[(v, u, 5)],
                ];
                out[7] += math::norm(dd);
            }
        }
        for item in &mut out {
            *item /= n;
        }
        out
    }
}

/// Assemble the dense geometric condition for the motion `pose_t -> pose_ti`.
///
/// Origin channels broadcast `pose_ti.origin - pose_t.origin`; direction
/// channels hold the per-pixel normalized ray-direction difference, with a
/// direction-difference norm below [`ZERO_MOTION_EPS`] mapping to the zero
/// vector; the gripper channel broadcasts `g`.
pub fn dense_geo_condition(
    pose_t: &CameraPose,
    pose_ti: &CameraPose,
    k: &CameraIntrinsics,
    g: f64,
) -> Result<DenseGeoCondition, GeometryError> {
    k.validate()?;
    if !(0.0..=1.0).contains(&g) {
        return Err(GeometryError::GripperOutOfRange(g));
    }
    let (h, w) = (k.height as usize, k.width as usize);
    let delta_o = math::sub(pose_ti.origin, pose_t.origin);
    let mut data = Array3::zeros((h, w, 7));
    for v in 0..h {
        for u in 0..w {
            let d_t = ray_dir_unchecked(pose_t, k, u as f64, v as f64);
            let d_ti = ray_dir_unchecked(pose_ti, k, u as f64, v as f64);
            let shift = math::normalize(math::sub(d_ti, d_t), ZERO_MOTION_EPS).unwrap_or([0.0; 3]);
            for c in 0..3 {
                data[(v, u, c)] = delta_o[c];
                data[(v, u, 3 + c)] = shift[c];
            }
            data[(v, u, 6)] = g;
        }
    }
    Ok(DenseGeoCondition { data })
}
