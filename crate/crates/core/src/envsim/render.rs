//! Analytic ray-cast renderer for the eye-in-hand camera.
//!
//! Per pixel: cast the viewing ray, intersect the table plane and the task
//! object (box or squashable ellipsoid), shade the nearest hit with a fixed
//! lambertian light, and paint the target region as a dark patch on the
//! table. Deterministic function of `(state, intrinsics, calib)`.

use ndarray::Array3;

use super::{EnvState, Frame, ObjectKind};
use crate::geometry::{pose_from_action, ray_dir_unchecked, CameraIntrinsics, CameraPose, HandEyeCalib};
use crate::math::{self, Vec3};

const BACKGROUND: f64 = 0.06;
const TARGET_TONE: f64 = 0.16;
const CHECKER_PERIOD: f64 = 0.045;
const AMBIENT: f64 = 0.35;
const DIFFUSE: f64 = 0.65;

/// Reusable renderer: caches the camera-frame unit ray of every pixel for a
/// fixed set of intrinsics, so a frame render only rotates and intersects.
#[derive(Debug, Clone)]
pub struct Renderer {
    intrinsics: CameraIntrinsics,
    calib: HandEyeCalib,
    /// Unit rays in the camera frame, row-major over (v, u).
    cam_rays: Vec<Vec3>,
}

impl Renderer {
    pub fn new(intrinsics: CameraIntrinsics, calib: HandEyeCalib) -> Renderer {
        let identity = CameraPose {
            rotation: math::IDENTITY3,
            origin: [0.0; 3],
        };
        let mut cam_rays = Vec::with_capacity((intrinsics.width * intrinsics.height) as usize);
        for v in 0..intrinsics.height {
            for u in 0..intrinsics.width {
                cam_rays.push(ray_dir_unchecked(
                    &identity,
                    &intrinsics,
                    f64::from(u),
                    f64::from(v),
                ));
            }
        }
        Renderer {
            intrinsics,
            calib,
            cam_rays,
        }
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn calib(&self) -> &HandEyeCalib {
        &self.calib
    }

    /// Camera pose for a state's gripper through this renderer's calibration.
    pub fn camera_pose(&self, state: &EnvState) -> CameraPose {
        pose_from_action(&state.gripper, &self.calib).expect("gripper quaternion is unit")
    }

    pub fn render(&self, state: &EnvState) -> Frame {
        self.render_shape(state, &ObjectShape::from_state(state, None))
    }

    /// Render with an explicitly overridden object shape (used by the
    /// hallucination process to warp the silhouette).
    pub(crate) fn render_shape(&self, state: &EnvState, shape: &ObjectShape) -> Frame {
        let pose = self.camera_pose(state);
        let (h, w) = (self.intrinsics.height as usize, self.intrinsics.width as usize);
        let mut pixels = Array3::zeros((h, w, 1));
        let scene = &state.scene;
        let light = math::normalize([0.35, -0.25, 0.9], 0.0).unwrap();

        for v in 0..h {
            for u in 0..w {
                let dir = math::mat_vec(&pose.rotation, self.cam_rays[v * w + u]);
                let mut best_t = f64::INFINITY;
                let mut value = BACKGROUND;

                // Table plane with checker texture and the target patch.
                if dir[2] < -1e-12 && pose.origin[2] > scene.table_height {
                    let t = (scene.table_height - pose.origin[2]) / dir[2];
                    if t > 0.0 && t < best_t {
                        let px = pose.origin[0] + t * dir[0];
                        let py = pose.origin[1] + t * dir[1];
                        let tone = if scene.target_region.contains([
                            px,
                            py,
                            scene.table_height,
                        ]) {
                            TARGET_TONE
                        } else {
                            checker_tone(px, py, scene.texture_seed)
                        };
                        // The table normal is +z: shade by the light's z.
                        value = tone * (AMBIENT + DIFFUSE * light[2]);
                        best_t = t;
                    }
                }

                // Task object.
                if let Some((t, n)) = shape.intersect(pose.origin, dir) {
                    if t > 0.0 && t < best_t {
                        let albedo = match scene.object_kind {
                            ObjectKind::Bag => 0.95,
                            ObjectKind::Block => 0.85,
                        };
                        let lambert = math::dot(n, light).max(0.0);
                        value = albedo * (AMBIENT + DIFFUSE * lambert);
                    }
                }

                pixels[(v, u, 0)] = value.clamp(0.0, 1.0) as f32;
            }
        }
        Frame { pixels }
    }
}

// Aperiodic cell-noise texture: periodic patterns would alias camera
// positions one period apart into identical observations.
fn checker_tone(x: f64, y: f64, texture_seed: u64) -> f64 {
    let ix = (x / CHECKER_PERIOD).floor() as i64;
    let iy = (y / CHECKER_PERIOD).floor() as i64;
    let mut h = texture_seed ^ 0x9e3779b97f4a7c15;
    h ^= (ix as u64).wrapping_mul(0xbf58476d1ce4e5b9);
    h = h.rotate_left(31);
    h ^= (iy as u64).wrapping_mul(0x94d049bb133111eb);
    h = h.wrapping_mul(0x2545f4914f6cdd1d);
    let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
    0.30 + 0.20 * unit
}

/// Analytic object geometry used for a single render.
#[derive(Debug, Clone)]
pub(crate) struct ObjectShape {
    pub center: Vec3,
    /// Semi-axes (x, y, z). Equal axes for a block's bounding box.
    pub axes: Vec3,
    pub kind: ObjectKind,
}

impl ObjectShape {
    /// Shape of the scene's object; `morph_scale` optionally perturbs the
    /// axes (hallucination warp), expressed as multiplicative factors.
    pub fn from_state(state: &EnvState, morph_scale: Option<Vec3>) -> ObjectShape {
        let s = &state.scene;
        let r = s.object_radius;
        let sq = s.kind_squash(state);
        let mut axes = [r, r, r * sq];
        if let Some(m) = morph_scale {
            for c in 0..3 {
                axes[c] *= m[c].max(0.05);
            }
        }
        ObjectShape {
            center: s.object_pos,
            axes,
            kind: s.object_kind,
        }
    }

    /// Nearest intersection `t` and outward unit normal, if any.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<(f64, Vec3)> {
        match self.kind {
            ObjectKind::Bag => self.intersect_ellipsoid(origin, dir),
            ObjectKind::Block => self.intersect_box(origin, dir),
        }
    }

    fn intersect_ellipsoid(&self, origin: Vec3, dir: Vec3) -> Option<(f64, Vec3)> {
        // Scale space so the ellipsoid becomes the unit sphere.
        let o = [
            (origin[0] - self.center[0]) / self.axes[0],
            (origin[1] - self.center[1]) / self.axes[1],
            (origin[2] - self.center[2]) / self.axes[2],
        ];
        let d = [
            dir[0] / self.axes[0],
            dir[1] / self.axes[1],
            dir[2] / self.axes[2],
        ];
        let a = math::dot(d, d);
        let b = 2.0 * math::dot(o, d);
        let c = math::dot(o, o) - 1.0;
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let sqrt_disc = disc.sqrt();
        let t = (-b - sqrt_disc) / (2.0 * a);
        let t = if t > 1e-9 { t } else { (-b + sqrt_disc) / (2.0 * a) };
        if t <= 1e-9 {
            return None;
        }
        let p = math::add(origin, math::scale(dir, t));
        let n = [
            (p[0] - self.center[0]) / (self.axes[0] * self.axes[0]),
            (p[1] - self.center[1]) / (self.axes[1] * self.axes[1]),
            (p[2] - self.center[2]) / (self.axes[2] * self.axes[2]),
        ];
        Some((t, math::normalize(n, 0.0).unwrap_or([0.0, 0.0, 1.0])))
    }

    fn intersect_box(&self, origin: Vec3, dir: Vec3) -> Option<(f64, Vec3)> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut near_axis = 0usize;
        for c in 0..3 {
            let lo = self.center[c] - self.axes[c];
            let hi = self.center[c] + self.axes[c];
            if dir[c].abs() < 1e-12 {
                if origin[c] < lo || origin[c] > hi {
                    return None;
                }
                continue;
            }
            let mut t0 = (lo - origin[c]) / dir[c];
            let mut t1 = (hi - origin[c]) / dir[c];
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            if t0 > t_near {
                t_near = t0;
                near_axis = c;
            }
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
        if t_near <= 1e-9 {
            return None;
        }
        let mut n = [0.0; 3];
        n[near_axis] = if dir[near_axis] < 0.0 { 1.0 } else { -1.0 };
        Some((t_near, n))
    }
}

impl super::Scene {
    /// Squash factor of the bag in the current state: resting softness plus
    /// extra deformation while the gripper presses into it.
    fn kind_squash(&self, state: &EnvState) -> f64 {
        match self.object_kind {
            ObjectKind::Block => 1.0,
            ObjectKind::Bag => {
                let rest = 1.0 - 0.25 * self.softness;
                let tip = state.gripper.translation;
                let d = math::norm(math::sub(self.object_pos, tip));
                let contact_range = self.object_radius * 2.0;
                let press = (1.0 - d / contact_range).clamp(0.0, 1.0);
                rest * (1.0 - 0.35 * self.softness * press)
            }
        }
    }
}

/// One-shot render; builds a throwaway ray table. Use [`Renderer`] for loops.
pub fn render(state: &EnvState, intrinsics: &CameraIntrinsics, calib: &HandEyeCalib) -> Frame {
    Renderer::new(*intrinsics, *calib).render(state)
}

/// Project a world point to pixel coordinates through a camera pose; `None`
/// when behind the camera.
pub fn project_point(
    pose: &CameraPose,
    k: &CameraIntrinsics,
    point: Vec3,
) -> Option<(f64, f64)> {
    let rel = math::sub(point, pose.origin);
    let cam = math::mat_vec(&math::transpose(&pose.rotation), rel);
    if cam[2] <= 1e-9 {
        return None;
    }
    Some((
        k.fx * cam[0] / cam[2] + k.cx,
        k.fy * cam[1] / cam[2] + k.cy,
    ))
}
