//! Gaussian primitive algebra: covariance construction, pinhole camera model,
//! and projection of 3D means/covariances into screen space.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Diagonal added to every projected 2D covariance, in px².
/// Anti-aliasing floor; rasterization degenerates on sub-pixel splats without it.
pub const COV2D_DILATION: f64 = 0.3;

/// Default near clipping distance in world units.
pub const DEFAULT_NEAR_CLIP: f64 = 0.2;

pub const MIN_WORLD_SCALE: f64 = 1e-6;
pub const MAX_WORLD_SCALE: f64 = 1e3;

#[derive(Debug, Error, PartialEq)]
pub enum SplatError {
    #[error("quaternion norm below 1e-8")]
    DegenerateQuaternion,
    #[error("depth must be positive, got {0}")]
    InvalidDepth(f64),
}

/// Convergence class of a Gaussian during expansion training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum Maturity {
    /// Spawned for regions unobserved in the first training round; always trainable.
    Missing = 0,
    /// Existing but under-converged (large view-space gradients); trainable.
    Immature = 1,
    /// Converged; all attributes frozen.
    Mature = 2,
}

impl Maturity {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Maturity::Missing),
            1 => Some(Maturity::Immature),
            2 => Some(Maturity::Mature),
            _ => None,
        }
    }
}

/// One anisotropic splat.
///
/// Scales live in log domain and opacity as a logit so the optimizer is
/// unconstrained; world-space values are recovered via `exp` / `sigmoid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrimitive {
    pub position: Vector3<f64>,
    /// Unit quaternion (w, x, y, z).
    pub rotation: Vector4<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
    pub maturity: Maturity,
    /// Running mean of view-space positional gradient norms.
    pub grad_accum: f64,
    pub grad_count: u32,
}

impl GaussianPrimitive {
    pub fn new(position: Vector3<f64>, scale: Vector3<f64>, opacity: f64, color: Vector3<f64>) -> Self {
        GaussianPrimitive {
            position,
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            log_scale: scale.map(|s| s.clamp(MIN_WORLD_SCALE, MAX_WORLD_SCALE).ln()),
            opacity_logit: logit(opacity),
            color,
            maturity: Maturity::Immature,
            grad_accum: 0.0,
            grad_count: 0,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    /// Renormalize the rotation and clamp log scales to the legal range.
    /// Call after every optimizer step.
    pub fn normalize(&mut self) {
        let n = self.rotation.norm();
        if n > 1e-12 {
            self.rotation /= n;
        } else {
            self.rotation = Vector4::new(1.0, 0.0, 0.0, 0.0);
        }
        let lo = MIN_WORLD_SCALE.ln();
        let hi = MAX_WORLD_SCALE.ln();
        self.log_scale = self.log_scale.map(|s| s.clamp(lo, hi));
    }

    pub fn mean_view_grad(&self) -> f64 {
        if self.grad_count == 0 {
            0.0
        } else {
            self.grad_accum / self.grad_count as f64
        }
    }

    pub fn reset_grad_stats(&mut self) {
        self.grad_accum = 0.0;
        self.grad_count = 0;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

/// Pinhole camera with a rigid world-to-camera transform.
///
/// Camera frame: x right, y down, z forward (depth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_to_cam: Matrix4<f64>,
    pub near_clip: f64,
    pub lane_tag: String,
}

impl CameraView {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, world_to_cam: Matrix4<f64>) -> Self {
        CameraView {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            world_to_cam,
            near_clip: DEFAULT_NEAR_CLIP,
            lane_tag: String::new(),
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_cam.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_cam.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -self.rotation().transpose() * self.translation()
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    /// Project a world point to pixel coordinates, returning None behind the near plane.
    pub fn project_point(&self, p: &Vector3<f64>) -> Option<(Vector2<f64>, f64)> {
        let t = self.to_camera(p);
        if t.z <= self.near_clip {
            return None;
        }
        let u = self.fx * t.x / t.z + self.cx;
        let v = self.fy * t.y / t.z + self.cy;
        Some((Vector2::new(u, v), t.z))
    }

    /// Inverse pinhole: pixel + camera depth to world position.
    pub fn unproject_pixel(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>, SplatError> {
        if depth <= 0.0 {
            return Err(SplatError::InvalidDepth(depth));
        }
        let cam = Vector3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth);
        Ok(self.rotation().transpose() * (cam - self.translation()))
    }
}

/// Symmetric 3x3 covariance in world units².
pub type Covariance3 = Matrix3<f64>;
/// Symmetric 2x2 screen-space covariance in px².
pub type Covariance2 = Matrix2<f64>;

/// Rotation matrix of a (renormalized) quaternion (w, x, y, z).
pub fn quaternion_to_rotation(q: &Vector4<f64>) -> Result<Matrix3<f64>, SplatError> {
    let n = q.norm();
    if n < 1e-8 {
        return Err(SplatError::DegenerateQuaternion);
    }
    let q = q / n;
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// World covariance Σ = R S Sᵀ Rᵀ with S = diag(exp(log_scale)).
pub fn build_covariance(g: &GaussianPrimitive) -> Covariance3 {
    let r = quaternion_to_rotation(&g.rotation).expect("rotation invariant violated");
    let s2 = g.log_scale.map(|s| (2.0 * s).exp());
    let m = r * Matrix3::from_diagonal(&s2) * r.transpose();
    // symmetrize against rounding
    0.5 * (m + m.transpose())
}

/// Result of projecting one Gaussian into a view.
#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Splat(Projected),
    Culled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    pub mean2d: Vector2<f64>,
    pub cov2d: Covariance2,
    pub depth: f64,
}

/// Perspective Jacobian of the pixel projection at camera-space point t.
///
/// The view-space ratios x/z and y/z are clamped to 1.3x the frustum half
/// tangents; without the clamp, splats far outside the frustum at small z get
/// unbounded off-axis terms and their screen footprint blankets the image.
pub fn perspective_jacobian(cam: &CameraView, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let lim_x = 1.3 * cam.cx / cam.fx;
    let lim_y = 1.3 * cam.cy / cam.fy;
    let rx = (t.x / t.z).clamp(-lim_x, lim_x);
    let ry = (t.y / t.z).clamp(-lim_y, lim_y);
    Matrix2x3::new(
        cam.fx / t.z,
        0.0,
        -cam.fx * rx / t.z,
        0.0,
        cam.fy / t.z,
        -cam.fy * ry / t.z,
    )
}

/// Project mean and covariance of a Gaussian into screen space.
///
/// Screen covariance is J R_w Σ R_wᵀ Jᵀ plus the dilation floor; only the
/// rotation block of the extrinsics affects a covariance.
pub fn project_gaussian(g: &GaussianPrimitive, cam: &CameraView) -> Projection {
    let t = cam.to_camera(&g.position);
    if t.z <= cam.near_clip {
        return Projection::Culled;
    }
    let mean2d = Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy);
    let sigma = build_covariance(g);
    let rw = cam.rotation();
    let j = perspective_jacobian(cam, &t);
    let cov_cam = rw * sigma * rw.transpose();
    let mut cov2d = j * cov_cam * j.transpose();
    cov2d[(0, 0)] += COV2D_DILATION;
    cov2d[(1, 1)] += COV2D_DILATION;
    let cov2d = 0.5 * (cov2d + cov2d.transpose());
    Projection::Splat(Projected { mean2d, cov2d, depth: t.z })
}
