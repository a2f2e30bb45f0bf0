//! Deterministic forward splatting and the analytic backward pass.
//!
//! Gaussians are depth-sorted globally (stable, index tie-break), binned into
//! 16x16 pixel tiles, and composited front-to-back per pixel. The backward
//! pass replays the forward intermediates per pixel rather than storing them.

use crate::img::{ImageGray, ImageRgb, Mask};
use crate::splat::{
    perspective_jacobian, project_gaussian, quaternion_to_rotation, CameraView,
    GaussianPrimitive, Maturity, Projection,
};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use thiserror::Error;

const TILE: usize = 16;
/// Bounding radius in units of the screen-space standard deviation.
const BBOX_SIGMA: f64 = 3.5;
/// Contributions with alpha below this are skipped.
const ALPHA_SKIP: f64 = 1.0 / 255.0;
/// Per-contribution alpha clamp.
const ALPHA_MAX: f64 = 0.99;

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("gradient image is {got_w}x{got_h}, camera is {want_w}x{want_h}")]
    ShapeMismatch { got_w: usize, got_h: usize, want_w: usize, want_h: usize },
}

#[derive(Debug, Clone)]
pub struct RenderOptions {
    pub background: [f64; 3],
    /// Compositing stops when transmittance drops below this. 0 disables early exit.
    pub transmittance_min: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { background: [0.0; 3], transmittance_min: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub rgb: ImageRgb,
    pub alpha: ImageGray,
    /// Alpha-weighted expected camera depth (normalized by alpha where alpha > 0).
    pub depth: ImageGray,
    pub contrib_count: Vec<u32>,
    /// Gaussians skipped for non-invertible screen covariance.
    pub skipped_degenerate: usize,
}

/// Per-Gaussian parameter gradients from one backward pass.
#[derive(Debug, Clone, Default)]
pub struct GaussianGrad {
    pub position: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
    /// L2 norm of d(loss)/d(mean2d).
    pub view_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct RenderGradients {
    pub grads: Vec<GaussianGrad>,
}

struct PreppedSplat {
    gi: usize,
    mean: Vector2<f64>,
    inv_cov: Matrix2<f64>,
    depth: f64,
    opacity: f64,
    color: [f64; 3],
    x0: i64,
    x1: i64,
    y0: i64,
    y1: i64,
    t_cam: Vector3<f64>,
}

struct Prepped {
    splats: Vec<PreppedSplat>,
    /// Per tile: positions into `splats`, depth-ordered.
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    skipped_degenerate: usize,
}

fn prepare(gaussians: &[GaussianPrimitive], cam: &CameraView) -> Prepped {
    let mut splats = Vec::new();
    let mut skipped = 0usize;
    for (gi, g) in gaussians.iter().enumerate() {
        let p = match project_gaussian(g, cam) {
            Projection::Splat(p) => p,
            Projection::Culled => continue,
        };
        let det = p.cov2d[(0, 0)] * p.cov2d[(1, 1)] - p.cov2d[(0, 1)] * p.cov2d[(1, 0)];
        if !det.is_finite() || det < 1e-12 {
            skipped += 1;
            continue;
        }
        let inv_cov = Matrix2::new(p.cov2d[(1, 1)], -p.cov2d[(0, 1)], -p.cov2d[(1, 0)], p.cov2d[(0, 0)]) / det;
        // 2x2 symmetric eigen bound for the bounding radius
        let mid = (p.cov2d[(0, 0)] + p.cov2d[(1, 1)]) / 2.0;
        let half = ((p.cov2d[(0, 0)] - p.cov2d[(1, 1)]) / 2.0).hypot(p.cov2d[(0, 1)]);
        let radius = BBOX_SIGMA * (mid + half).max(0.0).sqrt();
        let x0 = (p.mean2d.x - radius).floor() as i64;
        let x1 = (p.mean2d.x + radius).ceil() as i64;
        let y0 = (p.mean2d.y - radius).floor() as i64;
        let y1 = (p.mean2d.y + radius).ceil() as i64;
        if x1 < 0 || y1 < 0 || x0 >= cam.width as i64 || y0 >= cam.height as i64 {
            continue;
        }
        splats.push(PreppedSplat {
            gi,
            mean: p.mean2d,
            inv_cov,
            depth: p.depth,
            opacity: g.opacity(),
            color: [g.color.x, g.color.y, g.color.z],
            x0: x0.max(0),
            x1: x1.min(cam.width as i64 - 1),
            y0: y0.max(0),
            y1: y1.min(cam.height as i64 - 1),
            t_cam: cam.to_camera(&g.position),
        });
    }
    // global front-to-back order, index tie-break for determinism
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.gi.cmp(&b.gi)));

    let tiles_x = cam.width.div_ceil(TILE);
    let tiles_y = cam.height.div_ceil(TILE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        let tx0 = s.x0 as usize / TILE;
        let tx1 = s.x1 as usize / TILE;
        let ty0 = s.y0 as usize / TILE;
        let ty1 = s.y1 as usize / TILE;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(si as u32);
            }
        }
    }
    Prepped { splats, tiles, tiles_x, skipped_degenerate: skipped }
}

/// Forward splatting of a Gaussian set into an RGB image.
pub fn render(gaussians: &[GaussianPrimitive], cam: &CameraView, opts: &RenderOptions) -> RenderOutput {
    let prep = prepare(gaussians, cam);
    let (w, h) = (cam.width, cam.height);
    let mut rgb = ImageRgb::zeros(w, h);
    let mut alpha = ImageGray::zeros(w, h);
    let mut depth = ImageGray::zeros(w, h);
    let mut contrib = vec![0u32; w * h];

    for y in 0..h {
        for x in 0..w {
            let tile = &prep.tiles[(y / TILE) * prep.tiles_x + x / TILE];
            let px = Vector2::new(x as f64, y as f64);
            let mut t = 1.0f64;
            let mut c = [0.0f64; 3];
            let mut dnum = 0.0f64;
            let mut asum = 0.0f64;
            let mut n = 0u32;
            for &si in tile {
                let s = &prep.splats[si as usize];
                let (xi, yi) = (x as i64, y as i64);
                if xi < s.x0 || xi > s.x1 || yi < s.y0 || yi > s.y1 {
                    continue;
                }
                let d = px - s.mean;
                let power = -0.5 * (d.transpose() * s.inv_cov * d)[0];
                let a = (s.opacity * power.exp()).min(ALPHA_MAX);
                if a < ALPHA_SKIP {
                    continue;
                }
                let w_i = a * t;
                c[0] += s.color[0] * w_i;
                c[1] += s.color[1] * w_i;
                c[2] += s.color[2] * w_i;
                dnum += s.depth * w_i;
                asum += w_i;
                n += 1;
                t *= 1.0 - a;
                if t < opts.transmittance_min {
                    break;
                }
            }
            let i = rgb.idx(x, y);
            rgb.data[i] = c[0] + opts.background[0] * t;
            rgb.data[i + 1] = c[1] + opts.background[1] * t;
            rgb.data[i + 2] = c[2] + opts.background[2] * t;
            alpha.set(x, y, asum);
            depth.set(x, y, if asum > 0.0 { dnum / asum } else { 0.0 });
            contrib[y * w + x] = n;
        }
    }
    RenderOutput { rgb, alpha, depth, contrib_count: contrib, skipped_degenerate: prep.skipped_degenerate }
}

/// Alpha-weighted expected depth plus a validity mask (alpha >= 0.5).
pub fn render_depth(gaussians: &[GaussianPrimitive], cam: &CameraView, opts: &RenderOptions) -> (ImageGray, Mask) {
    let out = render(gaussians, cam, opts);
    let mut valid = Mask::new(cam.width, cam.height, false);
    for p in 0..valid.data.len() {
        valid.data[p] = out.alpha.data[p] >= 0.5;
    }
    (out.depth, valid)
}

struct Contribution {
    si: u32,
    alpha: f64,
    gaussian_val: f64,
    d: Vector2<f64>,
    t_before: f64,
    clamped: bool,
}

/// Accumulated screen-space gradients for one splat.
#[derive(Default, Clone)]
struct SplatGrad {
    mean2d: Vector2<f64>,
    // d(loss)/d(inv_cov), symmetric
    inv_cov: Matrix2<f64>,
    color: Vector3<f64>,
    opacity: f64,
    touched: bool,
}

/// Analytic backward pass paired with [`render`].
///
/// Returns per-parameter gradients and accumulates each Gaussian's view-space
/// positional gradient norm into its `grad_accum` / `grad_count` statistics.
pub fn render_backward(
    gaussians: &mut [GaussianPrimitive],
    cam: &CameraView,
    dl_drgb: &ImageRgb,
    opts: &RenderOptions,
) -> Result<RenderGradients, RasterError> {
    if dl_drgb.width != cam.width || dl_drgb.height != cam.height {
        return Err(RasterError::ShapeMismatch {
            got_w: dl_drgb.width,
            got_h: dl_drgb.height,
            want_w: cam.width,
            want_h: cam.height,
        });
    }
    let prep = prepare(gaussians, cam);
    let mut sg = vec![SplatGrad::default(); prep.splats.len()];

    let mut contribs: Vec<Contribution> = Vec::with_capacity(64);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let up = dl_drgb.get(x, y);
            if up == [0.0, 0.0, 0.0] {
                continue;
            }
            let tile = &prep.tiles[(y / TILE) * prep.tiles_x + x / TILE];
            let px = Vector2::new(x as f64, y as f64);
            contribs.clear();
            let mut t = 1.0f64;
            for &si in tile {
                let s = &prep.splats[si as usize];
                let (xi, yi) = (x as i64, y as i64);
                if xi < s.x0 || xi > s.x1 || yi < s.y0 || yi > s.y1 {
                    continue;
                }
                let d = px - s.mean;
                let power = -0.5 * (d.transpose() * s.inv_cov * d)[0];
                let g_val = power.exp();
                let raw = s.opacity * g_val;
                let a = raw.min(ALPHA_MAX);
                if a < ALPHA_SKIP {
                    continue;
                }
                contribs.push(Contribution { si, alpha: a, gaussian_val: g_val, d, t_before: t, clamped: raw > ALPHA_MAX });
                t *= 1.0 - a;
                if t < opts.transmittance_min {
                    break;
                }
            }
            // reverse sweep: suffix color S after each contribution, seeded by background
            let t_final = t;
            let mut suffix = [
                opts.background[0] * t_final,
                opts.background[1] * t_final,
                opts.background[2] * t_final,
            ];
            for cb in contribs.iter().rev() {
                let s = &prep.splats[cb.si as usize];
                let g = &mut sg[cb.si as usize];
                g.touched = true;
                let w_i = cb.alpha * cb.t_before;
                // color gradient
                g.color.x += w_i * up[0];
                g.color.y += w_i * up[1];
                g.color.z += w_i * up[2];
                // alpha gradient via suffix formulation
                let mut dl_da = 0.0;
                for ch in 0..3 {
                    dl_da += up[ch] * (s.color[ch] * cb.t_before - suffix[ch] / (1.0 - cb.alpha));
                }
                suffix[0] += s.color[0] * w_i;
                suffix[1] += s.color[1] * w_i;
                suffix[2] += s.color[2] * w_i;
                if cb.clamped {
                    continue; // alpha pinned at the clamp, no flow into opacity/shape
                }
                // alpha = opacity * G
                g.opacity += cb.gaussian_val * dl_da;
                let dl_dpower = cb.alpha * dl_da;
                let ad = s.inv_cov * cb.d;
                // power = -1/2 d' A d, d = px - mean
                g.mean2d += dl_dpower * ad;
                g.inv_cov += (-0.5 * dl_dpower) * (cb.d * cb.d.transpose());
            }
        }
    }

    // screen-space -> parameter-space chain per splat
    let mut grads = vec![GaussianGrad::default(); gaussians.len()];
    let rw = cam.rotation();
    for (si, s) in prep.splats.iter().enumerate() {
        let g2 = &sg[si];
        if !g2.touched {
            continue;
        }
        let gsn = &gaussians[s.gi];
        let out = &mut grads[s.gi];

        // recover cov2d from inv_cov
        let det_inv = g2_det(&s.inv_cov);
        let cov2d = Matrix2::new(s.inv_cov[(1, 1)], -s.inv_cov[(0, 1)], -s.inv_cov[(1, 0)], s.inv_cov[(0, 0)]) / det_inv;
        // dL/dcov = -A dL/dA A for symmetric A
        let dl_dcov = -s.inv_cov * g2.inv_cov * s.inv_cov;

        let t = s.t_cam;
        let j = perspective_jacobian(cam, &t);
        let r = quaternion_to_rotation(&gsn.rotation).expect("rotation invariant");
        let d_scale2 = gsn.log_scale.map(|v| (2.0 * v).exp());
        let sigma = r * Matrix3::from_diagonal(&d_scale2) * r.transpose();
        let v_cam = rw * sigma * rw.transpose();

        // cov2d = J V J' (+ dilation, additive constant)
        let dl_dv = j.transpose() * dl_dcov * j;
        let dl_dj = 2.0 * dl_dcov * j * v_cam;

        // mean2d uses the exact (unclamped) pinhole Jacobian
        let (fx, fy) = (cam.fx, cam.fy);
        let z2 = t.z * t.z;
        let z3 = z2 * t.z;
        let j_mean = nalgebra::Matrix2x3::new(
            fx / t.z, 0.0, -fx * t.x / z2,
            0.0, fy / t.z, -fy * t.y / z2,
        );
        let mut dl_dt = j_mean.transpose() * g2.mean2d;
        // the covariance J depends on t through the clamped frustum ratios
        let lim_x = 1.3 * cam.cx / fx;
        let lim_y = 1.3 * cam.cy / fy;
        let (rx, ry) = (t.x / t.z, t.y / t.z);
        let x_free = rx.abs() <= lim_x;
        let y_free = ry.abs() <= lim_y;
        dl_dt.x += dl_dj[(0, 2)] * if x_free { -fx / z2 } else { 0.0 };
        dl_dt.y += dl_dj[(1, 2)] * if y_free { -fy / z2 } else { 0.0 };
        dl_dt.z += dl_dj[(0, 0)] * (-fx / z2)
            + dl_dj[(1, 1)] * (-fy / z2)
            + dl_dj[(0, 2)]
                * if x_free { 2.0 * fx * t.x / z3 } else { fx * rx.clamp(-lim_x, lim_x) / z2 }
            + dl_dj[(1, 2)]
                * if y_free { 2.0 * fy * t.y / z3 } else { fy * ry.clamp(-lim_y, lim_y) / z2 };

        out.position += rw.transpose() * dl_dt;

        // Sigma = R D R', D = diag(exp(2 log_scale))
        let dl_dsigma = rw.transpose() * dl_dv * rw;
        let dl_dr = 2.0 * dl_dsigma * r * Matrix3::from_diagonal(&d_scale2);
        let rtgr = r.transpose() * dl_dsigma * r;
        for k in 0..3 {
            out.log_scale[k] += 2.0 * d_scale2[k] * rtgr[(k, k)];
        }

        // quaternion chain, tangent-projected through renormalization
        let q = gsn.rotation;
        let qn = q.norm();
        let qu = q / qn;
        let dq_unit = quat_rotation_grad(&qu, &dl_dr);
        let proj = (Matrix4x4_identity() - qu * qu.transpose()) / qn;
        out.rotation += proj * dq_unit;

        out.color += g2.color;
        let o = s.opacity;
        out.opacity_logit += g2.opacity * o * (1.0 - o);

        let vg = g2.mean2d.norm();
        out.view_grad_norm = vg;
        let _ = cov2d; // cov2d only needed implicitly through inv_cov above
    }

    // accumulate view-space statistics; frozen splats keep theirs untouched
    for (gi, g) in gaussians.iter_mut().enumerate() {
        if g.maturity == Maturity::Mature {
            continue;
        }
        g.grad_accum += grads[gi].view_grad_norm;
        g.grad_count += 1;
    }

    Ok(RenderGradients { grads })
}

#[inline]
fn g2_det(m: &Matrix2<f64>) -> f64 {
    m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
}

#[allow(non_snake_case)]
#[inline]
fn Matrix4x4_identity() -> nalgebra::Matrix4<f64> {
    nalgebra::Matrix4::identity()
}

/// Contract dL/dR with dR/dq for a unit quaternion (w, x, y, z).
fn quat_rotation_grad(q: &Vector4<f64>, dl_dr: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dr_dw = Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dr_dx = Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dr_dy = Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dr_dz = Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;
    Vector4::new(
        dl_dr.dot(&dr_dw),
        dl_dr.dot(&dr_dx),
        dl_dr.dot(&dr_dy),
        dl_dr.dot(&dr_dz),
    )
}
