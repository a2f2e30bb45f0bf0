//! Scene optimization: the per-Gaussian Adam optimizer, the two training
//! phases, densification, maturity classification, depth-scale calibration,
//! and seeding of Gaussians for regions the current model does not cover.

pub mod losses;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::img::{ImageGray, ImageRgb, Mask};
use crate::metrics::MetricError;
use crate::raster::{render, render_backward, GaussianGrad, RasterError, RenderOptions};
use crate::splat::{CameraView, GaussianPrimitive, Maturity};
use crate::world::{ColoredPointCloud, PriorSample};
use losses::{loss_ie, loss_io};

/// Minimum number of jointly valid pixels for depth-scale calibration.
pub const MIN_CALIB_OVERLAP: usize = 50;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no gaussians to classify")]
    NothingToClassify,
    #[error("depth calibration overlap too small: {got} < {need}")]
    InsufficientOverlap { got: usize, need: usize },
    #[error("estimated depths are degenerate (zero energy) over the overlap")]
    DegenerateDepths,
    #[error("non-finite loss at iteration {iter}")]
    NonFiniteLoss { iter: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Knobs for scene optimization. Iteration-like quantities are stored at
/// reference (full) scale and multiplied by `desk_scale` through the
/// accessor methods, so a desk run shrinks the whole schedule coherently.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub desk_scale: f64,
    pub seed: u64,
    /// Position step size, multiplied by the scene extent.
    pub position_lr: f64,
    pub rotation_lr: f64,
    pub scale_lr: f64,
    pub opacity_lr: f64,
    pub color_lr: f64,
    pub phase1_iters_ref: f64,
    pub phase2_iters_ref: f64,
    pub init_points_ref: f64,
    pub densify_window_ref: (f64, f64),
    pub densify_interval: usize,
    pub densify_grad_threshold: f64,
    pub maturity_threshold: f64,
    pub prune_opacity: f64,
    /// Split (rather than clone) when the largest axis exceeds this fraction
    /// of the scene extent.
    pub split_scale_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            desk_scale: 0.1,
            seed: 0,
            position_lr: 1.6e-4,
            rotation_lr: 1e-3,
            scale_lr: 5e-3,
            opacity_lr: 5e-2,
            color_lr: 2.5e-3,
            phase1_iters_ref: 30_000.0,
            phase2_iters_ref: 5_000.0,
            init_points_ref: 50_000.0,
            densify_window_ref: (500.0, 15_000.0),
            densify_interval: 100,
            densify_grad_threshold: 2e-4,
            maturity_threshold: 5e-4,
            prune_opacity: 0.005,
            split_scale_fraction: 0.01,
        }
    }
}

impl TrainConfig {
    fn scaled(&self, reference: f64) -> usize {
        (reference * self.desk_scale).round().max(1.0) as usize
    }

    pub fn phase1_iters(&self) -> usize {
        self.scaled(self.phase1_iters_ref)
    }

    pub fn phase2_iters(&self) -> usize {
        self.scaled(self.phase2_iters_ref)
    }

    pub fn init_points(&self) -> usize {
        self.scaled(self.init_points_ref)
    }

    pub fn densify_window(&self) -> (usize, usize) {
        (self.scaled(self.densify_window_ref.0), self.scaled(self.densify_window_ref.1))
    }
}

/// Outcome summary of a training phase.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub iterations: usize,
    pub final_loss: f64,
    /// Total per-Gaussian parameter-vector updates applied (one per
    /// non-frozen Gaussian per optimizer step).
    pub updates_applied: u64,
    pub gaussians: usize,
}

const PARAMS_PER_GAUSSIAN: usize = 14; // pos 3 + rot 4 + log_scale 3 + opacity 1 + color 3

/// Plain Adam over the per-Gaussian parameter vectors, with per-group step
/// sizes. Mature Gaussians are skipped entirely: no moment update, no
/// parameter change, no renormalization, so their bytes stay untouched.
pub struct SceneAdam {
    m: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
    v: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
    step: u64,
    extent: f64,
    log_scale_floor: f64,
    cfg_lrs: [f64; 5],
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl SceneAdam {
    pub fn new(gaussians: &[GaussianPrimitive], extent: f64, cfg: &TrainConfig) -> Self {
        // Floor the scales at a quarter of the population median so splats
        // cannot collapse into sub-pixel points that memorize single views.
        let mut mins: Vec<f64> = gaussians.iter().map(|g| g.log_scale.min()).collect();
        mins.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let log_scale_floor = if mins.is_empty() {
            f64::NEG_INFINITY
        } else {
            mins[mins.len() / 2] - 4.0f64.ln()
        };
        SceneAdam {
            m: vec![[0.0; PARAMS_PER_GAUSSIAN]; gaussians.len()],
            v: vec![[0.0; PARAMS_PER_GAUSSIAN]; gaussians.len()],
            step: 0,
            extent,
            log_scale_floor,
            cfg_lrs: [cfg.position_lr, cfg.rotation_lr, cfg.scale_lr, cfg.opacity_lr, cfg.color_lr],
        }
    }

    fn group_lr(&self, k: usize) -> f64 {
        match k {
            0..=2 => self.cfg_lrs[0] * self.extent,
            3..=6 => self.cfg_lrs[1],
            7..=9 => self.cfg_lrs[2],
            10 => self.cfg_lrs[3],
            _ => self.cfg_lrs[4],
        }
    }

    /// Apply one Adam step. Returns the number of Gaussians updated.
    pub fn step(&mut self, gaussians: &mut [GaussianPrimitive], grads: &[GaussianGrad]) -> u64 {
        assert_eq!(gaussians.len(), grads.len());
        assert_eq!(gaussians.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - ADAM_B1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_B2.powi(self.step as i32);
        let mut updated = 0;
        for (i, g) in gaussians.iter_mut().enumerate() {
            if g.maturity == Maturity::Mature {
                continue;
            }
            let gr = &grads[i];
            let flat = [
                gr.position.x, gr.position.y, gr.position.z,
                gr.rotation.x, gr.rotation.y, gr.rotation.z, gr.rotation.w,
                gr.log_scale.x, gr.log_scale.y, gr.log_scale.z,
                gr.opacity_logit,
                gr.color.x, gr.color.y, gr.color.z,
            ];
            for (k, &gk) in flat.iter().enumerate() {
                let m = &mut self.m[i][k];
                let v = &mut self.v[i][k];
                *m = ADAM_B1 * *m + (1.0 - ADAM_B1) * gk;
                *v = ADAM_B2 * *v + (1.0 - ADAM_B2) * gk * gk;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                let delta = self.group_lr(k) * mhat / (vhat.sqrt() + ADAM_EPS);
                match k {
                    0 => g.position.x -= delta,
                    1 => g.position.y -= delta,
                    2 => g.position.z -= delta,
                    3 => g.rotation.x -= delta,
                    4 => g.rotation.y -= delta,
                    5 => g.rotation.z -= delta,
                    6 => g.rotation.w -= delta,
                    7 => g.log_scale.x -= delta,
                    8 => g.log_scale.y -= delta,
                    9 => g.log_scale.z -= delta,
                    10 => g.opacity_logit -= delta,
                    11 => g.color.x -= delta,
                    12 => g.color.y -= delta,
                    _ => g.color.z -= delta,
                }
            }
            g.log_scale.x = g.log_scale.x.max(self.log_scale_floor);
            g.log_scale.y = g.log_scale.y.max(self.log_scale_floor);
            g.log_scale.z = g.log_scale.z.max(self.log_scale_floor);
            g.normalize();
            updated += 1;
        }
        updated
    }
}

/// Bounding-sphere radius of the Gaussian centers, used to scale position
/// step sizes and the split threshold.
pub fn scene_extent(gaussians: &[GaussianPrimitive]) -> f64 {
    if gaussians.is_empty() {
        return 1.0;
    }
    let mut c = Vector3::zeros();
    for g in gaussians {
        c += g.position;
    }
    c /= gaussians.len() as f64;
    gaussians
        .iter()
        .map(|g| (g.position - c).norm())
        .fold(0.0f64, f64::max)
        .max(1e-6)
}

/// Seed a scene from a colored point cloud: one Gaussian per point, isotropic
/// scale set to the mean distance to the 3 nearest seeded neighbors, opacity
/// 0.1. Decimated by stride if the cloud exceeds `cap`.
pub fn init_from_pointcloud(cloud: &ColoredPointCloud, cap: usize) -> Vec<GaussianPrimitive> {
    // The cloud contains near-duplicate points (the same surface point seen
    // from many views), so deduplicate on a voxel grid before selecting;
    // otherwise nearest-neighbor spacing collapses to the duplicate distance.
    let dedup = voxel_downsample_indices(cloud, cap);
    let idxs = {
        let keep = strided_indices(dedup.len(), cap);
        keep.into_iter().map(|k| dedup[k]).collect::<Vec<_>>()
    };
    let positions: Vec<Vector3<f64>> = idxs.iter().map(|&i| cloud.positions[i]).collect();
    let scales = nn3_scales(&positions);
    idxs.iter()
        .zip(scales)
        .map(|(&i, s)| {
            GaussianPrimitive::new(cloud.positions[i], Vector3::new(s, s, s), 0.1, cloud.colors[i])
        })
        .collect()
}

/// First-seen cloud index per occupied voxel, with the voxel size bisected so
/// the occupied count lands near `target`. Deterministic for a fixed cloud.
fn voxel_downsample_indices(cloud: &ColoredPointCloud, target: usize) -> Vec<usize> {
    use std::collections::HashMap;
    if cloud.is_empty() || target == 0 {
        return Vec::new();
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in &cloud.positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = (hi - lo).norm().max(1e-6);
    let pick = |v: f64| -> Vec<usize> {
        let mut first: HashMap<(i64, i64, i64), usize> = HashMap::new();
        for (i, p) in cloud.positions.iter().enumerate() {
            let key = (
                ((p.x - lo.x) / v).floor() as i64,
                ((p.y - lo.y) / v).floor() as i64,
                ((p.z - lo.z) / v).floor() as i64,
            );
            first.entry(key).or_insert(i);
        }
        let mut idxs: Vec<usize> = first.into_values().collect();
        idxs.sort_unstable();
        idxs
    };
    let (mut v_lo, mut v_hi) = (extent / 1e4, extent);
    let mut best = pick(v_lo);
    for _ in 0..20 {
        let v = (v_lo * v_hi).sqrt();
        let idxs = pick(v);
        if idxs.len() >= target {
            best = idxs;
            v_lo = v;
        } else {
            v_hi = v;
        }
        if best.len() < 2 * target {
            break;
        }
    }
    best
}

fn strided_indices(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let step = n as f64 / cap as f64;
    (0..cap).map(|k| ((k as f64 * step) as usize).min(n - 1)).collect()
}

/// Mean distance to the 3 nearest neighbors for each point (brute force).
fn nn3_scales(points: &[Vector3<f64>]) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = [f64::INFINITY; 3];
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (p - q).norm();
                if d < best[2] {
                    best[2] = d;
                    if best[2] < best[1] {
                        best.swap(1, 2);
                    }
                    if best[1] < best[0] {
                        best.swap(0, 1);
                    }
                }
            }
            let finite: Vec<f64> = best.iter().copied().filter(|d| d.is_finite()).collect();
            if finite.is_empty() {
                0.1
            } else {
                (finite.iter().sum::<f64>() / finite.len() as f64).max(1e-4)
            }
        })
        .collect()
}

/// Photometric reconstruction against trusted views: render, compare with
/// `loss_io`, step Adam, and periodically densify/prune inside the scaled
/// iteration window. The optimizer state is rebuilt after every topology
/// change.
pub fn phase1_train(
    gaussians: &mut Vec<GaussianPrimitive>,
    views: &[(CameraView, ImageRgb)],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    let iters = cfg.phase1_iters();
    let opts = RenderOptions::default();
    let extent = scene_extent(gaussians);
    let mut opt = SceneAdam::new(gaussians, extent, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    for g in gaussians.iter_mut() {
        g.reset_grad_stats();
    }
    let (w0, w1) = cfg.densify_window();
    let mut updates = 0u64;
    let mut last_loss = 0.0;
    for it in 0..iters {
        let (cam, gt) = &views[it % views.len()];
        let out = render(gaussians, cam, &opts);
        let l = loss_io(&out.rgb, gt)?;
        if !l.value.is_finite() {
            return Err(TrainError::NonFiniteLoss { iter: it });
        }
        last_loss = l.value;
        let grads = render_backward(gaussians, cam, &l.grad, &opts)?;
        updates += opt.step(gaussians, &grads.grads);
        let step1 = it + 1;
        if step1 >= w0 && step1 <= w1 && step1 % cfg.densify_interval == 0 {
            densify_and_prune(gaussians, extent, cfg, step1, &mut rng);
            opt = SceneAdam::new(gaussians, extent, cfg);
        }
    }
    Ok(TrainReport {
        iterations: iters,
        final_loss: last_loss,
        updates_applied: updates,
        gaussians: gaussians.len(),
    })
}

/// Densify over-stressed Gaussians and prune near-transparent ones.
///
/// A Gaussian whose mean view-space gradient exceeds the threshold is either
/// cloned (small) or split into two shrunken copies (largest axis above
/// `split_scale_fraction * extent`). Only active inside the scaled iteration
/// window, and never touches Mature Gaussians. Gradient statistics are reset
/// on every invocation.
pub fn densify_and_prune(
    gaussians: &mut Vec<GaussianPrimitive>,
    extent: f64,
    cfg: &TrainConfig,
    iter: usize,
    rng: &mut ChaCha8Rng,
) {
    let (w0, w1) = cfg.densify_window();
    if iter < w0 || iter > w1 {
        return;
    }
    let mut next: Vec<GaussianPrimitive> = Vec::with_capacity(gaussians.len());
    for g in gaussians.drain(..) {
        if g.maturity == Maturity::Mature {
            next.push(g);
            continue;
        }
        if g.opacity() < cfg.prune_opacity {
            continue;
        }
        let stress = g.mean_view_grad();
        if stress > cfg.densify_grad_threshold {
            let scale = g.scale();
            let max_axis = scale.x.max(scale.y).max(scale.z);
            if max_axis > cfg.split_scale_fraction * extent {
                // split: two copies with scales shrunk, offset along a sample
                // from the original footprint
                for _ in 0..2 {
                    let mut child = g.clone();
                    child.log_scale.iter_mut().for_each(|s| *s -= 1.6f64.ln());
                    let jitter = Vector3::new(
                        rng.gen_range(-1.0..1.0) * scale.x,
                        rng.gen_range(-1.0..1.0) * scale.y,
                        rng.gen_range(-1.0..1.0) * scale.z,
                    );
                    child.position += jitter;
                    child.reset_grad_stats();
                    next.push(child);
                }
            } else {
                let mut copy = g.clone();
                copy.reset_grad_stats();
                let mut orig = g;
                orig.reset_grad_stats();
                next.push(orig);
                next.push(copy);
            }
        } else {
            let mut keep = g;
            keep.reset_grad_stats();
            next.push(keep);
        }
    }
    *gaussians = next;
}

/// Run one gradient-accumulation epoch over the given views (no parameter
/// updates) and mark each Gaussian Mature or Immature by comparing its mean
/// view-space gradient against the threshold. Gaussians that never
/// contribute to any pixel stay Immature. Returns (mature, immature) counts.
pub fn classify_maturity(
    gaussians: &mut [GaussianPrimitive],
    views: &[(CameraView, ImageRgb)],
    cfg: &TrainConfig,
) -> Result<(usize, usize), TrainError> {
    if gaussians.is_empty() {
        return Err(TrainError::NothingToClassify);
    }
    let opts = RenderOptions::default();
    for g in gaussians.iter_mut() {
        g.reset_grad_stats();
    }
    for (cam, gt) in views {
        let out = render(gaussians, cam, &opts);
        let l = loss_io(&out.rgb, gt)?;
        render_backward(gaussians, cam, &l.grad, &opts)?;
    }
    let mut mature = 0;
    let mut immature = 0;
    for g in gaussians.iter_mut() {
        if g.grad_count > 0 && g.mean_view_grad() < cfg.maturity_threshold {
            g.maturity = Maturity::Mature;
            mature += 1;
        } else {
            g.maturity = Maturity::Immature;
            immature += 1;
        }
    }
    Ok((mature, immature))
}

/// Closed-form least-squares scale between an estimated and a reference
/// depth map over their jointly valid pixels:
/// `s* = sum(d_est * d_ref) / sum(d_est^2)`.
pub fn calibrate_scale(
    d_est: &ImageGray,
    est_valid: &Mask,
    d_ref: &ImageGray,
    ref_valid: &Mask,
    min_overlap: usize,
) -> Result<f64, TrainError> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut overlap = 0;
    for p in 0..d_est.data.len() {
        if est_valid.data[p] && ref_valid.data[p] {
            overlap += 1;
            num += d_est.data[p] * d_ref.data[p];
            den += d_est.data[p] * d_est.data[p];
        }
    }
    if overlap < min_overlap {
        return Err(TrainError::InsufficientOverlap { got: overlap, need: min_overlap });
    }
    if den <= 1e-12 {
        return Err(TrainError::DegenerateDepths);
    }
    Ok(num / den)
}

/// Seed new Gaussians for pixels of a prior view the current model leaves
/// uncovered (render alpha < 0.5). Pixels with a point-cloud reprojection
/// get the cloud depth; the rest fall back to the calibrated depth estimate.
/// Colors come from the prior image; new Gaussians are tagged Missing.
/// Returns the number added.
pub fn init_missing(
    gaussians: &mut Vec<GaussianPrimitive>,
    cloud: &ColoredPointCloud,
    prior: &PriorSample,
    depth_est: &ImageGray,
    depth_valid: &Mask,
    scale_cal: f64,
    cap: usize,
) -> usize {
    let cam = &prior.cam;
    let opts = RenderOptions::default();
    let out = render(gaussians, cam, &opts);

    // Depth buffer of the cloud in this view (same nearest-wins rule as the
    // color reprojection).
    let mut cloud_z = vec![f64::INFINITY; cam.width * cam.height];
    for p in &cloud.positions {
        let Some((uv, z)) = cam.project_point(p) else { continue };
        let x = uv.x.round() as i64;
        let y = uv.y.round() as i64;
        if x < 0 || y < 0 || x >= cam.width as i64 || y >= cam.height as i64 {
            continue;
        }
        let idx = y as usize * cam.width + x as usize;
        if z < cloud_z[idx] {
            cloud_z[idx] = z;
        }
    }

    let mut candidates: Vec<(Vector3<f64>, Vector3<f64>)> = Vec::new();
    for y in 0..cam.height {
        for x in 0..cam.width {
            let p = y * cam.width + x;
            if out.alpha.data[p] >= 0.5 {
                continue;
            }
            let depth = if prior.reproj_valid.data[p] && cloud_z[p].is_finite() {
                cloud_z[p]
            } else if depth_valid.data[p] {
                depth_est.data[p] * scale_cal
            } else {
                continue;
            };
            let Ok(pos) = cam.unproject_pixel(x as f64, y as f64, depth) else { continue };
            let c = prior.image.get(x, y);
            candidates.push((pos, Vector3::new(c[0], c[1], c[2])));
        }
    }

    let idxs = strided_indices(candidates.len(), cap);
    let positions: Vec<Vector3<f64>> = idxs.iter().map(|&i| candidates[i].0).collect();
    let scales = nn3_scales(&positions);
    let added = idxs.len();
    for (k, &i) in idxs.iter().enumerate() {
        let mut g = GaussianPrimitive::new(
            candidates[i].0,
            Vector3::new(scales[k], scales[k], scales[k]),
            0.1,
            candidates[i].1,
        );
        g.maturity = Maturity::Missing;
        gaussians.push(g);
    }
    added
}

/// Expansion-phase optimization: strict alternation between a trusted
/// original view (compared with `loss_io`) and a prior view (compared with
/// `loss_ie` under its frozen confidence map). Mature Gaussians receive no
/// updates. Densification stays off so the frozen set keeps its layout.
pub fn phase2_train(
    gaussians: &mut Vec<GaussianPrimitive>,
    originals: &[(CameraView, ImageRgb)],
    priors: &[PriorSample],
    confidences: &[ImageGray],
    cfg: &TrainConfig,
    iters: usize,
) -> Result<TrainReport, TrainError> {
    assert_eq!(priors.len(), confidences.len());
    let opts = RenderOptions::default();
    let extent = scene_extent(gaussians);
    let mut opt = SceneAdam::new(gaussians, extent, cfg);
    let mut updates = 0u64;
    let mut last_loss = 0.0;
    for it in 0..iters {
        let (loss, grad) = if it % 2 == 0 {
            let (cam, gt) = &originals[(it / 2) % originals.len()];
            let out = render(gaussians, cam, &opts);
            let l = loss_io(&out.rgb, gt)?;
            let g = render_backward(gaussians, cam, &l.grad, &opts)?;
            (l.value, g)
        } else {
            let j = (it / 2) % priors.len();
            let prior = &priors[j];
            let out = render(gaussians, &prior.cam, &opts);
            let l = loss_ie(&out.rgb, &prior.image, &confidences[j])?;
            let g = render_backward(gaussians, &prior.cam, &l.grad_image, &opts)?;
            (l.value, g)
        };
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { iter: it });
        }
        last_loss = loss;
        updates += opt.step(gaussians, &grad.grads);
    }
    Ok(TrainReport {
        iterations: iters,
        final_loss: last_loss,
        updates_applied: updates,
        gaussians: gaussians.len(),
    })
}
