//! Procedural benchmark world: seeded scene generation, multi-lane
//! trajectories, ground-truth rendering, colored point-cloud sampling, and
//! the artifact-injecting prior synthesizer with exact ground-truth masks.
//!
//! World frame is camera-aligned for the original lane: x right, y down,
//! z forward. The road plane sits below the camera path, walls flank it and a
//! large far backdrop guarantees full alpha coverage from every pose.

use crate::img::{ImageGray, ImageRgb, Mask};
use crate::raster::{render, render_depth, RenderOptions};
use crate::splat::{CameraView, GaussianPrimitive};
use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pixels differing from the GT render by more than this (any channel) are
/// artifact pixels. Below visual significance, above float noise.
pub const ARTIFACT_EPS: f64 = 2.0 / 255.0;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("severity must be in [0,1], got {0}")]
    InvalidConfig(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneConfig {
    pub splat_budget: usize,
    /// Length of the camera path in world units.
    pub path_length: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub focal: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig { splat_budget: 5000, path_length: 40.0, image_width: 64, image_height: 64, focal: 51.0 }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub gaussians: Vec<GaussianPrimitive>,
    pub seed: u64,
    pub cfg: SceneConfig,
    /// Axis-aligned world bounds of the splat centers.
    pub bounds: (Vector3<f64>, Vector3<f64>),
}

impl SyntheticScene {
    pub fn extent(&self) -> f64 {
        (self.bounds.1 - self.bounds.0).norm()
    }
}

fn jitter_color(base: [f64; 3], amount: f64, rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::new(
        (base[0] + rng.gen_range(-amount..amount)).clamp(0.02, 0.98),
        (base[1] + rng.gen_range(-amount..amount)).clamp(0.02, 0.98),
        (base[2] + rng.gen_range(-amount..amount)).clamp(0.02, 0.98),
    )
}

fn grid_surface(
    out: &mut Vec<GaussianPrimitive>,
    rng: &mut impl Rng,
    u_range: (f64, f64),
    v_range: (f64, f64),
    spacing: f64,
    to_world: impl Fn(f64, f64) -> Vector3<f64>,
    scale: Vector3<f64>,
    base_color: impl Fn(f64, f64) -> [f64; 3],
    jitter: f64,
    opacity: f64,
) {
    let nu = ((u_range.1 - u_range.0) / spacing).ceil() as usize;
    let nv = ((v_range.1 - v_range.0) / spacing).ceil() as usize;
    for i in 0..=nu {
        for j in 0..=nv {
            let u = u_range.0 + i as f64 * spacing;
            let v = v_range.0 + j as f64 * spacing;
            let pos = to_world(u, v) + Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.05..0.05), rng.gen_range(-0.1..0.1)) * spacing;
            out.push(GaussianPrimitive::new(pos, scale, opacity, jitter_color(base_color(u, v), jitter, rng)));
        }
    }
}

/// Deterministic procedural scene: textured road, flanking walls, scattered
/// boxes, far backdrop.
pub fn gen_scene(seed: u64, cfg: &SceneConfig) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g: Vec<GaussianPrimitive> = Vec::new();
    let zmax = cfg.path_length + 35.0;

    // Derive grid spacings from the splat budget so surfaces tile contiguously
    // whatever the budget; decimating a fixed-density grid would leave gaps.
    let n_box_splats = 8 * 27;
    let free = cfg.splat_budget.saturating_sub(n_box_splats).max(100) as f64;
    let surf_area = 32.0 * (zmax + 2.0) + 2.0 * 7.5 * (zmax + 2.0);
    let back_area = 114.0 * 100.0;
    let s_surf = (surf_area / (0.8 * free)).sqrt();
    let s_back = (back_area / (0.2 * free)).sqrt();

    // road plane at y = 1.5 (below the camera path)
    grid_surface(
        &mut g,
        &mut rng,
        (-12.0, 20.0),
        (-2.0, zmax),
        s_surf,
        |x, z| Vector3::new(x, 1.5, z),
        Vector3::new(0.75 * s_surf, 0.05, 0.75 * s_surf),
        |x, z| {
            let checker = ((x / 3.0).floor() + (z / 3.0).floor()) as i64 % 2 == 0;
            if checker {
                [0.42, 0.40, 0.38]
            } else {
                [0.30, 0.30, 0.32]
            }
        },
        0.08,
        0.95,
    );

    // side walls / vegetation bands
    for (wx, base) in [(-12.0, [0.20, 0.45, 0.20]), (20.0, [0.45, 0.35, 0.22])] {
        grid_surface(
            &mut g,
            &mut rng,
            (-6.0, 1.5),
            (-2.0, zmax),
            s_surf,
            |y, z| Vector3::new(wx, y, z),
            Vector3::new(0.05, 0.75 * s_surf, 0.75 * s_surf),
            |y, z| {
                let band = ((y * 0.8 + z * 0.3).sin() * 0.5 + 0.5) * 0.2;
                [base[0] + band, base[1] + band * 0.5, base[2]]
            },
            0.1,
            0.95,
        );
    }

    // far backdrop
    grid_surface(
        &mut g,
        &mut rng,
        (-52.0, 62.0),
        (-50.0, 50.0),
        s_back,
        |x, y| Vector3::new(x, y, zmax + 5.0),
        Vector3::new(s_back, s_back, 0.2),
        |x, y| {
            let t = ((y + 50.0) / 100.0).clamp(0.0, 1.0);
            [0.35 + 0.1 * (x / 60.0).sin(), 0.45 + 0.15 * t, 0.65 - 0.2 * t]
        },
        0.05,
        0.97,
    );

    // scattered boxes on the road
    let n_boxes = 8;
    for _ in 0..n_boxes {
        // keep a clearance corridor around the camera lanes (x around 2..9)
        let bx = if rng.gen_bool(0.5) { rng.gen_range(-9.0..0.0) } else { rng.gen_range(11.0..17.0) };
        let bz = rng.gen_range(4.0..zmax - 10.0);
        let size = rng.gen_range(0.8..2.0);
        let color = [rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9)];
        for ix in 0..3 {
            for iy in 0..3 {
                for iz in 0..3 {
                    let pos = Vector3::new(
                        bx + (ix as f64 - 1.0) * size * 0.45,
                        1.5 - size + (iy as f64 - 1.0) * size * 0.45,
                        bz + (iz as f64 - 1.0) * size * 0.45,
                    );
                    let mut rng2 = ChaCha8Rng::seed_from_u64(rng.gen());
                    g.push(GaussianPrimitive::new(
                        pos,
                        Vector3::new(size * 0.35, size * 0.35, size * 0.35),
                        0.92,
                        jitter_color(color, 0.06, &mut rng2),
                    ));
                }
            }
        }
    }

    // honor the splat budget with deterministic strided decimation
    if g.len() > cfg.splat_budget {
        let keep_every = g.len() as f64 / cfg.splat_budget as f64;
        let mut kept = Vec::with_capacity(cfg.splat_budget);
        let mut acc = 0.0;
        for (i, s) in g.into_iter().enumerate() {
            if i as f64 >= acc {
                kept.push(s);
                acc += keep_every;
            }
        }
        g = kept;
    }

    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for s in &g {
        lo = lo.inf(&s.position);
        hi = hi.sup(&s.position);
    }
    SyntheticScene { gaussians: g, seed, cfg: cfg.clone(), bounds: (lo, hi) }
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub offset: f64,
    pub tag: String,
    /// (view id, camera) pairs.
    pub views: Vec<(String, CameraView)>,
}

#[derive(Debug, Clone)]
pub struct TrajectorySet {
    pub lanes: Vec<Lane>,
}

impl TrajectorySet {
    pub fn original(&self) -> &Lane {
        &self.lanes[0]
    }

    pub fn all_views(&self) -> Vec<(String, CameraView)> {
        self.lanes.iter().flat_map(|l| l.views.iter().cloned()).collect()
    }
}

fn yaw_matrix(yaw: f64) -> Matrix3<f64> {
    // rotation about the world y (down) axis
    Matrix3::new(yaw.cos(), 0.0, yaw.sin(), 0.0, 1.0, 0.0, -yaw.sin(), 0.0, yaw.cos())
}

/// N poses per lane along a smooth forward path; shifted lanes are rigid
/// lateral offsets of the original.
pub fn gen_trajectory(cfg: &SceneConfig, lane_offsets: &[f64], n: usize) -> TrajectorySet {
    let mut lanes = Vec::new();
    for &offset in lane_offsets {
        let tag = if offset == 0.0 { "orig".to_string() } else { format!("shift+{offset}") };
        let mut views = Vec::with_capacity(n);
        for i in 0..n {
            let f = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let z = f * cfg.path_length;
            let yaw = 0.04 * (f * 6.0).sin();
            let center = Vector3::new(offset + 2.0 + 0.3 * (f * 4.0).sin(), 0.0, z);
            let r = yaw_matrix(yaw).transpose(); // world -> cam
            let t = -r * center;
            let mut m = Matrix4::identity();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
            let mut cam = CameraView::new(
                cfg.focal,
                cfg.focal,
                cfg.image_width as f64 / 2.0,
                cfg.image_height as f64 / 2.0,
                cfg.image_width,
                cfg.image_height,
                m,
            );
            cam.lane_tag = tag.clone();
            views.push((format!("{tag}_v{i:03}"), cam));
        }
        lanes.push(Lane { offset, tag, views });
    }
    TrajectorySet { lanes }
}

#[derive(Debug, Clone)]
pub struct ColoredPointCloud {
    pub positions: Vec<Vector3<f64>>,
    pub colors: Vec<Vector3<f64>>,
}

impl ColoredPointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Sample the GT depth maps of the original lane at a strided grid and lift
/// the hit pixels to colored world points.
pub fn sample_pointcloud(scene: &SyntheticScene, lane: &Lane, stride: usize, cap: usize) -> ColoredPointCloud {
    let mut cloud = ColoredPointCloud { positions: Vec::new(), colors: Vec::new() };
    if stride == 0 {
        return cloud;
    }
    let opts = RenderOptions::default();
    for (_, cam) in &lane.views {
        let out = render(&scene.gaussians, cam, &opts);
        let (depth, valid) = {
            let mut v = Mask::new(cam.width, cam.height, false);
            for p in 0..v.data.len() {
                v.data[p] = out.alpha.data[p] >= 0.5;
            }
            (out.depth, v)
        };
        for y in (0..cam.height).step_by(stride) {
            for x in (0..cam.width).step_by(stride) {
                if !valid.at(x, y) {
                    continue;
                }
                if cloud.len() >= cap {
                    return cloud;
                }
                let d = depth.at(x, y);
                let p = cam.unproject_pixel(x as f64, y as f64, d).expect("depth > 0");
                let c = out.rgb.get(x, y);
                cloud.positions.push(p);
                cloud.colors.push(Vector3::new(c[0], c[1], c[2]));
            }
        }
    }
    cloud
}

/// Z-buffered 1-pixel splatting of a colored point cloud into a view.
/// Nearest point wins; ties broken by point index (first wins).
pub fn reproject_pointcloud(cloud: &ColoredPointCloud, cam: &CameraView) -> (ImageRgb, Mask) {
    let mut img = ImageRgb::zeros(cam.width, cam.height);
    let mut valid = Mask::new(cam.width, cam.height, false);
    let mut zbuf = vec![f64::INFINITY; cam.width * cam.height];
    for (i, p) in cloud.positions.iter().enumerate() {
        let Some((uv, z)) = cam.project_point(p) else { continue };
        let x = uv.x.round() as i64;
        let y = uv.y.round() as i64;
        if x < 0 || y < 0 || x >= cam.width as i64 || y >= cam.height as i64 {
            continue;
        }
        let idx = y as usize * cam.width + x as usize;
        if z < zbuf[idx] {
            zbuf[idx] = z;
            valid.data[idx] = true;
            let c = cloud.colors[i];
            img.data[3 * idx] = c.x;
            img.data[3 * idx + 1] = c.y;
            img.data[3 * idx + 2] = c.z;
        }
    }
    (img, valid)
}

/// GT depth of a view with optional per-pixel multiplicative noise U[1-a, 1+a].
pub fn depth_oracle(scene: &SyntheticScene, cam: &CameraView, noise_amp: f64, seed: u64) -> (ImageGray, Mask) {
    let (mut depth, valid) = render_depth(&scene.gaussians, cam, &RenderOptions::default());
    if noise_amp > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in depth.data.iter_mut() {
            *v *= rng.gen_range(1.0 - noise_amp..1.0 + noise_amp);
        }
    }
    (depth, valid)
}

/// One expanded-view record.
#[derive(Debug, Clone)]
pub struct PriorSample {
    pub view_id: String,
    pub cam: CameraView,
    pub image: ImageRgb,
    pub artifact_mask: Mask,
    pub reproj: ImageRgb,
    pub reproj_valid: Mask,
    pub recipe: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptionConfig {
    /// Scales both corrupted area and magnitude. 0 disables corruption.
    pub severity: f64,
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if !(0.0..=1.0).contains(&self.severity) {
            return Err(WorldError::InvalidConfig(self.severity));
        }
        Ok(())
    }
}

/// Synthesize a prior image for a view: the GT render with a seeded corruption
/// recipe applied, plus the exact artifact mask and the point-cloud
/// reprojection for that view.
pub fn synth_prior(
    scene: &SyntheticScene,
    view_id: &str,
    cam: &CameraView,
    cloud: &ColoredPointCloud,
    cfg: &CorruptionConfig,
    seed: u64,
) -> Result<PriorSample, WorldError> {
    cfg.validate()?;
    let gt = render(&scene.gaussians, cam, &RenderOptions::default()).rgb;
    let mut img = gt.clone();
    let mut recipe = String::new();
    let (w, h) = (cam.width as f64, cam.height as f64);

    if cfg.severity > 0.0 {
        // FNV-1a over the view id so each view draws an independent corruption
        // layout; screen-aligned patches shared across views would look like
        // consistent geometry and be absorbed by the scene during training.
        let mut vh: u64 = 0xcbf2_9ce4_8422_2325;
        for b in view_id.bytes() {
            vh ^= b as u64;
            vh = vh.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ vh ^ 0x5eed_f00d);
        // Drive off the realized changed-pixel fraction, not nominal patch
        // area: patches overlap and blur/warp patches only partially exceed
        // the detection epsilon.
        let measured = |img: &ImageRgb| {
            let mut n = 0usize;
            for p in 0..img.width * img.height {
                for ch in 0..3 {
                    if (img.data[3 * p + ch] - gt.data[3 * p + ch]).abs() > ARTIFACT_EPS {
                        n += 1;
                        break;
                    }
                }
            }
            n as f64 / (w * h)
        };
        let target_frac = cfg.severity * 0.92;
        let mut kind = rng.gen_range(0..4u8);
        let mut patches = 0;
        while measured(&img) < target_frac && patches < 64 {
            let pw = rng.gen_range(0.18..0.42) * w * (0.6 + 0.8 * cfg.severity);
            let ph = rng.gen_range(0.18..0.42) * h * (0.6 + 0.8 * cfg.severity);
            let px = rng.gen_range(0.0..(w - pw).max(1.0));
            let py = rng.gen_range(0.0..(h - ph).max(1.0));
            let (x0, y0) = (px as usize, py as usize);
            let (x1, y1) = (((px + pw) as usize).min(cam.width), ((py + ph) as usize).min(cam.height));
            let mag = (0.8 + 0.6 * cfg.severity).min(0.95);
            match kind % 4 {
                0 => {
                    // ghost blob: spurious elliptical splat in the saturated
                    // color farthest from the content it covers, the way a
                    // hallucinated object clashes with the real palette
                    let mut mean = [0.0f64; 3];
                    let mut n = 0.0f64;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let c = gt.get(x, y);
                            for ch in 0..3 {
                                mean[ch] += c[ch];
                            }
                            n += 1.0;
                        }
                    }
                    let color = [
                        if mean[0] / n.max(1.0) < 0.5 { 1.0 } else { 0.0 },
                        if mean[1] / n.max(1.0) < 0.5 { 1.0 } else { 0.0 },
                        if mean[2] / n.max(1.0) < 0.5 { 1.0 } else { 0.0 },
                    ];
                    let (cxp, cyp) = ((x0 + x1) as f64 / 2.0, (y0 + y1) as f64 / 2.0);
                    let (rx, ry) = ((x1 - x0) as f64 / 2.0, (y1 - y0) as f64 / 2.0);
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let dx = (x as f64 - cxp) / rx.max(1.0);
                            let dy = (y as f64 - cyp) / ry.max(1.0);
                            if dx * dx + dy * dy > 1.0 {
                                continue;
                            }
                            let c = img.get(x, y);
                            img.set(x, y, [
                                c[0] * (1.0 - mag) + color[0] * mag,
                                c[1] * (1.0 - mag) + color[1] * mag,
                                c[2] * (1.0 - mag) + color[2] * mag,
                            ]);
                        }
                    }
                    recipe.push_str("ghost;");
                }
                1 => {
                    // hue/brightness shift, strong enough to read as a wrong
                    // exposure rather than mild grading noise
                    let gains = [
                        1.0 + rng.gen_range(0.6..1.4) * mag * if rng.gen_bool(0.5) { 1.0 } else { -0.8 },
                        1.0 + rng.gen_range(0.6..1.4) * mag * if rng.gen_bool(0.5) { 1.0 } else { -0.8 },
                        1.0 + rng.gen_range(0.6..1.4) * mag * if rng.gen_bool(0.5) { 1.0 } else { -0.8 },
                    ];
                    let bias = rng.gen_range(0.25..0.5) * mag * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let c = img.get(x, y);
                            img.set(x, y, [
                                (c[0] * gains[0] + bias).clamp(0.0, 1.0),
                                (c[1] * gains[1] + bias).clamp(0.0, 1.0),
                                (c[2] * gains[2] + bias).clamp(0.0, 1.0),
                            ]);
                        }
                    }
                    recipe.push_str("shift;");
                }
                2 => {
                    // block noise: pixelated random texture blended over the
                    // patch, mimicking hallucinated high-frequency detail
                    let cell = 2 + (rng.gen::<u64>() % 3) as usize;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            // each cell flips to the saturated color farthest
                            // from the pixel it overwrites
                            let cx = (x0 + ((x - x0) / cell) * cell).min(img.width - 1);
                            let cy = (y0 + ((y - y0) / cell) * cell).min(img.height - 1);
                            let base = gt.get(cx, cy);
                            let t = [
                                if base[0] < 0.5 { 1.0 } else { 0.0 },
                                if base[1] < 0.5 { 1.0 } else { 0.0 },
                                if base[2] < 0.5 { 1.0 } else { 0.0 },
                            ];
                            let c = img.get(x, y);
                            img.set(x, y, [
                                c[0] * (1.0 - mag) + t[0] * mag,
                                c[1] * (1.0 - mag) + t[1] * mag,
                                c[2] * (1.0 - mag) + t[2] * mag,
                            ]);
                        }
                    }
                    recipe.push_str("blocknoise;");
                }
                _ => {
                    // phantom stripes: diagonal bands of an alien color pair,
                    // the kind of repeated structure a generative prior invents
                    let ca = [1.0, 0.0, 1.0];
                    let cb = [0.0, 1.0, 0.0];
                    let period = 2 + (rng.gen::<u64>() % 3) as usize;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let t = if ((x + 2 * y) / period) % 2 == 0 { ca } else { cb };
                            let c = img.get(x, y);
                            img.set(x, y, [
                                c[0] * (1.0 - mag) + t[0] * mag,
                                c[1] * (1.0 - mag) + t[1] * mag,
                                c[2] * (1.0 - mag) + t[2] * mag,
                            ]);
                        }
                    }
                    recipe.push_str("stripes;");
                }
            }
            kind = kind.wrapping_add(1);
            patches += 1;
        }
    }

    // exact mask by construction: compare against the GT render
    let mut mask = Mask::new(cam.width, cam.height, false);
    for p in 0..mask.data.len() {
        for ch in 0..3 {
            if (img.data[3 * p + ch] - gt.data[3 * p + ch]).abs() > ARTIFACT_EPS {
                mask.data[p] = true;
                break;
            }
        }
    }

    let (reproj, reproj_valid) = reproject_pointcloud(cloud, cam);
    Ok(PriorSample {
        view_id: view_id.to_string(),
        cam: cam.clone(),
        image: img,
        artifact_mask: mask,
        reproj,
        reproj_valid,
        recipe,
    })
}
