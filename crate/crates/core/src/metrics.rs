//! Image quality metrics and benchmark report records.
//!
//! SSIM is the standard 11x11 Gaussian-window (sigma 1.5) formulation,
//! computed on Rec.601 luma with border-renormalized windows so that
//! ssim(x, x) = 1 holds exactly at the edges too. The per-pixel map and its
//! analytic backward are exposed for the reward-weighted training losses.

use crate::img::{ImageGray, ImageRgb, Mask};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no pixel passes the confidence threshold")]
    NoValidPixels,
    #[error("image shape mismatch")]
    ShapeMismatch,
}

pub const PSNR_CAP: f64 = 99.0;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const WIN: usize = 11;
const SIGMA: f64 = 1.5;

/// Peak signal-to-noise ratio in dB for [0,1] images, capped at 99 dB.
pub fn psnr(a: &ImageRgb, b: &ImageRgb) -> f64 {
    assert!(a.same_shape(b));
    let n = a.data.len() as f64;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse < 1e-12 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

fn kernel() -> [f64; WIN] {
    let mut k = [0.0; WIN];
    let c = (WIN / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable windowed weighted mean with border renormalization.
/// Also returns the per-pixel normalization Z (product of the axis sums).
fn filter(img: &ImageGray) -> (ImageGray, ImageGray) {
    let k = kernel();
    let r = WIN / 2;
    let (w, h) = (img.width, img.height);
    let mut tmp = ImageGray::zeros(w, h);
    let mut tmpz = ImageGray::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut z = 0.0;
            for t in 0..WIN {
                let xx = x as i64 + t as i64 - r as i64;
                if xx < 0 || xx >= w as i64 {
                    continue;
                }
                acc += k[t] * img.at(xx as usize, y);
                z += k[t];
            }
            tmp.set(x, y, acc);
            tmpz.set(x, y, z);
        }
    }
    let mut out = ImageGray::zeros(w, h);
    let mut outz = ImageGray::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut z = 0.0;
            for t in 0..WIN {
                let yy = y as i64 + t as i64 - r as i64;
                if yy < 0 || yy >= h as i64 {
                    continue;
                }
                acc += k[t] * tmp.at(x, yy as usize);
                z += k[t] * tmpz.at(x, yy as usize);
            }
            out.set(x, y, acc);
            outz.set(x, y, z);
        }
    }
    for p in 0..w * h {
        out.data[p] /= outz.data[p];
    }
    (out, outz)
}

/// Spread operator: adjoint of `filter` for the border-renormalized window.
/// Given field(p) already divided by Z(p), correlates with the raw kernel.
fn spread(field: &ImageGray) -> ImageGray {
    let k = kernel();
    let r = WIN / 2;
    let (w, h) = (field.width, field.height);
    let mut tmp = ImageGray::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for t in 0..WIN {
                let yy = y as i64 + t as i64 - r as i64;
                if yy < 0 || yy >= h as i64 {
                    continue;
                }
                acc += k[t] * field.at(x, yy as usize);
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = ImageGray::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for t in 0..WIN {
                let xx = x as i64 + t as i64 - r as i64;
                if xx < 0 || xx >= w as i64 {
                    continue;
                }
                acc += k[t] * tmp.at(xx as usize, y);
            }
            out.set(x, y, acc);
        }
    }
    out
}

struct SsimFields {
    ex: ImageGray,
    ey: ImageGray,
    exx: ImageGray,
    eyy: ImageGray,
    exy: ImageGray,
    z: ImageGray,
}

fn ssim_fields(x: &ImageGray, y: &ImageGray) -> SsimFields {
    let mul = |a: &ImageGray, b: &ImageGray| {
        let mut o = a.clone();
        for (v, w) in o.data.iter_mut().zip(&b.data) {
            *v *= w;
        }
        o
    };
    let (ex, z) = filter(x);
    let (ey, _) = filter(y);
    let (exx, _) = filter(&mul(x, x));
    let (eyy, _) = filter(&mul(y, y));
    let (exy, _) = filter(&mul(x, y));
    SsimFields { ex, ey, exx, eyy, exy, z }
}

/// Per-pixel SSIM map on scalar (luma) images.
pub fn ssim_map(x: &ImageGray, y: &ImageGray) -> ImageGray {
    let f = ssim_fields(x, y);
    let mut out = ImageGray::zeros(x.width, x.height);
    for p in 0..out.data.len() {
        let (mx, my) = (f.ex.data[p], f.ey.data[p]);
        let sx = f.exx.data[p] - mx * mx;
        let sy = f.eyy.data[p] - my * my;
        let sxy = f.exy.data[p] - mx * my;
        let a1 = 2.0 * mx * my + C1;
        let a2 = 2.0 * sxy + C2;
        let b1 = mx * mx + my * my + C1;
        let b2 = sx + sy + C2;
        out.data[p] = (a1 * a2) / (b1 * b2);
    }
    out
}

/// Mean SSIM of two RGB images on Rec.601 luma.
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> f64 {
    ssim_map(&a.to_luma(), &b.to_luma()).mean()
}

/// d(sum(upstream .* ssim_map(x,y)))/dx.
pub fn ssim_map_backward(x: &ImageGray, y: &ImageGray, upstream: &ImageGray) -> ImageGray {
    let f = ssim_fields(x, y);
    let n = x.data.len();
    let mut g_ex = ImageGray::zeros(x.width, x.height);
    let mut g_exx = ImageGray::zeros(x.width, x.height);
    let mut g_exy = ImageGray::zeros(x.width, x.height);
    for p in 0..n {
        let (mx, my) = (f.ex.data[p], f.ey.data[p]);
        let sx = f.exx.data[p] - mx * mx;
        let sy = f.eyy.data[p] - my * my;
        let sxy = f.exy.data[p] - mx * my;
        let a1 = 2.0 * mx * my + C1;
        let a2 = 2.0 * sxy + C2;
        let b1 = mx * mx + my * my + C1;
        let b2 = sx + sy + C2;
        let s = (a1 * a2) / (b1 * b2);
        let ds_dmx = (2.0 * a2 / (b1 * b2)) * (my - mx * a1 / b1);
        let ds_dsx = -s / b2;
        let ds_dsxy = 2.0 * a1 / (b1 * b2);
        let u = upstream.data[p];
        // chain through sx = exx - ex^2, sxy = exy - ex ey
        g_ex.data[p] = u * (ds_dmx + ds_dsx * (-2.0 * mx) + ds_dsxy * (-my));
        g_exx.data[p] = u * ds_dsx;
        g_exy.data[p] = u * ds_dsxy;
    }
    // adjoint of the normalized filter: divide by Z then spread
    for p in 0..n {
        g_ex.data[p] /= f.z.data[p];
        g_exx.data[p] /= f.z.data[p];
        g_exy.data[p] /= f.z.data[p];
    }
    let s_ex = spread(&g_ex);
    let s_exx = spread(&g_exx);
    let s_exy = spread(&g_exy);
    let mut out = ImageGray::zeros(x.width, x.height);
    for p in 0..n {
        out.data[p] = s_ex.data[p] + 2.0 * x.data[p] * s_exx.data[p] + y.data[p] * s_exy.data[p];
    }
    out
}

/// AUROC of `score` against boolean labels, midrank tie handling.
pub fn auroc(scores: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len());
    let npos = labels.iter().filter(|l| **l).count();
    let nneg = labels.len() - npos;
    if npos == 0 || nneg == 0 {
        return 0.5;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // midranks
    let mut rank = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            rank[k] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..scores.len()).filter(|&k| labels[k]).map(|k| rank[k]).sum();
    (rank_sum - (npos * (npos + 1)) as f64 / 2.0) / (npos as f64 * nneg as f64)
}

/// AUROC of (1 - confidence) against an artifact mask.
pub fn reward_auroc(confidence: &ImageGray, artifact_mask: &Mask) -> f64 {
    assert_eq!(confidence.data.len(), artifact_mask.data.len());
    let scores: Vec<f64> = confidence.data.iter().map(|c| 1.0 - c).collect();
    auroc(&scores, &artifact_mask.data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskedMae {
    /// MAE over pixels with confidence >= threshold.
    pub accepted: f64,
    /// MAE over the rejected pixels (f64::NAN when none rejected).
    pub rejected: f64,
    pub accepted_fraction: f64,
}

/// MAE of `img` vs `gt` restricted to pixels the reward map accepts.
pub fn masked_mae(img: &ImageRgb, gt: &ImageRgb, confidence: &ImageGray, threshold: f64) -> Result<MaskedMae, MetricError> {
    if !img.same_shape(gt) || confidence.data.len() != img.pixels() {
        return Err(MetricError::ShapeMismatch);
    }
    let mut acc = (0.0, 0usize);
    let mut rej = (0.0, 0usize);
    for p in 0..img.pixels() {
        let mut e = 0.0;
        for ch in 0..3 {
            e += (img.data[3 * p + ch] - gt.data[3 * p + ch]).abs();
        }
        e /= 3.0;
        if confidence.data[p] >= threshold {
            acc.0 += e;
            acc.1 += 1;
        } else {
            rej.0 += e;
            rej.1 += 1;
        }
    }
    if acc.1 == 0 {
        return Err(MetricError::NoValidPixels);
    }
    Ok(MaskedMae {
        accepted: acc.0 / acc.1 as f64,
        rejected: if rej.1 == 0 { f64::NAN } else { rej.0 / rej.1 as f64 },
        accepted_fraction: acc.1 as f64 / img.pixels() as f64,
    })
}

/// One evaluation record (per view).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view_id: String,
    pub lane_tag: String,
    pub psnr: f64,
    pub ssim: f64,
    pub reward_auroc: Option<f64>,
    pub masked_mae: Option<MaskedMae>,
}

/// Aggregate benchmark report. LPIPS is deliberately absent: it needs a
/// pretrained perceptual network, which this artifact does not ship.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub seed: u64,
    pub config_hash: String,
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_reward_auroc: Option<f64>,
    pub gaussian_count: usize,
    pub wall_clock_sec: f64,
    pub note: String,
}

impl MetricReport {
    pub fn aggregate(seed: u64, config_hash: String, views: Vec<ViewMetrics>, gaussian_count: usize, wall_clock_sec: f64) -> Self {
        let n = views.len().max(1) as f64;
        let mean_psnr = views.iter().map(|v| v.psnr).sum::<f64>() / n;
        let mean_ssim = views.iter().map(|v| v.ssim).sum::<f64>() / n;
        let aurocs: Vec<f64> = views.iter().filter_map(|v| v.reward_auroc).collect();
        let mean_reward_auroc = if aurocs.is_empty() {
            None
        } else {
            Some(aurocs.iter().sum::<f64>() / aurocs.len() as f64)
        };
        MetricReport {
            seed,
            config_hash,
            views,
            mean_psnr,
            mean_ssim,
            mean_reward_auroc,
            gaussian_count,
            wall_clock_sec,
            note: "LPIPS omitted: no pretrained perceptual network in this artifact".into(),
        }
    }
}
