//! Photometric training losses and their analytic image-space gradients.
//!
//! Two losses are used during scene optimization:
//! * [`loss_io`] compares a render against a trusted original-lane image
//!   (L1 plus a structural term).
//! * [`loss_ie`] compares a render against a generated prior image, with every
//!   data term gated per pixel by a confidence map, plus a small
//!   gradient-difference perceptual term that is deliberately *not* gated so
//!   structure still flows where confidence is low.

use crate::img::{ImageGray, ImageRgb};
use crate::metrics::{ssim_map, ssim_map_backward, MetricError};

/// Rec.601 luma weights, shared with [`ImageRgb::to_luma`].
const LUMA_W: [f64; 3] = [0.299, 0.587, 0.114];

pub const IO_L1_WEIGHT: f64 = 0.8;
pub const IO_SSIM_WEIGHT: f64 = 0.2;
pub const IE_L1_WEIGHT: f64 = 0.8;
pub const IE_SSIM_WEIGHT: f64 = 0.2;
pub const IE_PERC_WEIGHT: f64 = 0.01;

/// Value and gradient of the original-image loss.
#[derive(Debug, Clone)]
pub struct IoLoss {
    pub value: f64,
    /// Mean absolute error component (unweighted).
    pub l1: f64,
    /// Structural dissimilarity component `1 - ssim` (unweighted).
    pub dssim: f64,
    /// d(value)/d(rendered), same shape as the input.
    pub grad: ImageRgb,
}

/// Value and gradients of the confidence-gated prior-image loss.
#[derive(Debug, Clone)]
pub struct IeLoss {
    pub value: f64,
    pub l1: f64,
    pub dssim: f64,
    pub perceptual: f64,
    /// d(value)/d(rendered).
    pub grad_image: ImageRgb,
    /// d(value)/d(confidence).
    pub grad_confidence: ImageGray,
}

/// `0.8 * L1 + 0.2 * (1 - SSIM)` between a render and a trusted image,
/// with the analytic gradient with respect to the render.
pub fn loss_io(rendered: &ImageRgb, target: &ImageRgb) -> Result<IoLoss, MetricError> {
    if !rendered.same_shape(target) {
        return Err(MetricError::ShapeMismatch);
    }
    let n = rendered.data.len() as f64;
    let mut grad = ImageRgb::zeros(rendered.width, rendered.height);
    let mut l1 = 0.0;
    for i in 0..rendered.data.len() {
        let d = rendered.data[i] - target.data[i];
        l1 += d.abs();
        grad.data[i] = IO_L1_WEIGHT * d.signum() / n;
    }
    l1 /= n;

    let lx = rendered.to_luma();
    let ly = target.to_luma();
    let map = ssim_map(&lx, &ly);
    let hw = (rendered.pixels()) as f64;
    let s = map.data.iter().sum::<f64>() / hw;
    let dssim = 1.0 - s;
    let upstream = ImageGray::filled(rendered.width, rendered.height, -IO_SSIM_WEIGHT / hw);
    let dluma = ssim_map_backward(&lx, &ly, &upstream);
    add_luma_grad(&mut grad, &dluma);

    Ok(IoLoss { value: IO_L1_WEIGHT * l1 + IO_SSIM_WEIGHT * dssim, l1, dssim, grad })
}

/// Confidence-gated loss against a generated prior image:
/// `0.8*mean(C|I_d - I_e|) + 0.2*mean(C*(1 - ssim_map)) + 0.01*L_grad`,
/// where `L_grad` is a Sobel gradient-difference term on luma. Returns the
/// analytic gradients with respect to both the render and the confidence map.
pub fn loss_ie(
    rendered: &ImageRgb,
    prior: &ImageRgb,
    confidence: &ImageGray,
) -> Result<IeLoss, MetricError> {
    if !rendered.same_shape(prior)
        || confidence.width != rendered.width
        || confidence.height != rendered.height
    {
        return Err(MetricError::ShapeMismatch);
    }
    let (w, h) = (rendered.width, rendered.height);
    let hw = (w * h) as f64;
    let n = rendered.data.len() as f64;
    let mut grad_image = ImageRgb::zeros(w, h);
    let mut grad_conf = ImageGray::zeros(w, h);

    // gated L1 over all channels, confidence broadcast across channels
    let mut l1 = 0.0;
    for p in 0..w * h {
        let c = confidence.data[p];
        let mut abs_sum = 0.0;
        for ch in 0..3 {
            let d = rendered.data[3 * p + ch] - prior.data[3 * p + ch];
            abs_sum += d.abs();
            grad_image.data[3 * p + ch] += IE_L1_WEIGHT * c * d.signum() / n;
        }
        l1 += c * abs_sum;
        grad_conf.data[p] += IE_L1_WEIGHT * abs_sum / n;
    }
    l1 /= n;

    // gated structural term on luma
    let lx = rendered.to_luma();
    let ly = prior.to_luma();
    let map = ssim_map(&lx, &ly);
    let mut dssim = 0.0;
    let mut upstream = ImageGray::zeros(w, h);
    for p in 0..w * h {
        dssim += confidence.data[p] * (1.0 - map.data[p]);
        grad_conf.data[p] += IE_SSIM_WEIGHT * (1.0 - map.data[p]) / hw;
        upstream.data[p] = -IE_SSIM_WEIGHT * confidence.data[p] / hw;
    }
    dssim /= hw;
    let dluma = ssim_map_backward(&lx, &ly, &upstream);
    add_luma_grad(&mut grad_image, &dluma);

    // ungated perceptual proxy: squared Sobel gradient difference on luma
    let (gx_d, gy_d) = sobel(&lx);
    let (gx_e, gy_e) = sobel(&ly);
    let mut perc = 0.0;
    let mut up_gx = ImageGray::zeros(w, h);
    let mut up_gy = ImageGray::zeros(w, h);
    for p in 0..w * h {
        let dx = gx_d.data[p] - gx_e.data[p];
        let dy = gy_d.data[p] - gy_e.data[p];
        perc += dx * dx + dy * dy;
        up_gx.data[p] = IE_PERC_WEIGHT * 2.0 * dx / hw;
        up_gy.data[p] = IE_PERC_WEIGHT * 2.0 * dy / hw;
    }
    perc /= hw;
    let dluma_perc = sobel_adjoint(&up_gx, &up_gy);
    add_luma_grad(&mut grad_image, &dluma_perc);

    Ok(IeLoss {
        value: IE_L1_WEIGHT * l1 + IE_SSIM_WEIGHT * dssim + IE_PERC_WEIGHT * perc,
        l1,
        dssim,
        perceptual: perc,
        grad_image,
        grad_confidence: grad_conf,
    })
}

/// Spread a luma-space gradient back to RGB channels.
fn add_luma_grad(grad: &mut ImageRgb, dluma: &ImageGray) {
    for p in 0..dluma.data.len() {
        for ch in 0..3 {
            grad.data[3 * p + ch] += LUMA_W[ch] * dluma.data[p];
        }
    }
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

fn correlate3(img: &ImageGray, k: &[[f64; 3]; 3]) -> ImageGray {
    let (w, h) = (img.width, img.height);
    let mut out = ImageGray::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..3 {
                for kx in 0..3 {
                    let yy = y as i64 + ky as i64 - 1;
                    let xx = x as i64 + kx as i64 - 1;
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        acc += k[ky][kx] * img.data[yy as usize * w + xx as usize];
                    }
                }
            }
            out.data[y * w + x] = acc;
        }
    }
    out
}

/// Sobel gradients of a grayscale image with zero padding.
pub fn sobel(img: &ImageGray) -> (ImageGray, ImageGray) {
    (correlate3(img, &SOBEL_X), correlate3(img, &SOBEL_Y))
}

/// Adjoint of [`sobel`]: correlation with the flipped kernels, which for the
/// antisymmetric Sobel taps is correlation with the negated kernels.
pub fn sobel_adjoint(up_gx: &ImageGray, up_gy: &ImageGray) -> ImageGray {
    let flip = |k: &[[f64; 3]; 3]| {
        let mut f = [[0.0; 3]; 3];
        for y in 0..3 {
            for x in 0..3 {
                f[y][x] = k[2 - y][2 - x];
            }
        }
        f
    };
    let a = correlate3(up_gx, &flip(&SOBEL_X));
    let b = correlate3(up_gy, &flip(&SOBEL_Y));
    let mut out = a;
    for (o, v) in out.data.iter_mut().zip(&b.data) {
        *o += v;
    }
    out
}
