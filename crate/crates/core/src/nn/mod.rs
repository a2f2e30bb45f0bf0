//! Minimal reverse-mode autodiff over dense feature maps.
//!
//! The layer set is exactly what the confidence U-Net needs: 3x3 convolutions
//! (stride 1 or 2, zero padding), 3x3 stride-2 transposed convolutions, ReLU,
//! sigmoid, and channel concatenation with an earlier layer's output. Batch
//! dimension is fixed at 1.

pub mod optim;
pub mod persist;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("feature map shape mismatch: expected {expected} channels, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("spatial dims mismatch in concat: {0}x{1} vs {2}x{3}")]
    ConcatDims(usize, usize, usize, usize),
    #[error("backward called before forward")]
    StaleGraph,
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,
    #[error("schedule exhausted: iter {iter} > total {total}")]
    ScheduleExhausted { iter: usize, total: usize },
    #[error("bad weight file: {0}")]
    BadWeightFile(String),
}

/// C×H×W feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn add(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] += v;
    }

    pub fn assert_finite(&self) -> Result<(), NnError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(NnError::NonFiniteGradient)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// 3x3 convolution, zero padding 1. Stride 1 keeps H,W; stride 2 halves (ceil).
    Conv { in_ch: usize, out_ch: usize, stride: usize },
    /// 3x3 transposed convolution, stride 2; exactly doubles H,W.
    ConvTranspose { in_ch: usize, out_ch: usize },
    Relu,
    Sigmoid,
    /// Concatenate the output of layer `src` (0-based layer index) after the
    /// running feature map, channel-wise.
    Concat { src: usize },
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub kind: LayerKind,
    /// [out][in][ky][kx] for conv; [in][out][ky][kx] semantics folded into the
    /// same layout for transposed conv (indexed by the loops below).
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub weight_grad: Vec<f64>,
    pub bias_grad: Vec<f64>,
}

impl Layer {
    fn with_params(kind: LayerKind, weight: Vec<f64>, bias: Vec<f64>) -> Self {
        let wg = vec![0.0; weight.len()];
        let bg = vec![0.0; bias.len()];
        Layer { kind, weight, bias, weight_grad: wg, bias_grad: bg }
    }

    pub fn conv(in_ch: usize, out_ch: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (in_ch * 9) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let weight = (0..out_ch * in_ch * 9).map(|_| rng.gen_range(-limit..limit)).collect();
        Layer::with_params(LayerKind::Conv { in_ch, out_ch, stride }, weight, vec![0.0; out_ch])
    }

    pub fn conv_transpose(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        // Phase-symmetric init: with a stride-2 3x3 kernel the four output
        // phases draw on disjoint tap subsets, so independently random taps
        // stamp a checkerboard onto the output before any learning happens.
        // Drawing one value per (in, out) channel pair and repeating it
        // across all nine taps starts every phase identical.
        let fan_in = (in_ch * 9) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let mut weight = Vec::with_capacity(out_ch * in_ch * 9);
        for _ in 0..out_ch * in_ch {
            let v = rng.gen_range(-limit..limit);
            weight.extend(std::iter::repeat(v).take(9));
        }
        Layer::with_params(LayerKind::ConvTranspose { in_ch, out_ch }, weight, vec![0.0; out_ch])
    }

    pub fn relu() -> Self {
        Layer::with_params(LayerKind::Relu, vec![], vec![])
    }

    pub fn sigmoid() -> Self {
        Layer::with_params(LayerKind::Sigmoid, vec![], vec![])
    }

    pub fn concat(src: usize) -> Self {
        Layer::with_params(LayerKind::Concat { src }, vec![], vec![])
    }

    fn in_channels(&self) -> Option<usize> {
        match self.kind {
            LayerKind::Conv { in_ch, .. } | LayerKind::ConvTranspose { in_ch, .. } => Some(in_ch),
            _ => None,
        }
    }
}

/// An ordered layer graph with cached activations for reverse mode.
#[derive(Debug, Clone)]
pub struct NetGraph {
    pub layers: Vec<Layer>,
    /// cache[0] is the input, cache[i+1] the output of layer i.
    cache: Vec<FeatureMap>,
    ran_forward: bool,
}

impl NetGraph {
    pub fn new(layers: Vec<Layer>) -> Self {
        NetGraph { layers, cache: Vec::new(), ran_forward: false }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.weight_grad.iter_mut().for_each(|g| *g = 0.0);
            l.bias_grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn forward(&mut self, input: FeatureMap) -> Result<FeatureMap, NnError> {
        if let Some(l0) = self.layers.iter().find(|l| l.in_channels().is_some()) {
            let expected = l0.in_channels().unwrap();
            if input.channels != expected {
                return Err(NnError::ShapeMismatch { expected, got: input.channels });
            }
        }
        self.cache.clear();
        self.cache.push(input);
        for li in 0..self.layers.len() {
            let out = self.apply_forward(li)?;
            self.cache.push(out);
        }
        self.ran_forward = true;
        Ok(self.cache.last().unwrap().clone())
    }

    fn apply_forward(&self, li: usize) -> Result<FeatureMap, NnError> {
        let x = &self.cache[li];
        let layer = &self.layers[li];
        match layer.kind {
            LayerKind::Conv { in_ch, out_ch, stride } => {
                if x.channels != in_ch {
                    return Err(NnError::ShapeMismatch { expected: in_ch, got: x.channels });
                }
                Ok(conv_forward(x, &layer.weight, &layer.bias, out_ch, stride))
            }
            LayerKind::ConvTranspose { in_ch, out_ch } => {
                if x.channels != in_ch {
                    return Err(NnError::ShapeMismatch { expected: in_ch, got: x.channels });
                }
                Ok(conv_transpose_forward(x, &layer.weight, &layer.bias, out_ch))
            }
            LayerKind::Relu => {
                let mut out = x.clone();
                out.data.iter_mut().for_each(|v| *v = v.max(0.0));
                Ok(out)
            }
            LayerKind::Sigmoid => {
                let mut out = x.clone();
                out.data.iter_mut().for_each(|v| *v = crate::splat::sigmoid(*v));
                Ok(out)
            }
            LayerKind::Concat { src } => {
                let skip = &self.cache[src + 1];
                if skip.height != x.height || skip.width != x.width {
                    return Err(NnError::ConcatDims(x.height, x.width, skip.height, skip.width));
                }
                let mut out = FeatureMap::zeros(x.channels + skip.channels, x.height, x.width);
                out.data[..x.data.len()].copy_from_slice(&x.data);
                out.data[x.data.len()..].copy_from_slice(&skip.data);
                Ok(out)
            }
        }
    }

    /// Reverse-mode pass. Accumulates parameter gradients into each layer and
    /// returns d(loss)/d(input).
    pub fn backward(&mut self, dl_dout: &FeatureMap) -> Result<FeatureMap, NnError> {
        if !self.ran_forward {
            return Err(NnError::StaleGraph);
        }
        let n = self.layers.len();
        // per-cache-slot gradient accumulators (skip connections fan in)
        let mut grads: Vec<Option<FeatureMap>> = vec![None; n + 1];
        grads[n] = Some(dl_dout.clone());
        for li in (0..n).rev() {
            let dout = match grads[li + 1].take() {
                Some(g) => g,
                None => continue,
            };
            let x = &self.cache[li];
            let (dx, dskip) = {
                let layer = &mut self.layers[li];
                match layer.kind {
                    LayerKind::Conv { out_ch, stride, .. } => {
                        let dx = conv_backward(x, &layer.weight, &mut layer.weight_grad, &mut layer.bias_grad, &dout, out_ch, stride);
                        (dx, None)
                    }
                    LayerKind::ConvTranspose { out_ch, .. } => {
                        let dx = conv_transpose_backward(x, &layer.weight, &mut layer.weight_grad, &mut layer.bias_grad, &dout, out_ch);
                        (dx, None)
                    }
                    LayerKind::Relu => {
                        let mut dx = dout.clone();
                        for (g, v) in dx.data.iter_mut().zip(&x.data) {
                            if *v <= 0.0 {
                                *g = 0.0;
                            }
                        }
                        (dx, None)
                    }
                    LayerKind::Sigmoid => {
                        let y = &self.cache[li + 1];
                        let mut dx = dout.clone();
                        for (g, s) in dx.data.iter_mut().zip(&y.data) {
                            *g *= s * (1.0 - s);
                        }
                        (dx, None)
                    }
                    LayerKind::Concat { src } => {
                        let main_len = x.data.len();
                        let mut dx = FeatureMap::zeros(x.channels, x.height, x.width);
                        dx.data.copy_from_slice(&dout.data[..main_len]);
                        let skip_src = &self.cache[src + 1];
                        let mut ds = FeatureMap::zeros(skip_src.channels, skip_src.height, skip_src.width);
                        ds.data.copy_from_slice(&dout.data[main_len..]);
                        (dx, Some((src, ds)))
                    }
                }
            };
            accumulate(&mut grads[li], dx);
            if let Some((src, ds)) = dskip {
                accumulate(&mut grads[src + 1], ds);
            }
        }
        Ok(grads[0].take().unwrap_or_else(|| {
            let x = &self.cache[0];
            FeatureMap::zeros(x.channels, x.height, x.width)
        }))
    }
}

fn accumulate(slot: &mut Option<FeatureMap>, g: FeatureMap) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn conv_forward(x: &FeatureMap, w: &[f64], b: &[f64], out_ch: usize, stride: usize) -> FeatureMap {
    let oh = x.height.div_ceil(stride);
    let ow = x.width.div_ceil(stride);
    let mut out = FeatureMap::zeros(out_ch, oh, ow);
    for oc in 0..out_ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[oc];
                for ic in 0..x.channels {
                    let wbase = ((oc * x.channels) + ic) * 9;
                    for ky in 0..3 {
                        let iy = (stride * oy + ky) as i64 - 1;
                        if iy < 0 || iy >= x.height as i64 {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (stride * ox + kx) as i64 - 1;
                            if ix < 0 || ix >= x.width as i64 {
                                continue;
                            }
                            acc += w[wbase + ky * 3 + kx] * x.at(ic, iy as usize, ix as usize);
                        }
                    }
                }
                out.data[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

fn conv_backward(
    x: &FeatureMap,
    w: &[f64],
    wgrad: &mut [f64],
    bgrad: &mut [f64],
    dout: &FeatureMap,
    out_ch: usize,
    stride: usize,
) -> FeatureMap {
    let mut dx = FeatureMap::zeros(x.channels, x.height, x.width);
    let (oh, ow) = (dout.height, dout.width);
    for oc in 0..out_ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dout.at(oc, oy, ox);
                if g == 0.0 {
                    continue;
                }
                bgrad[oc] += g;
                for ic in 0..x.channels {
                    let wbase = ((oc * x.channels) + ic) * 9;
                    for ky in 0..3 {
                        let iy = (stride * oy + ky) as i64 - 1;
                        if iy < 0 || iy >= x.height as i64 {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (stride * ox + kx) as i64 - 1;
                            if ix < 0 || ix >= x.width as i64 {
                                continue;
                            }
                            let xv = x.at(ic, iy as usize, ix as usize);
                            wgrad[wbase + ky * 3 + kx] += g * xv;
                            dx.add(ic, iy as usize, ix as usize, g * w[wbase + ky * 3 + kx]);
                        }
                    }
                }
            }
        }
    }
    dx
}

fn conv_transpose_forward(x: &FeatureMap, w: &[f64], b: &[f64], out_ch: usize) -> FeatureMap {
    let oh = x.height * 2;
    let ow = x.width * 2;
    let mut out = FeatureMap::zeros(out_ch, oh, ow);
    for oc in 0..out_ch {
        for p in 0..oh * ow {
            out.data[oc * oh * ow + p] = b[oc];
        }
    }
    for ic in 0..x.channels {
        for iy in 0..x.height {
            for ix in 0..x.width {
                let xv = x.at(ic, iy, ix);
                if xv == 0.0 {
                    continue;
                }
                for oc in 0..out_ch {
                    let wbase = ((oc * x.channels) + ic) * 9;
                    for ky in 0..3 {
                        let oy = 2 * iy + ky;
                        if oy < 1 || oy > oh {
                            continue;
                        }
                        let oy = oy - 1;
                        if oy >= oh {
                            continue;
                        }
                        for kx in 0..3 {
                            let ox = 2 * ix + kx;
                            if ox < 1 || ox > ow {
                                continue;
                            }
                            let ox = ox - 1;
                            if ox >= ow {
                                continue;
                            }
                            out.add(oc, oy, ox, xv * w[wbase + ky * 3 + kx]);
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_transpose_backward(
    x: &FeatureMap,
    w: &[f64],
    wgrad: &mut [f64],
    bgrad: &mut [f64],
    dout: &FeatureMap,
    out_ch: usize,
) -> FeatureMap {
    let mut dx = FeatureMap::zeros(x.channels, x.height, x.width);
    let (oh, ow) = (dout.height, dout.width);
    for oc in 0..out_ch {
        for p in 0..oh * ow {
            bgrad[oc] += dout.data[oc * oh * ow + p];
        }
    }
    for ic in 0..x.channels {
        for iy in 0..x.height {
            for ix in 0..x.width {
                let xv = x.at(ic, iy, ix);
                let mut acc = 0.0;
                for oc in 0..out_ch {
                    let wbase = ((oc * x.channels) + ic) * 9;
                    for ky in 0..3 {
                        let oy = 2 * iy + ky;
                        if oy < 1 {
                            continue;
                        }
                        let oy = oy - 1;
                        if oy >= oh {
                            continue;
                        }
                        for kx in 0..3 {
                            let ox = 2 * ix + kx;
                            if ox < 1 {
                                continue;
                            }
                            let ox = ox - 1;
                            if ox >= ow {
                                continue;
                            }
                            let g = dout.at(oc, oy, ox);
                            acc += g * w[wbase + ky * 3 + kx];
                            wgrad[wbase + ky * 3 + kx] += g * xv;
                        }
                    }
                }
                dx.add(ic, iy, ix, acc);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_map(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> FeatureMap {
        let mut m = FeatureMap::zeros(c, h, w);
        m.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        m
    }

    #[test]
    fn zero_weights_head_bias_constant() {
        let mut net = NetGraph::new(vec![
            {
                let mut l = Layer::conv(2, 1, 1, &mut ChaCha8Rng::seed_from_u64(0));
                l.weight.iter_mut().for_each(|w| *w = 0.0);
                l.bias[0] = 2.0;
                l
            },
            Layer::sigmoid(),
        ]);
        let x = rand_map(2, 8, 8, &mut ChaCha8Rng::seed_from_u64(1));
        let y = net.forward(x).unwrap();
        let expect = crate::splat::sigmoid(2.0);
        assert!(y.data.iter().all(|v| (v - expect).abs() < 1e-12));
    }

    #[test]
    fn identity_conv_passthrough() {
        let mut l = Layer::conv(1, 1, 1, &mut ChaCha8Rng::seed_from_u64(0));
        l.weight.iter_mut().for_each(|w| *w = 0.0);
        l.weight[4] = 1.0; // center tap
        let mut net = NetGraph::new(vec![l]);
        let x = rand_map(1, 6, 6, &mut ChaCha8Rng::seed_from_u64(2));
        let y = net.forward(x.clone()).unwrap();
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn two_layer_composition_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l1 = Layer::conv(2, 3, 1, &mut rng);
        let l2 = Layer::conv(3, 1, 1, &mut rng);
        let x = rand_map(2, 8, 8, &mut rng);

        let mut whole = NetGraph::new(vec![l1.clone(), l2.clone()]);
        let y = whole.forward(x.clone()).unwrap();

        let mut a = NetGraph::new(vec![l1]);
        let mid = a.forward(x).unwrap();
        let mut b = NetGraph::new(vec![l2]);
        let y2 = b.forward(mid).unwrap();
        for (u, v) in y.data.iter().zip(&y2.data) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn stride_and_transpose_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = NetGraph::new(vec![Layer::conv(1, 2, 2, &mut rng)]);
        let y = net.forward(rand_map(1, 16, 16, &mut rng)).unwrap();
        assert_eq!((y.channels, y.height, y.width), (2, 8, 8));
        let mut up = NetGraph::new(vec![Layer::conv_transpose(2, 1, &mut rng)]);
        let z = up.forward(y).unwrap();
        assert_eq!((z.channels, z.height, z.width), (1, 16, 16));
    }

    #[test]
    fn backward_before_forward_is_stale() {
        let mut net = NetGraph::new(vec![Layer::relu()]);
        let g = FeatureMap::zeros(1, 4, 4);
        assert_eq!(net.backward(&g).unwrap_err(), NnError::StaleGraph);
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = NetGraph::new(vec![Layer::conv(1, 2, 1, &mut rng), Layer::relu(), Layer::conv(2, 1, 1, &mut rng)]);
        let _ = net.forward(rand_map(1, 6, 6, &mut rng)).unwrap();
        let _ = net.backward(&FeatureMap::zeros(1, 6, 6)).unwrap();
        for l in &net.layers {
            assert!(l.weight_grad.iter().all(|g| *g == 0.0));
        }
    }

    #[test]
    fn sigmoid_grad_at_half() {
        // sigma'(0) = 1/4: input 0 -> output 0.5, upstream scaled by 0.25
        let mut net = NetGraph::new(vec![Layer::sigmoid()]);
        let _ = net.forward(FeatureMap::zeros(1, 2, 2)).unwrap();
        let mut up = FeatureMap::zeros(1, 2, 2);
        up.data.iter_mut().for_each(|v| *v = 1.0);
        let dx = net.backward(&up).unwrap();
        assert!(dx.data.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    /// Finite-difference oracle over a small net with skips, covering every layer kind.
    #[test]
    fn tiny_net_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let layers = vec![
            Layer::conv(1, 2, 1, &mut rng),  // 0
            Layer::relu(),                   // 1
            Layer::conv(2, 2, 2, &mut rng),  // 2
            Layer::relu(),                   // 3
            Layer::conv_transpose(2, 2, &mut rng), // 4
            Layer::concat(1),                // 5: skip from relu output
            Layer::conv(4, 1, 1, &mut rng),  // 6
            Layer::sigmoid(),                // 7
        ];
        let mut net = NetGraph::new(layers);
        let x = rand_map(1, 8, 8, &mut rng);
        let mut wsel = rand_map(1, 8, 8, &mut rng); // fixed loss weights
        wsel.data.iter_mut().for_each(|v| *v = v.signum());

        let loss = |net: &mut NetGraph, x: &FeatureMap| -> f64 {
            let y = net.forward(x.clone()).unwrap();
            y.data.iter().zip(&wsel.data).map(|(a, b)| a * b).sum()
        };

        let base = loss(&mut net, &x);
        assert!(base.is_finite());
        net.zero_grad();
        let _ = net.forward(x.clone()).unwrap();
        let _ = net.backward(&wsel).unwrap();

        let h = 1e-5;
        let mut checked = 0;
        for li in 0..net.layers.len() {
            let nw = net.layers[li].weight.len();
            let nb = net.layers[li].bias.len();
            for pi in (0..nw + nb).step_by(3) {
                let (orig, analytic) = if pi < nw {
                    (net.layers[li].weight[pi], net.layers[li].weight_grad[pi])
                } else {
                    (net.layers[li].bias[pi - nw], net.layers[li].bias_grad[pi - nw])
                };
                let setp = |net: &mut NetGraph, v: f64| {
                    if pi < nw {
                        net.layers[li].weight[pi] = v;
                    } else {
                        net.layers[li].bias[pi - nw] = v;
                    }
                };
                setp(&mut net, orig + h);
                let lp = loss(&mut net, &x);
                setp(&mut net, orig - h);
                let lm = loss(&mut net, &x);
                setp(&mut net, orig);
                let fd = (lp - lm) / (2.0 * h);
                let denom = fd.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    ((fd - analytic) / denom).abs() < 1e-4,
                    "layer {li} param {pi}: fd {fd} analytic {analytic}"
                );
                checked += 1;
            }
        }
        assert!(checked > 30);
    }

    #[test]
    fn input_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = NetGraph::new(vec![Layer::conv(1, 2, 1, &mut rng), Layer::relu(), Layer::conv(2, 1, 1, &mut rng)]);
        let x = rand_map(1, 6, 6, &mut rng);
        let up = rand_map(1, 6, 6, &mut rng);
        let _ = net.forward(x.clone()).unwrap();
        let dx = net.backward(&up).unwrap();
        let h = 1e-6;
        for i in (0..x.data.len()).step_by(5) {
            let mut xp = x.clone();
            xp.data[i] += h;
            let yp: f64 = net.forward(xp).unwrap().data.iter().zip(&up.data).map(|(a, b)| a * b).sum();
            let mut xm = x.clone();
            xm.data[i] -= h;
            let ym: f64 = net.forward(xm).unwrap().data.iter().zip(&up.data).map(|(a, b)| a * b).sum();
            let fd = (yp - ym) / (2.0 * h);
            assert_relative_eq!(fd, dx.data[i], epsilon = 1e-6, max_relative = 1e-5);
        }
    }
}
