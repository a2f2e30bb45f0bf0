//! Dense image containers used across the pipeline. Row-major, f64.

use serde::{Deserialize, Serialize};

/// H×W×3 image, values nominally in [0,1]. Layout: row-major, interleaved RGB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageRgb {
    pub fn zeros(width: usize, height: usize) -> Self {
        ImageRgb { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut im = Self::zeros(width, height);
        for p in 0..width * height {
            im.data[3 * p] = rgb[0];
            im.data[3 * p + 1] = rgb[1];
            im.data[3 * p + 2] = rgb[2];
        }
        im
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        3 * (y * self.width + x)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = self.idx(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = self.idx(x, y);
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Rec.601 luma.
    pub fn to_luma(&self) -> ImageGray {
        let mut g = ImageGray::zeros(self.width, self.height);
        for p in 0..self.pixels() {
            g.data[p] =
                0.299 * self.data[3 * p] + 0.587 * self.data[3 * p + 1] + 0.114 * self.data[3 * p + 2];
        }
        g
    }

    pub fn same_shape(&self, other: &ImageRgb) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn mean_abs_diff(&self, other: &ImageRgb) -> f64 {
        assert!(self.same_shape(other));
        let n = self.data.len() as f64;
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n
    }
}

/// H×W scalar image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGray {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageGray {
    pub fn zeros(width: usize, height: usize) -> Self {
        ImageGray { width, height, data: vec![0.0; width * height] }
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        ImageGray { width, height, data: vec![v; width * height] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }
}

/// H×W boolean mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Mask { width, height, data: vec![value; width * height] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len().max(1) as f64
    }
}
