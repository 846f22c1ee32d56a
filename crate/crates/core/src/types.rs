//! Domain types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three-channel image with intensities in `[0, 1]`, stored channel-planar
/// (`c * height * width + y * width + x`).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidValue(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != Self::CHANNELS * height * width {
            return Err(Error::Shape(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                Self::CHANNELS * height * width
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue(format!("image intensity {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Builds an image from arbitrary values, clamping each into `[0, 1]`.
    /// NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        assert_eq!(data.len(), Self::CHANNELS * height * width);
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self { height, width, data }
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let plane = height * width;
        let mut data = Vec::with_capacity(3 * plane);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, plane));
        }
        Self::from_clamped(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn rgb(&self, y: usize, x: usize) -> [f64; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }
}

/// Referring expression: the raw string plus its lowercased whitespace tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Expression {
    raw: String,
    tokens: Vec<String>,
}

impl Expression {
    pub fn new(raw: impl Into<String>) -> Result<Self> {
        let raw = raw.into();
        let tokens: Vec<String> = raw.split_whitespace().map(str::to_lowercase).collect();
        if tokens.is_empty() {
            return Err(Error::InvalidValue(format!("expression {raw:?} has no tokens")));
        }
        Ok(Self { raw, tokens })
    }

    /// Rebuilds an expression from tokens; the raw form is the space-joined tokens.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let raw = tokens.iter().map(|t| t.as_ref()).collect::<Vec<_>>().join(" ");
        Self::new(raw)
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Space-joined tokens.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

impl std::fmt::Display for Expression {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.raw)
    }
}

/// Binary `{0, 1}` grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "mask buffer has {} values, expected {}x{}",
                values.len(),
                height,
                width
            )));
        }
        if let Some(v) = values.iter().find(|v| **v > 1) {
            return Err(Error::InvalidValue(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![1; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(u8::from(f(y, x)));
            }
        }
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.values.iter().map(|v| usize::from(*v)).sum()
    }
}

/// One image–expression pair, with a mask when labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub expression: Expression,
    pub mask: Option<Mask>,
}

impl Sample {
    pub fn is_labeled(&self) -> bool {
        self.mask.is_some()
    }

    /// Same sample with the mask dropped.
    pub fn unlabeled(&self) -> Self {
        Self {
            mask: None,
            ..self.clone()
        }
    }
}

/// Per-pixel `(p_fg, p_bg)` probabilities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    height: usize,
    width: usize,
    probs: Vec<[f64; 2]>,
}

impl PredictionMap {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(height: usize, width: usize, probs: Vec<[f64; 2]>) -> Result<Self> {
        if probs.len() != height * width {
            return Err(Error::Shape(format!(
                "prediction map has {} pixels, expected {}x{}",
                probs.len(),
                height,
                width
            )));
        }
        for [fg, bg] in &probs {
            if !(0.0..=1.0).contains(fg) || !(0.0..=1.0).contains(bg) {
                return Err(Error::InvalidValue(format!(
                    "probability pair ({fg}, {bg}) outside [0, 1]"
                )));
            }
            if (fg + bg - 1.0).abs() > Self::SUM_TOLERANCE {
                return Err(Error::InvalidValue(format!(
                    "probability pair ({fg}, {bg}) does not sum to 1"
                )));
            }
        }
        Ok(Self { height, width, probs })
    }

    /// Builds a map from foreground probabilities; background is `1 - fg`.
    pub fn from_foreground(height: usize, width: usize, fg: &[f64]) -> Result<Self> {
        Self::new(height, width, fg.iter().map(|p| [*p, 1.0 - *p]).collect())
    }

    pub fn uniform(height: usize, width: usize, fg: f64) -> Self {
        Self {
            height,
            width,
            probs: vec![[fg, 1.0 - fg]; height * width],
        }
    }

    /// Probability map induced by a hard mask: `(1, 0)` on foreground, `(0, 1)` elsewhere.
    pub fn from_mask(mask: &Mask) -> Self {
        Self {
            height: mask.height(),
            width: mask.width(),
            probs: mask
                .values()
                .iter()
                .map(|v| if *v == 1 { [1.0, 0.0] } else { [0.0, 1.0] })
                .collect(),
        }
    }

    pub(crate) fn from_sigmoid_logits(height: usize, width: usize, logits: &[f64]) -> Self {
        let probs = logits
            .iter()
            .map(|z| {
                let fg = sigmoid(*z);
                let bg = sigmoid(-*z);
                [fg, bg]
            })
            .collect();
        Self { height, width, probs }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn probs(&self) -> &[[f64; 2]] {
        &self.probs
    }

    pub fn get(&self, y: usize, x: usize) -> [f64; 2] {
        self.probs[y * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Gradient of a scalar loss with respect to each entry of a [`PredictionMap`],
/// treating `p_fg` and `p_bg` as separate outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbGrad {
    pub height: usize,
    pub width: usize,
    pub values: Vec<[f64; 2]>,
}

impl ProbGrad {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![[0.0; 2]; height * width],
        }
    }

    /// Total derivative along the constraint `p_bg = 1 - p_fg`.
    pub fn along_foreground(&self) -> Vec<f64> {
        self.values.iter().map(|[g_fg, g_bg]| g_fg - g_bg).collect()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
