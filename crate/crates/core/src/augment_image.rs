//! Weak (geometric) and strong (intensity) image augmentation.
//!
//! Two profiles are provided. `resmatch` keeps spatial layout and colour
//! identity intact so the paired expression stays valid: weak ops are resize
//! and horizontal flip, strong ops are intensity-only. `fixmatch_baseline`
//! adds random scale/crop to the weak pipeline and invert/hue/solarize to the
//! strong pool.
//!
//! Every call returns an [`AugmentationRecord`] listing the ops exactly as
//! applied, which drives the flip-aware text adaptation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::{nearest, Bilinear};
use crate::types::{Image, Mask};

/// One applied operation with its sampled parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ImageOp {
    Resize {
        height: usize,
        width: usize,
    },
    HorizontalFlip,
    RandomScale {
        factor: f64,
    },
    RandomCrop {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    Identity,
    Autocontrast,
    Equalize,
    GaussianBlur {
        sigma: f64,
    },
    Contrast {
        factor: f64,
    },
    Sharpness {
        factor: f64,
    },
    Color {
        factor: f64,
    },
    Brightness {
        factor: f64,
    },
    Posterize {
        bits: u8,
    },
    Invert,
    Hue {
        shift: f64,
    },
    Solarize {
        threshold: u16,
    },
}

impl ImageOp {
    pub fn name(&self) -> &'static str {
        match self {
            ImageOp::Resize { .. } => "resize",
            ImageOp::HorizontalFlip => "horizontal_flip",
            ImageOp::RandomScale { .. } => "random_scale",
            ImageOp::RandomCrop { .. } => "random_crop",
            ImageOp::Identity => "identity",
            ImageOp::Autocontrast => "autocontrast",
            ImageOp::Equalize => "equalize",
            ImageOp::GaussianBlur { .. } => "gaussian_blur",
            ImageOp::Contrast { .. } => "contrast",
            ImageOp::Sharpness { .. } => "sharpness",
            ImageOp::Color { .. } => "color",
            ImageOp::Brightness { .. } => "brightness",
            ImageOp::Posterize { .. } => "posterize",
            ImageOp::Invert => "invert",
            ImageOp::Hue { .. } => "hue",
            ImageOp::Solarize { .. } => "solarize",
        }
    }

    /// True for ops that move pixels (and so must also move the mask).
    pub fn is_geometric(&self) -> bool {
        matches!(
            self,
            ImageOp::Resize { .. } | ImageOp::HorizontalFlip | ImageOp::RandomScale { .. } | ImageOp::RandomCrop { .. }
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub ops: Vec<ImageOp>,
    pub horizontal_flipped: bool,
}

impl AugmentationRecord {
    fn push(&mut self, op: ImageOp) {
        if op == ImageOp::HorizontalFlip {
            self.horizontal_flipped = !self.horizontal_flipped;
        }
        self.ops.push(op);
    }

    /// Record claiming a single horizontal flip, for driving text adaptation directly.
    pub fn flipped() -> Self {
        let mut r = Self::default();
        r.push(ImageOp::HorizontalFlip);
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    Resmatch,
    FixmatchBaseline,
}

impl std::str::FromStr for ProfileName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resmatch" => Ok(Self::Resmatch),
            "fixmatch_baseline" => Ok(Self::FixmatchBaseline),
            other => Err(Error::Config(format!("unknown augmentation profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WeakOp {
    Resize,
    RandomScale { min: f64, max: f64 },
    RandomHorizontalFlip { p: f64 },
    RandomCrop,
}

/// Entries of the strong pool. Magnitudes are drawn uniformly when the op is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrongOp {
    Identity,
    Autocontrast,
    Equalize,
    GaussianBlur,
    Contrast,
    Sharpness,
    Color,
    Brightness,
    Posterize,
    Invert,
    Hue,
    Solarize,
}

pub const ENHANCE_RANGE: (f64, f64) = (0.05, 0.95);
pub const BLUR_SIGMA_RANGE: (f64, f64) = (0.1, 2.0);
pub const POSTERIZE_BITS: (u8, u8) = (4, 8);
pub const HUE_RANGE: (f64, f64) = (0.0, 0.5);
/// Solarize threshold on the 8-bit scale, half-open `[1, 256)`.
pub const SOLARIZE_RANGE: (u16, u16) = (1, 256);
pub const SCALE_RANGE: (f64, f64) = (0.5, 2.0);

impl StrongOp {
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> ImageOp {
        let enhance = |rng: &mut R| rng.gen_range(ENHANCE_RANGE.0..=ENHANCE_RANGE.1);
        match self {
            StrongOp::Identity => ImageOp::Identity,
            StrongOp::Autocontrast => ImageOp::Autocontrast,
            StrongOp::Equalize => ImageOp::Equalize,
            StrongOp::GaussianBlur => ImageOp::GaussianBlur {
                sigma: rng.gen_range(BLUR_SIGMA_RANGE.0..=BLUR_SIGMA_RANGE.1),
            },
            StrongOp::Contrast => ImageOp::Contrast { factor: enhance(rng) },
            StrongOp::Sharpness => ImageOp::Sharpness { factor: enhance(rng) },
            StrongOp::Color => ImageOp::Color { factor: enhance(rng) },
            StrongOp::Brightness => ImageOp::Brightness { factor: enhance(rng) },
            StrongOp::Posterize => ImageOp::Posterize {
                bits: rng.gen_range(POSTERIZE_BITS.0..=POSTERIZE_BITS.1),
            },
            StrongOp::Invert => ImageOp::Invert,
            StrongOp::Hue => ImageOp::Hue {
                shift: rng.gen_range(HUE_RANGE.0..=HUE_RANGE.1),
            },
            StrongOp::Solarize => ImageOp::Solarize {
                threshold: rng.gen_range(SOLARIZE_RANGE.0..SOLARIZE_RANGE.1),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationProfile {
    pub name: ProfileName,
    /// Training size `(height, width)` used by resize and crop.
    pub image_size: (usize, usize),
    pub weak_ops: Vec<WeakOp>,
    pub strong_ops: Vec<StrongOp>,
    pub strong_ops_per_sample: usize,
}

const RESMATCH_STRONG: [StrongOp; 9] = [
    StrongOp::Identity,
    StrongOp::Autocontrast,
    StrongOp::Equalize,
    StrongOp::GaussianBlur,
    StrongOp::Contrast,
    StrongOp::Sharpness,
    StrongOp::Color,
    StrongOp::Brightness,
    StrongOp::Posterize,
];

pub const DEFAULT_STRONG_OPS_PER_SAMPLE: usize = 2;

impl AugmentationProfile {
    pub fn resmatch(image_size: usize) -> Self {
        Self {
            name: ProfileName::Resmatch,
            image_size: (image_size, image_size),
            weak_ops: vec![WeakOp::Resize, WeakOp::RandomHorizontalFlip { p: 0.5 }],
            strong_ops: RESMATCH_STRONG.to_vec(),
            strong_ops_per_sample: DEFAULT_STRONG_OPS_PER_SAMPLE,
        }
    }

    pub fn fixmatch_baseline(image_size: usize) -> Self {
        let mut strong = RESMATCH_STRONG.to_vec();
        strong.extend([StrongOp::Invert, StrongOp::Hue, StrongOp::Solarize]);
        Self {
            name: ProfileName::FixmatchBaseline,
            image_size: (image_size, image_size),
            weak_ops: vec![
                WeakOp::Resize,
                WeakOp::RandomScale {
                    min: SCALE_RANGE.0,
                    max: SCALE_RANGE.1,
                },
                WeakOp::RandomHorizontalFlip { p: 0.5 },
                WeakOp::RandomCrop,
            ],
            strong_ops: strong,
            strong_ops_per_sample: DEFAULT_STRONG_OPS_PER_SAMPLE,
        }
    }

    pub fn named(name: ProfileName, image_size: usize) -> Self {
        match name {
            ProfileName::Resmatch => Self::resmatch(image_size),
            ProfileName::FixmatchBaseline => Self::fixmatch_baseline(image_size),
        }
    }

    pub fn with_strong_ops_per_sample(mut self, n: usize) -> Self {
        self.strong_ops_per_sample = n;
        self
    }
}

/// Resize + (profile-dependent) scale/flip/crop, applied jointly to image and mask.
pub fn weak_augment<R: Rng + ?Sized>(
    image: &Image,
    mask: Option<&Mask>,
    profile: &AugmentationProfile,
    rng: &mut R,
) -> Result<(Image, Option<Mask>, AugmentationRecord)> {
    if let Some(m) = mask {
        if m.dims() != image.dims() {
            return Err(Error::Shape(format!("mask {:?} vs image {:?}", m.dims(), image.dims())));
        }
    }
    let (th, tw) = profile.image_size;
    let mut img = image.clone();
    let mut msk = mask.cloned();
    let mut record = AugmentationRecord::default();
    for op in &profile.weak_ops {
        let applied = match *op {
            WeakOp::Resize => Some(ImageOp::Resize { height: th, width: tw }),
            WeakOp::RandomScale { min, max } => Some(ImageOp::RandomScale {
                factor: rng.gen_range(min..=max),
            }),
            WeakOp::RandomHorizontalFlip { p } => rng.gen_bool(p.clamp(0.0, 1.0)).then_some(ImageOp::HorizontalFlip),
            WeakOp::RandomCrop => {
                let (h, w) = (img.height().max(th), img.width().max(tw));
                Some(ImageOp::RandomCrop {
                    top: rng.gen_range(0..=h - th),
                    left: rng.gen_range(0..=w - tw),
                    height: th,
                    width: tw,
                })
            }
        };
        if let Some(op) = applied {
            img = apply_op(&img, &op);
            msk = msk.map(|m| apply_mask_op(&m, &op));
            record.push(op);
        }
    }
    Ok((img, msk, record))
}

/// Composes `strong_ops_per_sample` ops drawn uniformly (with replacement) from the pool.
pub fn strong_augment<R: Rng + ?Sized>(
    image: &Image,
    profile: &AugmentationProfile,
    rng: &mut R,
) -> (Image, AugmentationRecord) {
    let mut img = image.clone();
    let mut record = AugmentationRecord::default();
    if profile.strong_ops.is_empty() {
        return (img, record);
    }
    for _ in 0..profile.strong_ops_per_sample {
        let kind = profile.strong_ops[rng.gen_range(0..profile.strong_ops.len())];
        let op = kind.sample(rng);
        img = apply_op(&img, &op);
        record.push(op);
    }
    (img, record)
}

/// `score * strong + (1 - score) * weak`, pixel-wise.
///
/// Evaluated as `weak + score * (strong - weak)` so identical inputs come back unchanged.
pub fn mag_blend(strong: &Image, weak: &Image, score: f64) -> Result<Image> {
    if strong.dims() != weak.dims() {
        return Err(Error::Shape(format!(
            "strong image {:?} vs weak image {:?}",
            strong.dims(),
            weak.dims()
        )));
    }
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::InvalidValue(format!("blend score {score} outside [0, 1]")));
    }
    // endpoints are returned verbatim so s = 0 and s = 1 are exact
    if score == 1.0 {
        return Ok(strong.clone());
    }
    if score == 0.0 {
        return Ok(weak.clone());
    }
    let data = strong
        .data()
        .iter()
        .zip(weak.data())
        .map(|(s, w)| w + score * (s - w))
        .collect();
    Ok(Image::from_clamped(strong.height(), strong.width(), data))
}

pub fn apply_op(image: &Image, op: &ImageOp) -> Image {
    match *op {
        ImageOp::Resize { height, width } => resize(image, height, width),
        ImageOp::HorizontalFlip => hflip(image),
        ImageOp::RandomScale { factor } => {
            let (h, w) = scaled_dims(image.dims(), factor);
            resize(image, h, w)
        }
        ImageOp::RandomCrop {
            top,
            left,
            height,
            width,
        } => crop_padded(image, top, left, height, width),
        ImageOp::Identity => image.clone(),
        ImageOp::Autocontrast => autocontrast(image),
        ImageOp::Equalize => equalize(image),
        ImageOp::GaussianBlur { sigma } => gaussian_blur(image, sigma),
        ImageOp::Contrast { factor } => contrast(image, factor),
        ImageOp::Sharpness { factor } => sharpness(image, factor),
        ImageOp::Color { factor } => color(image, factor),
        ImageOp::Brightness { factor } => brightness(image, factor),
        ImageOp::Posterize { bits } => posterize(image, bits),
        ImageOp::Invert => map_values(image, |v| 1.0 - v),
        ImageOp::Hue { shift } => hue_shift(image, shift),
        ImageOp::Solarize { threshold } => solarize(image, threshold),
    }
}

/// Geometric ops move the mask with the image; intensity ops leave it alone.
pub fn apply_mask_op(mask: &Mask, op: &ImageOp) -> Mask {
    let (h, w) = mask.dims();
    match *op {
        ImageOp::Resize { height, width } => resize_mask(mask, height, width),
        ImageOp::HorizontalFlip => Mask::from_fn(h, w, |y, x| mask.get(y, w - 1 - x) == 1),
        ImageOp::RandomScale { factor } => {
            let (nh, nw) = scaled_dims((h, w), factor);
            resize_mask(mask, nh, nw)
        }
        ImageOp::RandomCrop {
            top,
            left,
            height,
            width,
        } => Mask::from_fn(height, width, |y, x| {
            let (sy, sx) = (top + y, left + x);
            sy < h && sx < w && mask.get(sy, sx) == 1
        }),
        _ => mask.clone(),
    }
}

fn scaled_dims((h, w): (usize, usize), factor: f64) -> (usize, usize) {
    (
        ((h as f64 * factor).round() as usize).max(1),
        ((w as f64 * factor).round() as usize).max(1),
    )
}

/// Bilinear resize with half-pixel centers.
pub fn resize(image: &Image, height: usize, width: usize) -> Image {
    if image.dims() == (height, width) {
        return image.clone();
    }
    let b = Bilinear::new(image.height(), image.width(), height, width);
    let mut data = vec![0.0; 3 * height * width];
    for (c, out) in data.chunks_mut(height * width).enumerate() {
        b.forward(image.plane(c), out);
    }
    Image::from_clamped(height, width, data)
}

pub fn resize_mask(mask: &Mask, height: usize, width: usize) -> Mask {
    let values = nearest(mask.values(), mask.height(), mask.width(), height, width);
    Mask::new(height, width, values).expect("resampled mask keeps 0/1 values")
}

pub fn hflip(image: &Image) -> Image {
    let (h, w) = image.dims();
    let mut data = Vec::with_capacity(image.data().len());
    for row in image.data().chunks(w) {
        data.extend(row.iter().rev());
    }
    debug_assert_eq!(data.len(), 3 * h * w);
    Image::from_clamped(h, w, data)
}

fn crop_padded(image: &Image, top: usize, left: usize, height: usize, width: usize) -> Image {
    let (h, w) = image.dims();
    let mut data = vec![0.0; 3 * height * width];
    for c in 0..3 {
        for y in 0..height {
            let sy = top + y;
            if sy >= h {
                continue;
            }
            for x in 0..width {
                let sx = left + x;
                if sx < w {
                    data[(c * height + y) * width + x] = image.get(c, sy, sx);
                }
            }
        }
    }
    Image::from_clamped(height, width, data)
}

fn map_values(image: &Image, f: impl Fn(f64) -> f64) -> Image {
    Image::from_clamped(
        image.height(),
        image.width(),
        image.data().iter().map(|v| f(*v)).collect(),
    )
}

/// ITU-R 601-2 luma.
fn luminance(image: &Image) -> Vec<f64> {
    let (r, g, b) = (image.plane(0), image.plane(1), image.plane(2));
    r.iter()
        .zip(g)
        .zip(b)
        .map(|((r, g), b)| 0.299 * r + 0.587 * g + 0.114 * b)
        .collect()
}

/// `degenerate + factor * (image - degenerate)`, the shared form of the enhance ops.
fn blend_toward(image: &Image, degenerate: &[f64], factor: f64) -> Image {
    let data = image
        .data()
        .iter()
        .zip(degenerate)
        .map(|(v, d)| d + factor * (v - d))
        .collect();
    Image::from_clamped(image.height(), image.width(), data)
}

/// Scales intensities toward black; factor 0 gives an all-black image.
pub fn brightness(image: &Image, factor: f64) -> Image {
    let black = vec![0.0; image.data().len()];
    blend_toward(image, &black, factor)
}

/// Moves intensities toward the mean luma.
pub fn contrast(image: &Image, factor: f64) -> Image {
    let luma = luminance(image);
    let mean = luma.iter().sum::<f64>() / luma.len() as f64;
    let gray = vec![mean; image.data().len()];
    blend_toward(image, &gray, factor)
}

/// Moves each pixel toward its own luma (desaturation).
pub fn color(image: &Image, factor: f64) -> Image {
    let luma = luminance(image);
    let gray: Vec<f64> = luma.iter().cycle().take(image.data().len()).copied().collect();
    blend_toward(image, &gray, factor)
}

/// Blends with a 3x3 smoothing of the image (weights 1,1,1 / 1,5,1 / 1,1,1 over 13);
/// border pixels are their own smoothed value.
pub fn sharpness(image: &Image, factor: f64) -> Image {
    let (h, w) = image.dims();
    let mut smooth = image.data().to_vec();
    if h >= 3 && w >= 3 {
        for c in 0..3 {
            let plane = image.plane(c);
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let mut acc = 0.0;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let wgt = if dy == 1 && dx == 1 { 5.0 } else { 1.0 };
                            acc += wgt * plane[(y + dy - 1) * w + (x + dx - 1)];
                        }
                    }
                    smooth[(c * h + y) * w + x] = acc / 13.0;
                }
            }
        }
    }
    blend_toward(image, &smooth, factor)
}

/// Per-channel stretch of `[min, max]` to `[0, 1]`; flat channels are unchanged.
pub fn autocontrast(image: &Image) -> Image {
    let (h, w) = image.dims();
    let mut data = Vec::with_capacity(image.data().len());
    for c in 0..3 {
        let plane = image.plane(c);
        let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            data.extend(plane.iter().map(|v| (v - lo) / (hi - lo)));
        } else {
            data.extend_from_slice(plane);
        }
    }
    Image::from_clamped(h, w, data)
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Per-channel histogram equalisation over 256 levels.
pub fn equalize(image: &Image) -> Image {
    let (h, w) = image.dims();
    let mut data = Vec::with_capacity(image.data().len());
    for c in 0..3 {
        let plane = image.plane(c);
        let levels: Vec<u8> = plane.iter().map(|v| to_u8(*v)).collect();
        let mut hist = [0usize; 256];
        for l in &levels {
            hist[usize::from(*l)] += 1;
        }
        let last = hist.iter().rposition(|n| *n > 0).unwrap_or(0);
        let step = (levels.len() - hist[last]) / 255;
        if step == 0 {
            data.extend_from_slice(plane);
            continue;
        }
        let mut lut = [0u8; 256];
        let mut n = step / 2;
        for (i, count) in hist.iter().enumerate() {
            lut[i] = (n / step).min(255) as u8;
            n += count;
        }
        data.extend(levels.iter().map(|l| f64::from(lut[usize::from(*l)]) / 255.0));
    }
    Image::from_clamped(h, w, data)
}

/// Keeps the top `bits` bits of each 8-bit channel value.
pub fn posterize(image: &Image, bits: u8) -> Image {
    let bits = bits.clamp(1, 8);
    let keep: u8 = 0xFFu8 << (8 - bits);
    map_values(image, |v| f64::from(to_u8(v) & keep) / 255.0)
}

/// Inverts values whose 8-bit level is at or above `threshold`.
pub fn solarize(image: &Image, threshold: u16) -> Image {
    map_values(image, |v| if u16::from(to_u8(v)) >= threshold { 1.0 - v } else { v })
}

pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    let (h, w) = image.dims();
    if sigma <= 0.0 {
        return image.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= total;
    }
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut data = vec![0.0; image.data().len()];
    let mut tmp = vec![0.0; h * w];
    for c in 0..3 {
        let plane = image.plane(c);
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * plane[y * w + clamp(x as isize + i as isize - radius, w)])
                    .sum();
            }
        }
        let out = &mut data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * tmp[clamp(y as isize + i as isize - radius, h) * w + x])
                    .sum();
            }
        }
    }
    Image::from_clamped(h, w, data)
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    [hue, sat, max]
}

fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u8 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Rotates hue by `shift` turns.
pub fn hue_shift(image: &Image, shift: f64) -> Image {
    let (h, w) = image.dims();
    let n = h * w;
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        let [hh, s, v] = rgb_to_hsv([image.data()[i], image.data()[n + i], image.data()[2 * n + i]]);
        let rgb = hsv_to_rgb([hh + shift, s, v]);
        for c in 0..3 {
            data[c * n + i] = rgb[c];
        }
    }
    Image::from_clamped(h, w, data)
}
