//! Synthetic shapes with referring expressions.
//!
//! Each image holds 2 to 4 flat-colored shapes, one per quadrant, on a noisy
//! gray background, under randomly drawn lighting (gain, offset, saturation). The expression names one shape either by color and type
//! ("red circle") or by type and image half ("square on the left"); the
//! generator only emits expressions matched by exactly one shape.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use super::manifest::{write_image, DatasetManifest, DatasetSource, ManifestRecord, SplitTag};
use super::rle::Rle;
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::types::{Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeColor {
    Red,
    Green,
    Blue,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

const KINDS: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];
const COLORS: [ShapeColor; 4] = [ShapeColor::Red, ShapeColor::Green, ShapeColor::Blue, ShapeColor::Yellow];
const SIDES: [Side; 4] = [Side::Left, Side::Right, Side::Top, Side::Bottom];

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        })
    }
}

impl fmt::Display for ShapeColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeColor::Red => "red",
            ShapeColor::Green => "green",
            ShapeColor::Blue => "blue",
            ShapeColor::Yellow => "yellow",
        })
    }
}

impl ShapeColor {
    fn rgb(self) -> [u8; 3] {
        match self {
            ShapeColor::Red => [215, 45, 40],
            ShapeColor::Green => [40, 175, 65],
            ShapeColor::Blue => [45, 75, 215],
            ShapeColor::Yellow => [230, 205, 45],
        }
    }
}

impl Side {
    fn phrase(self) -> &'static str {
        match self {
            Side::Left => "on the left",
            Side::Right => "on the right",
            Side::Top => "at the top",
            Side::Bottom => "at the bottom",
        }
    }
}

/// A shape placed inside quadrant `(row, col)`, each in `{0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub color: ShapeColor,
    pub quadrant: (usize, usize),
    /// Center in pixel units.
    pub center: (f64, f64),
    pub radius: f64,
}

impl Shape {
    pub fn on_side(&self, side: Side) -> bool {
        match side {
            Side::Left => self.quadrant.1 == 0,
            Side::Right => self.quadrant.1 == 1,
            Side::Top => self.quadrant.0 == 0,
            Side::Bottom => self.quadrant.0 == 1,
        }
    }

    /// Whether the pixel with center `(y + 0.5, x + 0.5)` is covered.
    pub fn covers(&self, y: usize, x: usize) -> bool {
        let (cy, cx) = self.center;
        let (py, px) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
        let r = self.radius;
        match self.kind {
            ShapeKind::Circle => py * py + px * px <= r * r,
            ShapeKind::Square => py.abs() <= r && px.abs() <= r,
            // Apex up, base at the bottom of the bounding square.
            ShapeKind::Triangle => py.abs() <= r && px.abs() <= (py + r) / 2.0,
        }
    }

    pub fn mask(&self, size: usize) -> Mask {
        Mask::from_fn(size, size, |y, x| self.covers(y, x))
    }
}

/// Attribute conjunction an expression encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeQuery {
    ColorKind(ShapeColor, ShapeKind),
    KindSide(ShapeKind, Side),
}

impl ShapeQuery {
    pub fn matches(&self, shape: &Shape) -> bool {
        match *self {
            ShapeQuery::ColorKind(c, k) => shape.color == c && shape.kind == k,
            ShapeQuery::KindSide(k, s) => shape.kind == k && shape.on_side(s),
        }
    }

    pub fn count_matches(&self, shapes: &[Shape]) -> usize {
        shapes.iter().filter(|s| self.matches(s)).count()
    }

    pub fn expression(&self) -> String {
        match self {
            ShapeQuery::ColorKind(c, k) => format!("{c} {k}"),
            ShapeQuery::KindSide(k, s) => format!("{k} {}", s.phrase()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: Image,
    pub shapes: Vec<Shape>,
    pub target: usize,
    pub query: ShapeQuery,
    pub mask: Mask,
}

impl SyntheticScene {
    pub fn expression(&self) -> String {
        self.query.expression()
    }
}

/// Draws one scene. `size` is the square image side in pixels (at least 8).
pub fn generate_scene<R: Rng + ?Sized>(size: usize, rng: &mut R) -> SyntheticScene {
    assert!(size >= 8, "synthetic images need at least 8x8 pixels");
    loop {
        let count = rng.gen_range(2..=4);
        let mut quads = [(0, 0), (0, 1), (1, 0), (1, 1)];
        quads.shuffle(rng);
        let half = size as f64 / 2.0;
        let shapes: Vec<Shape> = quads[..count]
            .iter()
            .map(|&(qy, qx)| {
                let radius = half * rng.gen_range(0.22..0.4);
                let margin = radius + 1.0;
                let jitter = |rng: &mut R, q: usize| {
                    let lo = q as f64 * half + margin;
                    let hi = (q + 1) as f64 * half - margin;
                    if hi > lo {
                        rng.gen_range(lo..hi)
                    } else {
                        (lo + hi) / 2.0
                    }
                };
                let cy = jitter(rng, qy);
                let cx = jitter(rng, qx);
                Shape {
                    kind: *KINDS.choose(rng).expect("non-empty"),
                    color: *COLORS.choose(rng).expect("non-empty"),
                    quadrant: (qy, qx),
                    center: (cy, cx),
                    radius,
                }
            })
            .collect();
        let target = rng.gen_range(0..count);
        let t = shapes[target];
        let mut queries = vec![ShapeQuery::ColorKind(t.color, t.kind)];
        queries.extend(
            SIDES
                .iter()
                .filter(|s| t.on_side(**s))
                .map(|s| ShapeQuery::KindSide(t.kind, *s)),
        );
        queries.retain(|q| q.count_matches(&shapes) == 1);
        let Some(&query) = queries.choose(rng) else { continue };
        let mask = t.mask(size);
        if mask.area() == 0 {
            continue;
        }
        let image = render(size, &shapes, rng);
        return SyntheticScene {
            image,
            shapes,
            target,
            query,
            mask,
        };
    }
}

/// Per-image lighting: gain, offset, color saturation, background level and noise amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Lighting {
    gain: f64,
    offset: f64,
    saturation: f64,
    background: f64,
    noise: i32,
}

impl Lighting {
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            gain: rng.gen_range(0.6..1.3),
            offset: rng.gen_range(-30.0..30.0),
            saturation: rng.gen_range(0.45..1.0),
            background: rng.gen_range(80.0..180.0),
            noise: rng.gen_range(4..=20),
        }
    }

    fn apply(&self, rgb: [f64; 3]) -> [f64; 3] {
        let luma = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
        rgb.map(|v| self.gain * (luma + self.saturation * (v - luma)) + self.offset)
    }
}

fn render<R: Rng + ?Sized>(size: usize, shapes: &[Shape], rng: &mut R) -> Image {
    let light = Lighting::sample(rng);
    let plane = size * size;
    let mut data = vec![0.0; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let base = shapes
                .iter()
                .find(|s| s.covers(y, x))
                .map_or([light.background; 3], |s| s.color.rgb().map(f64::from));
            for (c, v) in light.apply(base).iter().enumerate() {
                let noisy = (v.round() as i32 + rng.gen_range(-light.noise..=light.noise)).clamp(0, 255);
                data[c * plane + y * size + x] = f64::from(noisy as u8) / 255.0;
            }
        }
    }
    Image::new(size, size, data).expect("values in range")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub train: usize,
    pub val: usize,
    pub image_size: usize,
    pub seed: u64,
}

/// Generates images under `<dir>/images/` and writes the manifest. Every
/// record, including train records later treated as unlabeled, carries its mask.
pub fn make_synthetic(dir: &Path, spec: &SyntheticSpec) -> Result<DatasetManifest> {
    if spec.train + spec.val == 0 {
        return Err(Error::Config("synthetic dataset needs at least one sample".into()));
    }
    if spec.image_size < 8 {
        return Err(Error::Config("synthetic image size must be at least 8".into()));
    }
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let stream = SeedTree::new(spec.seed).child("data").child("synthetic");
    let mut records = Vec::with_capacity(spec.train + spec.val);
    let tagged = (0..spec.train)
        .map(|i| (SplitTag::Train, i))
        .chain((0..spec.val).map(|i| (SplitTag::Val, i)));
    for (n, (tag, i)) in tagged.enumerate() {
        let scene = generate_scene(spec.image_size, &mut stream.index(n as u64).rng());
        let id = format!("{tag}-{i:05}");
        let rel = PathBuf::from("images").join(format!("{id}.png"));
        write_image(&dir.join(&rel), &scene.image)?;
        records.push(ManifestRecord {
            id,
            image: rel,
            expression: scene.expression(),
            mask: Some(Rle::encode(&scene.mask)),
            split: tag,
        });
    }
    let manifest = DatasetManifest::new(dir, DatasetSource::Synthetic, records)?;
    manifest.write()?;
    Ok(manifest)
}
