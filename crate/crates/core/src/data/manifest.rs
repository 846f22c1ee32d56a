use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::rle::Rle;
use crate::error::{Error, Result};
use crate::types::{Expression, Image, Sample};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const METADATA_FILE: &str = "dataset.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitTag {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "val")]
    Val,
    #[serde(rename = "testA")]
    TestA,
    #[serde(rename = "testB")]
    TestB,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::TestA => "testA",
            SplitTag::TestB => "testB",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "testA" => Ok(SplitTag::TestA),
            "testB" => Ok(SplitTag::TestB),
            other => Err(Error::Config(format!("unknown split tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    #[default]
    RefcocoFormat,
    Synthetic,
}

/// One manifest line. `image` is relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub image: PathBuf,
    pub expression: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Rle>,
    pub split: SplitTag,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Metadata {
    source: DatasetSource,
}

/// A validated dataset directory: `manifest.jsonl` plus the images it names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    root: PathBuf,
    source: DatasetSource,
    records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    /// Validates ids, expressions and RLE shapes; image files are not checked
    /// until [`DatasetManifest::load`] or [`DatasetManifest::write`].
    pub fn new(root: impl Into<PathBuf>, source: DatasetSource, records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(record_error(&r.id, "duplicate id"));
            }
            Expression::new(r.expression.as_str()).map_err(|e| record_error(&r.id, e))?;
            if let Some(rle) = &r.mask {
                rle.check().map_err(|e| record_error(&r.id, e))?;
            }
        }
        Ok(Self {
            root: root.into(),
            source,
            records,
        })
    }

    /// Loads `<path>/manifest.jsonl`, or `path` itself when it names a file.
    pub fn load(path: &Path) -> Result<Self> {
        let (root, file) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            (
                path.parent().map(Path::to_path_buf).unwrap_or_default(),
                path.to_path_buf(),
            )
        };
        let reader = BufReader::new(fs::File::open(&file).map_err(|e| Error::io(&file, e))?);
        let mut records = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(&file, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ManifestRecord =
                serde_json::from_str(&line).map_err(|e| record_error(&format!("line {}", n + 1), e))?;
            records.push(record);
        }
        let meta_path = root.join(METADATA_FILE);
        let source = if meta_path.exists() {
            let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
            serde_json::from_str::<Metadata>(&text)?.source
        } else {
            DatasetSource::default()
        };
        let manifest = Self::new(root, source, records)?;
        manifest.check_images()?;
        Ok(manifest)
    }

    /// Every image must exist, and every mask must match its image's dimensions.
    pub fn check_images(&self) -> Result<()> {
        let missing: Vec<PathBuf> = self
            .records
            .iter()
            .map(|r| self.image_path(r))
            .filter(|p| !p.is_file())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingImages(missing));
        }
        for r in &self.records {
            let Some(rle) = &r.mask else { continue };
            let path = self.image_path(r);
            let (w, h) = image::image_dimensions(&path).map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let (h, w) = (h as usize, w as usize);
            if rle.size != [h, w] {
                return Err(record_error(
                    &r.id,
                    format!("mask is {}x{} but image is {h}x{w}", rle.size[0], rle.size[1]),
                ));
            }
        }
        Ok(())
    }

    /// Writes `manifest.jsonl` and `dataset.json` under the root directory.
    pub fn write(&self) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let file = self.root.join(MANIFEST_FILE);
        let mut out = BufWriter::new(fs::File::create(&file).map_err(|e| Error::io(&file, e))?);
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|e| Error::io(&file, e))?;
        }
        out.flush().map_err(|e| Error::io(&file, e))?;
        let meta_path = self.root.join(METADATA_FILE);
        let meta = serde_json::to_string(&Metadata { source: self.source })?;
        fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn source(&self) -> DatasetSource {
        self.source
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, tag: SplitTag) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == tag)
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn image_path(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.image)
    }

    /// Decodes the record's image and mask.
    pub fn load_sample(&self, record: &ManifestRecord) -> Result<Sample> {
        let image = read_image(&self.image_path(record))?;
        let mask = match &record.mask {
            Some(rle) => Some(rle.decode().map_err(|e| record_error(&record.id, e))?),
            None => None,
        };
        Ok(Sample {
            id: record.id.clone(),
            image,
            expression: Expression::new(record.expression.as_str()).map_err(|e| record_error(&record.id, e))?,
            mask,
        })
    }

    pub fn load_split(&self, tag: SplitTag) -> Result<Vec<Sample>> {
        self.split(tag).map(|r| self.load_sample(r)).collect()
    }
}

fn record_error(id: &str, message: impl fmt::Display) -> Error {
    Error::Record {
        id: id.to_string(),
        message: message.to_string(),
    }
}

/// Reads any supported raster as RGB in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = f64::from(px.0[c]) / 255.0;
        }
    }
    Image::new(h, w, data)
}

/// Quantises to 8 bits and encodes by file extension (`.png`, `.ppm`, ...).
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let (h, w) = image.dims();
    let mut raw = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            raw.extend(image.rgb(y, x).map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
        }
    }
    let codec_err = |message: String| Error::Image {
        path: path.to_path_buf(),
        message,
    };
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
        // Plain binary P6 rather than the encoder's default PAM header.
        let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
        bytes.extend_from_slice(&raw);
        return std::fs::write(path, bytes).map_err(|e| Error::io(path, e));
    }
    let buf = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized to image");
    buf.save(path).map_err(|e| codec_err(e.to_string()))
}
