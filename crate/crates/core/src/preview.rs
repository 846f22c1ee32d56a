//! Side-by-side dumps of what the augmentation pipeline does to a few samples.
//!
//! For sample `i` the output holds `i-original.ppm`, `i-weak.ppm` and
//! `i-strong.ppm` (strong augmentation blended with MAG at `s = 1`), and one
//! shared `text.txt` listing the original text, the weak-adapted text and the
//! retained strong candidates with their similarity.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::augment_image::{mag_blend, strong_augment, weak_augment};
use crate::augment_text::{generate_candidates, semantic_filter, weak_text_adapt, PositionLexicon, TextResources};
use crate::config::TrainerConfig;
use crate::data::{write_image, DatasetManifest};
use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::rng::SeedTree;

pub const PREVIEW_TEXT_FILE: &str = "text.txt";

/// Writes previews for the first `n` manifest records and returns the files written.
pub fn write_preview(
    manifest: &DatasetManifest,
    config: &TrainerConfig,
    embedder: &dyn Embedder,
    n: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if n == 0 {
        return Err(Error::Config("preview needs n >= 1".into()));
    }
    if manifest.is_empty() {
        return Err(Error::Config("manifest has no records to preview".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let profile = config.profile();
    let text = TextResources::bundled();
    let lexicon = PositionLexicon::default();
    let root = SeedTree::new(seed);
    let mut written = Vec::new();
    let mut listing = String::new();

    for (i, record) in manifest.records().iter().take(n).enumerate() {
        let sample = manifest.load_sample(record)?;
        let image_seed = root.child("image-aug").child("preview").index(i as u64);
        let (weak, _, weak_record) = weak_augment(&sample.image, None, &profile, &mut image_seed.child("weak").rng())?;
        let (strong, strong_record) = strong_augment(&weak, &profile, &mut image_seed.child("strong").rng());
        let blended = mag_blend(&strong, &weak, 1.0)?;

        for (suffix, img) in [("original", &sample.image), ("weak", &weak), ("strong", &blended)] {
            let path = out_dir.join(format!("{i:03}-{suffix}.ppm"));
            write_image(&path, img)?;
            written.push(path);
        }

        let weak_text = weak_text_adapt(&sample.expression, &weak_record, &lexicon);
        let candidates = generate_candidates(
            &weak_text,
            config.text_candidate_count,
            root.child("text-aug").child("preview").index(i as u64),
            &config.text,
            &text,
        );
        let set = semantic_filter(&weak_text, &candidates, embedder, config.lambda_t)?;
        let ops: Vec<&str> = strong_record.ops.iter().map(|op| op.name()).collect();
        let _ = writeln!(listing, "[{i:03}] {}", record.id);
        let _ = writeln!(listing, "flipped: {}", weak_record.horizontal_flipped);
        let _ = writeln!(listing, "strong ops: {}", ops.join(", "));
        let _ = writeln!(listing, "original: {}", sample.expression.raw());
        let _ = writeln!(listing, "weak: {}", weak_text.text());
        for c in &set.retained {
            let _ = writeln!(listing, "candidate {:.6}: {}", c.similarity, c.text.text());
        }
        listing.push('\n');
    }

    let text_path = out_dir.join(PREVIEW_TEXT_FILE);
    fs::write(&text_path, listing).map_err(|e| Error::io(&text_path, e))?;
    written.push(text_path);
    Ok(written)
}
