use serde::{Deserialize, Serialize};

use crate::types::Mask;

/// Uncompressed binary run-length encoding, row-major, runs alternating
/// background/foreground and starting with background (possibly a zero run).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rle {
    /// `[height, width]`.
    pub size: [usize; 2],
    pub counts: Vec<u64>,
}

impl Rle {
    pub fn encode(mask: &Mask) -> Self {
        let mut counts = Vec::new();
        let mut current = 0u8;
        let mut run = 0u64;
        for &v in mask.values() {
            if v != current {
                counts.push(run);
                current = v;
                run = 0;
            }
            run += 1;
        }
        counts.push(run);
        Self {
            size: [mask.height(), mask.width()],
            counts,
        }
    }

    /// Sum of all runs; equals `height * width` for a well-formed encoding.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Foreground pixel count: the sum of the odd-indexed runs.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).sum()
    }

    /// Returns a description of the problem when the runs do not tile the grid.
    pub fn check(&self) -> Result<(), String> {
        let [h, w] = self.size;
        let expected = (h * w) as u64;
        if self.total() != expected {
            return Err(format!(
                "RLE runs sum to {} but a {h}x{w} mask has {expected} pixels",
                self.total()
            ));
        }
        Ok(())
    }

    pub fn decode(&self) -> Result<Mask, String> {
        self.check()?;
        let [h, w] = self.size;
        let mut values = Vec::with_capacity(h * w);
        for (i, &run) in self.counts.iter().enumerate() {
            values.resize(values.len() + run as usize, (i % 2) as u8);
        }
        Mask::new(h, w, values).map_err(|e| e.to_string())
    }
}
