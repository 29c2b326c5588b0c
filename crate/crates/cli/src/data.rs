//! Dataset selection from `--data`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pdeq::data_io::{read_amat, read_idx, synth_rotated_shapes_with, SynthOptions};
use pdeq::LabeledDataset;

/// Seed offset for synthetic evaluation data, so that `train` and `eval`
/// with the same `--seed` see disjoint samples.
pub const EVAL_SEED_OFFSET: u64 = 1000;

#[derive(Clone, Debug, clap::Args)]
pub struct DataArgs {
    /// `synth`, an `.amat` file, or an IDX image file.
    #[arg(long)]
    pub data: String,
    /// IDX label file. Defaults to the image path with `images-idx3` replaced
    /// by `labels-idx1`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Synthetic sample count (default 2000 for training, 1000 for evaluation).
    #[arg(long)]
    pub count: Option<usize>,
    /// Synthetic pixel noise.
    #[arg(long, default_value_t = SynthOptions::desk().noise)]
    pub noise: f64,
    /// Synthetic distractor strokes per image.
    #[arg(long, default_value_t = SynthOptions::desk().distractors)]
    pub distractors: usize,
}

impl DataArgs {
    pub fn is_synth(&self) -> bool {
        self.data == "synth"
    }

    pub fn load(&self, classes: usize, seed: u64, default_count: usize) -> Result<LabeledDataset> {
        if self.is_synth() {
            let opts = SynthOptions { noise: self.noise, distractors: self.distractors };
            return Ok(synth_rotated_shapes_with(self.count.unwrap_or(default_count), classes, seed, &opts)?);
        }
        let path = Path::new(&self.data);
        if path.extension().is_some_and(|e| e == "amat") {
            return read_amat(path).with_context(|| format!("reading {}", path.display()));
        }
        let labels = match &self.labels {
            Some(p) => p.clone(),
            None => label_path(path)?,
        };
        read_idx(path, &labels).with_context(|| format!("reading {} with labels {}", path.display(), labels.display()))
    }
}

fn label_path(images: &Path) -> Result<PathBuf> {
    let name = images.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if !name.contains("images-idx3") {
        bail!("cannot infer the label file for {}; pass --labels", images.display());
    }
    Ok(images.with_file_name(name.replace("images-idx3", "labels-idx1")))
}
