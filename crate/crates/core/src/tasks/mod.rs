//! Datasets and metrics for the regression tasks: denoising, synthesis,
//! image-to-image transformation, segmentation and the 3x3 rotate-180 toy.

pub mod data;
pub mod io;
pub mod metrics;
pub mod synth;

pub use data::{make_folds, make_toy_rotate180, make_transform_folds, rot180, Fold, Sample};
pub use metrics::{add_gwn_at_snr, f1_and_ce, mse, snr_db, wgn_image, Confusion, SNR_SENTINEL_DB};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::FeatureMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Denoise { snr_db: f64 },
    Synthesize,
    Transform,
    Segment,
    ToyRotate180,
}

impl TaskKind {
    pub fn is_segmentation(&self) -> bool {
        matches!(self, TaskKind::Segment)
    }
}

fn default_images() -> usize {
    100
}
fn default_size() -> usize {
    60
}
fn default_folds() -> usize {
    10
}
fn default_fraction() -> f64 {
    0.10
}
fn default_pairs() -> usize {
    64
}
fn default_toy_size() -> usize {
    3
}

/// Parameters of the procedural corpora.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(default = "default_images")]
    pub images: usize,
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub n_folds: usize,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    /// Toy set size.
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_toy_size")]
    pub toy_size: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

/// Samples plus their fold assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: TaskKind,
    pub samples: Vec<Sample>,
    pub folds: Vec<Fold>,
}

impl Dataset {
    /// Size of every sample map (all samples share it).
    pub fn sample_shape(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| s.input.shape())
    }
}

fn noise_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (index as u64).wrapping_add(0x5eed)
}

/// Builds a task dataset from the procedural generators.
pub fn generate_dataset(task: TaskKind, gen: &GeneratorSpec) -> Result<Dataset> {
    let ids: Vec<String> = (0..gen.images).map(|i| format!("img{i:03}")).collect();
    let (samples, folds) = match task {
        TaskKind::ToyRotate180 => {
            let samples = make_toy_rotate180(gen.pairs, gen.toy_size, gen.seed);
            let fold = Fold {
                index: 0,
                train: (0..samples.len()).collect(),
                test: Vec::new(),
                seed: gen.seed,
            };
            (samples, vec![fold])
        }
        TaskKind::Transform => {
            let images: Vec<FeatureMap> = synth::texture_corpus(gen.images, gen.size, gen.seed)
                .iter()
                .map(io::normalize)
                .collect();
            make_transform_folds(&images, &ids, gen.n_folds, gen.seed)?
        }
        TaskKind::Denoise { snr_db } => {
            let mut samples = Vec::with_capacity(gen.images);
            for (i, img) in synth::texture_corpus(gen.images, gen.size, gen.seed).iter().enumerate() {
                let clean = io::normalize(img);
                let noisy = add_gwn_at_snr(&clean, snr_db, noise_seed(gen.seed, i))?.map(|v| v.clamp(-1.0, 1.0));
                samples.push(Sample::new(ids[i].clone(), noisy, clean)?);
            }
            let folds = make_folds(samples.len(), gen.n_folds, gen.train_fraction, gen.seed)?;
            (samples, folds)
        }
        TaskKind::Synthesize => {
            let mut samples = Vec::with_capacity(gen.images);
            for (i, img) in synth::texture_corpus(gen.images, gen.size, gen.seed).iter().enumerate() {
                let noise = wgn_image(gen.size, gen.size, noise_seed(gen.seed, i));
                samples.push(Sample::new(ids[i].clone(), noise, io::normalize(img))?);
            }
            let folds = make_folds(samples.len(), gen.n_folds, gen.train_fraction, gen.seed)?;
            (samples, folds)
        }
        TaskKind::Segment => {
            let mut samples = Vec::with_capacity(gen.images);
            for (i, (img, mask)) in synth::segmentation_corpus(gen.images, gen.size, gen.seed).iter().enumerate() {
                samples.push(Sample::new(ids[i].clone(), io::normalize(img), io::mask_to_target(mask))?);
            }
            let folds = make_folds(samples.len(), gen.n_folds, gen.train_fraction, gen.seed)?;
            (samples, folds)
        }
    };
    Ok(Dataset { task, samples, folds })
}
