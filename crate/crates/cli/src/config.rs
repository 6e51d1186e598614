//! Run configuration: parsing, overrides and whole-config validation.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use selfonn::network::required_input_size;
use selfonn::tasks::io::Manifest;
use selfonn::tasks::{generate_dataset, Dataset, Fold, GeneratorSpec, TaskKind};
use selfonn::trainer::TrainConfig;
use selfonn::{LayerSpec, NetworkSpec};

use crate::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub layers: Vec<LayerSpec>,
    /// `[height, width]`; when absent, the smallest input whose output
    /// matches the sample size (samples are zero-padded to it).
    #[serde(default)]
    pub input_size: Option<(usize, usize)>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Manifest(PathBuf),
    Generator(GeneratorSpec),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Model label in comparison tables; defaults to the file stem.
    #[serde(default)]
    pub name: Option<String>,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub task: TaskKind,
    pub dataset: DatasetSource,
    pub output_dir: PathBuf,
    /// Fold indices to run; all folds when absent.
    #[serde(default)]
    pub folds: Option<Vec<usize>>,
}

/// Command-line and environment overrides.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

/// A validated config with its dataset materialized.
#[derive(Clone, Debug)]
pub struct Run {
    pub path: PathBuf,
    pub name: String,
    pub spec: NetworkSpec,
    pub training: TrainConfig,
    pub task: TaskKind,
    pub dataset: Dataset,
    pub output_dir: PathBuf,
    pub folds: Vec<usize>,
}

impl Run {
    pub fn fold(&self, index: usize) -> &Fold {
        &self.dataset.folds[index]
    }
}

fn config_err(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {msg}", path.display()))
}

pub fn parse(path: &Path, text: &str) -> Result<RunConfig, CliError> {
    serde_json::from_str(text).map_err(|e| {
        if e.line() > 0 {
            CliError::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
        } else {
            config_err(path, e)
        }
    })
}

/// Reads, overrides and validates a config. Nothing is written.
pub fn load(path: &Path, ov: &Overrides) -> Result<Run, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(path, format!("cannot read config: {e}")))?;
    let cfg = parse(path, &text)?;
    resolve(path, cfg, ov)
}

pub fn resolve(path: &Path, mut cfg: RunConfig, ov: &Overrides) -> Result<Run, CliError> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    if let Some(seed) = ov.seed {
        cfg.training.seed = seed;
    }
    if let Some(runs) = ov.runs {
        cfg.training.runs = runs;
    }
    cfg.training.validate().map_err(|e| config_err(path, format!("training: {e}")))?;

    if cfg.network.layers.is_empty() {
        return Err(config_err(path, "network.layers: at least one layer is required"));
    }
    for (i, l) in cfg.network.layers.iter().enumerate() {
        l.validate().map_err(|e| config_err(path, format!("network.layers[{i}]: {e}")))?;
    }
    if cfg.network.layers.last().unwrap().neurons != 1 {
        return Err(config_err(path, "network.layers: the last layer must have exactly one neuron"));
    }

    let dataset = match &cfg.dataset {
        DatasetSource::Generator(gen) => {
            generate_dataset(cfg.task, gen).map_err(|e| config_err(path, format!("dataset.generator: {e}")))?
        }
        DatasetSource::Manifest(rel) => {
            let mpath = base.join(rel);
            if !mpath.is_file() {
                return Err(config_err(path, format!("dataset.manifest: no such file {}", mpath.display())));
            }
            let m = Manifest::read(&mpath).map_err(|e| config_err(&mpath, e))?;
            if std::mem::discriminant(&m.task) != std::mem::discriminant(&cfg.task) {
                return Err(config_err(
                    path,
                    format!("task {:?} does not match the manifest task {:?}", cfg.task, m.task),
                ));
            }
            let mbase = mpath.parent().map(Path::to_path_buf).unwrap_or_default();
            let (samples, folds) = m.load(&mbase).map_err(|e| config_err(&mpath, e))?;
            let folds = folds.unwrap_or_else(|| {
                vec![Fold {
                    index: 0,
                    train: (0..samples.len()).collect(),
                    test: Vec::new(),
                    seed: 0,
                }]
            });
            Dataset {
                task: cfg.task,
                samples,
                folds,
            }
        }
    };
    let shape = dataset.sample_shape().ok_or_else(|| config_err(path, "dataset has no samples"))?;
    if let Some(s) = dataset.samples.iter().find(|s| s.input.shape() != shape) {
        return Err(config_err(path, format!("sample {} differs in size from the first sample", s.id)));
    }

    let (h, w) = match cfg.network.input_size {
        Some(size) => size,
        None => required_input_size(&cfg.network.layers, shape).ok_or_else(|| {
            config_err(path, format!("network: no input size yields a {}x{} output", shape.0, shape.1))
        })?,
    };
    let spec = NetworkSpec::new(h, w, cfg.network.layers.clone());
    let out = spec.output_shape().map_err(|e| config_err(path, format!("network: {e}")))?;
    if out != shape {
        return Err(config_err(
            path,
            format!("network output is {}x{} but samples are {}x{}", out.0, out.1, shape.0, shape.1),
        ));
    }
    if h < shape.0 || w < shape.1 {
        return Err(config_err(path, "network.input_size is smaller than the samples"));
    }

    let folds = match &cfg.folds {
        Some(list) => {
            if list.is_empty() {
                return Err(config_err(path, "folds: empty list"));
            }
            if let Some(bad) = list.iter().find(|&&f| f >= dataset.folds.len()) {
                return Err(config_err(
                    path,
                    format!("folds: index {bad} out of range ({} folds)", dataset.folds.len()),
                ));
            }
            list.clone()
        }
        None => (0..dataset.folds.len()).collect(),
    };

    let output_dir = match &ov.output_dir {
        Some(o) => o.clone(),
        None => base.join(&cfg.output_dir),
    };
    if output_dir.exists() && !output_dir.is_dir() {
        return Err(config_err(path, format!("output_dir {} is not a directory", output_dir.display())));
    }
    let name = cfg.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    });
    Ok(Run {
        path: path.to_path_buf(),
        name,
        spec,
        training: cfg.training,
        task: cfg.task,
        dataset,
        output_dir,
        folds,
    })
}
