use std::collections::HashMap;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

use super::data::{Fold, Sample};
use super::{Dataset, TaskKind};

/// `[0, 255] -> [-1, 1]`, affine.
pub fn normalize(img: &GrayImage) -> FeatureMap {
    let (w, h) = img.dimensions();
    FeatureMap::from_fn(h as usize, w as usize, |m, n| {
        img.get_pixel(n as u32, m as u32).0[0] as f64 / 127.5 - 1.0
    })
}

/// Inverse of [`normalize`], rounding and clamping to 8 bits.
pub fn denormalize(map: &FeatureMap) -> GrayImage {
    GrayImage::from_fn(map.width() as u32, map.height() as u32, |x, y| {
        let v = (map.get(y as usize, x as usize) + 1.0) * 127.5;
        Luma([v.round().clamp(0.0, 255.0) as u8])
    })
}

/// 8-bit mask to `{-1, +1}`: values above 127 are positive.
pub fn mask_to_target(img: &GrayImage) -> FeatureMap {
    let (w, h) = img.dimensions();
    FeatureMap::from_fn(h as usize, w as usize, |m, n| {
        if img.get_pixel(n as u32, m as u32).0[0] > 127 {
            1.0
        } else {
            -1.0
        }
    })
}

/// `{-1, +1}` target (or any map) to a `{0, 1}` mask: positive iff `> 0`.
pub fn target_to_mask(map: &FeatureMap) -> FeatureMap {
    map.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

/// Reads any PGM or PNG file as 8-bit grayscale.
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = image::ImageReader::open(path)?.with_guessed_format()?.decode()?;
    Ok(img.to_luma8())
}

/// Writes by extension: `.pgm` as binary P5, anything else through the
/// encoder registered for the extension.
pub fn write_gray(path: &Path, img: &GrayImage) -> Result<()> {
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        let (w, h) = img.dimensions();
        let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
        bytes.extend_from_slice(img.as_raw());
        std::fs::write(path, bytes)?;
    } else {
        img.save(path)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ManifestSample {
    pub id: String,
    pub input: PathBuf,
    pub target: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ManifestFold {
    pub train: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

/// Dataset description on disk; relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub task: TaskKind,
    pub samples: Vec<ManifestSample>,
    #[serde(default)]
    pub folds: Option<Vec<ManifestFold>>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Checks that every referenced file exists and every fold id is known.
    pub fn validate(&self, base: &Path) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Dataset("manifest lists no samples".into()));
        }
        let mut ids = HashMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            if ids.insert(s.id.as_str(), i).is_some() {
                return Err(Error::Dataset(format!("duplicate sample id {}", s.id)));
            }
            for p in [&s.input, &s.target] {
                let full = base.join(p);
                if !full.is_file() {
                    return Err(Error::Dataset(format!("sample {}: missing file {}", s.id, full.display())));
                }
            }
        }
        for (f, fold) in self.folds.iter().flatten().enumerate() {
            for id in fold.train.iter().chain(&fold.test) {
                if !ids.contains_key(id.as_str()) {
                    return Err(Error::Dataset(format!("fold {f}: unknown sample id {id}")));
                }
            }
            if fold.train.iter().any(|id| fold.test.contains(id)) {
                return Err(Error::Dataset(format!("fold {f}: train and test overlap")));
            }
        }
        Ok(())
    }

    /// Loads and normalizes every image. Segmentation targets are read as
    /// masks; folds are taken from the manifest when present.
    pub fn load(&self, base: &Path) -> Result<(Vec<Sample>, Option<Vec<Fold>>)> {
        self.validate(base)?;
        let mut samples = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            let input = normalize(&read_gray(&base.join(&s.input))?);
            let t = read_gray(&base.join(&s.target))?;
            let target = match self.task {
                TaskKind::Segment => mask_to_target(&t),
                _ => normalize(&t),
            };
            if input.shape() != target.shape() {
                return Err(Error::Dataset(format!("sample {}: input and target sizes differ", s.id)));
            }
            samples.push(Sample::new(s.id.clone(), input, target)?);
        }
        let index: HashMap<&str, usize> = self.samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
        let folds = self.folds.as_ref().map(|fs| {
            fs.iter()
                .enumerate()
                .map(|(f, mf)| Fold {
                    index: f,
                    train: mf.train.iter().map(|id| index[id.as_str()]).collect(),
                    test: mf.test.iter().map(|id| index[id.as_str()]).collect(),
                    seed: 0,
                })
                .collect()
        });
        Ok((samples, folds))
    }
}

/// Writes a dataset as images plus a manifest into `dir`.
pub fn export_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("input"))?;
    std::fs::create_dir_all(dir.join("target"))?;
    let mut samples = Vec::new();
    for s in &dataset.samples {
        let name = format!("{}.pgm", s.id.replace(|c: char| !c.is_ascii_alphanumeric(), "_"));
        let input = PathBuf::from("input").join(&name);
        let target = PathBuf::from("target").join(&name);
        write_gray(&dir.join(&input), &denormalize(&s.input))?;
        write_gray(&dir.join(&target), &denormalize(&s.target))?;
        samples.push(ManifestSample {
            id: s.id.clone(),
            input,
            target,
        });
    }
    let id = |i: &usize| dataset.samples[*i].id.clone();
    let manifest = Manifest {
        task: dataset.task,
        samples,
        folds: Some(
            dataset
                .folds
                .iter()
                .map(|f| ManifestFold {
                    train: f.train.iter().map(id).collect(),
                    test: f.test.iter().map(id).collect(),
                })
                .collect(),
        ),
    };
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}
