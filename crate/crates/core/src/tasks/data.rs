use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::FeatureMap;

/// One regression pair in the normalized `[-1, 1]` domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T = f64> {
    pub id: String,
    pub input: FeatureMap<T>,
    pub target: FeatureMap<T>,
}

impl<T: Real> Sample<T> {
    pub fn new(id: impl Into<String>, input: FeatureMap<T>, target: FeatureMap<T>) -> Result<Self> {
        let id = id.into();
        for (what, m) in [("input", &input), ("target", &target)] {
            m.ensure_finite(&format!("sample {id} {what}"))?;
            if m.max_abs() > T::one() {
                return Err(Error::Dataset(format!("sample {id} {what} leaves [-1, 1]")));
            }
        }
        Ok(Self { id, input, target })
    }

    pub fn cast<U: Real>(&self) -> Sample<U> {
        Sample {
            id: self.id.clone(),
            input: self.input.cast(),
            target: self.target.cast(),
        }
    }
}

/// `out(m, n) = in(H-1-m, W-1-n)`.
pub fn rot180<T: Real>(map: &FeatureMap<T>) -> FeatureMap<T> {
    let (h, w) = map.shape();
    FeatureMap::from_fn(h, w, |m, n| map.get(h - 1 - m, w - 1 - n))
}

/// `(I, rot180(I))` pairs of uniform random `size x size` images.
pub fn make_toy_rotate180(pairs: usize, size: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .map(|i| {
            let input = FeatureMap::from_fn(size, size, |_, _| rng.random_range(-1.0..=1.0));
            let target = rot180(&input);
            Sample {
                id: format!("toy{i:03}"),
                input,
                target,
            }
        })
        .collect()
}

/// Train/test partition of a corpus, by sample index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl Fold {
    pub fn train_samples<'a, T>(&self, corpus: &'a [Sample<T>]) -> Vec<&'a Sample<T>> {
        self.train.iter().map(|&i| &corpus[i]).collect()
    }

    pub fn test_samples<'a, T>(&self, corpus: &'a [Sample<T>]) -> Vec<&'a Sample<T>> {
        self.test.iter().map(|&i| &corpus[i]).collect()
    }
}

/// `n_folds` folds over a seeded permutation: fold `f` trains on the
/// `ceil(train_fraction * N)` samples starting at `f * ntrain` (wrapping) and
/// tests on the rest. With `n_folds * ntrain = N` the train sets partition
/// the corpus.
pub fn make_folds(corpus_len: usize, n_folds: usize, train_fraction: f64, seed: u64) -> Result<Vec<Fold>> {
    if n_folds == 0 || corpus_len < n_folds {
        return Err(Error::CorpusTooSmall {
            size: corpus_len,
            folds: n_folds,
        });
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Dataset(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let ntrain = ((train_fraction * corpus_len as f64) - 1e-9).ceil().max(1.0) as usize;
    if ntrain >= corpus_len {
        return Err(Error::CorpusTooSmall {
            size: corpus_len,
            folds: n_folds,
        });
    }
    let mut perm: Vec<usize> = (0..corpus_len).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..n_folds)
        .map(|f| {
            let mut train: Vec<usize> = (0..ntrain).map(|j| perm[(f * ntrain + j) % corpus_len]).collect();
            train.sort_unstable();
            let test = (0..corpus_len).filter(|i| train.binary_search(i).is_err()).collect();
            Fold {
                index: f,
                train,
                test,
                seed,
            }
        })
        .collect())
}

/// Transformation folds: four distinct images `A, B, C, D` per fold, used as
/// `A -> B`, `B -> A`, `C -> D`, `D -> C`. There is no test split.
pub fn make_transform_folds(
    images: &[FeatureMap],
    ids: &[String],
    n_folds: usize,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Fold>)> {
    if n_folds == 0 || images.len() < 4 * n_folds {
        return Err(Error::CorpusTooSmall {
            size: images.len(),
            folds: n_folds,
        });
    }
    let mut perm: Vec<usize> = (0..images.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut samples = Vec::with_capacity(4 * n_folds);
    let mut folds = Vec::with_capacity(n_folds);
    for f in 0..n_folds {
        let q = &perm[4 * f..4 * f + 4];
        let start = samples.len();
        for (a, b) in [(q[0], q[1]), (q[1], q[0]), (q[2], q[3]), (q[3], q[2])] {
            samples.push(Sample::new(
                format!("{}->{}", ids[a], ids[b]),
                images[a].clone(),
                images[b].clone(),
            )?);
        }
        folds.push(Fold {
            index: f,
            train: (start..start + 4).collect(),
            test: Vec::new(),
            seed,
        });
    }
    Ok((samples, folds))
}
