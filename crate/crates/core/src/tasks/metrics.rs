use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::FeatureMap;

/// Reported in place of `+inf` when output and reference coincide.
pub const SNR_SENTINEL_DB: f64 = 99.0;

/// Population variance; exactly zero for constant sequences.
fn variance_f64(mut values: impl Iterator<Item = f64> + Clone) -> f64 {
    let all = values.clone();
    let first = values.next().unwrap_or(0.0);
    if values.all(|v| v == first) {
        return 0.0;
    }
    let values = all;
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// `10 log10(var(reference) / var(reference - output))`, capped at
/// [`SNR_SENTINEL_DB`].
pub fn snr_db<T: Real>(reference: &FeatureMap<T>, output: &FeatureMap<T>) -> Result<f64> {
    reference.check_same_shape(output)?;
    let signal = variance_f64(reference.data().iter().map(|v| v.f64()));
    if signal <= 0.0 {
        return Err(Error::UndefinedSnr);
    }
    let noise = variance_f64(
        reference
            .data()
            .iter()
            .zip(output.data())
            .map(|(r, o)| r.f64() - o.f64()),
    );
    if noise <= 0.0 {
        return Ok(SNR_SENTINEL_DB);
    }
    Ok((10.0 * (signal / noise).log10()).min(SNR_SENTINEL_DB))
}

/// Mean squared error between two maps.
pub fn mse<T: Real>(a: &FeatureMap<T>, b: &FeatureMap<T>) -> Result<f64> {
    a.check_same_shape(b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.f64() - y.f64()).powi(2))
        .sum();
    Ok(s / a.len() as f64)
}

/// `clean + n`, with `n` seeded Gaussian white noise whose realized power is
/// rescaled to exactly `var(clean) / 10^(snr/10)`.
pub fn add_gwn_at_snr(clean: &FeatureMap, target_snr_db: f64, seed: u64) -> Result<FeatureMap> {
    let signal = clean.variance();
    if signal <= 0.0 {
        return Err(Error::UndefinedSnr);
    }
    if !target_snr_db.is_finite() {
        return Err(Error::NonFinite("target SNR".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..clean.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let raw = FeatureMap::new(clean.height(), clean.width(), raw)?;
    let (mean, var) = (raw.mean(), raw.variance());
    let scale = (signal / 10f64.powf(target_snr_db / 10.0) / var).sqrt();
    clean.zip_map(&raw, |c, n| c + (n - mean) * scale)
}

/// Unit-variance white Gaussian noise clamped to `[-1, 1]`.
pub fn wgn_image(height: usize, width: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMap::from_fn(height, width, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v.clamp(-1.0, 1.0)
    })
}

/// Binary confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2TP / (2TP + FP + FN)`; 1 when there is nothing to find and nothing found.
    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / d as f64
        }
    }

    /// `(FP + FN) / total`.
    pub fn ce(&self) -> f64 {
        (self.fp + self.fn_) as f64 / self.total() as f64
    }
}

/// Confusion of `output > threshold` against a `{0, 1}` mask.
pub fn confusion<T: Real>(output: &FeatureMap<T>, mask: &FeatureMap<T>, threshold: f64) -> Result<Confusion> {
    output.check_same_shape(mask)?;
    let mut c = Confusion::default();
    for (o, m) in output.data().iter().zip(mask.data()) {
        let m = m.f64();
        let truth = if m == 1.0 {
            true
        } else if m == 0.0 {
            false
        } else {
            return Err(Error::NonBinaryMask(m));
        };
        match (o.f64() > threshold, truth) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `(F1, CE)` of the thresholded output against a `{0, 1}` mask.
pub fn f1_and_ce<T: Real>(output: &FeatureMap<T>, mask: &FeatureMap<T>, threshold: f64) -> Result<(f64, f64)> {
    let c = confusion(output, mask, threshold)?;
    Ok((c.f1(), c.ce()))
}
