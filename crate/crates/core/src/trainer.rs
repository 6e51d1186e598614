//! Fixed-rate SGD with seeded restarts.
//!
//! One iteration visits every mini-batch of the training set once; the
//! gradient of a batch is the sum of per-sample gradients (computed in
//! parallel, reduced in sample order) followed by one update.

use std::io::Write as _;
use std::path::Path as FsPath;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backprop::{self, Gradients};
use crate::error::{Error, Result};
use crate::network::{InitRule, Network, NetworkSpec};
use crate::real::Real;
use crate::tasks::io::target_to_mask;
use crate::tasks::{self, Sample};
use crate::tensor::FeatureMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// One update per iteration over the whole training set.
    #[default]
    FullFold,
    /// Updates every `n` samples, batches drawn from a per-iteration shuffle.
    FixedSize(usize),
}

fn default_runs() -> usize {
    3
}

/// Stops a run when the eval MSE has not improved for `patience` evaluations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub min_mse: f64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub batch_mode: BatchMode,
    #[serde(default)]
    pub init: InitRule,
    /// Evaluate on the held-out set every this many iterations (0 = never).
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default)]
    pub early_stopping: Option<EarlyStopping>,
    /// Record wall time in the log; off keeps logs byte-reproducible.
    #[serde(default)]
    pub log_timing: bool,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, max_iter: usize) -> Self {
        Self {
            learning_rate,
            max_iter,
            min_mse: 0.0,
            runs: default_runs(),
            seed: 0,
            batch_mode: BatchMode::FullFold,
            init: InitRule::Glorot,
            eval_every: 0,
            early_stopping: None,
            log_timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(format!("training config: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a positive number");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be >= 1");
        }
        if self.runs == 0 {
            return bad("runs must be >= 1");
        }
        if !(self.min_mse >= 0.0) {
            return bad("min_mse must be >= 0");
        }
        if self.batch_mode == BatchMode::FixedSize(0) {
            return bad("fixed batch size must be >= 1");
        }
        if self.early_stopping.is_some_and(|e| e.patience == 0) {
            return bad("early stopping patience must be >= 1");
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    pub iteration: usize,
    /// Mean per-sample MSE of the forward passes that fed this iteration's updates.
    pub train_mse: f64,
    pub train_snr_db: Option<f64>,
    pub eval_mse: Option<f64>,
    pub eval_snr_db: Option<f64>,
    pub ms_elapsed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub run: usize,
    pub records: Vec<IterRecord>,
    /// Lowest train MSE seen, with the iteration of the parameters that had it
    /// (`max_iter + 1` denotes the final parameters).
    pub best_mse: f64,
    pub best_iteration: usize,
    pub diverged: Option<String>,
    pub stopped_early: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub runs: Vec<RunLog>,
    pub best_run: usize,
}

impl TrainLog {
    /// Iteration rows of every run, with a leading `run` column.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("run,iteration,train_mse,train_snr_db,eval_mse,eval_snr_db,ms_elapsed\n");
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.runs {
            for rec in &r.records {
                s.push_str(&format!(
                    "{},{},{:.6},{},{},{},{}\n",
                    r.run,
                    rec.iteration,
                    rec.train_mse,
                    f(rec.train_snr_db),
                    f(rec.eval_mse),
                    f(rec.eval_snr_db),
                    rec.ms_elapsed
                ));
            }
        }
        s
    }

    pub fn write_csv(&self, path: &FsPath) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

pub struct TrainOutcome<T: Real = f64> {
    pub best: Network<T>,
    pub log: TrainLog,
}

/// `w <- w - lr * g`, `b <- b - lr * g`. Gradients are checked for
/// finiteness before anything is written.
pub fn sgd_step<T: Real>(net: &mut Network<T>, grads: &Gradients<T>, lr: T) -> Result<()> {
    if grads.layers.len() != net.params().len() {
        return Err(Error::Shape("gradient layer count differs from network".into()));
    }
    for (l, (g, p)) in grads.layers.iter().zip(net.params()).enumerate() {
        if g.weight_grads.len() != p.weights.len() || g.bias_grads.len() != p.biases.len() {
            return Err(Error::Shape(format!("layer {}: gradient layout differs from parameters", l + 1)));
        }
        if let Some(i) = g.weight_grads.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { layer: l + 1, param: "weight", index: i });
        }
        if let Some(i) = g.bias_grads.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { layer: l + 1, param: "bias", index: i });
        }
    }
    let bias: Vec<bool> = net.spec().layers.iter().map(|l| l.bias).collect();
    let mut updated = net.params().to_vec();
    for (l, ((p, g), b)) in updated.iter_mut().zip(&grads.layers).zip(bias).enumerate() {
        for (i, (w, &d)) in p.weights.iter_mut().zip(&g.weight_grads).enumerate() {
            *w = *w - lr * d;
            if !w.is_finite() {
                return Err(Error::NonFinite(format!("layer {} weight[{i}] after update", l + 1)));
            }
        }
        if b {
            for (i, (w, &d)) in p.biases.iter_mut().zip(&g.bias_grads).enumerate() {
                *w = *w - lr * d;
                if !w.is_finite() {
                    return Err(Error::NonFinite(format!("layer {} bias[{i}] after update", l + 1)));
                }
            }
        }
    }
    net.params_mut().clone_from_slice(&updated);
    Ok(())
}

/// Sample map centered in a zero canvas of the network input size.
pub fn fit_input<T: Real>(map: &FeatureMap<T>, spec: &NetworkSpec) -> Result<FeatureMap<T>> {
    let (h, w) = (spec.input_height, spec.input_width);
    if map.height() > h || map.width() > w {
        return Err(Error::Shape(format!(
            "{}x{} sample larger than {h}x{w} network input",
            map.height(),
            map.width()
        )));
    }
    let (dh, dw) = (h - map.height(), w - map.width());
    Ok(map.pad_zero(dh / 2, dh - dh / 2, dw / 2, dw - dw / 2))
}

/// A sample with its input fitted to the network.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    pub id: String,
    pub input: FeatureMap<T>,
    pub target: FeatureMap<T>,
}

pub fn prepare<T: Real>(samples: &[&Sample], spec: &NetworkSpec) -> Result<Vec<Prepared<T>>> {
    if spec.input_channels != 1 || spec.output_neurons() != 1 {
        return Err(Error::InvalidSpec("tasks use single-channel input and output".into()));
    }
    let out = spec.output_shape()?;
    samples
        .iter()
        .map(|s| {
            if s.target.shape() != out {
                return Err(Error::Shape(format!(
                    "sample {}: target {}x{} but network output is {}x{}",
                    s.id,
                    s.target.height(),
                    s.target.width(),
                    out.0,
                    out.1
                )));
            }
            Ok(Prepared {
                id: s.id.clone(),
                input: fit_input(&s.input.cast(), spec)?,
                target: s.target.cast(),
            })
        })
        .collect()
}

/// Per-sample loss and gradients, reduced in sample order.
fn batch_gradients<T: Real>(net: &Network<T>, batch: &[&Prepared<T>]) -> Result<(Gradients<T>, Vec<f64>, Vec<Option<f64>>)> {
    let per: Vec<Result<(Gradients<T>, f64, Option<f64>)>> = batch
        .par_iter()
        .map(|s| {
            let cache = net.forward(std::slice::from_ref(&s.input))?;
            let y = &cache.output()[0];
            let e = tasks::mse(y, &s.target)?;
            let snr = tasks::snr_db(&s.target, y).ok();
            let bp = backprop::backward(net, &cache, std::slice::from_ref(&s.target))?;
            Ok((bp.grads, e, snr))
        })
        .collect();
    let mut total = Gradients::zeros_like(net);
    let mut losses = Vec::with_capacity(batch.len());
    let mut snrs = Vec::with_capacity(batch.len());
    for r in per {
        let (g, e, snr) = r?;
        total.add_assign(&g);
        losses.push(e);
        snrs.push(snr);
    }
    Ok((total, losses, snrs))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| mean(&d))
}

fn loss_only<T: Real>(net: &Network<T>, samples: &[Prepared<T>]) -> Result<(f64, Option<f64>)> {
    let per: Vec<Result<(f64, Option<f64>)>> = samples
        .par_iter()
        .map(|s| {
            let c = net.forward(std::slice::from_ref(&s.input))?;
            let y = &c.output()[0];
            Ok((tasks::mse(y, &s.target)?, tasks::snr_db(&s.target, y).ok()))
        })
        .collect();
    let mut e = Vec::new();
    let mut s = Vec::new();
    for r in per {
        let (a, b) = r?;
        e.push(a);
        s.push(b);
    }
    Ok((mean(&e), mean_defined(&s)))
}

fn is_divergence(e: &Error) -> bool {
    matches!(
        e,
        Error::NonFinite(_) | Error::NonFiniteGradient { .. } | Error::Domain { .. } | Error::Diverged(_)
    )
}

/// Generator of run `j`: depends only on `(seed, j)`.
pub fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

struct RunResult<T: Real> {
    log: RunLog,
    best: Network<T>,
}

fn train_run<T: Real>(
    spec: &NetworkSpec,
    train: &[Prepared<T>],
    eval: &[Prepared<T>],
    cfg: &TrainConfig,
    run: usize,
) -> Result<RunResult<T>> {
    let mut rng = run_rng(cfg.seed, run);
    let mut net = Network::<T>::init_with_rng(spec.clone(), &mut rng, cfg.init)?;
    let lr = T::of(cfg.learning_rate);
    let start = Instant::now();
    let mut log = RunLog {
        run,
        records: Vec::new(),
        best_mse: f64::INFINITY,
        best_iteration: 0,
        diverged: None,
        stopped_early: false,
    };
    let mut best = net.clone();
    let mut best_eval = f64::INFINITY;
    let mut stale_evals = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for it in 1..=cfg.max_iter {
        let batches: Vec<Vec<usize>> = match cfg.batch_mode {
            BatchMode::FullFold => vec![order.clone()],
            BatchMode::FixedSize(n) => {
                order.shuffle(&mut rng);
                order.chunks(n).map(|c| c.to_vec()).collect()
            }
        };
        let snapshot = (batches.len() == 1).then(|| net.clone());
        let mut losses = Vec::with_capacity(train.len());
        let mut snrs = Vec::with_capacity(train.len());
        let mut failure = None;
        for b in &batches {
            let refs: Vec<&Prepared<T>> = b.iter().map(|&i| &train[i]).collect();
            let step = batch_gradients(&net, &refs).and_then(|(g, e, s)| {
                losses.extend(e);
                snrs.extend(s);
                if losses.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged("non-finite training loss".into()));
                }
                sgd_step(&mut net, &g, lr)
            });
            if let Err(e) = step {
                failure = Some(e);
                break;
            }
        }
        if let Some(e) = failure {
            if is_divergence(&e) {
                log.diverged = Some(format!("iteration {it}: {e}"));
                break;
            }
            return Err(e);
        }
        let train_mse = mean(&losses);
        // With one batch the logged loss belongs to the pre-update parameters.
        if let Some(snap) = snapshot {
            if train_mse < log.best_mse {
                log.best_mse = train_mse;
                log.best_iteration = it;
                best = snap;
            }
        }
        let (eval_mse, eval_snr) = if cfg.eval_every > 0 && !eval.is_empty() && it % cfg.eval_every == 0 {
            let (e, s) = loss_only(&net, eval)?;
            (Some(e), s)
        } else {
            (None, None)
        };
        log.records.push(IterRecord {
            iteration: it,
            train_mse,
            train_snr_db: mean_defined(&snrs),
            eval_mse,
            eval_snr_db: eval_snr,
            ms_elapsed: if cfg.log_timing { start.elapsed().as_millis() as u64 } else { 0 },
        });
        if train_mse <= cfg.min_mse {
            break;
        }
        if let (Some(es), Some(e)) = (cfg.early_stopping, eval_mse) {
            if e < best_eval {
                best_eval = e;
                stale_evals = 0;
            } else {
                stale_evals += 1;
                if stale_evals >= es.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    if log.diverged.is_none() {
        match loss_only(&net, train) {
            Ok((e, _)) if e.is_finite() => {
                if e < log.best_mse {
                    log.best_mse = e;
                    log.best_iteration = cfg.max_iter + 1;
                    best = net;
                }
            }
            Ok(_) => log.diverged = Some("non-finite loss after the last update".into()),
            Err(e) if is_divergence(&e) => log.diverged = Some(format!("after the last update: {e}")),
            Err(e) => return Err(e),
        }
    }
    Ok(RunResult { log, best })
}

/// Trains `cfg.runs` seeded restarts and keeps the parameters with the
/// lowest training MSE seen in any run.
pub fn train<T: Real>(
    spec: &NetworkSpec,
    train: &[&Sample],
    eval: &[&Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let (log, best) = train_logged(spec, train, eval, cfg)?;
    match best {
        Some(best) => Ok(TrainOutcome { best, log }),
        None => {
            let why = log.runs.iter().filter_map(|r| r.diverged.clone()).collect::<Vec<_>>().join("; ");
            Err(Error::Diverged(format!("every run diverged ({why})")))
        }
    }
}

/// Like [`train`], but hands back the log even when every run diverged
/// (the network is then `None`).
pub fn train_logged<T: Real>(
    spec: &NetworkSpec,
    train: &[&Sample],
    eval: &[&Sample],
    cfg: &TrainConfig,
) -> Result<(TrainLog, Option<Network<T>>)> {
    cfg.validate()?;
    spec.shapes()?;
    if train.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    let tr = prepare::<T>(train, spec)?;
    let ev = prepare::<T>(eval, spec)?;
    let results: Vec<Result<RunResult<T>>> = (0..cfg.runs)
        .into_par_iter()
        .map(|j| train_run(spec, &tr, &ev, cfg, j))
        .collect();
    let mut runs = Vec::with_capacity(cfg.runs);
    let mut best: Option<(usize, f64, Network<T>)> = None;
    for r in results {
        let r = r?;
        let j = r.log.run;
        if r.log.best_mse.is_finite() && best.as_ref().is_none_or(|b| r.log.best_mse < b.1) {
            best = Some((j, r.log.best_mse, r.best));
        }
        runs.push(r.log);
    }
    Ok(match best {
        Some((best_run, _, net)) => (TrainLog { runs, best_run }, Some(net)),
        None => (TrainLog { runs, best_run: 0 }, None),
    })
}

/// Metrics of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMetrics {
    pub id: String,
    pub mse: f64,
    pub snr_db: Option<f64>,
    pub f1: Option<f64>,
    pub ce: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub per_sample: Vec<SampleMetrics>,
    pub mse: f64,
    pub snr_db: Option<f64>,
    pub f1: Option<f64>,
    pub ce: Option<f64>,
}

impl Metrics {
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut s = String::from("id,mse,snr_db,f1,ce\n");
        for m in &self.per_sample {
            s.push_str(&format!("{},{:.6},{},{},{}\n", m.id, m.mse, f(m.snr_db), f(m.f1), f(m.ce)));
        }
        s
    }
}

/// Network outputs for every sample, in order.
pub fn predict<T: Real>(net: &Network<T>, samples: &[&Sample]) -> Result<Vec<FeatureMap<T>>> {
    let prepared = prepare::<T>(samples, net.spec())?;
    prepared
        .par_iter()
        .map(|s| Ok(net.forward(std::slice::from_ref(&s.input))?.output()[0].clone()))
        .collect()
}

/// Per-sample and aggregate MSE and SNR; F1 and CE when `segmentation`.
/// Aggregates are means over samples (SNR over the samples where it is defined).
pub fn evaluate<T: Real>(net: &Network<T>, samples: &[&Sample], segmentation: bool) -> Result<Metrics> {
    let outputs = predict(net, samples)?;
    let mut per = Vec::with_capacity(samples.len());
    for (s, y) in samples.iter().zip(&outputs) {
        let y = y.cast::<f64>();
        let (f1, ce) = if segmentation {
            let (f, c) = tasks::f1_and_ce(&y, &target_to_mask(&s.target), 0.0)?;
            (Some(f), Some(c))
        } else {
            (None, None)
        };
        per.push(SampleMetrics {
            id: s.id.clone(),
            mse: tasks::mse(&y, &s.target)?,
            snr_db: tasks::snr_db(&s.target, &y).ok(),
            f1,
            ce,
        });
    }
    if per.is_empty() {
        return Err(Error::Dataset("nothing to evaluate".into()));
    }
    let opt_mean = |f: fn(&SampleMetrics) -> Option<f64>| mean_defined(&per.iter().map(f).collect::<Vec<_>>());
    Ok(Metrics {
        mse: mean(&per.iter().map(|m| m.mse).collect::<Vec<_>>()),
        snr_db: opt_mean(|m| m.snr_db),
        f1: opt_mean(|m| m.f1),
        ce: opt_mean(|m| m.ce),
        per_sample: per,
    })
}
