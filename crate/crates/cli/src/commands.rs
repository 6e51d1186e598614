use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use selfonn::gradcheck::{check_network, GradCheckConfig, GradCheckReport};
use selfonn::network::{count_macs, count_params, load_checkpoint, save_checkpoint};
use selfonn::tasks::io::{denormalize, write_gray};
use selfonn::tasks::Sample;
use selfonn::trainer::{evaluate, predict, prepare, run_rng, train_logged, Metrics};
use selfonn::{Network, Real};

use crate::config::Run;
use crate::CliError;

fn opt6(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Engine(selfonn::Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    )))
}

fn mkdir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Metrics of the best network on one fold.
#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub train: Metrics,
    pub test: Option<Metrics>,
}

fn write_outputs<T: Real>(dir: &Path, net: &Network<T>, samples: &[&Sample]) -> Result<(), CliError> {
    if samples.is_empty() {
        return Ok(());
    }
    mkdir(dir)?;
    for (s, y) in samples.iter().zip(predict(net, samples)?) {
        write_gray(&dir.join(format!("{}.png", s.id)), &denormalize(&y.cast()))?;
    }
    Ok(())
}

fn metric_line(m: &Metrics) -> String {
    match (m.f1, m.ce) {
        (Some(f1), Some(ce)) => format!("mse {:.6} f1 {f1:.6} ce {ce:.6}", m.mse),
        _ => format!("mse {:.6} snr {} dB", m.mse, opt6(m.snr_db)),
    }
}

fn train_fold<T: Real>(run: &Run, fold: usize, dir: &Path) -> Result<FoldResult, CliError> {
    let f = run.fold(fold);
    let train = f.train_samples(&run.dataset.samples);
    let test = f.test_samples(&run.dataset.samples);
    mkdir(dir)?;
    let (log, best) = train_logged::<T>(&run.spec, &train, &test, &run.training)?;
    log.write_csv(&dir.join("train_log.csv"))?;
    let Some(net) = best else {
        let why = log.runs.iter().filter_map(|r| r.diverged.clone()).collect::<Vec<_>>().join("; ");
        return Err(CliError::Diverged(format!(
            "fold {fold}: every run diverged ({why}); log kept in {}",
            dir.display()
        )));
    };
    save_checkpoint(&net, &dir.join("checkpoint.json"))?;
    let seg = run.task.is_segmentation();
    let train_m = evaluate(&net, &train, seg)?;
    write(&dir.join("metrics_train.csv"), &train_m.to_csv())?;
    write_outputs(&dir.join("outputs").join("train"), &net, &train)?;
    let test_m = if test.is_empty() {
        None
    } else {
        let m = evaluate(&net, &test, seg)?;
        write(&dir.join("metrics_test.csv"), &m.to_csv())?;
        write_outputs(&dir.join("outputs").join("test"), &net, &test)?;
        Some(m)
    };
    Ok(FoldResult {
        fold,
        train: train_m,
        test: test_m,
    })
}

fn summary_csv(results: &[FoldResult]) -> String {
    let mut s = String::from("fold,train_mse,train_snr_db,train_f1,train_ce,test_mse,test_snr_db,test_f1,test_ce\n");
    for r in results {
        let t = r.test.as_ref();
        writeln!(
            s,
            "{},{:.6},{},{},{},{},{},{},{}",
            r.fold,
            r.train.mse,
            opt6(r.train.snr_db),
            opt6(r.train.f1),
            opt6(r.train.ce),
            opt6(t.map(|m| m.mse)),
            opt6(t.and_then(|m| m.snr_db)),
            opt6(t.and_then(|m| m.f1)),
            opt6(t.and_then(|m| m.ce)),
        )
        .unwrap();
    }
    s
}

fn train_into<T: Real>(run: &Run, out: &Path) -> Result<Vec<FoldResult>, CliError> {
    mkdir(out)?;
    let mut results = Vec::new();
    for &fold in &run.folds {
        let r = train_fold::<T>(run, fold, &out.join(format!("fold{fold:02}")))?;
        let test = r.test.as_ref().map(|m| format!(" | test {}", metric_line(m))).unwrap_or_default();
        println!("{} fold {fold}: train {}{test}", run.name, metric_line(&r.train));
        results.push(r);
        write(&out.join("summary.csv"), &summary_csv(&results))?;
    }
    Ok(results)
}

/// Trains every selected fold, writing logs, checkpoints, metrics and
/// output images under the run's output directory.
pub fn train(run: &Run, f32: bool) -> Result<Vec<FoldResult>, CliError> {
    if f32 {
        train_into::<f32>(run, &run.output_dir)
    } else {
        train_into::<f64>(run, &run.output_dir)
    }
}

fn eval_impl<T: Real>(run: &Run, checkpoint: &Path) -> Result<Metrics, CliError> {
    let net = load_checkpoint::<T>(checkpoint)
        .map_err(|e| CliError::Config(format!("{}: {e}", checkpoint.display())))?;
    let shape = run.dataset.sample_shape().unwrap();
    let out = net.spec().output_shape()?;
    if out != shape {
        return Err(CliError::Config(format!(
            "{}: network output is {}x{} but samples are {}x{}",
            checkpoint.display(),
            out.0,
            out.1,
            shape.0,
            shape.1
        )));
    }
    let samples: Vec<&Sample> = run.dataset.samples.iter().collect();
    let m = evaluate(&net, &samples, run.task.is_segmentation())?;
    let dir = run.output_dir.join("eval");
    mkdir(&dir)?;
    write(&dir.join("metrics.csv"), &m.to_csv())?;
    write_outputs(&dir.join("outputs"), &net, &samples)?;
    println!("{} eval: {}", run.name, metric_line(&m));
    Ok(m)
}

/// Evaluates a checkpoint on every sample of the configured dataset.
pub fn eval(run: &Run, checkpoint: &Path, f32: bool) -> Result<Metrics, CliError> {
    if f32 {
        eval_impl::<f32>(run, checkpoint)
    } else {
        eval_impl::<f64>(run, checkpoint)
    }
}

/// Finite-difference check of the freshly initialized network of run 0 on
/// the first `samples` training samples of the first selected fold.
pub fn gradcheck(run: &Run, samples: usize, corrupt: bool) -> Result<(GradCheckReport, PathBuf), CliError> {
    if samples == 0 {
        return Err(CliError::Config("--samples must be >= 1".into()));
    }
    let mut rng = run_rng(run.training.seed, 0);
    let net = Network::<f64>::init_with_rng(run.spec.clone(), &mut rng, run.training.init)?;
    let fold = run.fold(run.folds[0]);
    let chosen: Vec<&Sample> = fold.train_samples(&run.dataset.samples).into_iter().take(samples).collect();
    let prepared = prepare::<f64>(&chosen, &run.spec)?;
    let cfg = GradCheckConfig {
        corrupt,
        ..GradCheckConfig::default()
    };
    let mut report = GradCheckReport::default();
    for p in &prepared {
        report.merge(check_network(&net, std::slice::from_ref(&p.input), std::slice::from_ref(&p.target), &cfg)?);
    }
    mkdir(&run.output_dir)?;
    let csv = run.output_dir.join("gradcheck.csv");
    write(&csv, &report.params_csv())?;
    write(&run.output_dir.join("gradcheck_dy.csv"), &report.delta_y_csv())?;
    for (l, e) in report.max_rel_per_layer(run.spec.layers.len()).iter().enumerate() {
        println!("layer {}: max relative error {e:.3e}", l + 1);
    }
    println!(
        "{} parameter and {} delta checks, {} delta entries skipped at the domain edge",
        report.params.len(),
        report.delta_y.len(),
        report.skipped
    );
    if report.passed() {
        println!("all entries within rel 1e-5 or abs 1e-8");
        Ok((report, csv))
    } else {
        Err(CliError::Check(format!(
            "{} entries exceed tolerance; report: {}",
            report.failures(),
            csv.display()
        )))
    }
}

fn scaled(v: u64, unit: f64) -> String {
    format!("{:.3}", v as f64 / unit)
}

/// Per-layer and total parameter and MAC table.
pub fn cost_table(run: &Run) -> Result<String, CliError> {
    let layers = count_macs(&run.spec)?;
    let params = count_params(&run.spec)?;
    let shapes = run.spec.shapes()?;
    let mut s = String::new();
    writeln!(
        s,
        "{:<6} {:>8} {:>4} {:>10} {:>12} {:>12} {:>16}",
        "layer", "neurons", "Q", "output", "params (k)", "MACs (M)", "MACs"
    )
    .unwrap();
    for (l, (c, spec)) in layers.iter().zip(&run.spec.layers).enumerate() {
        let (h, w) = shapes[l].output;
        writeln!(
            s,
            "{:<6} {:>8} {:>4} {:>10} {:>12} {:>12} {:>16}",
            l + 1,
            spec.neurons,
            spec.q_order,
            format!("{h}x{w}"),
            scaled(c.params, 1e3),
            scaled(c.macs, 1e6),
            c.macs
        )
        .unwrap();
    }
    let total: u64 = layers.iter().map(|c| c.macs).sum();
    writeln!(
        s,
        "{:<6} {:>8} {:>4} {:>10} {:>12} {:>12} {:>16}",
        "total",
        "",
        "",
        "",
        scaled(params, 1e3),
        scaled(total, 1e6),
        total
    )
    .unwrap();
    writeln!(s, "{params} params, {total} MACs").unwrap();
    Ok(s)
}

/// Trains each config on the shared folds and tabulates the best results.
pub fn compare(runs: &[Run], f32: bool) -> Result<String, CliError> {
    if runs.len() < 2 {
        return Err(CliError::Config("compare needs at least two configs".into()));
    }
    let first = &runs[0];
    for r in &runs[1..] {
        let same_folds = r.folds == first.folds
            && r.folds.iter().all(|&f| {
                let (a, b) = (r.fold(f), first.fold(f));
                a.train == b.train && a.test == b.test
            });
        if r.dataset.samples != first.dataset.samples || !same_folds {
            return Err(CliError::Config(format!(
                "{}: dataset or folds differ from {}",
                r.path.display(),
                first.path.display()
            )));
        }
        if r.task.is_segmentation() != first.task.is_segmentation() {
            return Err(CliError::Config(format!("{}: task differs", r.path.display())));
        }
    }
    let mut names: Vec<String> = Vec::new();
    for r in runs {
        let mut n = r.name.clone();
        let mut k = 2;
        while names.contains(&n) {
            n = format!("{}_{k}", r.name);
            k += 1;
        }
        names.push(n);
    }
    let seg = first.task.is_segmentation();
    let out = first.output_dir.clone();
    let mut rows: Vec<(usize, usize, u64, FoldResult)> = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let params = count_params(&r.spec)?;
        println!("model {}: {params} params", names[i]);
        let dir = out.join(&names[i]);
        let res = if f32 {
            train_into::<f32>(r, &dir)?
        } else {
            train_into::<f64>(r, &dir)?
        };
        rows.extend(res.into_iter().map(|fr| (fr.fold, i, params, fr)));
    }
    rows.sort_by_key(|(fold, i, ..)| (*fold, *i));
    let mut csv = if seg {
        String::from("fold,model,params,train_mse,f1,ce,test_f1,test_ce\n")
    } else {
        String::from("fold,model,params,train_mse,best_snr_db,test_mse,test_snr_db\n")
    };
    for (fold, i, params, fr) in &rows {
        let t = fr.test.as_ref();
        if seg {
            writeln!(
                csv,
                "{fold},{},{params},{:.6},{},{},{},{}",
                names[*i],
                fr.train.mse,
                opt6(fr.train.f1),
                opt6(fr.train.ce),
                opt6(t.and_then(|m| m.f1)),
                opt6(t.and_then(|m| m.ce))
            )
            .unwrap();
        } else {
            writeln!(
                csv,
                "{fold},{},{params},{:.6},{},{},{}",
                names[*i],
                fr.train.mse,
                opt6(fr.train.snr_db),
                opt6(t.map(|m| m.mse)),
                opt6(t.and_then(|m| m.snr_db))
            )
            .unwrap();
        }
    }
    write(&out.join("compare.csv"), &csv)?;
    Ok(csv)
}
