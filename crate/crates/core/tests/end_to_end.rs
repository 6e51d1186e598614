use selfonn::gradcheck::{check_network, GradCheckConfig};
use selfonn::network::{load_checkpoint, required_input_size, save_checkpoint};
use selfonn::tasks::{generate_dataset, io, GeneratorSpec, TaskKind};
use selfonn::trainer::{evaluate, prepare, train, TrainConfig};
use selfonn::{LayerSpec, NetworkSpec, Sampling};

fn toy_spec(q: usize) -> NetworkSpec {
    let layers = vec![LayerSpec::generative(1, 2, q), LayerSpec::generative(1, 2, q)];
    let (h, w) = required_input_size(&layers, (3, 3)).unwrap();
    NetworkSpec::new(h, w, layers)
}

#[test]
fn single_toy_pair_drops_mse_tenfold() {
    let gen = GeneratorSpec {
        pairs: 1,
        seed: 3,
        ..GeneratorSpec::default()
    };
    let data = generate_dataset(TaskKind::ToyRotate180, &gen).unwrap();
    let samples: Vec<_> = data.samples.iter().collect();
    // at lr 0.01 the drop within 240 iterations is only about 3x
    let out = train::<f64>(&toy_spec(13), &samples, &[], &TrainConfig::new(0.1, 240)).unwrap();
    let run = &out.log.runs[out.log.best_run];
    let first = run.records[0].train_mse;
    assert!(run.best_mse * 10.0 <= first, "{first} -> {}", run.best_mse);
}

#[test]
fn checkpoint_reproduces_metrics_bit_for_bit() {
    let gen = GeneratorSpec {
        images: 6,
        size: 12,
        n_folds: 2,
        train_fraction: 0.5,
        ..GeneratorSpec::default()
    };
    let data = generate_dataset(TaskKind::Segment, &gen).unwrap();
    let layers = vec![
        LayerSpec::generative(2, 3, 3).with_sampling(Sampling::Down(2, 2)),
        LayerSpec::generative(1, 3, 3).with_sampling(Sampling::Up(2, 2)),
    ];
    let (h, w) = required_input_size(&layers, (12, 12)).unwrap();
    let spec = NetworkSpec::new(h, w, layers);
    let fold = &data.folds[0];
    let (tr, te) = (fold.train_samples(&data.samples), fold.test_samples(&data.samples));
    let cfg = TrainConfig {
        runs: 2,
        eval_every: 2,
        ..TrainConfig::new(0.005, 6)
    };
    let out = train::<f64>(&spec, &tr, &te, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    save_checkpoint(&out.best, &path).unwrap();
    let back = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(evaluate(&out.best, &te, true).unwrap(), evaluate(&back, &te, true).unwrap());
    let m = evaluate(&back, &te, true).unwrap();
    assert!(m.f1.is_some() && m.ce.is_some());
}

#[test]
fn exported_corpus_trains_like_the_generated_one() {
    let gen = GeneratorSpec {
        images: 4,
        size: 10,
        n_folds: 2,
        train_fraction: 0.5,
        ..GeneratorSpec::default()
    };
    // synthesis targets survive an 8-bit round trip exactly
    let data = generate_dataset(TaskKind::Synthesize, &gen).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = io::export_dataset(&data, dir.path()).unwrap();
    let (samples, folds) = io::Manifest::read(&manifest).unwrap().load(dir.path()).unwrap();
    assert_eq!(folds.unwrap().len(), 2);
    for (a, b) in samples.iter().zip(&data.samples) {
        assert_eq!(a.target, b.target);
    }
}

#[test]
fn trained_network_still_passes_gradcheck() {
    let data = generate_dataset(TaskKind::ToyRotate180, &GeneratorSpec { pairs: 4, ..GeneratorSpec::default() }).unwrap();
    let samples: Vec<_> = data.samples.iter().collect();
    let out = train::<f64>(&toy_spec(5), &samples, &[], &TrainConfig::new(0.01, 20)).unwrap();
    let p = prepare::<f64>(&samples[..1], out.best.spec()).unwrap();
    let rep = check_network(&out.best, &[p[0].input.clone()], &[p[0].target.clone()], &GradCheckConfig::default()).unwrap();
    assert!(rep.passed(), "{}", rep.params_csv());
}
