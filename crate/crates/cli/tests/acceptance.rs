//! Acceptance gate: one pass/fail line per criterion, nonzero exit if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selfonn::backprop::{
    backprop_inter_generic, backprop_inter_selfonn, backward, weight_bias_sensitivities,
};
use selfonn::gradcheck::{check_network, random_case, verification_cases, GradCheckConfig};
use selfonn::network::{
    count_macs, count_params, forward_generic_layer, forward_selfonn_layer, required_input_size, InitRule,
    OpCounter,
};
use selfonn::operators::{Activation, Nodal, OperatorSet, Pool};
use selfonn::tasks::{
    add_gwn_at_snr, f1_and_ce, generate_dataset, snr_db, Confusion, GeneratorSpec, TaskKind, SNR_SENTINEL_DB,
};
use selfonn::trainer::{evaluate, sgd_step, train, TrainConfig};
use selfonn::{FeatureMap, LayerSpec, Network, NetworkSpec, Path as Route, Sampling};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn maps_diff(a: &[FeatureMap], b: &[FeatureMap]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| max_diff(x.data(), y.data())).fold(0.0, f64::max)
}

fn rand_map(rng: &mut ChaCha8Rng, h: usize, w: usize, a: f64) -> FeatureMap {
    FeatureMap::from_fn(h, w, |_, _| rng.random_range(-a..a))
}

// 1

fn gradient_oracle() -> Outcome {
    let t0 = Instant::now();
    let cfg = GradCheckConfig::default();
    let (mut nets, mut checks, mut failures, mut worst, mut worst_abs) = (0, 0, 0, 0.0f64, 0.0f64);
    let mut largest = 0;
    let mut worst_sig = 0.0f64;
    for seed in 0..2u64 {
        for (i, case) in verification_cases().iter().enumerate() {
            let (net, x, t) = match random_case(case, 1000 * seed + i as u64, cfg.kink_margin) {
                Ok(v) => v,
                Err(e) => return outcome(false, format!("{case:?}: {e}")),
            };
            largest = largest.max(net.spec().input_height.max(net.spec().input_width));
            let rep = match check_network(&net, &x, &t, &cfg) {
                Ok(r) => r,
                Err(e) => return outcome(false, format!("{case:?}: {e}")),
            };
            nets += 1;
            checks += rep.params.len() + rep.delta_y.len();
            failures += rep.failures();
            for (a, n, rel) in rep
                .params
                .iter()
                .map(|p| (p.analytic, p.numeric, p.rel_err))
                .chain(rep.delta_y.iter().map(|d| (d.analytic, d.numeric, d.rel_err)))
            {
                worst = worst.max(rel);
                if a.abs().max(n.abs()) > 1e-6 {
                    worst_sig = worst_sig.max(rel);
                }
                worst_abs = worst_abs.max((a - n).abs());
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        nets >= 50 && failures == 0 && largest <= 12 && secs <= 300.0,
        format!(
            "{nets} nets, {checks} entries, {failures} failures, max rel err {worst:.2e} ({worst_sig:.2e} where |grad| > 1e-6), max abs err {worst_abs:.2e}, maps <= {largest}x{largest}, {secs:.1} s"
        ),
    )
}

// 2: an independent plain convolutional network

struct CnnLayer {
    n_out: usize,
    n_in: usize,
    k: usize,
    sampling: Sampling,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl CnnLayer {
    fn w(&self, o: usize, i: usize, r: usize, t: usize) -> f64 {
        self.w[((o * self.n_in + i) * self.k + r) * self.k + t]
    }
}

struct CnnState {
    /// Per layer: inputs, pre-activations and outputs.
    ys: Vec<Vec<FeatureMap>>,
    xs: Vec<Vec<FeatureMap>>,
}

fn cnn_forward(layers: &[CnnLayer], input: &FeatureMap) -> CnnState {
    let mut ys = vec![vec![input.clone()]];
    let mut xs = Vec::new();
    for l in layers {
        let y = ys.last().unwrap();
        let (ih, iw) = y[0].shape();
        let (ch, cw) = (ih - l.k + 1, iw - l.k + 1);
        let mut x_l = Vec::new();
        let mut y_l = Vec::new();
        for o in 0..l.n_out {
            let x = FeatureMap::from_fn(ch, cw, |m, n| {
                let mut s = l.b[o];
                for (i, yi) in y.iter().enumerate() {
                    for r in 0..l.k {
                        for t in 0..l.k {
                            s += l.w(o, i, r, t) * yi.get(m + r, n + t);
                        }
                    }
                }
                s
            });
            let a = x.map(f64::tanh);
            let out = match l.sampling {
                Sampling::None => a,
                Sampling::Down(sx, sy) => FeatureMap::from_fn(ch / sx, cw / sy, |m, n| {
                    let mut s = 0.0;
                    for p in 0..sx {
                        for q in 0..sy {
                            s += a.get(m * sx + p, n * sy + q);
                        }
                    }
                    s / (sx * sy) as f64
                }),
                Sampling::Up(ux, uy) => FeatureMap::from_fn(ch * ux, cw * uy, |m, n| a.get(m / ux, n / uy)),
            };
            x_l.push(x);
            y_l.push(out);
        }
        xs.push(x_l);
        ys.push(y_l);
    }
    CnnState { ys, xs }
}

struct CnnGrads {
    deltas: Vec<Vec<FeatureMap>>,
    dw: Vec<Vec<f64>>,
    db: Vec<Vec<f64>>,
}

fn cnn_backward(layers: &[CnnLayer], st: &CnnState, target: &FeatureMap) -> CnnGrads {
    let nl = layers.len();
    let out = &st.ys[nl][0];
    let scale = 2.0 / out.len() as f64;
    let mut dy = vec![out.zip_map(target, |y, t| scale * (y - t)).unwrap()];
    let mut deltas = vec![Vec::new(); nl];
    let mut dw = vec![Vec::new(); nl];
    let mut db = vec![Vec::new(); nl];
    for li in (0..nl).rev() {
        let l = &layers[li];
        let x = &st.xs[li];
        let y_in = &st.ys[li];
        let delta: Vec<FeatureMap> = (0..l.n_out)
            .map(|o| {
                let (ch, cw) = x[o].shape();
                FeatureMap::from_fn(ch, cw, |m, n| {
                    let g = match l.sampling {
                        Sampling::None => dy[o].get(m, n),
                        Sampling::Down(sx, sy) => dy[o].get(m / sx, n / sy) / (sx * sy) as f64,
                        Sampling::Up(ux, uy) => {
                            let mut s = 0.0;
                            for p in 0..ux {
                                for q in 0..uy {
                                    s += dy[o].get(m * ux + p, n * uy + q);
                                }
                            }
                            s
                        }
                    };
                    g * (1.0 - x[o].get(m, n).tanh().powi(2))
                })
            })
            .collect();
        let mut w = vec![0.0; l.w.len()];
        for o in 0..l.n_out {
            let (ch, cw) = delta[o].shape();
            for i in 0..l.n_in {
                for r in 0..l.k {
                    for t in 0..l.k {
                        let mut s = 0.0;
                        for m in 0..ch {
                            for n in 0..cw {
                                s += delta[o].get(m, n) * y_in[i].get(m + r, n + t);
                            }
                        }
                        w[((o * l.n_in + i) * l.k + r) * l.k + t] = s;
                    }
                }
            }
        }
        dw[li] = w;
        db[li] = delta.iter().map(|d| d.data().iter().sum()).collect();
        let (ih, iw) = y_in[0].shape();
        dy = (0..l.n_in)
            .map(|i| {
                FeatureMap::from_fn(ih, iw, |p, q| {
                    let mut s = 0.0;
                    for (o, d) in delta.iter().enumerate() {
                        for r in 0..l.k {
                            for t in 0..l.k {
                                if p >= r && q >= t && p - r < d.height() && q - t < d.width() {
                                    s += d.get(p - r, q - t) * l.w(o, i, r, t);
                                }
                            }
                        }
                    }
                    s
                })
            })
            .collect();
        deltas[li] = delta;
    }
    CnnGrads { deltas, dw, db }
}

fn cnn_superset() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let lr = 0.05;
    let mut nets = 0;
    for case in 0..40 {
        // first half sum/tanh/mul, second half sum/tanh/maclaurin with Q = 1
        let ops = if case < 20 {
            OperatorSet::convolutional()
        } else {
            OperatorSet::generative()
        };
        let k = rng.random_range(1..=3);
        let sampled = rng.random_bool(0.5);
        let n1 = rng.random_range(1..=3);
        let n2 = rng.random_range(1..=3);
        let mk = |n: usize| LayerSpec {
            neurons: n,
            kernel: (k, k),
            q_order: 1,
            operators: ops,
            sampling: Sampling::None,
            bias: true,
        };
        let layers = if sampled {
            vec![
                mk(n1).with_sampling(Sampling::Down(2, 2)),
                mk(n2).with_sampling(Sampling::Up(2, 2)),
                mk(1),
            ]
        } else {
            vec![mk(n1), mk(n2), mk(1)]
        };
        let out_side = rng.random_range(3..=6);
        let Some((h, w)) = (out_side..out_side + 4).find_map(|o| required_input_size(&layers, (o, o))) else {
            return outcome(false, "no input size");
        };
        let spec = NetworkSpec::new(h, w, layers);
        let mut net = Network::init(spec.clone(), case, InitRule::Uniform(0.5)).unwrap();
        for p in net.params_mut() {
            for b in p.biases.iter_mut() {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        let reference: Vec<CnnLayer> = spec
            .layers
            .iter()
            .enumerate()
            .map(|(l, ls)| CnnLayer {
                n_out: ls.neurons,
                n_in: spec.input_count(l),
                k,
                sampling: ls.sampling,
                w: net.params()[l].weights.clone(),
                b: net.params()[l].biases.clone(),
            })
            .collect();
        let input = rand_map(&mut rng, h, w, 1.0);
        let out = spec.output_shape().unwrap();
        let target = rand_map(&mut rng, out.0, out.1, 0.9);

        let st = cnn_forward(&reference, &input);
        let cache = net.forward(std::slice::from_ref(&input)).unwrap();
        worst = worst.max(maps_diff(cache.output(), &st.ys[spec.layers.len()]));
        let bp = backward(&net, &cache, std::slice::from_ref(&target)).unwrap();
        let g = cnn_backward(&reference, &st, &target);
        for l in 0..spec.layers.len() {
            worst = worst.max(maps_diff(&bp.deltas[l], &g.deltas[l]));
            worst = worst.max(max_diff(&bp.grads.layers[l].weight_grads, &g.dw[l]));
            worst = worst.max(max_diff(&bp.grads.layers[l].bias_grads, &g.db[l]));
        }
        sgd_step(&mut net, &bp.grads, lr).unwrap();
        for (l, layer) in reference.iter().enumerate() {
            let w: Vec<f64> = layer.w.iter().zip(&g.dw[l]).map(|(w, d)| w - lr * d).collect();
            let b: Vec<f64> = layer.b.iter().zip(&g.db[l]).map(|(b, d)| b - lr * d).collect();
            worst = worst.max(max_diff(&net.params()[l].weights, &w));
            worst = worst.max(max_diff(&net.params()[l].biases, &b));
        }
        nets += 1;
    }
    outcome(
        worst <= 1e-12,
        format!("{nets} nets (20 mul, 20 Q=1 maclaurin), max deviation {worst:.2e} over outputs, deltas, gradients, updated weights"),
    )
}

// 3

fn fast_generic_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    let mut configs = 0;
    for seed in 0..2u64 {
        for (i, case) in verification_cases()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.operators == OperatorSet::generative())
        {
            let (net, x, t) = random_case(case, 7000 + 100 * seed + i as u64, 0.0).unwrap();
            let cache = net.forward_with(&x, Route::Auto, None).unwrap();
            let bp = backward(&net, &cache, &t).unwrap();
            for (l, spec) in net.spec().layers.iter().enumerate() {
                let lc = &cache.layers[l];
                let params = &net.params()[l];
                let shape = net.shapes()[l];
                let (fast, _) = forward_selfonn_layer(&lc.powers, spec, params, shape).unwrap();
                let (slow, _) = forward_generic_layer(&lc.powers, spec, params, shape).unwrap();
                worst = worst.max(maps_diff(&fast, &slow));
                let delta = &bp.deltas[l];
                let a = weight_bias_sensitivities(delta, &lc.powers, params, spec, true).unwrap();
                let b = weight_bias_sensitivities(delta, &lc.powers, params, spec, false).unwrap();
                worst = worst.max(max_diff(&a.weight_grads, &b.weight_grads));
                worst = worst.max(max_diff(&a.bias_grads, &b.bias_grads));
                if l > 0 {
                    let ys: Vec<FeatureMap> = lc.powers.iter().map(|p| p[0].clone()).collect();
                    let fa = backprop_inter_selfonn(delta, &lc.powers, params, spec).unwrap();
                    let fb = backprop_inter_generic(delta, &ys, params, spec).unwrap();
                    worst = worst.max(maps_diff(&fa, &fb));
                }
            }
            let gcache = net.forward_with(&x, Route::Generic, None).unwrap();
            worst = worst.max(maps_diff(cache.output(), gcache.output()));
            let gbp = backward(&net, &gcache, &t).unwrap();
            for (a, b) in bp.grads.layers.iter().zip(&gbp.grads.layers) {
                worst = worst.max(max_diff(&a.weight_grads, &b.weight_grads));
                worst = worst.max(max_diff(&a.bias_grads, &b.bias_grads));
            }
            configs += 1;
        }
    }
    outcome(
        worst <= 1e-12,
        format!("{configs} sum/maclaurin configs, max deviation {worst:.2e} (forward, inter-layer BP, sensitivities)"),
    )
}

// 4

fn toy_rotate() -> Outcome {
    let t0 = Instant::now();
    let gen = GeneratorSpec {
        pairs: 64,
        toy_size: 3,
        seed: 1,
        ..GeneratorSpec::default()
    };
    let data = generate_dataset(TaskKind::ToyRotate180, &gen).unwrap();
    let samples: Vec<_> = data.samples.iter().collect();
    let cfg = TrainConfig {
        seed: 1,
        ..TrainConfig::new(0.01, 240)
    };
    let mut mse = Vec::new();
    for q in [13, 1] {
        let layers = vec![LayerSpec::generative(1, 2, q), LayerSpec::generative(1, 2, q)];
        let (h, w) = required_input_size(&layers, (3, 3)).unwrap();
        let spec = NetworkSpec::new(h, w, layers);
        match train::<f64>(&spec, &samples, &[], &cfg) {
            Ok(o) => mse.push(evaluate(&o.best, &samples, false).unwrap().mse),
            Err(e) => return outcome(false, format!("Q={q}: {e}")),
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let ratio = mse[0] / mse[1];
    outcome(
        ratio <= 0.1 && secs <= 120.0,
        format!(
            "64 pairs, lr 0.01, 240 iterations: Q=13 MSE {:.6}, Q=1 MSE {:.6}, ratio {ratio:.4} (need <= 0.1), {secs:.1} s",
            mse[0], mse[1]
        ),
    )
}

// 5

fn denoise_direction() -> Outcome {
    let t0 = Instant::now();
    let data = generate_dataset(TaskKind::Denoise { snr_db: 0.0 }, &GeneratorSpec::default()).unwrap();
    let cfg = TrainConfig::new(0.005, 240);
    let selfonn = vec![
        LayerSpec::generative(6, 3, 7).with_sampling(Sampling::Down(2, 2)),
        LayerSpec::generative(10, 3, 7).with_sampling(Sampling::Up(2, 2)),
        LayerSpec::generative(1, 3, 7),
    ];
    let cnn = vec![
        LayerSpec::convolutional(16, 3).with_sampling(Sampling::Down(2, 2)),
        LayerSpec::convolutional(32, 3).with_sampling(Sampling::Up(2, 2)),
        LayerSpec::convolutional(1, 3),
    ];
    let mut means = Vec::new();
    let mut per_fold = Vec::new();
    for layers in [selfonn, cnn] {
        let (h, w) = required_input_size(&layers, (60, 60)).unwrap();
        let spec = NetworkSpec::new(h, w, layers);
        let mut snrs = Vec::new();
        for fold in &data.folds[..3] {
            let tr = fold.train_samples(&data.samples);
            match train::<f64>(&spec, &tr, &[], &cfg) {
                Ok(o) => snrs.push(evaluate(&o.best, &tr, false).unwrap().snr_db.unwrap()),
                Err(e) => return outcome(false, format!("{e}")),
            }
        }
        means.push(snrs.iter().sum::<f64>() / snrs.len() as f64);
        per_fold.push(snrs);
    }
    let secs = t0.elapsed().as_secs_f64();
    let gain = means[0] - means[1];
    let f = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/");
    outcome(
        gain >= 0.3 && secs <= 1800.0,
        format!(
            "mean train SNR Self-ONN {:.3} dB ({}) vs CNN {:.3} dB ({}), gain {gain:.3} dB (need >= 0.3), {secs:.0} s",
            means[0],
            f(&per_fold[0]),
            means[1],
            f(&per_fold[1])
        ),
    )
}

// 6

fn cost_counter() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sets = [
        OperatorSet::generative(),
        OperatorSet::convolutional(),
        OperatorSet::new(Pool::Median, Activation::Tanh, Nodal::Mul),
        OperatorSet::new(Pool::Sum, Activation::LinCut, Nodal::Sin),
    ];
    let mut bad = Vec::new();
    for c in 0..10 {
        let nl = rng.random_range(1..=3);
        let layers: Vec<LayerSpec> = (0..nl)
            .map(|l| {
                let ops = sets[rng.random_range(0..sets.len())];
                let q = if ops.nodal == Nodal::Maclaurin { rng.random_range(1..=5) } else { 1 };
                let k = rng.random_range(1..=3);
                let sampling = match (l, rng.random_range(0..3)) {
                    (0, 1) => Sampling::Down(2, 2),
                    (_, 2) if l + 1 < nl => Sampling::Up(2, 2),
                    _ => Sampling::None,
                };
                LayerSpec {
                    neurons: if l + 1 == nl { 1 } else { rng.random_range(1..=3) },
                    kernel: (k, k),
                    q_order: q,
                    operators: ops,
                    sampling,
                    bias: rng.random_bool(0.8),
                }
            })
            .collect();
        let Some((h, w)) = (4..8).find_map(|o| required_input_size(&layers, (o, o))) else {
            bad.push(format!("config {c}: no input size"));
            continue;
        };
        let spec = NetworkSpec::new(h, w, layers);
        let net = Network::init(spec.clone(), c, InitRule::Uniform(0.3)).unwrap();
        let x = vec![rand_map(&mut rng, h, w, 0.9)];
        let predicted: u64 = count_macs(&spec).unwrap().iter().map(|l| l.macs).sum();
        for route in [Route::Auto, Route::Generic] {
            let mut counter = OpCounter::default();
            net.forward_with(&x, route, Some(&mut counter)).unwrap();
            if counter.total != predicted {
                bad.push(format!("config {c} {route:?}: counted {} vs formula {predicted}", counter.total));
            }
        }
        let enumerated = net.enumerate_params().count() as u64;
        if enumerated != count_params(&spec).unwrap() {
            bad.push(format!("config {c}: {enumerated} enumerated params"));
        }
    }
    // Q = 1 reduces to N_l (N_{l-1} k^2 + 1) and |Y_l| (N_{l-1} k^2 + 1)
    let spec = NetworkSpec::new(
        12,
        12,
        vec![LayerSpec::convolutional(4, 3), LayerSpec::convolutional(5, 2), LayerSpec::convolutional(1, 3)],
    );
    let cnn_params = 4 * (9 + 1) + 5 * (4 * 4 + 1) + (5 * 9 + 1);
    let cnn_macs = 4 * 10 * 10 * (9 + 1) + 5 * 9 * 9 * (4 * 4 + 1) + 7 * 7 * (5 * 9 + 1);
    let macs: u64 = count_macs(&spec).unwrap().iter().map(|l| l.macs).sum();
    if count_params(&spec).unwrap() != cnn_params || macs != cnn_macs {
        bad.push("Q=1 does not match the CNN formulas".into());
    }
    let single = NetworkSpec::new(1, 1, vec![LayerSpec::convolutional(1, 1)]);
    if count_macs(&single).unwrap()[0].macs != 2 {
        bad.push("1x1 single layer is not 2 MACs".into());
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            "10 random configs equal on both routes; Q=1 matches CNN formulas; 1x1 layer = 2 MACs".to_string()
        } else {
            bad.join("; ")
        },
    )
}

// 7

fn metric_suite() -> Outcome {
    let mut bad = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let r = rand_map(&mut rng, 20, 20, 1.0);
    if snr_db(&r, &r).unwrap() != SNR_SENTINEL_DB {
        bad.push("identical maps do not give the sentinel".to_string());
    }
    // equal-power error: output 0 leaves the error equal to the signal
    if snr_db(&r, &FeatureMap::zeros(20, 20)).unwrap().abs() > 1e-12 {
        bad.push("equal power is not 0 dB".into());
    }
    let sig = FeatureMap::from_fn(2, 2, |m, _| if m == 0 { 2.0 } else { -2.0 });
    let out = FeatureMap::from_fn(2, 2, |m, n| sig.get(m, n) - if n == 0 { 1.0 } else { -1.0 });
    if (snr_db(&sig, &out).unwrap() - 10.0 * 4f64.log10()).abs() > 1e-12 {
        bad.push("4:1 variance ratio".into());
    }
    if snr_db(&FeatureMap::filled(3, 3, 0.5), &rand_map(&mut rng, 3, 3, 1.0)).is_ok() {
        bad.push("constant reference accepted".into());
    }
    let mut scale_dev = 0.0f64;
    for _ in 0..200 {
        let a = rand_map(&mut rng, 8, 8, 1.0);
        let b = rand_map(&mut rng, 8, 8, 1.0);
        let c = rng.random_range(0.01..50.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let s1 = snr_db(&a, &b).unwrap();
        let s2 = snr_db(&a.map(|v| v * c), &b.map(|v| v * c)).unwrap();
        scale_dev = scale_dev.max((s1 - s2).abs());
    }
    if scale_dev > 1e-12 {
        bad.push(format!("scale invariance {scale_dev:.2e}"));
    }
    let clean = rand_map(&mut rng, 60, 60, 1.0);
    let mut calib = 0.0f64;
    for seed in 0..100 {
        let noisy = add_gwn_at_snr(&clean, 0.0, seed).unwrap();
        calib = calib.max(snr_db(&clean, &noisy).unwrap().abs());
    }
    if calib > 0.2 {
        bad.push(format!("calibration off by {calib:.3} dB"));
    }
    let mask = FeatureMap::new(2, 4, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let pred = FeatureMap::new(2, 4, vec![1.0, 1.0, -1.0, 1.0, -1.0, -1.0, -1.0, -1.0]).unwrap();
    let (f1, ce) = f1_and_ce(&pred, &mask, 0.0).unwrap();
    if (f1 - 2.0 / 3.0).abs() > 1e-15 || ce != 0.25 {
        bad.push(format!("TP2 FP1 FN1 case gave f1 {f1} ce {ce}"));
    }
    let perfect = mask.map(|v| v - 0.5);
    if f1_and_ce(&perfect, &mask, 0.0).unwrap() != (1.0, 0.0) {
        bad.push("perfect prediction".into());
    }
    if f1_and_ce(&perfect.map(|v| -v), &mask, 0.0).unwrap() != (0.0, 1.0) {
        bad.push("inverted prediction".into());
    }
    let c = Confusion {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 4,
    };
    if c.f1() != 1.0 || c.ce() != 0.0 {
        bad.push("empty mask".into());
    }
    if f1_and_ce(&pred, &FeatureMap::filled(2, 4, 0.5), 0.0).is_ok() {
        bad.push("non-binary mask accepted".into());
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("SNR cases, scale invariance (max dev {scale_dev:.1e}), GWN calibration (max |SNR| {calib:.3} dB over 100 seeds), F1/CE cases")
        } else {
            bad.join("; ")
        },
    )
}

// 8

fn selfonn(args: &[&str], threads: usize, out: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_selfonn"))
        .args(args)
        .env("SELFONN_THREADS", threads.to_string())
        .env("SELFONN_OUT", out)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)))
    }
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|s| s.to_str()), Some("csv" | "json")) {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn numbers(text: &str) -> Vec<f64> {
    text.split(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
        .filter_map(|t| t.parse::<f64>().ok())
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    };
    let toy = write(
        "toy.json",
        r#"{"network": {"layers": [{"neurons": 1, "kernel": [2, 2], "q_order": 13},
                                    {"neurons": 1, "kernel": [2, 2], "q_order": 13}]},
            "training": {"learning_rate": 0.01, "max_iter": 40, "runs": 3, "seed": 5},
            "task": "toy_rotate180",
            "dataset": {"generator": {"pairs": 16, "seed": 5}},
            "output_dir": "unused"}"#,
    );
    let den = write(
        "den.json",
        r#"{"network": {"layers": [{"neurons": 3, "kernel": [3, 3], "q_order": 3, "sampling": {"down": [2, 2]}},
                                    {"neurons": 2, "kernel": [3, 3], "q_order": 3, "sampling": {"up": [2, 2]}},
                                    {"neurons": 1, "kernel": [3, 3], "q_order": 3}]},
            "training": {"learning_rate": 0.005, "max_iter": 12, "runs": 2, "eval_every": 3,
                         "batch_mode": {"fixed_size": 2}},
            "task": {"denoise": {"snr_db": 0.0}},
            "dataset": {"generator": {"images": 12, "size": 16, "n_folds": 2, "train_fraction": 0.5}},
            "folds": [0, 1],
            "output_dir": "unused"}"#,
    );
    let (toy, den) = (toy.to_str().unwrap(), den.to_str().unwrap());
    let commands: Vec<Vec<&str>> = vec![
        vec!["train", toy],
        vec!["train", den],
        vec!["compare", toy, toy],
        vec!["gradcheck", den],
    ];
    let mut compared = 0;
    for (c, args) in commands.iter().enumerate() {
        let run = |tag: &str, threads: usize| -> Result<PathBuf, String> {
            let out = dir.path().join(format!("c{c}_{tag}"));
            selfonn(args, threads, &out)?;
            Ok(out)
        };
        let (a, b, m) = match (run("a", 1), run("b", 1), run("m", 3)) {
            (Ok(a), Ok(b), Ok(m)) => (a, b, m),
            (Err(e), ..) | (_, Err(e), _) | (.., Err(e)) => return outcome(false, e),
        };
        let names = files(&a);
        if names.is_empty() || names != files(&b) || names != files(&m) {
            return outcome(false, format!("{args:?}: artifact sets differ"));
        }
        for n in &names {
            let (ta, tb, tm) = (
                std::fs::read(a.join(n)).unwrap(),
                std::fs::read(b.join(n)).unwrap(),
                std::fs::read_to_string(m.join(n)).unwrap(),
            );
            if ta != tb {
                return outcome(false, format!("{args:?}: {} differs between identical runs", n.display()));
            }
            let (na, nm) = (numbers(&String::from_utf8_lossy(&ta)), numbers(&tm));
            if na.len() != nm.len() || max_diff(&na, &nm) > 1e-12 {
                return outcome(false, format!("{args:?}: {} differs at 3 threads", n.display()));
            }
            compared += 1;
        }
    }
    outcome(
        true,
        format!("train/compare/gradcheck: {compared} CSV and checkpoint files byte-identical at 1 thread, within 1e-12 at 3 threads"),
    )
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient oracle", gradient_oracle),
        ("CNN superset", cnn_superset),
        ("fast/generic equivalence", fast_generic_equivalence),
        ("toy rotate-180", toy_rotate),
        ("denoising direction", denoise_direction),
        ("cost counter", cost_counter),
        ("metric suite", metric_suite),
        ("determinism", determinism),
    ];
    if std::env::args().any(|a| a == "--list") {
        for (i, (name, _)) in criteria.iter().enumerate() {
            println!("criterion {} {name}: test", i + 1);
        }
        return;
    }
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
