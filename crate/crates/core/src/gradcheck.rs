//! Central finite-difference verification of the analytic gradients.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backprop::{self, mse_loss};
use crate::error::Result;
use crate::network::{
    required_input_size, ForwardCache, InitRule, KernelStack, LayerSpec, Network, NetworkSpec, ParamKind, Path,
    Sampling,
};
use crate::operators::{self, Activation, Nodal, OperatorSet, Pool};
use crate::tensor::FeatureMap;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// `h = step_scale * max(1, |w|)`.
    pub step_scale: f64,
    /// Distance kept from lincut corners and median ties.
    pub kink_margin: f64,
    pub check_delta_y: bool,
    /// Test fixture: perturbs one analytic gradient so the check must fail.
    pub corrupt: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-5,
            abs_tol: 1e-8,
            step_scale: 1e-5,
            kink_margin: 1e-4,
            check_delta_y: true,
            corrupt: false,
        }
    }
}

/// One compared parameter. `k, r, t, q` are `None` for biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub layer: usize,
    pub i: usize,
    pub k: Option<usize>,
    pub r: Option<usize>,
    pub t: Option<usize>,
    pub q: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub pass: bool,
}

/// One compared `∂E/∂y` entry of a hidden layer output.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaYCheck {
    pub layer: usize,
    pub neuron: usize,
    pub m: usize,
    pub n: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub delta_y: Vec<DeltaYCheck>,
    /// `∂E/∂y` entries whose perturbation would leave the Maclaurin domain.
    pub skipped: usize,
}

fn compare(a: f64, n: f64, cfg: &GradCheckConfig) -> (f64, bool) {
    let abs = (a - n).abs();
    let scale = a.abs().max(n.abs());
    let rel = if scale > 0.0 { abs / scale } else { 0.0 };
    (rel, rel <= cfg.rel_tol || abs <= cfg.abs_tol)
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.pass) && self.delta_y.iter().all(|d| d.pass)
    }

    pub fn failures(&self) -> usize {
        self.params.iter().filter(|p| !p.pass).count() + self.delta_y.iter().filter(|d| !d.pass).count()
    }

    /// Largest relative error per layer (1-based index into the vector + 1).
    pub fn max_rel_per_layer(&self, layers: usize) -> Vec<f64> {
        let mut out = vec![0.0f64; layers];
        for p in &self.params {
            out[p.layer - 1] = out[p.layer - 1].max(p.rel_err);
        }
        for d in &self.delta_y {
            out[d.layer - 1] = out[d.layer - 1].max(d.rel_err);
        }
        out
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.params.extend(other.params);
        self.delta_y.extend(other.delta_y);
        self.skipped += other.skipped;
    }

    /// `layer,i,k,r,t,q,analytic,numeric,rel_err`; bias rows leave `k..q` empty.
    pub fn params_csv(&self) -> String {
        let mut s = String::from("layer,i,k,r,t,q,analytic,numeric,rel_err\n");
        let o = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.params {
            writeln!(
                s,
                "{},{},{},{},{},{},{:.6e},{:.6e},{:.6e}",
                p.layer,
                p.i,
                o(p.k),
                o(p.r),
                o(p.t),
                o(p.q),
                p.analytic,
                p.numeric,
                p.rel_err
            )
            .unwrap();
        }
        s
    }

    pub fn delta_y_csv(&self) -> String {
        let mut s = String::from("layer,neuron,m,n,analytic,numeric,rel_err\n");
        for d in &self.delta_y {
            writeln!(
                s,
                "{},{},{},{},{:.6e},{:.6e},{:.6e}",
                d.layer, d.neuron, d.m, d.n, d.analytic, d.numeric, d.rel_err
            )
            .unwrap();
        }
        s
    }
}

/// Whether the forward state sits within `margin` of a point where the
/// declared subgradient differs from the one-sided derivatives.
pub fn near_kink(net: &Network, cache: &ForwardCache, margin: f64) -> bool {
    for (l, spec) in net.spec().layers.iter().enumerate() {
        let lc = &cache.layers[l];
        if spec.operators.activation == Activation::LinCut
            && lc.pre.iter().any(|x| x.data().iter().any(|&v| (v.abs() - 1.0).abs() < margin))
        {
            return true;
        }
        if spec.operators.pool == Pool::Median && median_tie(&lc.powers, &net.params()[l], spec, margin) {
            return true;
        }
    }
    false
}

fn median_tie(powers: &[Vec<FeatureMap>], ks: &KernelStack, spec: &LayerSpec, margin: f64) -> bool {
    let (kx, ky) = spec.kernel;
    let mut terms = Vec::with_capacity(kx * ky);
    for target in 0..spec.neurons {
        for (source, pw) in powers.iter().enumerate() {
            let y = &pw[0];
            for m in 0..=y.height() - kx {
                for n in 0..=y.width() - ky {
                    terms.clear();
                    for r in 0..kx {
                        for t in 0..ky {
                            terms.push(operators::nodal_eval(
                                spec.operators.nodal,
                                ks.element(target, source, r, t),
                                y.get(m + r, n + t),
                            ));
                        }
                    }
                    terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let mid = (terms.len() - 1) / 2;
                    let lo = mid.checked_sub(1).map(|j| terms[mid] - terms[j]);
                    let hi = terms.get(mid + 1).map(|v| v - terms[mid]);
                    if lo.is_some_and(|g| g < margin) || hi.is_some_and(|g| g < margin) {
                        return true;
                    }
                }
            }
        }
    }
    false
}

/// `(target, source, r, t, q)` of a flat weight index.
pub fn weight_coords(ks: &KernelStack, index: usize) -> (usize, usize, usize, usize, usize) {
    let (_, sources, kx, ky, order) = ks.dims();
    let q = index % order + 1;
    let rest = index / order;
    let t = rest % ky;
    let rest = rest / ky;
    let r = rest % kx;
    let rest = rest / kx;
    (rest / sources, rest % sources, r, t, q)
}

/// Compares every parameter gradient (and optionally every hidden `∂E/∂y`)
/// of the MSE loss against central differences.
pub fn check_network(
    net: &Network,
    input: &[FeatureMap],
    target: &[FeatureMap],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let cache = net.forward(input)?;
    let bp = backprop::backward(net, &cache, target)?;
    let mut report = GradCheckReport::default();
    let loss = |n: &Network| -> Result<f64> { mse_loss(n.forward(input)?.output(), target) };
    let mut probe = net.clone();
    for (l, kind, idx) in net.enumerate_params().collect::<Vec<_>>() {
        let w = net.param_value(l, kind, idx);
        let h = cfg.step_scale * w.abs().max(1.0);
        probe.set_param(l, kind, idx, w + h);
        let ep = loss(&probe)?;
        probe.set_param(l, kind, idx, w - h);
        let em = loss(&probe)?;
        probe.set_param(l, kind, idx, w);
        let numeric = (ep - em) / (2.0 * h);
        let mut analytic = match kind {
            ParamKind::Weight => bp.grads.layers[l].weight_grads[idx],
            ParamKind::Bias => bp.grads.layers[l].bias_grads[idx],
        };
        if cfg.corrupt && report.params.is_empty() {
            analytic = analytic * 1.5 + 1e-3;
        }
        let (rel_err, pass) = compare(analytic, numeric, cfg);
        let (i, k, r, t, q) = match kind {
            ParamKind::Weight => {
                let (i, k, r, t, q) = weight_coords(&net.params()[l], idx);
                (i, Some(k), Some(r), Some(t), Some(q))
            }
            ParamKind::Bias => (idx, None, None, None, None),
        };
        report.params.push(ParamCheck {
            layer: l + 1,
            i,
            k,
            r,
            t,
            q,
            analytic,
            numeric,
            rel_err,
            pass,
        });
    }
    if cfg.check_delta_y {
        let layers = &net.spec().layers;
        for l in 0..layers.len().saturating_sub(1) {
            let maclaurin_next = layers[l + 1].operators.nodal == Nodal::Maclaurin;
            let y = &cache.layers[l].output;
            for (k, map) in y.iter().enumerate() {
                for idx in 0..map.len() {
                    let v = map.data()[idx];
                    let h = cfg.step_scale * v.abs().max(1.0);
                    if maclaurin_next && v.abs() + h > 1.0 {
                        report.skipped += 1;
                        continue;
                    }
                    let mut p = y.clone();
                    p[k].data_mut()[idx] = v + h;
                    let ep = mse_loss(&net.forward_from(l + 1, &p, Path::Auto)?, target)?;
                    p[k].data_mut()[idx] = v - h;
                    let em = mse_loss(&net.forward_from(l + 1, &p, Path::Auto)?, target)?;
                    let numeric = (ep - em) / (2.0 * h);
                    let analytic = bp.delta_y[l][k].data()[idx];
                    let (rel_err, pass) = compare(analytic, numeric, cfg);
                    report.delta_y.push(DeltaYCheck {
                        layer: l + 1,
                        neuron: k,
                        m: idx / map.width(),
                        n: idx % map.width(),
                        analytic,
                        numeric,
                        rel_err,
                        pass,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Shape of a randomly drawn verification network.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseSpec {
    pub operators: OperatorSet,
    pub q_order: usize,
    pub kernel: usize,
    /// `down(2,2)` on the first layer and `up(2,2)` on the second, three layers.
    pub sampled: bool,
}

impl CaseSpec {
    pub fn layers(&self, neurons: (usize, usize)) -> Vec<LayerSpec> {
        let mk = |n: usize| LayerSpec {
            neurons: n,
            kernel: (self.kernel, self.kernel),
            q_order: self.q_order,
            operators: self.operators,
            sampling: Sampling::None,
            bias: true,
        };
        if self.sampled {
            vec![
                mk(neurons.0).with_sampling(Sampling::Down(2, 2)),
                mk(neurons.1).with_sampling(Sampling::Up(2, 2)),
                mk(1),
            ]
        } else {
            vec![mk(neurons.0), mk(1)]
        }
    }
}

/// A random network, input and target for `case`, redrawn until the forward
/// state keeps `margin` away from kinks. Maps stay within 12x12.
pub fn random_case(case: &CaseSpec, seed: u64, margin: f64) -> Result<(Network, Vec<FeatureMap>, Vec<FeatureMap>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let neurons = (rng.random_range(1..=3), rng.random_range(1..=2));
        let layers = case.layers(neurons);
        let side = (2..=6)
            .filter_map(|o| required_input_size(&layers, (o, o)))
            .find(|&(h, _)| h <= 12)
            .expect("case fits in 12x12");
        let spec = NetworkSpec::new(side.0, side.1, layers);
        let out = spec.output_shape()?;
        let a = rng.random_range(0.2..0.6);
        let mut net = Network::init_with_rng(spec, &mut rng, InitRule::Uniform(a))?;
        for p in net.params_mut() {
            for b in p.biases.iter_mut() {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        let input = vec![FeatureMap::from_fn(side.0, side.1, |_, _| rng.random_range(-0.95..0.95))];
        let target = vec![FeatureMap::from_fn(out.0, out.1, |_, _| rng.random_range(-0.9..0.9))];
        let cache = net.forward(&input)?;
        if !near_kink(&net, &cache, margin) {
            return Ok((net, input, target));
        }
    }
}

/// Every operator set, order, kernel size and layout of the verification sweep.
pub fn verification_cases() -> Vec<CaseSpec> {
    let fixed = [
        OperatorSet::new(Pool::Sum, Activation::Tanh, Nodal::Sin),
        OperatorSet::new(Pool::Sum, Activation::Tanh, Nodal::Exp),
        OperatorSet::new(Pool::Sum, Activation::LinCut, Nodal::Chirp),
        OperatorSet::new(Pool::Median, Activation::Tanh, Nodal::Mul),
    ];
    let mut sets: Vec<(OperatorSet, usize)> = [1, 3, 7].map(|q| (OperatorSet::generative(), q)).to_vec();
    sets.extend(fixed.map(|o| (o, 1)));
    let mut out = Vec::new();
    for (operators, q_order) in sets {
        for kernel in 1..=3 {
            for sampled in [false, true] {
                out.push(CaseSpec {
                    operators,
                    q_order,
                    kernel,
                    sampled,
                });
            }
        }
    }
    out
}
