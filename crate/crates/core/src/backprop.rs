//! Hand-derived back-propagation.
//!
//! Per layer, from the output backwards:
//!
//! 1. `Δ_k = intra(∂E/∂y_k)`: undo the sampling and multiply by `f'(x_k)`;
//! 2. weight and bias sensitivities from `Δ` and the cached input powers;
//! 3. `∂E/∂y` of the previous layer by a (variable-kernel) full correlation
//!    of `Δ` with `∇_y P`.
//!
//! Layers that ran the fast forward route use the power-map form; the rest
//! build the per-position derivative fields explicitly.

use crate::error::{Error, Result};
use crate::network::{ForwardCache, KernelStack, LayerSpec, Network, Sampling};
use crate::operators::{self, Activation, Pool};
use crate::real::Real;
use crate::tensor::{self, FeatureMap, VarKernel};

/// Gradients of one layer, laid out like its [`KernelStack`].
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivitySet<T = f64> {
    pub weight_grads: Vec<T>,
    pub bias_grads: Vec<T>,
}

impl<T: Real> SensitivitySet<T> {
    pub fn zeros_like(ks: &KernelStack<T>) -> Self {
        Self {
            weight_grads: vec![T::zero(); ks.weights.len()],
            bias_grads: vec![T::zero(); ks.biases.len()],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.weight_grads.iter_mut().zip(&other.weight_grads) {
            *a = *a + b;
        }
        for (a, &b) in self.bias_grads.iter_mut().zip(&other.bias_grads) {
            *a = *a + b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight_grads.iter().chain(&self.bias_grads).all(|v| v.is_finite())
    }
}

/// Gradients for the whole network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f64> {
    pub layers: Vec<SensitivitySet<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            layers: net.params().iter().map(SensitivitySet::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }
}

/// Everything one backward pass produces.
#[derive(Clone, Debug)]
pub struct BackwardPass<T = f64> {
    pub grads: Gradients<T>,
    /// `Δ = ∂E/∂x` per layer and neuron.
    pub deltas: Vec<Vec<FeatureMap<T>>>,
    /// `∂E/∂y` per layer and neuron.
    pub delta_y: Vec<Vec<FeatureMap<T>>>,
}

/// Sum over output neurons of the per-map mean squared error.
pub fn mse_loss<T: Real>(outputs: &[FeatureMap<T>], targets: &[FeatureMap<T>]) -> Result<T> {
    check_targets(outputs, targets)?;
    let mut e = T::zero();
    for (y, t) in outputs.iter().zip(targets) {
        let s: T = y.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        e = e + s / T::of(y.len() as f64);
    }
    Ok(e)
}

fn check_targets<T: Real>(outputs: &[FeatureMap<T>], targets: &[FeatureMap<T>]) -> Result<()> {
    if outputs.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} output maps vs {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    for (y, t) in outputs.iter().zip(targets) {
        y.check_same_shape(t)?;
    }
    Ok(())
}

/// `∂E/∂y = (2/|I|)(y - T)` for the mean squared error.
pub fn loss_grad<T: Real>(y: &FeatureMap<T>, target: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    let s = T::of(2.0 / y.len() as f64);
    y.zip_map(target, |a, b| s * (a - b))
}

/// `Δ = (2/|I|)(y - T) f'(x)` for an output layer without sampling.
pub fn output_delta<T: Real>(
    y_out: &FeatureMap<T>,
    target: &FeatureMap<T>,
    x_out: &FeatureMap<T>,
    activation: Activation,
) -> Result<FeatureMap<T>> {
    y_out.check_same_shape(x_out)?;
    loss_grad(y_out, target)?.zip_map(x_out, |g, x| g * operators::activation_dx(activation, x))
}

/// `Δ` from `∂E/∂y` for one neuron, given its pre-activation map.
pub fn intra_delta<T: Real>(
    delta_y: &FeatureMap<T>,
    x: &FeatureMap<T>,
    activation: Activation,
    sampling: Sampling,
) -> Result<FeatureMap<T>> {
    let dact = x.map(|v| operators::activation_dx(activation, v));
    intra_delta_cached(delta_y, &dact, sampling)
}

/// As [`intra_delta`] with `f'(x)` already evaluated.
pub fn intra_delta_cached<T: Real>(
    delta_y: &FeatureMap<T>,
    dact: &FeatureMap<T>,
    sampling: Sampling,
) -> Result<FeatureMap<T>> {
    let expect = sampling.apply_shape(dact.height(), dact.width());
    if expect != Some(delta_y.shape()) {
        return Err(Error::Shape(format!(
            "∂E/∂y {}x{} inconsistent with {}x{} pre-activation under {:?}",
            delta_y.height(),
            delta_y.width(),
            dact.height(),
            dact.width(),
            sampling
        )));
    }
    let pre = match sampling {
        Sampling::None => delta_y.clone(),
        Sampling::Down(sx, sy) => {
            let beta = T::of(1.0 / (sx * sy) as f64);
            tensor::upsample_zero_order(delta_y, sx, sy)?.map(|v| v * beta)
        }
        Sampling::Up(ux, uy) => block_sum(delta_y, ux, uy),
    };
    pre.zip_map(dact, |d, f| d * f)
}

/// Sum over `bx x by` tiles: average-pooling times the tile size.
fn block_sum<T: Real>(y: &FeatureMap<T>, bx: usize, by: usize) -> FeatureMap<T> {
    let (h, w) = (y.height() / bx, y.width() / by);
    FeatureMap::from_fn(h, w, |m, n| {
        let mut s = T::zero();
        for a in 0..bx {
            for b in 0..by {
                s = s + y.get(m * bx + a, n * by + b);
            }
        }
        s
    })
}

fn check_deltas<T: Real>(delta_next: &[FeatureMap<T>], y: &FeatureMap<T>, spec: &LayerSpec) -> Result<()> {
    if delta_next.len() != spec.neurons {
        return Err(Error::Shape(format!(
            "{} deltas for {} neurons",
            delta_next.len(),
            spec.neurons
        )));
    }
    let (kx, ky) = spec.kernel;
    for d in delta_next {
        if y.height() < kx || y.width() < ky || d.shape() != (y.height() - kx + 1, y.width() - ky + 1) {
            return Err(Error::Shape(format!(
                "delta {}x{} does not match input {}x{} with {kx}x{ky} kernel",
                d.height(),
                d.width(),
                y.height(),
                y.width()
            )));
        }
    }
    Ok(())
}

fn check_powers<T: Real>(powers: &[Vec<FeatureMap<T>>], params: &KernelStack<T>, need: usize) -> Result<()> {
    let (_, sources, ..) = params.dims();
    if powers.len() != sources {
        return Err(Error::StaleCache(format!(
            "{} cached source maps for {} sources",
            powers.len(),
            sources
        )));
    }
    if let Some(p) = powers.iter().find(|p| p.len() < need) {
        return Err(Error::StaleCache(format!(
            "{} cached power maps, order {} needed",
            p.len(),
            need
        )));
    }
    Ok(())
}

/// `∂E/∂y_src` for sum-pooled polynomial layers:
/// `sum_q q y^{q-1} ⊙ full_corr(Δ_tgt, w_tgt,src(q))` summed over targets.
/// `powers[src]` holds `[y, ..., y^Q]` of the layer input.
pub fn backprop_inter_selfonn<T: Real>(
    delta_next: &[FeatureMap<T>],
    powers: &[Vec<FeatureMap<T>>],
    params: &KernelStack<T>,
    spec: &LayerSpec,
) -> Result<Vec<FeatureMap<T>>> {
    if !spec.has_fast_path() {
        return Err(Error::InvalidSpec(format!(
            "operator set {} needs the generic delta rule",
            spec.operators
        )));
    }
    let order = spec.q_order;
    check_powers(powers, params, order.max(1))?;
    let (kx, ky) = spec.kernel;
    let mut buf = Vec::with_capacity(kx * ky);
    let mut out = Vec::with_capacity(powers.len());
    for (source, pw) in powers.iter().enumerate() {
        let (h, w) = pw[0].shape();
        check_deltas(delta_next, &pw[0], spec)?;
        let mut g: Vec<FeatureMap<T>> = (0..order).map(|_| FeatureMap::zeros(h, w)).collect();
        for (target, d) in delta_next.iter().enumerate() {
            for q in 1..=order {
                params.sub_kernel_into(target, source, q, &mut buf);
                tensor::conv_full_acc(d, &buf, kx, ky, g[q - 1].data_mut());
            }
        }
        let mut dy = g[0].clone();
        for q in 2..=order {
            let c = T::of(q as f64);
            for ((o, &gq), &p) in dy.data_mut().iter_mut().zip(g[q - 1].data()).zip(pw[q - 2].data()) {
                *o = *o + c * p * gq;
            }
        }
        out.push(dy);
    }
    Ok(out)
}

/// Window-local pool selection: for median pools, the chosen kernel element
/// of every output position; `None` for sum pools (all elements pass).
fn pool_selection<T: Real>(
    y: &FeatureMap<T>,
    params: &KernelStack<T>,
    spec: &LayerSpec,
    target: usize,
    source: usize,
) -> Option<Vec<usize>> {
    if spec.operators.pool != Pool::Median {
        return None;
    }
    let (kx, ky) = spec.kernel;
    let (oh, ow) = (y.height() - kx + 1, y.width() - ky + 1);
    let mut terms = vec![T::zero(); kx * ky];
    let mut scratch = Vec::with_capacity(kx * ky);
    let mut sel = Vec::with_capacity(oh * ow);
    for m in 0..oh {
        for n in 0..ow {
            for r in 0..kx {
                for t in 0..ky {
                    let w = params.element(target, source, r, t);
                    terms[r * ky + t] = operators::nodal_eval(spec.operators.nodal, w, y.get(m + r, n + t));
                }
            }
            sel.push(operators::median_index(&terms, &mut scratch));
        }
    }
    Some(sel)
}

/// `∇_y P (m, n, r, t) = ∇_Ψ P · ∇_y Ψ` for one (target, source) pair,
/// indexed by input pixel `(m, n)` and the kernel element `(r, t)` that
/// reached it from window `(m - r, n - t)`.
pub fn derivative_field<T: Real>(
    y: &FeatureMap<T>,
    params: &KernelStack<T>,
    spec: &LayerSpec,
    target: usize,
    source: usize,
) -> VarKernel<T> {
    let (kx, ky) = spec.kernel;
    let (h, w) = y.shape();
    let ow = w - ky + 1;
    let oh = h - kx + 1;
    let sel = pool_selection(y, params, spec, target, source);
    let nodal = spec.operators.nodal;
    VarKernel::from_fn(h, w, kx, ky, |m, n, r, t| {
        if m < r || n < t || m - r >= oh || n - t >= ow {
            return T::zero();
        }
        let passes = match &sel {
            None => true,
            Some(s) => s[(m - r) * ow + (n - t)] == r * ky + t,
        };
        if passes {
            operators::nodal_dy(nodal, params.element(target, source, r, t), y.get(m, n))
        } else {
            T::zero()
        }
    })
}

/// `∂E/∂y_src = sum_tgt conv2dvar_full(Δ_tgt, ∇_y P)` for any operator set.
pub fn backprop_inter_generic<T: Real>(
    delta_next: &[FeatureMap<T>],
    y: &[FeatureMap<T>],
    params: &KernelStack<T>,
    spec: &LayerSpec,
) -> Result<Vec<FeatureMap<T>>> {
    let (_, sources, ..) = params.dims();
    if y.len() != sources {
        return Err(Error::StaleCache(format!("{} cached maps for {sources} sources", y.len())));
    }
    let mut out = Vec::with_capacity(sources);
    for (source, ys) in y.iter().enumerate() {
        check_deltas(delta_next, ys, spec)?;
        let mut dy = FeatureMap::zeros(ys.height(), ys.width());
        for (target, d) in delta_next.iter().enumerate() {
            let vk = derivative_field(ys, params, spec, target, source);
            tensor::conv2dvar_full_acc(d, &vk, dy.data_mut());
        }
        out.push(dy);
    }
    Ok(out)
}

/// Weight and bias gradients of one layer from its deltas and cached inputs.
/// The power-map form `∂E/∂w(q) = valid_corr(y^q, Δ)` is used when `fast`
/// is set; otherwise the per-position sum with `∇_Ψ P` and `∂Ψ/∂w`.
pub fn weight_bias_sensitivities<T: Real>(
    delta: &[FeatureMap<T>],
    powers: &[Vec<FeatureMap<T>>],
    params: &KernelStack<T>,
    spec: &LayerSpec,
    fast: bool,
) -> Result<SensitivitySet<T>> {
    let fast = fast && spec.has_fast_path();
    check_powers(powers, params, if fast { spec.q_order } else { 1 })?;
    let (kx, ky) = spec.kernel;
    let mut s = SensitivitySet::zeros_like(params);
    let mut g = vec![T::zero(); kx * ky];
    for (target, d) in delta.iter().enumerate() {
        if spec.bias {
            s.bias_grads[target] = d.sum();
        }
        for (source, pw) in powers.iter().enumerate() {
            let y = &pw[0];
            check_deltas(delta, y, spec)?;
            if fast {
                for q in 1..=spec.q_order {
                    g.iter_mut().for_each(|v| *v = T::zero());
                    tensor::conv_valid_acc(&pw[q - 1], d.data(), d.height(), d.width(), &mut g);
                    for r in 0..kx {
                        for t in 0..ky {
                            s.weight_grads[params.index(target, source, r, t, q)] = g[r * ky + t];
                        }
                    }
                }
            } else {
                generic_weight_grads(d, y, params, spec, target, source, &mut s.weight_grads);
            }
        }
    }
    Ok(s)
}

fn generic_weight_grads<T: Real>(
    d: &FeatureMap<T>,
    y: &FeatureMap<T>,
    params: &KernelStack<T>,
    spec: &LayerSpec,
    target: usize,
    source: usize,
    out: &mut [T],
) {
    let (kx, ky) = spec.kernel;
    let (oh, ow) = d.shape();
    let sel = pool_selection(y, params, spec, target, source);
    let nodal = spec.operators.nodal;
    for r in 0..kx {
        for t in 0..ky {
            let w = params.element(target, source, r, t);
            for q in 1..=spec.q_order {
                let mut acc = T::zero();
                for m in 0..oh {
                    for n in 0..ow {
                        if let Some(s) = &sel {
                            if s[m * ow + n] != r * ky + t {
                                continue;
                            }
                        }
                        acc = acc + d.get(m, n) * operators::nodal_dw(nodal, w, y.get(m + r, n + t), q);
                    }
                }
                out[params.index(target, source, r, t, q)] = acc;
            }
        }
    }
}

fn check_cache<T: Real>(net: &Network<T>, cache: &ForwardCache<T>) -> Result<()> {
    if cache.generation() != net.generation() {
        return Err(Error::StaleCache(format!(
            "forward cache from parameter generation {} used at generation {}",
            cache.generation(),
            net.generation()
        )));
    }
    if cache.layers.len() != net.spec().layers.len() {
        return Err(Error::StaleCache("forward cache layer count mismatch".into()));
    }
    Ok(())
}

/// Back-propagates the mean squared error against `targets`.
pub fn backward<T: Real>(
    net: &Network<T>,
    cache: &ForwardCache<T>,
    targets: &[FeatureMap<T>],
) -> Result<BackwardPass<T>> {
    check_cache(net, cache)?;
    let outputs = cache.output();
    check_targets(outputs, targets)?;
    let grad_y = outputs
        .iter()
        .zip(targets)
        .map(|(y, t)| loss_grad(y, t))
        .collect::<Result<Vec<_>>>()?;
    backward_from_output_grad(net, cache, grad_y)
}

/// Back-propagates an arbitrary `∂E/∂y` at the network output.
pub fn backward_from_output_grad<T: Real>(
    net: &Network<T>,
    cache: &ForwardCache<T>,
    grad_y: Vec<FeatureMap<T>>,
) -> Result<BackwardPass<T>> {
    check_cache(net, cache)?;
    let n = net.spec().layers.len();
    let mut deltas = vec![Vec::new(); n];
    let mut delta_y = vec![Vec::new(); n];
    let mut layers = vec![None; n];
    let mut dy = grad_y;
    for l in (0..n).rev() {
        let spec = &net.spec().layers[l];
        let params = &net.params()[l];
        let lc = &cache.layers[l];
        if dy.len() != spec.neurons {
            return Err(Error::Shape(format!(
                "layer {}: {} output gradients for {} neurons",
                l + 1,
                dy.len(),
                spec.neurons
            )));
        }
        let delta = dy
            .iter()
            .zip(&lc.dact)
            .map(|(d, f)| intra_delta_cached(d, f, spec.sampling))
            .collect::<Result<Vec<_>>>()?;
        for d in &delta {
            d.ensure_finite("delta")?;
        }
        layers[l] = Some(weight_bias_sensitivities(&delta, &lc.powers, params, spec, !lc.generic)?);
        let next_dy = if l > 0 {
            if lc.generic {
                let ys: Vec<FeatureMap<T>> = lc.powers.iter().map(|p| p[0].clone()).collect();
                backprop_inter_generic(&delta, &ys, params, spec)?
            } else {
                backprop_inter_selfonn(&delta, &lc.powers, params, spec)?
            }
        } else {
            Vec::new()
        };
        deltas[l] = delta;
        delta_y[l] = std::mem::replace(&mut dy, next_dy);
    }
    Ok(BackwardPass {
        grads: Gradients {
            layers: layers.into_iter().map(|s| s.unwrap()).collect(),
        },
        deltas,
        delta_y,
    })
}
