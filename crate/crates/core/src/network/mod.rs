//! Layer specs, parameters and forward propagation.
//!
//! A layer maps the `N_{l-1}` output maps of the previous layer to `N_l`
//! maps: pre-activation `x = b + sum_src pool[nodal(w, y_src)]` over each
//! valid `kx x ky` window, then `f(x)`, then optional average
//! down-sampling or zero-order up-sampling.
//!
//! Two forward routes exist. The fast route handles `sum` pool with the
//! `maclaurin` or `mul` nodal as `Q * N_{l-1}` valid correlations of cached
//! power maps; the generic route evaluates every nodal term per pixel and
//! pools it, for any operator set.

mod checkpoint;
mod cost;

pub use checkpoint::{checkpoint_from_json, checkpoint_json, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use cost::{count_macs, count_params, LayerCost, OpCounter};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{self, Nodal, OperatorSet, Pool};
use crate::real::Real;
use crate::tensor::{self, FeatureMap};

/// Sampling applied after the activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    #[default]
    None,
    /// Block average by (rows, columns).
    Down(usize, usize),
    /// Zero-order replication by (rows, columns).
    Up(usize, usize),
}

impl Sampling {
    /// Output size for a given pre-sampling size, if divisible.
    pub fn apply_shape(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        match *self {
            Sampling::None => Some((h, w)),
            Sampling::Down(sx, sy) => {
                (sx > 0 && sy > 0 && h.is_multiple_of(sx) && w.is_multiple_of(sy)).then(|| (h / sx, w / sy))
            }
            Sampling::Up(ux, uy) => (ux > 0 && uy > 0).then(|| (h * ux, w * uy)),
        }
    }

    fn invert_shape(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        match *self {
            Sampling::None => Some((h, w)),
            Sampling::Down(sx, sy) => Some((h * sx, w * sy)),
            Sampling::Up(ux, uy) => (h.is_multiple_of(ux) && w.is_multiple_of(uy)).then(|| (h / ux, w / uy)),
        }
    }

    pub fn apply<T: Real>(&self, z: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        match *self {
            Sampling::None => Ok(z.clone()),
            Sampling::Down(sx, sy) => tensor::downsample_avg(z, sx, sy),
            Sampling::Up(ux, uy) => tensor::upsample_zero_order(z, ux, uy),
        }
    }
}

fn default_true() -> bool {
    true
}

/// One layer of neurons sharing kernel size, order and operators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub neurons: usize,
    /// (kx, ky): rows, columns.
    pub kernel: (usize, usize),
    #[serde(default = "one")]
    pub q_order: usize,
    #[serde(default = "OperatorSet::generative")]
    pub operators: OperatorSet,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default = "default_true")]
    pub bias: bool,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    /// Self-ONN layer: sum / tanh / maclaurin.
    pub fn generative(neurons: usize, k: usize, q_order: usize) -> Self {
        Self {
            neurons,
            kernel: (k, k),
            q_order,
            operators: OperatorSet::generative(),
            sampling: Sampling::None,
            bias: true,
        }
    }

    /// Convolutional layer: sum / tanh / mul, Q = 1.
    pub fn convolutional(neurons: usize, k: usize) -> Self {
        Self {
            neurons,
            kernel: (k, k),
            q_order: 1,
            operators: OperatorSet::convolutional(),
            sampling: Sampling::None,
            bias: true,
        }
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_operators(mut self, operators: OperatorSet) -> Self {
        self.operators = operators;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.neurons == 0 {
            return Err(Error::InvalidSpec("layer with zero neurons".into()));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::InvalidSpec("zero kernel dimension".into()));
        }
        if self.q_order == 0 {
            return Err(Error::InvalidSpec("q_order must be >= 1".into()));
        }
        if self.operators.nodal != Nodal::Maclaurin && self.q_order != 1 {
            return Err(Error::InvalidSpec(format!(
                "nodal `{}` takes a scalar weight; q_order must be 1, got {}",
                self.operators.nodal, self.q_order
            )));
        }
        match self.sampling {
            Sampling::Down(a, b) | Sampling::Up(a, b) if a == 0 || b == 0 => {
                Err(Error::InvalidSpec("sampling factors must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// `sum` pool with `maclaurin` or `mul` nodal.
    pub fn has_fast_path(&self) -> bool {
        self.operators.pool == Pool::Sum
            && matches!(self.operators.nodal, Nodal::Maclaurin | Nodal::Mul)
    }
}

/// Map sizes of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub input: (usize, usize),
    pub conv: (usize, usize),
    pub output: (usize, usize),
}

/// Input geometry plus the ordered layer specs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(default = "one")]
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input_height: usize, input_width: usize, layers: Vec<LayerSpec>) -> Self {
        Self {
            input_channels: 1,
            input_height,
            input_width,
            layers,
        }
    }

    /// Validates every layer and the shape chain; returns per-layer sizes.
    pub fn shapes(&self) -> Result<Vec<LayerShape>> {
        if self.layers.is_empty() {
            return Err(Error::InvalidSpec("network has no layers".into()));
        }
        if self.input_channels == 0 || self.input_height == 0 || self.input_width == 0 {
            return Err(Error::InvalidSpec("empty input geometry".into()));
        }
        let mut cur = (self.input_height, self.input_width);
        let mut out = Vec::with_capacity(self.layers.len());
        for (l, spec) in self.layers.iter().enumerate() {
            spec.validate()
                .map_err(|e| Error::InvalidSpec(format!("layer {}: {e}", l + 1)))?;
            let (kx, ky) = spec.kernel;
            if cur.0 < kx || cur.1 < ky {
                return Err(Error::InvalidSpec(format!(
                    "layer {}: {}x{} input smaller than {kx}x{ky} kernel",
                    l + 1,
                    cur.0,
                    cur.1
                )));
            }
            let conv = (cur.0 - kx + 1, cur.1 - ky + 1);
            let output = spec.sampling.apply_shape(conv.0, conv.1).ok_or_else(|| {
                Error::InvalidSpec(format!(
                    "layer {}: {}x{} map not divisible by {:?}",
                    l + 1,
                    conv.0,
                    conv.1,
                    spec.sampling
                ))
            })?;
            out.push(LayerShape {
                input: cur,
                conv,
                output,
            });
            cur = output;
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<(usize, usize)> {
        Ok(self.shapes()?.last().unwrap().output)
    }

    pub fn input_count(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_channels
        } else {
            self.layers[layer - 1].neurons
        }
    }

    pub fn output_neurons(&self) -> usize {
        self.layers.last().map(|l| l.neurons).unwrap_or(0)
    }
}

/// Input size whose valid-correlation chain ends exactly at `output`, if any.
pub fn required_input_size(layers: &[LayerSpec], output: (usize, usize)) -> Option<(usize, usize)> {
    let mut cur = output;
    for spec in layers.iter().rev() {
        let pre = spec.sampling.invert_shape(cur.0, cur.1)?;
        cur = (pre.0 + spec.kernel.0 - 1, pre.1 + spec.kernel.1 - 1);
    }
    Some(cur)
}

/// Parameters of one layer: weights indexed `(target, source, r, t, q)`,
/// `q` fastest, and one bias per target neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelStack<T = f64> {
    targets: usize,
    sources: usize,
    kx: usize,
    ky: usize,
    order: usize,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Real> KernelStack<T> {
    pub fn zeros(targets: usize, sources: usize, kx: usize, ky: usize, order: usize) -> Self {
        Self {
            targets,
            sources,
            kx,
            ky,
            order,
            weights: vec![T::zero(); targets * sources * kx * ky * order],
            biases: vec![T::zero(); targets],
        }
    }

    pub fn for_layer(spec: &LayerSpec, sources: usize) -> Self {
        Self::zeros(spec.neurons, sources, spec.kernel.0, spec.kernel.1, spec.q_order)
    }

    #[inline]
    pub fn index(&self, target: usize, source: usize, r: usize, t: usize, q: usize) -> usize {
        debug_assert!(q >= 1 && q <= self.order);
        (((target * self.sources + source) * self.kx + r) * self.ky + t) * self.order + (q - 1)
    }

    #[inline]
    pub fn get(&self, target: usize, source: usize, r: usize, t: usize, q: usize) -> T {
        self.weights[self.index(target, source, r, t, q)]
    }

    /// The `Q` coefficients of kernel element `(r, t)`.
    #[inline]
    pub fn element(&self, target: usize, source: usize, r: usize, t: usize) -> &[T] {
        let i = self.index(target, source, r, t, 1);
        &self.weights[i..i + self.order]
    }

    /// The `q`-th 2D sub-kernel (kx x ky) gathered into `buf`.
    pub fn sub_kernel_into(&self, target: usize, source: usize, q: usize, buf: &mut Vec<T>) {
        buf.clear();
        for r in 0..self.kx {
            for t in 0..self.ky {
                buf.push(self.get(target, source, r, t, q));
            }
        }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize, usize) {
        (self.targets, self.sources, self.kx, self.ky, self.order)
    }

    pub fn same_layout(&self, other_weights: usize, other_biases: usize) -> bool {
        self.weights.len() == other_weights && self.biases.len() == other_biases
    }

    pub fn cast<U: Real>(&self) -> KernelStack<U> {
        KernelStack {
            targets: self.targets,
            sources: self.sources,
            kx: self.kx,
            ky: self.ky,
            order: self.order,
            weights: self.weights.iter().map(|&v| U::of(v.f64())).collect(),
            biases: self.biases.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|v| v.is_finite())
    }
}

/// Bound rule for the uniform initialization `U(-a, a)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    /// `a = sqrt(6 / (fan_in + fan_out))`, `fan_in = N_{l-1} kx ky Q`,
    /// `fan_out = N_l kx ky Q`.
    #[default]
    Glorot,
    /// Glorot bound divided by the order index `q`.
    GlorotOrderDamped,
    /// Fixed bound for every weight.
    Uniform(f64),
}

impl InitRule {
    pub fn bound(&self, spec: &LayerSpec, sources: usize, q: usize) -> f64 {
        let k = spec.kernel.0 * spec.kernel.1 * spec.q_order;
        let glorot = (6.0 / ((sources * k + spec.neurons * k) as f64)).sqrt();
        match *self {
            InitRule::Glorot => glorot,
            InitRule::GlorotOrderDamped => glorot / q as f64,
            InitRule::Uniform(a) => a,
        }
    }
}

/// Draws every weight from `U(-a, a)` in storage order; biases start at zero.
pub fn init_params<T: Real>(spec: &NetworkSpec, rng: &mut impl Rng, rule: InitRule) -> Result<Vec<KernelStack<T>>> {
    spec.shapes()?;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (l, ls) in spec.layers.iter().enumerate() {
        let sources = spec.input_count(l);
        let mut ks = KernelStack::for_layer(ls, sources);
        for (idx, w) in ks.weights.iter_mut().enumerate() {
            let q = idx % ls.q_order + 1;
            let a = rule.bound(ls, sources, q);
            *w = if a > 0.0 {
                T::of(rng.random_range(-a..a))
            } else {
                T::zero()
            };
        }
        layers.push(ks);
    }
    Ok(layers)
}

/// Forward route selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Path {
    /// Fast route where the operator set allows it, generic elsewhere.
    Auto,
    /// Per-pixel operator evaluation everywhere.
    Generic,
}

/// Everything one forward pass leaves behind for back-propagation.
#[derive(Clone, Debug)]
pub struct LayerCache<T = f64> {
    /// Per source neuron: `[y, y^2, ..., y^Q]` of this layer's input
    /// (only `[y]` for scalar nodals).
    pub powers: Vec<Vec<FeatureMap<T>>>,
    /// Pre-activation maps `x_k`.
    pub pre: Vec<FeatureMap<T>>,
    /// `f'(x_k)`.
    pub dact: Vec<FeatureMap<T>>,
    /// Post-sampling outputs `y_k`.
    pub output: Vec<FeatureMap<T>>,
    pub generic: bool,
}

#[derive(Clone, Debug)]
pub struct ForwardCache<T = f64> {
    pub(crate) generation: u64,
    pub layers: Vec<LayerCache<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn output(&self) -> &[FeatureMap<T>] {
        &self.layers.last().expect("non-empty network").output
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }
}

/// Network structure plus trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f64> {
    spec: NetworkSpec,
    shapes: Vec<LayerShape>,
    params: Vec<KernelStack<T>>,
    generation: u64,
}

impl<T: Real> Network<T> {
    pub fn new(spec: NetworkSpec, params: Vec<KernelStack<T>>) -> Result<Self> {
        let shapes = spec.shapes()?;
        if params.len() != spec.layers.len() {
            return Err(Error::InvalidSpec(format!(
                "{} parameter stacks for {} layers",
                params.len(),
                spec.layers.len()
            )));
        }
        for (l, (ls, ks)) in spec.layers.iter().zip(&params).enumerate() {
            let want = KernelStack::<T>::for_layer(ls, spec.input_count(l));
            if ks.dims() != want.dims() || !ks.same_layout(want.weights.len(), want.biases.len()) {
                return Err(Error::InvalidSpec(format!(
                    "layer {}: parameter layout {:?} does not match spec {:?}",
                    l + 1,
                    ks.dims(),
                    want.dims()
                )));
            }
            if !ks.is_finite() {
                return Err(Error::NonFinite(format!("layer {} parameters", l + 1)));
            }
        }
        Ok(Self {
            spec,
            shapes,
            params,
            generation: 0,
        })
    }

    /// Seeded `U(-a, a)` initialization.
    pub fn init(spec: NetworkSpec, seed: u64, rule: InitRule) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(spec, &mut rng, rule)
    }

    pub fn init_with_rng(spec: NetworkSpec, rng: &mut impl Rng, rule: InitRule) -> Result<Self> {
        let params = init_params(&spec, rng, rule)?;
        Self::new(spec, params)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn params(&self) -> &[KernelStack<T>] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [KernelStack<T>] {
        self.generation += 1;
        &mut self.params
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            shapes: self.shapes.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
            generation: 0,
        }
    }

    /// Parameter enumeration (weights then biases, layer by layer), skipping
    /// biases of bias-free layers.
    pub fn enumerate_params(&self) -> impl Iterator<Item = (usize, ParamKind, usize)> + '_ {
        self.params.iter().enumerate().flat_map(move |(l, ks)| {
            let bias = self.spec.layers[l].bias;
            let w = (0..ks.weights.len()).map(move |i| (l, ParamKind::Weight, i));
            let b = (0..if bias { ks.biases.len() } else { 0 }).map(move |i| (l, ParamKind::Bias, i));
            w.chain(b)
        })
    }

    pub fn param_value(&self, layer: usize, kind: ParamKind, index: usize) -> T {
        match kind {
            ParamKind::Weight => self.params[layer].weights[index],
            ParamKind::Bias => self.params[layer].biases[index],
        }
    }

    pub fn set_param(&mut self, layer: usize, kind: ParamKind, index: usize, v: T) {
        self.generation += 1;
        match kind {
            ParamKind::Weight => self.params[layer].weights[index] = v,
            ParamKind::Bias => self.params[layer].biases[index] = v,
        }
    }

    pub fn forward(&self, input: &[FeatureMap<T>]) -> Result<ForwardCache<T>> {
        self.forward_with(input, Path::Auto, None)
    }

    /// Forward pass with an explicit route and an optional MAC counter.
    pub fn forward_with(
        &self,
        input: &[FeatureMap<T>],
        path: Path,
        mut counter: Option<&mut OpCounter>,
    ) -> Result<ForwardCache<T>> {
        if input.len() != self.spec.input_channels {
            return Err(Error::Shape(format!(
                "{} input maps for {} input channels",
                input.len(),
                self.spec.input_channels
            )));
        }
        for m in input {
            if m.shape() != (self.spec.input_height, self.spec.input_width) {
                return Err(Error::Shape(format!(
                    "input {}x{} vs network input {}x{}",
                    m.height(),
                    m.width(),
                    self.spec.input_height,
                    self.spec.input_width
                )));
            }
            m.ensure_finite("network input")?;
        }
        if let Some(c) = counter.as_deref_mut() {
            c.per_layer = vec![0; self.spec.layers.len()];
        }
        let mut layers = Vec::with_capacity(self.spec.layers.len());
        let mut cur: Vec<FeatureMap<T>> = input.to_vec();
        for l in 0..self.spec.layers.len() {
            let lc = self.forward_layer(l, &cur, path, counter.as_deref_mut())?;
            cur = lc.output.clone();
            layers.push(lc);
        }
        Ok(ForwardCache {
            generation: self.generation,
            layers,
        })
    }

    /// Re-runs layers `from..` on replacement inputs for layer `from`;
    /// returns the network output.
    pub fn forward_from(&self, from: usize, inputs: &[FeatureMap<T>], path: Path) -> Result<Vec<FeatureMap<T>>> {
        let mut cur = inputs.to_vec();
        for l in from..self.spec.layers.len() {
            cur = self.forward_layer(l, &cur, path, None)?.output;
        }
        Ok(cur)
    }

    fn forward_layer(
        &self,
        l: usize,
        inputs: &[FeatureMap<T>],
        path: Path,
        counter: Option<&mut OpCounter>,
    ) -> Result<LayerCache<T>> {
        let spec = &self.spec.layers[l];
        let shape = self.shapes[l];
        if inputs.len() != self.spec.input_count(l) {
            return Err(Error::Shape(format!(
                "layer {}: {} inputs, expected {}",
                l + 1,
                inputs.len(),
                self.spec.input_count(l)
            )));
        }
        let powers = input_powers(spec, inputs)?;
        let generic = path == Path::Generic || !spec.has_fast_path();
        let params = &self.params[l];
        let (pre, macs) = if generic {
            forward_generic_layer(&powers, spec, params, shape)?
        } else {
            forward_selfonn_layer(&powers, spec, params, shape)?
        };
        if let Some(c) = counter {
            c.per_layer[l] += macs;
            c.total += macs;
        }
        let act = spec.operators.activation;
        let mut dact = Vec::with_capacity(pre.len());
        let mut output = Vec::with_capacity(pre.len());
        for x in &pre {
            x.ensure_finite("pre-activation")?;
            dact.push(x.map(|v| operators::activation_dx(act, v)));
            output.push(spec.sampling.apply(&x.map(|v| operators::activation(act, v)))?);
        }
        Ok(LayerCache {
            powers,
            pre,
            dact,
            output,
            generic,
        })
    }
}

/// Weight or bias selector for [`Network::enumerate_params`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
}

impl ParamKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
        }
    }
}

/// Power maps the layer consumes; domain-checks inputs of Maclaurin layers.
pub(crate) fn input_powers<T: Real>(spec: &LayerSpec, inputs: &[FeatureMap<T>]) -> Result<Vec<Vec<FeatureMap<T>>>> {
    inputs
        .iter()
        .map(|y| {
            if spec.operators.nodal == Nodal::Maclaurin {
                for &v in y.data() {
                    operators::check_domain(v)?;
                }
                tensor::power_maps(y, spec.q_order)
            } else {
                Ok(vec![y.clone()])
            }
        })
        .collect()
}

/// Fast route: `x_k = b_k + sum_src sum_q conv_valid(y_src^q, w_k,src(q))`.
/// Returns pre-activation maps and the multiply-accumulate count.
pub fn forward_selfonn_layer<T: Real>(
    powers: &[Vec<FeatureMap<T>>],
    spec: &LayerSpec,
    params: &KernelStack<T>,
    shape: LayerShape,
) -> Result<(Vec<FeatureMap<T>>, u64)> {
    if !spec.has_fast_path() {
        return Err(Error::InvalidSpec(format!(
            "operator set {} has no fast route",
            spec.operators
        )));
    }
    let (kx, ky) = spec.kernel;
    let (oh, ow) = shape.conv;
    let mut macs = 0u64;
    let mut buf = Vec::with_capacity(kx * ky);
    let mut pre = Vec::with_capacity(spec.neurons);
    for target in 0..spec.neurons {
        let bias = if spec.bias { params.biases[target] } else { T::zero() };
        let mut x = FeatureMap::filled(oh, ow, bias);
        if spec.bias {
            macs += (oh * ow) as u64;
        }
        for (source, pw) in powers.iter().enumerate() {
            if pw.len() < spec.q_order {
                return Err(Error::StaleCache(format!(
                    "{} power maps for order {}",
                    pw.len(),
                    spec.q_order
                )));
            }
            for q in 1..=spec.q_order {
                params.sub_kernel_into(target, source, q, &mut buf);
                macs += tensor::conv_valid_acc(&pw[q - 1], &buf, kx, ky, x.data_mut());
            }
        }
        pre.push(x);
    }
    Ok((pre, macs))
}

/// Generic route: per pixel, pool the `kx * ky` nodal terms of each source
/// and sum the pooled values with the bias.
pub fn forward_generic_layer<T: Real>(
    powers: &[Vec<FeatureMap<T>>],
    spec: &LayerSpec,
    params: &KernelStack<T>,
    shape: LayerShape,
) -> Result<(Vec<FeatureMap<T>>, u64)> {
    let (kx, ky) = spec.kernel;
    let (oh, ow) = shape.conv;
    let ops = spec.operators;
    let mut terms = vec![T::zero(); kx * ky];
    let mut scratch = Vec::with_capacity(kx * ky);
    let mut macs = 0u64;
    let mut pre = Vec::with_capacity(spec.neurons);
    for target in 0..spec.neurons {
        let bias = if spec.bias { params.biases[target] } else { T::zero() };
        let mut x = FeatureMap::filled(oh, ow, bias);
        if spec.bias {
            macs += (oh * ow) as u64;
        }
        for (source, pw) in powers.iter().enumerate() {
            let y = &pw[0];
            for m in 0..oh {
                for n in 0..ow {
                    for r in 0..kx {
                        for t in 0..ky {
                            let w = params.element(target, source, r, t);
                            terms[r * ky + t] = operators::nodal_eval(ops.nodal, w, y.get(m + r, n + t));
                        }
                    }
                    macs += (kx * ky * spec.q_order) as u64;
                    let pooled = match ops.pool {
                        Pool::Sum => terms.iter().copied().sum(),
                        Pool::Median => terms[operators::median_index(&terms, &mut scratch)],
                    };
                    x.set(m, n, x.get(m, n) + pooled);
                }
            }
        }
        pre.push(x);
    }
    Ok((pre, macs))
}
