//! 2D map primitives: valid and full correlation, the variable-kernel
//! correlation used by delta back-propagation, power maps and
//! average/zero-order sampling.
//!
//! Storage is row-major with `(m, n)` = (row, column). Kernel dimension `kx`
//! runs along rows and `ky` along columns, so a valid correlation of an
//! `H x W` map with a `kx x ky` kernel is `(H - kx + 1) x (W - ky + 1)`.
//! None of the correlations rotate the kernel.

use crate::error::{Error, Result};
use crate::real::Real;

/// Real-valued 2D grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T = f64> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty map {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "data length {} != {height}x{width}",
                data.len()
            )));
        }
        let map = Self {
            height,
            width,
            data,
        };
        map.ensure_finite("FeatureMap::new")?;
        Ok(map)
    }

    /// Panics on a zero dimension; internal shapes are validated upstream.
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        assert!(height > 0 && width > 0, "empty map {height}x{width}");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(height > 0 && width > 0, "empty map {height}x{width}");
        let mut data = Vec::with_capacity(height * width);
        for m in 0..height {
            for n in 0..width {
                data.push(f(m, n));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize) -> T {
        self.data[m * self.width + n]
    }

    #[inline]
    pub fn set(&mut self, m: usize, n: usize, v: T) {
        self.data[m * self.width + n] = v;
    }

    #[inline]
    pub fn row(&self, m: usize) -> &[T] {
        &self.data[m * self.width..(m + 1) * self.width]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.len() as f64)
    }

    /// Population variance.
    pub fn variance(&self) -> T {
        let mean = self.mean();
        let ss: T = self.data.iter().map(|&v| (v - mean) * (v - mean)).sum();
        ss / T::of(self.len() as f64)
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| if v.abs() > acc { v.abs() } else { acc })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn cast<U: Real>(&self) -> FeatureMap<U> {
        FeatureMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }

    /// Zero padding on all four sides.
    pub fn pad_zero(&self, top: usize, bottom: usize, left: usize, right: usize) -> Self {
        let h = self.height + top + bottom;
        let w = self.width + left + right;
        let mut out = Self::zeros(h, w);
        for m in 0..self.height {
            let dst = (m + top) * w + left;
            out.data[dst..dst + self.width].copy_from_slice(self.row(m));
        }
        out
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }
}

/// A single 2D kernel (`kx` rows by `ky` columns).
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2D<T = f64> {
    kx: usize,
    ky: usize,
    data: Vec<T>,
}

impl<T: Real> Kernel2D<T> {
    pub fn new(kx: usize, ky: usize, data: Vec<T>) -> Result<Self> {
        if kx == 0 || ky == 0 {
            return Err(Error::Shape(format!("empty kernel {kx}x{ky}")));
        }
        if data.len() != kx * ky {
            return Err(Error::Shape(format!(
                "kernel data length {} != {kx}x{ky}",
                data.len()
            )));
        }
        Ok(Self { kx, ky, data })
    }

    pub fn from_fn(kx: usize, ky: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(kx > 0 && ky > 0);
        let mut data = Vec::with_capacity(kx * ky);
        for r in 0..kx {
            for t in 0..ky {
                data.push(f(r, t));
            }
        }
        Self { kx, ky, data }
    }

    #[inline]
    pub fn kx(&self) -> usize {
        self.kx
    }

    #[inline]
    pub fn ky(&self) -> usize {
        self.ky
    }

    #[inline]
    pub fn get(&self, r: usize, t: usize) -> T {
        self.data[r * self.ky + t]
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
}

/// Valid-mode cross-correlation: `out(m,n) = sum_{r,t} k(r,t) * in(m+r, n+t)`.
pub fn conv2d_valid<T: Real>(input: &FeatureMap<T>, kernel: &Kernel2D<T>) -> Result<FeatureMap<T>> {
    if input.height < kernel.kx || input.width < kernel.ky {
        return Err(Error::Shape(format!(
            "input {}x{} smaller than kernel {}x{}",
            input.height, input.width, kernel.kx, kernel.ky
        )));
    }
    let mut out = FeatureMap::zeros(input.height - kernel.kx + 1, input.width - kernel.ky + 1);
    conv_valid_acc(input, &kernel.data, kernel.kx, kernel.ky, out.data_mut());
    out.ensure_finite("conv2d_valid")?;
    Ok(out)
}

/// Accumulating valid correlation into `out`; returns the number of
/// multiply-accumulates performed. Shapes are the caller's responsibility.
pub(crate) fn conv_valid_acc<T: Real>(
    input: &FeatureMap<T>,
    kernel: &[T],
    kx: usize,
    ky: usize,
    out: &mut [T],
) -> u64 {
    let iw = input.width;
    let oh = input.height - kx + 1;
    let ow = iw - ky + 1;
    debug_assert_eq!(out.len(), oh * ow);
    debug_assert_eq!(kernel.len(), kx * ky);
    let src = input.data();
    let mut macs = 0u64;
    if ow >= ky {
        // Wide output: axpy over output rows, contiguous in n.
        for m in 0..oh {
            let orow = &mut out[m * ow..(m + 1) * ow];
            for r in 0..kx {
                let irow = &src[(m + r) * iw..(m + r + 1) * iw];
                for t in 0..ky {
                    let w = kernel[r * ky + t];
                    for (o, &s) in orow.iter_mut().zip(&irow[t..t + ow]) {
                        *o = *o + w * s;
                    }
                    macs += ow as u64;
                }
            }
        }
    } else {
        // Large kernel, small output (weight sensitivities): dot products
        // along kernel rows. Same per-pixel summation order as above.
        for m in 0..oh {
            for n in 0..ow {
                let mut acc = out[m * ow + n];
                for r in 0..kx {
                    let irow = &src[(m + r) * iw + n..(m + r) * iw + n + ky];
                    let krow = &kernel[r * ky..(r + 1) * ky];
                    for (&w, &s) in krow.iter().zip(irow) {
                        acc = acc + w * s;
                    }
                }
                out[m * ow + n] = acc;
                macs += (kx * ky) as u64;
            }
        }
    }
    macs
}

/// Full correlation with a fixed kernel:
/// `out(m,n) = sum_{r,t} delta_padded(m-r, n-t) * k(r,t)`, output size
/// `(dh + kx - 1) x (dw + ky - 1)`. This is [`conv2dvar_full`] with a
/// position-independent kernel.
pub fn conv2d_full<T: Real>(delta: &FeatureMap<T>, kernel: &Kernel2D<T>) -> FeatureMap<T> {
    let mut out = FeatureMap::zeros(delta.height + kernel.kx - 1, delta.width + kernel.ky - 1);
    conv_full_acc(delta, &kernel.data, kernel.kx, kernel.ky, out.data_mut());
    out
}

pub(crate) fn conv_full_acc<T: Real>(
    delta: &FeatureMap<T>,
    kernel: &[T],
    kx: usize,
    ky: usize,
    out: &mut [T],
) {
    let (dh, dw) = delta.shape();
    let ow = dw + ky - 1;
    debug_assert_eq!(out.len(), (dh + kx - 1) * ow);
    for a in 0..dh {
        let drow = delta.row(a);
        for r in 0..kx {
            let base = (a + r) * ow;
            for t in 0..ky {
                let w = kernel[r * ky + t];
                let orow = &mut out[base + t..base + t + dw];
                for (o, &d) in orow.iter_mut().zip(drow) {
                    *o = *o + w * d;
                }
            }
        }
    }
}

/// Per-position derivative field indexed `(m, n, r, t)` over an `M x N` map
/// and a `kx x ky` kernel window.
#[derive(Clone, Debug, PartialEq)]
pub struct VarKernel<T = f64> {
    height: usize,
    width: usize,
    kx: usize,
    ky: usize,
    data: Vec<T>,
}

impl<T: Real> VarKernel<T> {
    pub fn zeros(height: usize, width: usize, kx: usize, ky: usize) -> Self {
        Self {
            height,
            width,
            kx,
            ky,
            data: vec![T::zero(); height * width * kx * ky],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        kx: usize,
        ky: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Self {
        let mut vk = Self::zeros(height, width, kx, ky);
        for m in 0..height {
            for n in 0..width {
                for r in 0..kx {
                    for t in 0..ky {
                        let v = f(m, n, r, t);
                        vk.set(m, n, r, t, v);
                    }
                }
            }
        }
        vk
    }

    #[inline]
    fn index(&self, m: usize, n: usize, r: usize, t: usize) -> usize {
        ((m * self.width + n) * self.kx + r) * self.ky + t
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize, r: usize, t: usize) -> T {
        self.data[self.index(m, n, r, t)]
    }

    #[inline]
    pub fn set(&mut self, m: usize, n: usize, r: usize, t: usize, v: T) {
        let i = self.index(m, n, r, t);
        self.data[i] = v;
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.height, self.width, self.kx, self.ky)
    }
}

/// Variable-kernel full correlation:
/// `out(m,n) = sum_{r,t} delta_padded(m-r, n-t) * vk(m,n,r,t)` where `delta`
/// is `(M-kx+1) x (N-ky+1)` and is zero-padded by `kx-1` rows on top and
/// bottom and `ky-1` columns on left and right.
pub fn conv2dvar_full<T: Real>(delta: &FeatureMap<T>, vk: &VarKernel<T>) -> Result<FeatureMap<T>> {
    let (dh, dw) = delta.shape();
    if dh + vk.kx - 1 != vk.height || dw + vk.ky - 1 != vk.width {
        return Err(Error::Shape(format!(
            "delta {dh}x{dw} with {}x{} window does not cover a {}x{} field",
            vk.kx, vk.ky, vk.height, vk.width
        )));
    }
    let mut out = FeatureMap::zeros(vk.height, vk.width);
    conv2dvar_full_acc(delta, vk, out.data_mut());
    out.ensure_finite("conv2dvar_full")?;
    Ok(out)
}

pub(crate) fn conv2dvar_full_acc<T: Real>(delta: &FeatureMap<T>, vk: &VarKernel<T>, out: &mut [T]) {
    let (dh, dw) = delta.shape();
    for m in 0..vk.height {
        // r range with 0 <= m - r < dh
        let r_lo = (m + 1).saturating_sub(dh);
        let r_hi = vk.kx.min(m + 1);
        for n in 0..vk.width {
            let t_lo = (n + 1).saturating_sub(dw);
            let t_hi = vk.ky.min(n + 1);
            let mut acc = out[m * vk.width + n];
            for r in r_lo..r_hi {
                for t in t_lo..t_hi {
                    acc = acc + delta.get(m - r, n - t) * vk.get(m, n, r, t);
                }
            }
            out[m * vk.width + n] = acc;
        }
    }
}

/// `Q` elementwise powers of `y`; entry `q - 1` holds `y^q`.
pub fn power_maps<T: Real>(y: &FeatureMap<T>, order: usize) -> Result<Vec<FeatureMap<T>>> {
    if order == 0 {
        return Err(Error::OrderOutOfRange { q: 0, order: 0 });
    }
    y.ensure_finite("power_maps input")?;
    let mut maps = Vec::with_capacity(order);
    maps.push(y.clone());
    for q in 1..order {
        let next = maps[q - 1].zip_map(y, |a, b| a * b)?;
        maps.push(next);
    }
    Ok(maps)
}

/// Block mean over `ssx x ssy` tiles.
pub fn downsample_avg<T: Real>(y: &FeatureMap<T>, ssx: usize, ssy: usize) -> Result<FeatureMap<T>> {
    if ssx == 0 || ssy == 0 {
        return Err(Error::Shape("sampling factor 0".into()));
    }
    if !y.height.is_multiple_of(ssx) || !y.width.is_multiple_of(ssy) {
        return Err(Error::Shape(format!(
            "{}x{} not divisible by {ssx}x{ssy}",
            y.height, y.width
        )));
    }
    let oh = y.height / ssx;
    let ow = y.width / ssy;
    let mut out = FeatureMap::zeros(oh, ow);
    for m in 0..oh {
        for n in 0..ow {
            // Running mean: exact on constant blocks, so down(up(y)) == y.
            let mut mean = T::zero();
            let mut count = 0usize;
            for a in 0..ssx {
                for b in 0..ssy {
                    count += 1;
                    mean = mean + (y.get(m * ssx + a, n * ssy + b) - mean) / T::of(count as f64);
                }
            }
            out.set(m, n, mean);
        }
    }
    Ok(out)
}

/// Zero-order hold: each pixel replicated into a `usx x usy` block.
pub fn upsample_zero_order<T: Real>(
    y: &FeatureMap<T>,
    usx: usize,
    usy: usize,
) -> Result<FeatureMap<T>> {
    if usx == 0 || usy == 0 {
        return Err(Error::Shape("sampling factor 0".into()));
    }
    Ok(FeatureMap::from_fn(y.height * usx, y.width * usy, |m, n| {
        y.get(m / usx, n / usy)
    }))
}
