//! Nodal, pool and activation operators with their derivatives.
//!
//! The fixed nodal operators take a scalar weight; the Maclaurin nodal takes
//! the `Q` coefficients of one kernel element, `w[0]` multiplying `y^1`.
//! Fixed nodal definitions (not taken from a reference library):
//!
//! | id      | value            |
//! |---------|------------------|
//! | `mul`   | `w * y`          |
//! | `sin`   | `sin(w * y)`     |
//! | `exp`   | `exp(w * y) - 1` |
//! | `chirp` | `sin(w * y^2)`   |

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Slack on the `[-1, 1]` domain of the Maclaurin nodal.
pub const DOMAIN_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Sum,
    Median,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    #[serde(rename = "lincut")]
    LinCut,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nodal {
    Mul,
    Sin,
    Exp,
    Chirp,
    Maclaurin,
}

/// Operator triple of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperatorSet {
    pub pool: Pool,
    pub activation: Activation,
    pub nodal: Nodal,
}

impl OperatorSet {
    pub const fn new(pool: Pool, activation: Activation, nodal: Nodal) -> Self {
        Self {
            pool,
            activation,
            nodal,
        }
    }

    /// sum / tanh / maclaurin
    pub const fn generative() -> Self {
        Self::new(Pool::Sum, Activation::Tanh, Nodal::Maclaurin)
    }

    /// sum / tanh / mul
    pub const fn convolutional() -> Self {
        Self::new(Pool::Sum, Activation::Tanh, Nodal::Mul)
    }
}

impl fmt::Display for OperatorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.pool, self.activation, self.nodal)
    }
}

impl fmt::Display for Pool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pool::Sum => "sum",
            Pool::Median => "median",
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::LinCut => "lincut",
        })
    }
}

impl fmt::Display for Nodal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Nodal::Mul => "mul",
            Nodal::Sin => "sin",
            Nodal::Exp => "exp",
            Nodal::Chirp => "chirp",
            Nodal::Maclaurin => "maclaurin",
        })
    }
}

/// Coefficients `w_1..w_Q` of a Maclaurin nodal (no constant term).
#[derive(Clone, Debug, PartialEq)]
pub struct MaclaurinWeights<T = f64>(Vec<T>);

impl<T: Real> MaclaurinWeights<T> {
    pub fn new(q_weights: Vec<T>) -> Result<Self> {
        if q_weights.is_empty() {
            return Err(Error::OrderOutOfRange { q: 0, order: 0 });
        }
        Ok(Self(q_weights))
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

#[inline]
pub fn check_domain<T: Real>(y: T) -> Result<()> {
    // written so that NaN fails too
    if y.abs().f64() <= 1.0 + DOMAIN_SLACK {
        Ok(())
    } else {
        Err(Error::Domain { value: y.f64() })
    }
}

/// `sum_q w_q y^q`, ascending powers.
pub fn maclaurin_eval<T: Real>(y: T, w: &MaclaurinWeights<T>) -> Result<T> {
    check_domain(y)?;
    Ok(maclaurin_value(y, w.as_slice()))
}

/// `sum_q q w_q y^(q-1)`.
pub fn maclaurin_dy<T: Real>(y: T, w: &MaclaurinWeights<T>) -> Result<T> {
    check_domain(y)?;
    Ok(maclaurin_slope(y, w.as_slice()))
}

/// `d/dw_q` of the Maclaurin nodal: `y^q`.
pub fn maclaurin_dw<T: Real>(y: T, q: usize, order: usize) -> Result<T> {
    if q == 0 || q > order {
        return Err(Error::OrderOutOfRange { q, order });
    }
    check_domain(y)?;
    Ok(y.powi(q as i32))
}

#[inline]
pub(crate) fn maclaurin_value<T: Real>(y: T, w: &[T]) -> T {
    let mut acc = T::zero();
    let mut p = y;
    for &wq in w {
        acc = acc + wq * p;
        p = p * y;
    }
    acc
}

#[inline]
pub(crate) fn maclaurin_slope<T: Real>(y: T, w: &[T]) -> T {
    let mut acc = T::zero();
    let mut p = T::one();
    for (q, &wq) in w.iter().enumerate() {
        acc = acc + T::of((q + 1) as f64) * wq * p;
        p = p * y;
    }
    acc
}

/// Value of any nodal operator; `w` is the weight slice of one kernel
/// element (length 1 for the fixed operators).
#[inline]
pub fn nodal_eval<T: Real>(nodal: Nodal, w: &[T], y: T) -> T {
    match nodal {
        Nodal::Mul => w[0] * y,
        Nodal::Sin => (w[0] * y).sin(),
        Nodal::Exp => (w[0] * y).exp() - T::one(),
        Nodal::Chirp => (w[0] * y * y).sin(),
        Nodal::Maclaurin => maclaurin_value(y, w),
    }
}

/// `d nodal / d y`.
#[inline]
pub fn nodal_dy<T: Real>(nodal: Nodal, w: &[T], y: T) -> T {
    match nodal {
        Nodal::Mul => w[0],
        Nodal::Sin => w[0] * (w[0] * y).cos(),
        Nodal::Exp => w[0] * (w[0] * y).exp(),
        Nodal::Chirp => T::of(2.0) * w[0] * y * (w[0] * y * y).cos(),
        Nodal::Maclaurin => maclaurin_slope(y, w),
    }
}

/// `d nodal / d w_q`, `q` 1-based (always 1 for the fixed operators).
#[inline]
pub fn nodal_dw<T: Real>(nodal: Nodal, w: &[T], y: T, q: usize) -> T {
    match nodal {
        Nodal::Mul => y,
        Nodal::Sin => y * (w[0] * y).cos(),
        Nodal::Exp => y * (w[0] * y).exp(),
        Nodal::Chirp => y * y * (w[0] * y * y).cos(),
        Nodal::Maclaurin => y.powi(q as i32),
    }
}

/// Scalar-weight nodal entry point; rejects the Maclaurin id.
pub fn nodal_fixed<T: Real>(nodal: Nodal, w: T, y: T) -> Result<T> {
    fixed_only(nodal)?;
    Ok(nodal_eval(nodal, &[w], y))
}

pub fn nodal_fixed_dy<T: Real>(nodal: Nodal, w: T, y: T) -> Result<T> {
    fixed_only(nodal)?;
    Ok(nodal_dy(nodal, &[w], y))
}

pub fn nodal_fixed_dw<T: Real>(nodal: Nodal, w: T, y: T) -> Result<T> {
    fixed_only(nodal)?;
    Ok(nodal_dw(nodal, &[w], y, 1))
}

fn fixed_only(nodal: Nodal) -> Result<()> {
    if nodal == Nodal::Maclaurin {
        Err(Error::InvalidSpec(
            "maclaurin is not a scalar-weight nodal operator".into(),
        ))
    } else {
        Ok(())
    }
}

/// Index of the lower median, first occurrence in scan order on ties.
pub(crate) fn median_index<T: Real>(terms: &[T], scratch: &mut Vec<T>) -> usize {
    scratch.clear();
    scratch.extend_from_slice(terms);
    let mid = (terms.len() - 1) / 2;
    let (_, &mut v, _) = scratch.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    terms.iter().position(|&t| t == v).unwrap()
}

pub fn pool_apply<T: Real>(pool: Pool, terms: &[T]) -> Result<T> {
    if terms.is_empty() {
        return Err(Error::EmptyPool);
    }
    Ok(match pool {
        Pool::Sum => terms.iter().copied().sum(),
        Pool::Median => terms[median_index(terms, &mut Vec::new())],
    })
}

/// Partial derivative of the pool result with respect to `terms[index]`.
pub fn pool_dterm<T: Real>(pool: Pool, terms: &[T], index: usize) -> Result<T> {
    if terms.is_empty() {
        return Err(Error::EmptyPool);
    }
    if index >= terms.len() {
        return Err(Error::Shape(format!(
            "pool term index {index} out of {}",
            terms.len()
        )));
    }
    Ok(match pool {
        Pool::Sum => T::one(),
        Pool::Median => {
            if median_index(terms, &mut Vec::new()) == index {
                T::one()
            } else {
                T::zero()
            }
        }
    })
}

#[inline]
pub fn activation<T: Real>(act: Activation, x: T) -> T {
    match act {
        Activation::Tanh => x.tanh(),
        Activation::LinCut => x.max(-T::one()).min(T::one()),
    }
}

/// Derivative of the activation; lincut uses 0 at the two kinks.
#[inline]
pub fn activation_dx<T: Real>(act: Activation, x: T) -> T {
    match act {
        Activation::Tanh => {
            let t = x.tanh();
            T::one() - t * t
        }
        Activation::LinCut => {
            if x > -T::one() && x < T::one() {
                T::one()
            } else {
                T::zero()
            }
        }
    }
}
