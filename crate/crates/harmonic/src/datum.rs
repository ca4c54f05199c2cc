//! Boundary data on `[0,1]`: evaluation, exact or quadrature-based interval
//! averaging, and derivative access.

use crate::quad::{adaptive_simpson, QuadConfig, QuadError};
use crate::tree::{MadicInterval, TreeConfig, TreeError};
use crate::value::{qi, Q, Value};
use num_bigint::BigUint;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatumError {
    #[error("point {0} lies outside [0,1]")]
    PointOutOfRange(String),
    #[error("datum is not differentiable at {0}")]
    NotDifferentiable(String),
    #[error("operation requires an exact datum, but this one is black-box")]
    ExactUnsupported,
    #[error("datum has no declared bound for {0}")]
    MissingBound(&'static str),
    #[error("invalid datum construction: {0}")]
    Invalid(String),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Dense polynomial with exact rational coefficients, ascending powers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Polynomial {
    coeffs: Vec<Q>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<Q>) -> Self {
        while coeffs.len() > 1 && coeffs.last().map(Zero::is_zero).unwrap_or(false) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(Q::zero());
        }
        Polynomial { coeffs }
    }

    pub fn constant(c: Q) -> Self {
        Polynomial { coeffs: vec![c] }
    }

    pub fn coeffs(&self) -> &[Q] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, t: &Q) -> Q {
        let mut acc = Q::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * t + c;
        }
        acc
    }

    pub fn eval_f64(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for c in self.coeffs.iter().rev() {
            acc = acc * t + c.to_f64().unwrap_or(f64::NAN);
        }
        acc
    }

    pub fn derivative(&self) -> Polynomial {
        if self.coeffs.len() == 1 {
            return Polynomial::constant(Q::zero());
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, c)| c * qi(i as i64))
            .collect();
        Polynomial::new(coeffs)
    }

    pub fn antiderivative(&self) -> Polynomial {
        let mut coeffs = vec![Q::zero()];
        for (i, c) in self.coeffs.iter().enumerate() {
            coeffs.push(c / qi(i as i64 + 1));
        }
        Polynomial::new(coeffs)
    }

    /// Exact `∫_lo^hi`.
    pub fn integral(&self, lo: &Q, hi: &Q) -> Q {
        let f = self.antiderivative();
        f.eval(hi) - f.eval(lo)
    }

    pub fn scale(&self, by: &Q) -> Polynomial {
        Polynomial::new(self.coeffs.iter().map(|c| c * by).collect())
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..n)
            .map(|i| {
                let a = self.coeffs.get(i).cloned().unwrap_or_else(Q::zero);
                let b = other.coeffs.get(i).cloned().unwrap_or_else(Q::zero);
                a + b
            })
            .collect();
        Polynomial::new(coeffs)
    }

    /// `sum |c_i|`, a bound for `sup_[0,1] |p|`.
    pub fn sup_abs_bound(&self) -> Q {
        self.coeffs.iter().map(Signed::abs).sum()
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| match i {
                0 => c.to_string(),
                1 => format!("{c}*t"),
                _ => format!("{c}*t^{i}"),
            })
            .collect();
        write!(f, "{}", terms.join(" + "))
    }
}

/// Declared regularity of a black-box datum. The declaration is trusted, not
/// verified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    CTwo,
    CZero,
    BoundedIntegrable,
}

/// Black-box evaluator with declared bounds.
#[derive(Clone)]
pub struct CallableDatum {
    pub f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub smoothness: Smoothness,
    pub sup_abs: f64,
    pub lipschitz: Option<f64>,
    pub second_derivative_bound: Option<f64>,
}

impl fmt::Debug for CallableDatum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CallableDatum")
            .field("smoothness", &self.smoothness)
            .field("sup_abs", &self.sup_abs)
            .field("lipschitz", &self.lipschitz)
            .field("second_derivative_bound", &self.second_derivative_bound)
            .finish()
    }
}

/// A boundary datum `g : [0,1] -> R`.
///
/// Polynomial, piecewise-polynomial, and indicator data average exactly;
/// black-box data go through adaptive quadrature and only support the `f64`
/// backend.
#[derive(Debug, Clone)]
pub enum BoundaryDatum {
    Polynomial(Polynomial),
    /// Breakpoints `0 = t_0 < ... < t_r = 1`; piece `i` rules `[t_i, t_{i+1})`
    /// (the last piece is closed on the right).
    Piecewise {
        breakpoints: Vec<Q>,
        pieces: Vec<Polynomial>,
    },
    /// Indicator of the closed interval `[lo, hi]`: 1 inside, 0 outside.
    Indicator { lo: Q, hi: Q },
    Callable(CallableDatum),
}

impl BoundaryDatum {
    pub fn constant(c: Q) -> Self {
        BoundaryDatum::Polynomial(Polynomial::constant(c))
    }

    /// `g(t) = t`.
    pub fn linear() -> Self {
        BoundaryDatum::Polynomial(Polynomial::new(vec![Q::zero(), Q::one()]))
    }

    /// `g(t) = t^2`.
    pub fn square() -> Self {
        BoundaryDatum::Polynomial(Polynomial::new(vec![Q::zero(), Q::zero(), Q::one()]))
    }

    pub fn polynomial(coeffs: Vec<Q>) -> Self {
        BoundaryDatum::Polynomial(Polynomial::new(coeffs))
    }

    pub fn indicator(lo: Q, hi: Q) -> Result<Self, DatumError> {
        if lo < Q::zero() || hi > Q::one() || lo >= hi {
            return Err(DatumError::Invalid(format!(
                "indicator interval [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1"
            )));
        }
        Ok(BoundaryDatum::Indicator { lo, hi })
    }

    /// Indicator of the m-adic cell `[j m^{-n}, (j+1) m^{-n}]`.
    pub fn indicator_cell(config: TreeConfig, n: u32, j: BigUint) -> Result<Self, DatumError> {
        let cell = MadicInterval::new(config, n, j)?;
        BoundaryDatum::indicator(cell.lower(), cell.upper())
    }

    pub fn piecewise(breakpoints: Vec<Q>, pieces: Vec<Polynomial>) -> Result<Self, DatumError> {
        if breakpoints.len() != pieces.len() + 1 {
            return Err(DatumError::Invalid(
                "need exactly one more breakpoint than pieces".into(),
            ));
        }
        if breakpoints.first() != Some(&Q::zero()) || breakpoints.last() != Some(&Q::one()) {
            return Err(DatumError::Invalid("breakpoints must span [0,1]".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DatumError::Invalid(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(BoundaryDatum::Piecewise {
            breakpoints,
            pieces,
        })
    }

    pub fn callable(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        smoothness: Smoothness,
        sup_abs: f64,
        lipschitz: Option<f64>,
        second_derivative_bound: Option<f64>,
    ) -> Self {
        BoundaryDatum::Callable(CallableDatum {
            f: Arc::new(f),
            smoothness,
            sup_abs,
            lipschitz,
            second_derivative_bound,
        })
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self, BoundaryDatum::Callable(_))
    }

    fn check_range(t: &Q) -> Result<(), DatumError> {
        if t < &Q::zero() || t > &Q::one() {
            return Err(DatumError::PointOutOfRange(t.to_string()));
        }
        Ok(())
    }

    /// Exact evaluation; errors for black-box data.
    pub fn eval_exact(&self, t: &Q) -> Result<Q, DatumError> {
        Self::check_range(t)?;
        match self {
            BoundaryDatum::Polynomial(p) => Ok(p.eval(t)),
            BoundaryDatum::Piecewise {
                breakpoints,
                pieces,
            } => {
                let idx = piece_index(breakpoints, t);
                Ok(pieces[idx].eval(t))
            }
            BoundaryDatum::Indicator { lo, hi } => {
                Ok(if lo <= t && t <= hi { Q::one() } else { Q::zero() })
            }
            BoundaryDatum::Callable(_) => Err(DatumError::ExactUnsupported),
        }
    }

    pub fn eval_f64(&self, t: f64) -> Result<f64, DatumError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(DatumError::PointOutOfRange(t.to_string()));
        }
        match self {
            BoundaryDatum::Callable(c) => Ok((c.f)(t)),
            BoundaryDatum::Indicator { lo, hi } => {
                let lo = lo.to_f64().unwrap();
                let hi = hi.to_f64().unwrap();
                Ok(if (lo..=hi).contains(&t) { 1.0 } else { 0.0 })
            }
            BoundaryDatum::Polynomial(p) => Ok(p.eval_f64(t)),
            BoundaryDatum::Piecewise { .. } => {
                // route through the exact path on the nearest representable
                // rational so breakpoint conventions match eval_exact
                let tq = Q::from_float(t)
                    .ok_or_else(|| DatumError::PointOutOfRange(t.to_string()))?;
                Ok(self.eval_exact(&tq)?.to_f64().unwrap_or(f64::NAN))
            }
        }
    }

    /// Backend-generic evaluation.
    pub fn eval<V: Value>(&self, t: &Q) -> Result<V, DatumError> {
        match self.eval_exact(t) {
            Ok(v) => Ok(V::from_q(&v)),
            Err(DatumError::ExactUnsupported) => {
                let x = self.eval_f64(t.to_f64().unwrap())?;
                V::from_f64(x).ok_or(DatumError::ExactUnsupported)
            }
            Err(e) => Err(e),
        }
    }

    /// Exact `∫_lo^hi g`; errors for black-box data.
    pub fn integral_exact(&self, lo: &Q, hi: &Q) -> Result<Q, DatumError> {
        Self::check_range(lo)?;
        Self::check_range(hi)?;
        if lo > hi {
            return Ok(-self.integral_exact(hi, lo)?);
        }
        match self {
            BoundaryDatum::Polynomial(p) => Ok(p.integral(lo, hi)),
            BoundaryDatum::Piecewise {
                breakpoints,
                pieces,
            } => {
                let mut total = Q::zero();
                for (i, piece) in pieces.iter().enumerate() {
                    let a = (&breakpoints[i]).max(lo);
                    let b = (&breakpoints[i + 1]).min(hi);
                    if a < b {
                        total += piece.integral(a, b);
                    }
                }
                Ok(total)
            }
            BoundaryDatum::Indicator { lo: a, hi: b } => {
                let left = a.max(lo);
                let right = b.min(hi);
                Ok(if left < right {
                    right - left
                } else {
                    Q::zero()
                })
            }
            BoundaryDatum::Callable(_) => Err(DatumError::ExactUnsupported),
        }
    }

    /// `∫_lo^hi g` in the requested backend, with an error bound. Exact data
    /// report a zero bound; black-box data go through adaptive quadrature.
    pub fn integral<V: Value>(
        &self,
        lo: &Q,
        hi: &Q,
        quad: &QuadConfig,
    ) -> Result<(V, V), DatumError> {
        match self.integral_exact(lo, hi) {
            Ok(v) => Ok((V::from_q(&v), V::zero())),
            Err(DatumError::ExactUnsupported) => {
                let r = adaptive_simpson(
                    &|t| self.eval_f64(t.clamp(0.0, 1.0)).unwrap_or(f64::NAN),
                    lo.to_f64().unwrap(),
                    hi.to_f64().unwrap(),
                    quad,
                )?;
                let v = V::from_f64(r.value).ok_or(DatumError::ExactUnsupported)?;
                let e = V::from_f64(r.err_estimate).ok_or(DatumError::ExactUnsupported)?;
                Ok((v, e))
            }
            Err(e) => Err(e),
        }
    }

    /// Average over an m-adic interval with an error bound
    /// (`(1/|I|) ∫_I g`; the bound is zero for exact data).
    pub fn average_with_err<V: Value>(
        &self,
        iv: &MadicInterval,
        quad: &QuadConfig,
    ) -> Result<(V, V), DatumError> {
        let (int, err) = self.integral::<V>(&iv.lower(), &iv.upper(), quad)?;
        let inv_len = V::from_q(&(Q::one() / iv.length()));
        Ok((int * inv_len.clone(), err * inv_len))
    }

    pub fn average<V: Value>(
        &self,
        iv: &MadicInterval,
        quad: &QuadConfig,
    ) -> Result<V, DatumError> {
        Ok(self.average_with_err::<V>(iv, quad)?.0)
    }

    /// Exact average; errors for black-box data.
    pub fn average_exact(&self, iv: &MadicInterval) -> Result<Q, DatumError> {
        Ok(self.integral_exact(&iv.lower(), &iv.upper())? / iv.length())
    }

    /// Average through the quadrature path regardless of datum kind (used to
    /// cross-check the exact path).
    pub fn average_quadrature(
        &self,
        iv: &MadicInterval,
        quad: &QuadConfig,
    ) -> Result<(f64, f64), DatumError> {
        let r = adaptive_simpson(
            &|t| self.eval_f64(t.clamp(0.0, 1.0)).unwrap_or(f64::NAN),
            iv.lower().to_f64().unwrap(),
            iv.upper().to_f64().unwrap(),
            quad,
        )?;
        let inv_len = iv.length().to_f64().unwrap().recip();
        Ok((r.value * inv_len, r.err_estimate * inv_len))
    }

    /// Exact derivative; errors where the datum is not differentiable or not
    /// exact.
    pub fn derivative_exact(&self, t: &Q) -> Result<Q, DatumError> {
        Self::check_range(t)?;
        match self {
            BoundaryDatum::Polynomial(p) => Ok(p.derivative().eval(t)),
            BoundaryDatum::Piecewise {
                breakpoints,
                pieces,
            } => {
                // differentiable only in open piece interiors
                if breakpoints.iter().any(|b| b == t) {
                    return Err(DatumError::NotDifferentiable(t.to_string()));
                }
                let idx = piece_index(breakpoints, t);
                Ok(pieces[idx].derivative().eval(t))
            }
            BoundaryDatum::Indicator { .. } => Err(DatumError::NotDifferentiable(t.to_string())),
            BoundaryDatum::Callable(_) => Err(DatumError::ExactUnsupported),
        }
    }

    /// Derivative with an error estimate: exact (bound 0) where possible,
    /// Richardson-extrapolated central differences for declared-C2 black-box
    /// data.
    pub fn derivative_f64(&self, t: f64) -> Result<(f64, f64), DatumError> {
        match self {
            BoundaryDatum::Callable(c) => {
                if c.smoothness != Smoothness::CTwo {
                    return Err(DatumError::NotDifferentiable(t.to_string()));
                }
                if !(0.0..=1.0).contains(&t) {
                    return Err(DatumError::PointOutOfRange(t.to_string()));
                }
                let h = 1e-4_f64.min(t).min(1.0 - t);
                if h <= 0.0 {
                    // second-order one-sided formula at the endpoints
                    let s = if t == 0.0 { 1.0 } else { -1.0 };
                    let h = 1e-5;
                    let d = s * (-3.0 * (c.f)(t) + 4.0 * (c.f)(t + s * h) - (c.f)(t + 2.0 * s * h))
                        / (2.0 * h);
                    return Ok((d, h * h * c.second_derivative_bound.unwrap_or(1.0)));
                }
                let central = |h: f64| ((c.f)(t + h) - (c.f)(t - h)) / (2.0 * h);
                let d1 = central(h);
                let d2 = central(h / 2.0);
                let extrapolated = (4.0 * d2 - d1) / 3.0;
                Ok((extrapolated, (d2 - d1).abs() / 3.0 + 1e-12))
            }
            _ => {
                let tq = Q::from_float(t).ok_or_else(|| DatumError::PointOutOfRange(t.to_string()))?;
                let d = self.derivative_exact(&tq)?;
                Ok((d.to_f64().unwrap_or(f64::NAN), 0.0))
            }
        }
    }

    pub fn derivative<V: Value>(&self, t: &Q) -> Result<V, DatumError> {
        match self.derivative_exact(t) {
            Ok(v) => Ok(V::from_q(&v)),
            Err(DatumError::ExactUnsupported) => {
                let (d, _) = self.derivative_f64(t.to_f64().unwrap())?;
                V::from_f64(d).ok_or(DatumError::ExactUnsupported)
            }
            Err(e) => Err(e),
        }
    }

    /// Bound for `sup |g|` on `[0,1]`.
    pub fn sup_abs_bound(&self) -> Q {
        match self {
            BoundaryDatum::Polynomial(p) => p.sup_abs_bound(),
            BoundaryDatum::Piecewise { pieces, .. } => pieces
                .iter()
                .map(Polynomial::sup_abs_bound)
                .max()
                .unwrap_or_else(Q::zero),
            BoundaryDatum::Indicator { .. } => Q::one(),
            BoundaryDatum::Callable(c) => Q::from_float(c.sup_abs).unwrap_or_else(Q::one),
        }
    }

    /// Bound for `sup |g'|` where the datum is globally Lipschitz.
    pub fn lipschitz_bound(&self) -> Option<Q> {
        match self {
            BoundaryDatum::Polynomial(p) => Some(p.derivative().sup_abs_bound()),
            BoundaryDatum::Piecewise { .. } => None,
            BoundaryDatum::Indicator { .. } => None,
            BoundaryDatum::Callable(c) => c.lipschitz.and_then(Q::from_float),
        }
    }

    /// A self-contained `f64` integrator for exact datum kinds, for bulk
    /// sweeps that would otherwise pay rational arithmetic per cell. `None`
    /// for black-box data.
    pub fn fast_integrand(&self) -> Option<FastIntegrand> {
        let poly_f64 = |p: &Polynomial| -> Vec<f64> {
            p.antiderivative()
                .coeffs()
                .iter()
                .map(|c| c.to_f64().unwrap_or(f64::NAN))
                .collect()
        };
        match self {
            BoundaryDatum::Polynomial(p) => Some(FastIntegrand::Poly(poly_f64(p))),
            BoundaryDatum::Piecewise {
                breakpoints,
                pieces,
            } => Some(FastIntegrand::Piecewise {
                breaks: breakpoints
                    .iter()
                    .map(|b| b.to_f64().unwrap_or(f64::NAN))
                    .collect(),
                antiderivatives: pieces.iter().map(poly_f64).collect(),
            }),
            BoundaryDatum::Indicator { lo, hi } => Some(FastIntegrand::Indicator {
                lo: lo.to_f64().unwrap_or(f64::NAN),
                hi: hi.to_f64().unwrap_or(f64::NAN),
            }),
            BoundaryDatum::Callable(_) => None,
        }
    }

    /// Bound for the oscillation of `g` over any interval of length
    /// `m^{-depth}`.
    pub fn interval_osc_bound(&self, m: u32, depth: u32) -> Q {
        let crude = match self {
            BoundaryDatum::Indicator { .. } => Q::one(),
            _ => qi(2) * self.sup_abs_bound(),
        };
        match self.lipschitz_bound() {
            Some(lip) => {
                let len = Q::new(1.into(), num::BigInt::from(m).pow(depth));
                (lip * len).min(crude)
            }
            None => crude,
        }
    }
}

/// Closed-form `f64` integrals of exact datum kinds.
#[derive(Debug, Clone)]
pub enum FastIntegrand {
    /// antiderivative coefficients, ascending
    Poly(Vec<f64>),
    Piecewise {
        breaks: Vec<f64>,
        antiderivatives: Vec<Vec<f64>>,
    },
    Indicator { lo: f64, hi: f64 },
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for c in coeffs.iter().rev() {
        acc = acc * t + c;
    }
    acc
}

impl FastIntegrand {
    /// `∫_lo^hi g` (assumes `lo <= hi` within `[0,1]`).
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        match self {
            FastIntegrand::Poly(f) => horner(f, hi) - horner(f, lo),
            FastIntegrand::Piecewise {
                breaks,
                antiderivatives,
            } => {
                let mut total = 0.0;
                for (i, f) in antiderivatives.iter().enumerate() {
                    let a = breaks[i].max(lo);
                    let b = breaks[i + 1].min(hi);
                    if a < b {
                        total += horner(f, b) - horner(f, a);
                    }
                }
                total
            }
            FastIntegrand::Indicator { lo: a, hi: b } => (b.min(hi) - a.max(lo)).max(0.0),
        }
    }

    pub fn average(&self, lo: f64, hi: f64) -> f64 {
        self.integral(lo, hi) / (hi - lo)
    }
}

fn piece_index(breakpoints: &[Q], t: &Q) -> usize {
    // t in [b_i, b_{i+1}); the final piece owns its right endpoint
    let n = breakpoints.len() - 1;
    for i in 0..n {
        if t < &breakpoints[i + 1] {
            return i;
        }
    }
    n - 1
}
