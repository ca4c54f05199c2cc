//! Boundary operators for the tree Dirichlet problem.
//!
//! Two scaled limits along a branch are computed. The first pairs the
//! successor-difference gradient with a fixed weight vector and scales by
//! `m^k`; its limit is local, a constant times `g'` at the branch point. The
//! second takes successive solution differences scaled by `p^{-k}`; for
//! `1/(m+1) < beta < 1/2` its limit is a nonlocal integral operator whose
//! kernel blows up at the branch point like a fractional power, and both the
//! finite-depth kernels and the limit kernel are evaluated here with
//! annulus-exact quadrature.

use crate::datum::{BoundaryDatum, DatumError};
use crate::dirichlet::{BetaParam, Solution, SolveError};
use crate::quad::QuadConfig;
use crate::tree::{Branch, TreeConfig, TreeError, Vertex};
use crate::value::{pow_u, qi, Q, Value};
use num::BigInt;
use num_traits::{One, Zero};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DtnError {
    #[error("closed form requires a zero-sum weight vector when beta > 0 (sum is {0})")]
    HypothesisViolation(Q),
    #[error("weight vector has {got} components, the tree branches {expected} ways")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("kernel form is only valid for beta in (1/(m+1), 1/2); got beta = {0}")]
    KernelFormNotValid(String),
    #[error("the limit kernel is singular at the branch point itself")]
    SingularPoint,
    #[error("datum must declare a Lipschitz bound for the quadrature tail")]
    MissingLipschitz,
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Datum(#[from] DatumError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Successor differences `(u(x,0)-u(x), ..., u(x,m-1)-u(x))`.
pub fn gradient<V: Value>(s: &Solution<V>, x: &Vertex) -> Result<Vec<V>, SolveError> {
    let ux = s.value(x)?;
    x.successors()
        .iter()
        .map(|c| Ok(s.value(c)? - ux.clone()))
        .collect()
}

/// Offsets of the successor-interval midpoints from the parent-interval
/// midpoint, in units of the parent interval length: component `j` is
/// `(2j+1-m)/(2m)`. Orthogonal to `(1,...,1)`; the middle entry is zero
/// exactly when `m` is odd.
pub fn successor_midpoint_offsets(m: u32) -> Vec<Q> {
    (0..m)
        .map(|j| {
            Q::new(
                BigInt::from(2 * j as i64 + 1 - m as i64),
                BigInt::from(2 * m as i64),
            )
        })
        .collect()
}

/// The successor index vector `(0, 1, ..., m-1)`.
pub fn successor_index_vector(m: u32) -> Vec<Q> {
    (0..m).map(|j| qi(j as i64)).collect()
}

/// A fixed weight ("normal") vector paired with the gradient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalVector {
    components: Vec<Q>,
}

impl NormalVector {
    pub fn new(components: Vec<Q>) -> Self {
        NormalVector { components }
    }

    pub fn components(&self) -> &[Q] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn sum(&self) -> Q {
        self.components.iter().sum()
    }

    pub fn is_zero_sum(&self) -> bool {
        self.sum().is_zero()
    }

    pub fn dot(&self, other: &[Q]) -> Q {
        self.components
            .iter()
            .zip(other)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// One finite-depth estimate of a scaled boundary operator.
#[derive(Debug, Clone)]
pub struct DtnRow<V> {
    pub depth: u32,
    pub estimate: V,
    pub target: Option<V>,
    pub gap: Option<V>,
}

#[derive(Debug, Clone)]
pub struct LambdaSweep<V> {
    pub rows: Vec<DtnRow<V>>,
    /// Closed-form limit when the datum is differentiable at the branch point.
    pub target: Option<V>,
}

fn check_eta(eta: &NormalVector, config: TreeConfig) -> Result<(), DtnError> {
    if eta.len() != config.m() as usize {
        return Err(DtnError::DimensionMismatch {
            got: eta.len(),
            expected: config.m() as usize,
        });
    }
    Ok(())
}

fn lambda_constant(beta: &BetaParam, eta: &NormalVector, m: u32) -> Result<Q, DtnError> {
    if beta.beta().is_zero() {
        return Ok(eta.dot(&successor_midpoint_offsets(m)));
    }
    if !eta.is_zero_sum() {
        return Err(DtnError::HypothesisViolation(eta.sum()));
    }
    // (1-2beta)/(m(1-beta)) * <eta, (0..m-1)>
    let b = beta.beta();
    let c = (Q::one() - qi(2) * b) / (qi(m as i64) * (Q::one() - b));
    Ok(c * eta.dot(&successor_index_vector(m)))
}

/// Closed-form value of the scaled-gradient operator at boundary point `t`:
/// `g'(t) <eta, omega_m>` for `beta = 0`, and
/// `(1-2beta)/(m(1-beta)) g'(t) <eta, (0,...,m-1)>` for `0 < beta < 1/2` with
/// zero-sum `eta` (refused otherwise — there is no formula).
pub fn lambda_closed_form<V: Value>(
    g: &BoundaryDatum,
    beta: &BetaParam,
    eta: &NormalVector,
    t: &Q,
    config: TreeConfig,
) -> Result<V, DtnError> {
    check_eta(eta, config)?;
    if !beta.is_subcritical() {
        return Err(SolveError::NoBoundedSolution(beta.beta().to_string()).into());
    }
    let c = lambda_constant(beta, eta, config.m())?;
    let gprime: V = g.derivative(t)?;
    Ok(gprime * V::from_q(&c))
}

/// Finite-depth estimates `m^k <grad u(x_k), eta>` along a branch, one row
/// per requested depth, with the closed-form target and gap where the datum
/// has a derivative at the branch point.
pub fn lambda_sweep<V: Value>(
    g: &BoundaryDatum,
    beta: &BetaParam,
    eta: &NormalVector,
    branch: &Branch,
    depths: &[u32],
    quad: &QuadConfig,
) -> Result<LambdaSweep<V>, DtnError> {
    let config = branch.config();
    check_eta(eta, config)?;
    // same hypothesis gate as the closed form: without it the prelimit
    // diverges and there is nothing to estimate
    let _ = lambda_constant(beta, eta, config.m())?;
    let sol = Solution::<V>::solve(g.clone(), beta.clone(), config, *quad)?;
    let target = match lambda_closed_form::<V>(g, beta, eta, &branch.psi(), config) {
        Ok(v) => Some(v),
        Err(DtnError::Datum(DatumError::NotDifferentiable(_))) => None,
        Err(e) => return Err(e),
    };
    let eta_v: Vec<V> = eta.components().iter().map(|c| V::from_q(c)).collect();
    let m_v = V::from_q(&config.m_q());
    let mut rows = Vec::with_capacity(depths.len());
    for &k in depths {
        let x = branch.prefix(k);
        let grad = gradient(&sol, &x)?;
        let mut pairing = V::zero();
        for (gi, ei) in grad.into_iter().zip(&eta_v) {
            pairing = pairing + gi * ei.clone();
        }
        let estimate = pow_u(&m_v, k) * pairing;
        let gap = target
            .as_ref()
            .map(|t| (estimate.clone() - t.clone()).abs());
        rows.push(DtnRow {
            depth: k,
            estimate,
            target: target.clone(),
            gap,
        });
    }
    Ok(LambdaSweep { rows, target })
}

/// Least-squares slope of `ln(gap)` against depth over rows with a strictly
/// positive gap. `None` when fewer than two rows qualify (e.g. the sweep is
/// exact and every gap is zero).
pub fn fit_log_gap_slope<V: Value>(rows: &[DtnRow<V>]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            let gap = r.gap.as_ref()?.approx_f64();
            (gap > 1e-300).then(|| (r.depth as f64, gap.ln()))
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    (denom != 0.0).then(|| (n * sxy - sx * sy) / denom)
}

// ---------------------------------------------------------------------------
// The branch-increment operator and its kernels
// ---------------------------------------------------------------------------

/// One finite-depth estimate `p^{-k}(u(x_{k+1}) - u(x_k))` with its exact
/// decomposition into the corrected bulk integral and the two depth-dependent
/// terms: `estimate = (1-p)(bulk + j1 + j2)`.
#[derive(Debug, Clone)]
pub struct GammaRow<V> {
    pub depth: u32,
    pub estimate: V,
    pub bulk: V,
    pub j1: V,
    pub j2: V,
}

#[derive(Debug, Clone)]
pub struct GammaSweep<V> {
    pub rows: Vec<GammaRow<V>>,
    /// True when `beta > 1/(m+1)`, i.e. `p*m > 1`, so the kernel-form limit
    /// exists and `j2 -> 0`. Otherwise the rows are reported as diagnostics
    /// only; no value is asserted.
    pub kernel_form_valid: bool,
}

fn require_interior_beta(beta: &BetaParam) -> Result<Q, DtnError> {
    if beta.beta() <= &Q::zero() || !beta.is_subcritical() {
        return Err(SolveError::BetaOutsideOperationRange {
            needed: "(0, 1/2)",
            got: beta.beta().to_string(),
        }
        .into());
    }
    Ok(beta.p().expect("beta < 1"))
}

/// True when `p*m > 1`, the regime where the kernel-form limit exists.
pub fn kernel_form_valid(beta: &BetaParam, m: u32) -> bool {
    match beta.p() {
        Ok(p) => p * qi(m as i64) > Q::one(),
        Err(_) => false,
    }
}

/// `∫_lo^hi (g(psi) - g(t)) dt` in the backend.
fn defect_integral<V: Value>(
    g: &BoundaryDatum,
    gpsi: &V,
    lo: &Q,
    hi: &Q,
    quad: &QuadConfig,
) -> Result<V, DtnError> {
    let (int, _err) = g.integral::<V>(lo, hi, quad)?;
    let len = V::from_q(&(hi - lo));
    Ok(gpsi.clone() * len - int)
}

/// Same defect integral over the annulus `I_{pi,n} \ I_{pi,n+1}` (at most two
/// pieces).
fn annulus_defect<V: Value>(
    g: &BoundaryDatum,
    gpsi: &V,
    branch: &Branch,
    n: u32,
    quad: &QuadConfig,
) -> Result<V, DtnError> {
    let outer = branch.interval(n);
    let inner = branch.interval(n + 1);
    let mut total = V::zero();
    let (olo, ohi) = (outer.lower(), outer.upper());
    let (ilo, ihi) = (inner.lower(), inner.upper());
    if olo < ilo {
        total = total + defect_integral(g, gpsi, &olo, &ilo, quad)?;
    }
    if ihi < ohi {
        total = total + defect_integral(g, gpsi, &ihi, &ohi, quad)?;
    }
    Ok(total)
}

/// Finite-depth estimates of the branch-increment operator with the exact
/// three-term decomposition as diagnostics. `depths` should be increasing;
/// each row's `j1` accumulates annuli `1..=k`.
pub fn gamma_sweep<V: Value>(
    g: &BoundaryDatum,
    beta: &BetaParam,
    branch: &Branch,
    depths: &[u32],
    quad: &QuadConfig,
) -> Result<GammaSweep<V>, DtnError> {
    let p = require_interior_beta(beta)?;
    let config = branch.config();
    let m = config.m();
    let sol = Solution::<V>::solve(g.clone(), beta.clone(), config, *quad)?;
    let gpsi: V = g.eval(&branch.psi())?;

    let p_v = V::from_q(&p);
    // c = m(1-p)/(m-p), the bulk correction weight on I_{pi,1}
    let c_q = qi(m as i64) * (Q::one() - &p) / (qi(m as i64) - &p);
    let c = V::from_q(&c_q);
    let m_over_p = V::from_q(&(config.m_q() / &p));

    // bulk = ∫_0^1 (g(psi)-g) - c ∫_{I_{pi,1}} (g(psi)-g)
    let i1 = branch.interval(1);
    let whole = defect_integral(g, &gpsi, &Q::zero(), &Q::one(), quad)?;
    let over_i1 = defect_integral(g, &gpsi, &i1.lower(), &i1.upper(), quad)?;
    let bulk = whole - c.clone() * over_i1;

    let mut rows = Vec::with_capacity(depths.len());
    let mut j1_acc = V::zero();
    let mut next_annulus = 1u32;
    for &k in depths {
        while next_annulus <= k {
            let a = annulus_defect(g, &gpsi, branch, next_annulus, quad)?;
            j1_acc = j1_acc + pow_u(&m_over_p, next_annulus) * a;
            next_annulus += 1;
        }
        let j1 = c.clone() * j1_acc.clone();
        let inner = branch.interval(k + 1);
        let tail = defect_integral(g, &gpsi, &inner.lower(), &inner.upper(), quad)?;
        // innermost region carries kernel (1-c) + (c-m)(m/p)^k; the bulk term
        // already accounts for (1-c), leaving (c-m)(m/p)^k here
        let j2 = V::from_q(&(&c_q - qi(m as i64))) * pow_u(&m_over_p, k) * tail;

        let u_k = sol.value(&branch.prefix(k))?;
        let u_k1 = sol.value(&branch.prefix(k + 1))?;
        let estimate = (u_k1 - u_k) / pow_u(&p_v, k);
        rows.push(GammaRow {
            depth: k,
            estimate,
            bulk: bulk.clone(),
            j1,
            j2,
        });
    }
    Ok(GammaSweep {
        rows,
        kernel_form_valid: kernel_form_valid(beta, m),
    })
}

/// Finite-depth kernel `K_m^j(x, t)` representing the successor difference:
/// `u(x,j) - u(x) = -(1-p) ∫ K_m^j(x,t) g(t) dt`. Piecewise constant on the
/// m-adic cells around `x`; evaluated from the containment depth of `t`.
pub fn kernel_finite(x: &Vertex, j: u32, t: &Q, beta: &BetaParam) -> Result<Q, DtnError> {
    let p = require_interior_beta(beta)?;
    if x.is_root() {
        return Err(SolveError::PreconditionViolated(
            "finite kernel needs a non-root vertex".into(),
        )
        .into());
    }
    if t < &Q::zero() || t > &Q::one() {
        return Err(DatumError::PointOutOfRange(t.to_string()).into());
    }
    let child = x.child(j)?;
    let in_child = child.interval().contains(t);
    // deepest ancestor level containing t (0 if none)
    let level = x.level();
    let mut containment = 0u32;
    for l in (1..=level).rev() {
        if x.ancestor(level - l)?.interval().contains(t) {
            containment = l;
            break;
        }
    }
    Ok(kernel_region_value(
        x.config().m(),
        &p,
        level,
        containment,
        in_child,
    ))
}

/// Kernel value on the region where the deepest containing ancestor level is
/// `containment` (0 = outside even the level-1 ancestor interval).
fn kernel_region_value(m: u32, p: &Q, level: u32, containment: u32, in_child: bool) -> Q {
    let mq = qi(m as i64);
    let p_over_m = p / &mq;
    // m^{|x|} [ (p/m)^{|x|} + (1-p) sum_{i=|x|-containment}^{|x|-1} (p/m)^i ] - m^{|x|+1} chi
    let mut inner = pow_u(&p_over_m, level);
    if containment >= 1 {
        let mut geo = Q::zero();
        for i in (level - containment)..level {
            geo += pow_u(&p_over_m, i);
        }
        inner += (Q::one() - p) * geo;
    }
    let mut value = pow_u(&mq, level) * inner;
    if in_child {
        value -= pow_u(&mq, level + 1);
    }
    value
}

/// Exact `∫_0^1 K_m^j(x, t) g(t) dt` by summing the kernel's constancy
/// pieces. Exact for exact data; quadrature per piece otherwise.
pub fn kernel_finite_integral<V: Value>(
    g: &BoundaryDatum,
    x: &Vertex,
    j: u32,
    beta: &BetaParam,
    quad: &QuadConfig,
) -> Result<V, DtnError> {
    let p = require_interior_beta(beta)?;
    if x.is_root() {
        return Err(SolveError::PreconditionViolated(
            "finite kernel needs a non-root vertex".into(),
        )
        .into());
    }
    let m = x.config().m();
    let level = x.level();

    // collect the kernel's constancy pieces as (value, lo, hi)
    let mut pieces: Vec<(Q, Q, Q)> = Vec::new();

    // outside the level-1 ancestor interval
    let top = x.ancestor(level - 1)?.interval();
    let outside = kernel_region_value(m, &p, level, 0, false);
    pieces.push((outside.clone(), Q::zero(), top.lower()));
    pieces.push((outside, top.upper(), Q::one()));

    // annuli between successive ancestor intervals
    for l in 1..level {
        let outer = x.ancestor(level - l)?.interval();
        let inner = x.ancestor(level - l - 1)?.interval();
        let value = kernel_region_value(m, &p, level, l, false);
        pieces.push((value.clone(), outer.lower(), inner.lower()));
        pieces.push((value, inner.upper(), outer.upper()));
    }

    // the vertex's own interval, split around the distinguished child
    let own = x.interval();
    let child = x.child(j)?.interval();
    let off_child = kernel_region_value(m, &p, level, level, false);
    pieces.push((off_child.clone(), own.lower(), child.lower()));
    pieces.push((off_child, child.upper(), own.upper()));
    let on_child = kernel_region_value(m, &p, level, level, true);
    pieces.push((on_child, child.lower(), child.upper()));

    let mut total = V::zero();
    for (value, lo, hi) in pieces {
        if lo < hi {
            let (int, _) = g.integral::<V>(&lo, &hi, quad)?;
            total = total + V::from_q(&value) * int;
        }
    }
    Ok(total)
}

/// The limit kernel along a branch:
/// `K(pi, t) = 1 + m (1-p)/(m-p) ((m/p)^{N} - 1)` on `I_{pi,1}` (with `N` the
/// deepest prefix interval containing `t`) and `1` outside. Only valid for
/// `1/(m+1) < beta < 1/2`.
pub fn kernel_limit(branch: &Branch, t: &Q, beta: &BetaParam) -> Result<Q, DtnError> {
    let p = require_interior_beta(beta)?;
    let m = branch.config().m();
    if !kernel_form_valid(beta, m) {
        return Err(DtnError::KernelFormNotValid(beta.beta().to_string()));
    }
    if t == &branch.psi() {
        return Err(DtnError::SingularPoint);
    }
    if !branch.interval(1).contains(t) {
        return Ok(Q::one());
    }
    let n = branch.containment_depth(t)?;
    let mq = qi(m as i64);
    let c = &mq * (Q::one() - &p) / (&mq - &p);
    Ok(Q::one() + c * (pow_u(&(&mq / &p), n) - Q::one()))
}

#[derive(Debug, Clone)]
pub struct GammaQuadResult<V> {
    pub value: V,
    /// Rigorous bound on the dropped `t` near the branch point (annuli deeper
    /// than the truncation depth).
    pub tail_bound: V,
    pub truncation_depth: u32,
}

/// Evaluate the limit operator `(1-p) ∫ K(pi,t)(g(psi)-g(t)) dt` by exact
/// integration over `[0,1] \ I_{pi,1}` and the first `truncation_depth`
/// annuli, where the kernel is constant; the remaining singular neighborhood
/// is covered by a geometric tail bound (convergent because `p*m > 1`).
pub fn gamma_kernel_quadrature<V: Value>(
    g: &BoundaryDatum,
    beta: &BetaParam,
    branch: &Branch,
    truncation_depth: u32,
    quad: &QuadConfig,
) -> Result<GammaQuadResult<V>, DtnError> {
    let p = require_interior_beta(beta)?;
    let config = branch.config();
    let m = config.m();
    if !kernel_form_valid(beta, m) {
        return Err(DtnError::KernelFormNotValid(beta.beta().to_string()));
    }
    let lip = g.lipschitz_bound().ok_or(DtnError::MissingLipschitz)?;
    let gpsi: V = g.eval(&branch.psi())?;
    let mq = qi(m as i64);
    let c_q = &mq * (Q::one() - &p) / (&mq - &p);
    let m_over_p = V::from_q(&(&mq / &p));
    let one_minus_p = V::from_q(&(Q::one() - &p));

    // constant-kernel bulk outside I_{pi,1}
    let i1 = branch.interval(1);
    let mut acc = defect_integral(g, &gpsi, &Q::zero(), &i1.lower(), quad)?
        + defect_integral(g, &gpsi, &i1.upper(), &Q::one(), quad)?;
    // annuli: kernel is 1 + c((m/p)^k - 1)
    for k in 1..=truncation_depth {
        let a = annulus_defect(g, &gpsi, branch, k, quad)?;
        let kernel = V::one()
            + V::from_q(&c_q) * (pow_u(&m_over_p, k) - V::one());
        acc = acc + kernel * a;
    }
    let value = one_minus_p.clone() * acc;

    // Dropped: (1-p) ∫_{I_{pi,K+1}} K (g(psi)-g). On annulus k > K the kernel
    // is 1 + c((m/p)^k - 1) <= 1 + c(m/p)^k, the defect is <= lip m^{-k}, and
    // the measure is <= m^{-k}; summing the geometric series:
    //   |dropped| <= (1-p) lip (pm)^{-K} [ c/(pm - 1) + 1/(m^2 - 1) ].
    let pm = &p * &mq;
    let tail_q = (Q::one() - &p)
        * lip
        * pow_u(&(Q::one() / &pm), truncation_depth)
        * (&c_q / (&pm - Q::one()) + Q::one() / (&mq * &mq - Q::one()));
    Ok(GammaQuadResult {
        value,
        tail_bound: V::from_q(&tail_q),
        truncation_depth,
    })
}
