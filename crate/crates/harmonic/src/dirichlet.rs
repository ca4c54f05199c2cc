//! The Dirichlet problem for the ancestor-weighted mean value identity on the
//! m-branching tree.
//!
//! A function `u` satisfies the identity when `u(root) = (1/m) sum u(j)` and,
//! off the root, `u(x) = beta*u(parent) + ((1-beta)/m) * sum u(x,i)`. For
//! `beta < 1/2` the bounded solution with boundary datum `g` is
//!
//! ```text
//! u(x) = p^{|x|} avg(g, [0,1]) + sum_{j=0}^{|x|-1} p^j (1-p) avg(g, I_{x^-j}),
//! p = beta/(1-beta),
//! ```
//!
//! equivalently `u(x) = p*u(parent) + (1-p)*avg(g, I_x)`, which is how values
//! are computed here (the two readings agree exactly in rational arithmetic;
//! see [`Solution::value_direct_sum`]).

use crate::datum::{BoundaryDatum, DatumError};
use crate::quad::QuadConfig;
use crate::tree::{Branch, MadicInterval, TreeConfig, TreeError, Vertex};
use crate::value::{pow_u, qi, Q, Value};
use num::BigInt;
use num_bigint::BigUint;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::HashMap;
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("beta must lie in [0,1], got {0}")]
    BetaOutOfRange(String),
    #[error("no bounded non-constant solution exists for beta = {0} (beta >= 1/2)")]
    NoBoundedSolution(String),
    #[error("operation requires beta in {needed}, got {got}")]
    BetaOutsideOperationRange { needed: &'static str, got: String },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error(transparent)]
    Datum(#[from] DatumError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// The ancestor weight `beta ∈ [0,1]` and its derived ratio `p = beta/(1-beta)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BetaParam {
    beta: Q,
}

impl BetaParam {
    pub fn new(beta: Q) -> Result<Self, SolveError> {
        if beta < Q::zero() || beta > Q::one() {
            return Err(SolveError::BetaOutOfRange(beta.to_string()));
        }
        Ok(BetaParam { beta })
    }

    pub fn from_ints(num: i64, den: i64) -> Result<Self, SolveError> {
        if den == 0 {
            return Err(SolveError::BetaOutOfRange(format!("{num}/0")));
        }
        BetaParam::new(Q::new(num.into(), den.into()))
    }

    pub fn beta(&self) -> &Q {
        &self.beta
    }

    /// `p = beta/(1-beta)`; undefined at `beta = 1`.
    pub fn p(&self) -> Result<Q, SolveError> {
        if self.beta == Q::one() {
            return Err(SolveError::BetaOutsideOperationRange {
                needed: "[0,1)",
                got: self.beta.to_string(),
            });
        }
        Ok(&self.beta / (Q::one() - &self.beta))
    }

    /// True when a bounded solution exists for non-constant data.
    pub fn is_subcritical(&self) -> bool {
        self.beta < Q::new(1.into(), 2.into())
    }
}

/// A memoizing view of the bounded solution for one datum and one beta.
///
/// At `beta = 1` the only bounded solutions are constants; `solve` then
/// returns the constant `avg(g, [0,1])` and [`Solution::note`] says so. For
/// `beta ∈ [1/2, 1)` there is no bounded solution and `solve` refuses.
pub struct Solution<V: Value> {
    config: TreeConfig,
    beta: BetaParam,
    beta_v: V,
    p: V,
    datum: BoundaryDatum,
    quad: QuadConfig,
    cache: Mutex<HashMap<Vec<u32>, V>>,
    constant_mode: bool,
}

impl<V: Value> Solution<V> {
    pub fn solve(
        datum: BoundaryDatum,
        beta: BetaParam,
        config: TreeConfig,
        quad: QuadConfig,
    ) -> Result<Self, SolveError> {
        let constant_mode = beta.beta() == &Q::one();
        if !beta.is_subcritical() && !constant_mode {
            return Err(SolveError::NoBoundedSolution(beta.beta().to_string()));
        }
        let p = if constant_mode {
            V::zero()
        } else {
            V::from_q(&beta.p()?)
        };
        Ok(Solution {
            config,
            beta_v: V::from_q(beta.beta()),
            beta,
            p,
            datum,
            quad,
            cache: Mutex::new(HashMap::new()),
            constant_mode,
        })
    }

    pub fn config(&self) -> TreeConfig {
        self.config
    }

    pub fn beta(&self) -> &BetaParam {
        &self.beta
    }

    pub fn datum(&self) -> &BoundaryDatum {
        &self.datum
    }

    pub fn note(&self) -> Option<&'static str> {
        self.constant_mode
            .then_some("beta = 1: the only bounded solutions are constants; u == avg(g, [0,1])")
    }

    fn root_value(&self) -> Result<V, SolveError> {
        let unit = MadicInterval::unit(self.config);
        Ok(self.datum.average::<V>(&unit, &self.quad)?)
    }

    /// Solution value at a vertex (root-first accumulation, memoized).
    pub fn value(&self, x: &Vertex) -> Result<V, SolveError> {
        let digits = x.digits();
        let mut cache = self.cache.lock().expect("cache lock");
        if let Some(v) = cache.get(digits) {
            return Ok(v.clone());
        }
        // deepest cached prefix, else the root
        let mut start = 0;
        for k in (1..=digits.len()).rev() {
            if cache.contains_key(&digits[..k]) {
                start = k;
                break;
            }
        }
        let mut value = if start == 0 {
            let v = self.root_value()?;
            cache.insert(Vec::new(), v.clone());
            v
        } else {
            cache[&digits[..start]].clone()
        };
        if self.constant_mode {
            for k in start..digits.len() {
                cache.insert(digits[..=k].to_vec(), value.clone());
            }
            return Ok(value);
        }
        let mut interval = if start == 0 {
            MadicInterval::unit(self.config)
        } else {
            Vertex::new(self.config, digits[..start].to_vec())?.interval()
        };
        let one_minus_p = V::one() - self.p.clone();
        for k in start..digits.len() {
            interval = interval.child(digits[k])?;
            let avg = self.datum.average::<V>(&interval, &self.quad)?;
            value = self.p.clone() * value + one_minus_p.clone() * avg;
            cache.insert(digits[..=k].to_vec(), value.clone());
        }
        Ok(value)
    }

    /// Same value accumulated leaf-first from the explicit ancestor sum;
    /// agrees exactly with [`Solution::value`] on exact backends.
    pub fn value_direct_sum(&self, x: &Vertex) -> Result<V, SolveError> {
        if self.constant_mode {
            return self.root_value();
        }
        let n = x.level();
        let one_minus_p = V::one() - self.p.clone();
        let mut acc = V::zero();
        let mut pj = V::one();
        for j in 0..n {
            let iv = x.ancestor(j)?.interval();
            let avg = self.datum.average::<V>(&iv, &self.quad)?;
            acc = acc + pj.clone() * one_minus_p.clone() * avg;
            pj = pj * self.p.clone();
        }
        let root_avg = self.root_value()?;
        Ok(acc + pj * root_avg)
    }

    /// Defect of the mean value identity at `x`; identically zero for a true
    /// solution (exactly so on the rational backend).
    pub fn harmonic_residual(&self, x: &Vertex) -> Result<V, SolveError> {
        let ux = self.value(x)?;
        let mut succ_sum = V::zero();
        for s in x.successors() {
            succ_sum = succ_sum + self.value(&s)?;
        }
        let m_inv = V::from_q(&Q::new(1.into(), BigInt::from(self.config.m())));
        match x.parent() {
            None => Ok(ux - m_inv * succ_sum),
            Some(parent) => {
                let up = self.value(&parent)?;
                Ok(ux - self.beta_v.clone() * up
                    - (V::one() - self.beta_v.clone()) * m_inv * succ_sum)
            }
        }
    }

    /// Values along branch prefixes with the boundary value and gap.
    pub fn boundary_trace(
        &self,
        branch: &Branch,
        depths: &[u32],
    ) -> Result<Vec<TraceRow<V>>, SolveError> {
        let boundary = self.datum.eval::<V>(&branch.psi())?;
        let mut rows = Vec::with_capacity(depths.len());
        for &k in depths {
            let v = self.value(&branch.prefix(k))?;
            let gap = (v.clone() - boundary.clone()).abs();
            rows.push(TraceRow {
                depth: k,
                value: v,
                boundary: boundary.clone(),
                gap,
            });
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone)]
pub struct TraceRow<V> {
    pub depth: u32,
    pub value: V,
    pub boundary: V,
    pub gap: V,
}

/// Mean-value defect of an arbitrary vertex function, for diagnostics and
/// tests against non-solutions.
pub fn residual_of<V: Value>(
    config: TreeConfig,
    beta: &BetaParam,
    u: &dyn Fn(&Vertex) -> V,
    x: &Vertex,
) -> V {
    let m_inv = V::from_q(&Q::new(1.into(), BigInt::from(config.m())));
    let mut succ_sum = V::zero();
    for s in x.successors() {
        succ_sum = succ_sum + u(&s);
    }
    match x.parent() {
        None => u(x) - m_inv * succ_sum,
        Some(parent) => {
            let beta_v = V::from_q(beta.beta());
            u(x) - beta_v.clone() * u(&parent) - (V::one() - beta_v) * m_inv * succ_sum
        }
    }
}

// ---------------------------------------------------------------------------
// Indicator-datum construction from the two-term linear recursion
// ---------------------------------------------------------------------------

/// The solution for an m-adic cell indicator, built constructively: level
/// anchors `b_{s,1}` per stage, the on-cell sequence `b_{n,i}` whose
/// increments scale by exactly `p`, and the closed-form limit
/// `b = b_1 + (b_2 - b_1)/(1-p)` used to normalize.
#[derive(Debug, Clone)]
pub struct IndicatorConstruction {
    config: TreeConfig,
    beta: BetaParam,
    p: Q,
    z: Vertex,
    /// `anchors[s] = w_s(z_s)` for `s = 0..=n` (`anchors[0] = 1`).
    anchors: Vec<Q>,
    /// `(b_{s,1}, b_{s,2})` for stage `s = 1..=n`.
    b12: Vec<(Q, Q)>,
    /// `b_{n,i}` for `i = 1..=trace_len`, the requested stage's sequence.
    b_seq: Vec<Q>,
    limit: Q,
}

/// Build the indicator-cell solution for cell `(n, j)`. Requires
/// `beta ∈ (0, 1/2)`; `trace_len` is how much of the `b_{n,i}` sequence to
/// materialize for inspection.
pub fn solve_characteristic(
    config: TreeConfig,
    n: u32,
    j: &BigUint,
    beta: &BetaParam,
    trace_len: u32,
) -> Result<IndicatorConstruction, SolveError> {
    if beta.beta() <= &Q::zero() || !beta.is_subcritical() {
        return Err(SolveError::BetaOutsideOperationRange {
            needed: "(0, 1/2)",
            got: beta.beta().to_string(),
        });
    }
    let cell = MadicInterval::new(config, n, j.clone())?;
    let m = config.m();
    let mq = qi(m as i64);
    let p = beta.p()?;
    let b = beta.beta().clone();

    // digits of z: base-m expansion of j, padded to length n
    let mut digits = vec![0u32; n as usize];
    let mut rem = j.clone();
    let mbig = BigUint::from(m);
    for slot in digits.iter_mut().rev() {
        *slot = (rem.clone() % &mbig).to_u32().expect("digit below m");
        rem /= &mbig;
    }
    let z = Vertex::new(config, digits)?;
    debug_assert_eq!(z.interval(), cell);

    let mut anchors = vec![Q::one()];
    let mut b12 = Vec::new();
    for s in 1..=n as usize {
        let b1 = if s == 1 {
            &mq - (&mq - Q::one()) * &p
        } else {
            let prev = &anchors[s - 1];
            let before = &anchors[s - 2];
            prev * ((&mq - (&mq - Q::one()) * &b) / (Q::one() - &b)) - &mq * &p * before
        };
        let b2 = (&b1 - &b * &anchors[s - 1]) / (Q::one() - &b);
        anchors.push(b1.clone());
        b12.push((b1, b2));
    }

    let (limit, b_seq) = if n == 0 {
        (Q::one(), vec![Q::one(); trace_len as usize])
    } else {
        let (b1, b2) = &b12[n as usize - 1];
        let limit = b1 + (b2 - b1) / (Q::one() - &p);
        let mut seq: Vec<Q> = Vec::with_capacity(trace_len as usize);
        for _ in 0..trace_len {
            let next = match seq.len() {
                0 => b1.clone(),
                1 => b2.clone(),
                k => &seq[k - 1] + &p * (&seq[k - 1] - &seq[k - 2]),
            };
            seq.push(next);
        }
        (limit, seq)
    };

    Ok(IndicatorConstruction {
        config,
        beta: beta.clone(),
        p,
        z,
        anchors,
        b12,
        b_seq,
        limit,
    })
}

impl IndicatorConstruction {
    pub fn cell_vertex(&self) -> &Vertex {
        &self.z
    }

    pub fn beta(&self) -> &BetaParam {
        &self.beta
    }

    /// The on-cell sequence `b_{n,1}, b_{n,2}, ...` that was materialized.
    pub fn b_sequence(&self) -> &[Q] {
        &self.b_seq
    }

    /// Closed-form limit of the on-cell sequence (its increments form an
    /// exact geometric series with ratio `p`).
    pub fn limit(&self) -> &Q {
        &self.limit
    }

    fn b_si(&self, s: usize, i: u32) -> Q {
        let (b1, b2) = &self.b12[s - 1];
        if i == 1 {
            return b1.clone();
        }
        // b_{s,i} = b1 + (b2-b1)(1 - p^{i-1})/(1-p), exactly
        let ratio = (Q::one() - pow_u(&self.p, i - 1)) / (Q::one() - &self.p);
        b1 + (b2 - b1) * ratio
    }

    /// Unnormalized construction value `w_n(x)`.
    pub fn w(&self, x: &Vertex) -> Q {
        self.w_stage(self.z.level() as usize, x)
    }

    fn w_stage(&self, s: usize, x: &Vertex) -> Q {
        if s == 0 {
            return Q::one();
        }
        let level = x.level() as usize;
        if level < s {
            return self.w_stage(s - 1, x);
        }
        let zd = self.z.digits();
        let xd = x.digits();
        if xd[..s - 1] != zd[..s - 1] {
            // outside the subtree under the stage parent
            return self.w_stage(s - 1, x);
        }
        if xd[s - 1] == zd[s - 1] {
            // on the cell's own subtree: constant per level
            return self.b_si(s, (level - s) as u32 + 1);
        }
        // below the stage parent but off the cell: geometric decay from the
        // stage-parent anchor
        let anchor = &self.anchors[s - 1];
        anchor * pow_u(&self.p, (level - s) as u32 + 1)
    }

    /// Normalized solution value `u(x) = w(x) / b`.
    pub fn value(&self, x: &Vertex) -> Q {
        self.w(x) / &self.limit
    }

    /// The indicator datum this construction solves for.
    pub fn datum(&self) -> BoundaryDatum {
        BoundaryDatum::indicator_cell(
            self.config,
            self.z.level(),
            self.z.interval_index(),
        )
        .expect("cell is valid")
    }
}

// ---------------------------------------------------------------------------
// Comparison principle checkers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ComparisonViolation<V> {
    pub vertex: Vertex,
    pub u_f: V,
    pub u_g: V,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport<V> {
    pub violations: Vec<ComparisonViolation<V>>,
    pub vertices_checked: u64,
}

/// Sweep all vertices to `depth` and report where the solution for `f`
/// exceeds the solution for `g` by more than `tol`. The pointwise ordering
/// `f <= g` is spot-checked on a grid first.
pub fn comparison_check<V: Value>(
    f: &BoundaryDatum,
    g: &BoundaryDatum,
    beta: &BetaParam,
    config: TreeConfig,
    depth: u32,
    tol: &V,
    quad: &QuadConfig,
) -> Result<ComparisonReport<V>, SolveError> {
    if !beta.is_subcritical() {
        return Err(SolveError::NoBoundedSolution(beta.beta().to_string()));
    }
    const GRID: i64 = 64;
    for i in 0..=GRID {
        let t = Q::new(i.into(), GRID.into());
        let fv = f.eval_f64(t.to_f64().unwrap())?;
        let gv = g.eval_f64(t.to_f64().unwrap())?;
        if fv > gv + 1e-12 {
            return Err(SolveError::PreconditionViolated(format!(
                "datum ordering f <= g fails at t = {t}: {fv} > {gv}"
            )));
        }
    }
    // bulk sweeps on the float backend run on a pure-f64 path
    if !V::EXACT {
        if let (Some(fi), Some(gi)) = (f.fast_integrand(), g.fast_integrand()) {
            return comparison_check_f64(&fi, &gi, beta, config, depth, tol);
        }
    }

    let p = V::from_q(&beta.p()?);
    let one_minus_p = V::one() - p.clone();
    let unit = MadicInterval::unit(config);
    let uf0 = f.average::<V>(&unit, quad)?;
    let ug0 = g.average::<V>(&unit, quad)?;

    let mut report = ComparisonReport {
        violations: Vec::new(),
        vertices_checked: 0,
    };

    struct Walker<'a, V: Value> {
        f: &'a BoundaryDatum,
        g: &'a BoundaryDatum,
        quad: &'a QuadConfig,
        p: V,
        omp: V,
        tol: V,
        depth: u32,
        m: u32,
        report: &'a mut ComparisonReport<V>,
    }

    impl<V: Value> Walker<'_, V> {
        fn visit(
            &mut self,
            iv: &MadicInterval,
            digits: &mut Vec<u32>,
            uf: V,
            ug: V,
        ) -> Result<(), SolveError> {
            self.report.vertices_checked += 1;
            if uf.clone() > ug.clone() + self.tol.clone() {
                self.report.violations.push(ComparisonViolation {
                    vertex: Vertex::new(iv.config(), digits.clone()).expect("valid digits"),
                    u_f: uf.clone(),
                    u_g: ug.clone(),
                });
            }
            if digits.len() as u32 == self.depth {
                return Ok(());
            }
            for i in 0..self.m {
                let child = iv.child(i)?;
                let af = self.f.average::<V>(&child, self.quad)?;
                let ag = self.g.average::<V>(&child, self.quad)?;
                let uf_c = self.p.clone() * uf.clone() + self.omp.clone() * af;
                let ug_c = self.p.clone() * ug.clone() + self.omp.clone() * ag;
                digits.push(i);
                self.visit(&child, digits, uf_c, ug_c)?;
                digits.pop();
            }
            Ok(())
        }
    }

    let mut walker = Walker {
        f,
        g,
        quad,
        p,
        omp: one_minus_p,
        tol: tol.clone(),
        depth,
        m: config.m(),
        report: &mut report,
    };
    walker.visit(&unit, &mut Vec::new(), uf0, ug0)?;
    Ok(report)
}

fn comparison_check_f64<V: Value>(
    f: &crate::datum::FastIntegrand,
    g: &crate::datum::FastIntegrand,
    beta: &BetaParam,
    config: TreeConfig,
    depth: u32,
    tol: &V,
) -> Result<ComparisonReport<V>, SolveError> {
    let p = beta.p()?.to_f64().unwrap_or(f64::NAN);
    let m = config.m();
    let tol_f = tol.approx_f64();

    struct F64Walker<'a, V: Value> {
        f: &'a crate::datum::FastIntegrand,
        g: &'a crate::datum::FastIntegrand,
        p: f64,
        tol: f64,
        depth: u32,
        m: u32,
        config: TreeConfig,
        checked: u64,
        path: Vec<u32>,
        violations: Vec<ComparisonViolation<V>>,
    }

    impl<V: Value> F64Walker<'_, V> {
        fn visit(&mut self, lo: f64, h: f64, uf: f64, ug: f64) {
            self.checked += 1;
            if uf > ug + self.tol {
                self.violations.push(ComparisonViolation {
                    vertex: Vertex::new(self.config, self.path.clone()).expect("valid digits"),
                    u_f: V::from_f64(uf).expect("float backend"),
                    u_g: V::from_f64(ug).expect("float backend"),
                });
            }
            if self.path.len() as u32 == self.depth {
                return;
            }
            let hc = h / self.m as f64;
            for i in 0..self.m {
                let lc = lo + i as f64 * hc;
                let uf_c = self.p * uf + (1.0 - self.p) * self.f.average(lc, lc + hc);
                let ug_c = self.p * ug + (1.0 - self.p) * self.g.average(lc, lc + hc);
                self.path.push(i);
                self.visit(lc, hc, uf_c, ug_c);
                self.path.pop();
            }
        }
    }

    let mut w = F64Walker::<V> {
        f,
        g,
        p,
        tol: tol_f,
        depth,
        m,
        config,
        checked: 0,
        path: Vec::new(),
        violations: Vec::new(),
    };
    let uf0 = f.average(0.0, 1.0);
    let ug0 = g.average(0.0, 1.0);
    w.visit(0.0, 1.0, uf0, ug0);
    Ok(ComparisonReport {
        violations: w.violations,
        vertices_checked: w.checked,
    })
}

#[derive(Debug, Clone)]
pub struct StrongComparisonReport<V> {
    /// Interior vertices where the two solutions agree within `tol`.
    pub touching: Vec<Vertex>,
    /// For every touching vertex, did equality propagate to the parent and
    /// all successors (as the strong comparison principle forces)?
    pub propagation_holds: bool,
    pub vertices_checked: u64,
    pub _phantom: std::marker::PhantomData<V>,
}

/// For `beta ∈ (0, 1/2)`, ordered solutions that touch at an interior vertex
/// must coincide around it; this finds touching vertices to `depth` and
/// verifies the forced equalities.
pub fn strong_comparison_check<V: Value>(
    f: &BoundaryDatum,
    g: &BoundaryDatum,
    beta: &BetaParam,
    config: TreeConfig,
    depth: u32,
    tol: &V,
    quad: &QuadConfig,
) -> Result<StrongComparisonReport<V>, SolveError> {
    if beta.beta() <= &Q::zero() || !beta.is_subcritical() {
        return Err(SolveError::BetaOutsideOperationRange {
            needed: "(0, 1/2)",
            got: beta.beta().to_string(),
        });
    }
    let sf = Solution::<V>::solve(f.clone(), beta.clone(), config, *quad)?;
    let sg = Solution::<V>::solve(g.clone(), beta.clone(), config, *quad)?;
    let mut touching = Vec::new();
    let mut propagation_holds = true;
    let mut checked = 0u64;
    let mut frontier = vec![config.root()];
    while let Some(x) = frontier.pop() {
        checked += 1;
        let uf = sf.value(&x)?;
        let ug = sg.value(&x)?;
        if (uf.clone() - ug.clone()).abs() <= tol.clone() {
            touching.push(x.clone());
            if let Some(parent) = x.parent() {
                let d = (sf.value(&parent)? - sg.value(&parent)?).abs();
                propagation_holds &= d <= tol.clone();
            }
            for s in x.successors() {
                let d = (sf.value(&s)? - sg.value(&s)?).abs();
                propagation_holds &= d <= tol.clone();
            }
        }
        if x.level() < depth {
            frontier.extend(x.successors());
        }
    }
    Ok(StrongComparisonReport {
        touching,
        propagation_holds,
        vertices_checked: checked,
        _phantom: std::marker::PhantomData,
    })
}

// ---------------------------------------------------------------------------
// The classical failure of strong comparison at beta = 0
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Beta0Counterexample {
    pub datum: BoundaryDatum,
    pub u_root: Q,
    pub u_child0: Q,
    pub u_child2: Q,
}

/// On the 3-branching tree with `beta = 0`, the solution for the indicator of
/// `[2/3, 1]` vanishes at vertex `(0)` without vanishing identically
/// (`u(2) = 1`): nonnegative solutions can touch zero at an interior vertex.
pub fn counterexample_beta0() -> Beta0Counterexample {
    let config = TreeConfig::new(3).expect("m = 3");
    let datum = BoundaryDatum::indicator(Q::new(2.into(), 3.into()), Q::one()).expect("interval");
    let beta = BetaParam::new(Q::zero()).expect("beta 0");
    let sol = Solution::<Q>::solve(datum.clone(), beta, config, QuadConfig::default())
        .expect("beta = 0 solves");
    let root = config.root();
    Beta0Counterexample {
        datum,
        u_root: sol.value(&root).expect("root"),
        u_child0: sol.value(&root.child(0).expect("digit")).expect("u(0)"),
        u_child2: sol.value(&root.child(2).expect("digit")).expect("u(2)"),
    }
}

// ---------------------------------------------------------------------------
// Unbounded growth witness for beta >= 1/2
// ---------------------------------------------------------------------------

/// A mean-value-consistent extension along one branch whose values
/// `1 + a_n` grow without bound: `a_{n+1} = a_n + p (a_n - a_{n-1})`, the
/// equality case of the growth inequality, with all siblings set equal so the
/// identity holds exactly at every step.
#[derive(Debug, Clone)]
pub struct GrowthWitness {
    beta: BetaParam,
    p: Q,
    /// `values[n] = 1 + a_n`, starting at `a_0 = 0`.
    pub values: Vec<Q>,
}

/// Requires `beta ∈ [1/2, 1)`. `seed` is `a_1 > 0`, the first discrepancy.
pub fn growth_witness(beta: &BetaParam, seed: &Q, steps: u32) -> Result<GrowthWitness, SolveError> {
    let half = Q::new(1.into(), 2.into());
    if beta.beta() < &half || beta.beta() >= &Q::one() {
        return Err(SolveError::BetaOutsideOperationRange {
            needed: "[1/2, 1)",
            got: beta.beta().to_string(),
        });
    }
    if seed <= &Q::zero() {
        return Err(SolveError::PreconditionViolated(
            "growth seed a_1 must be positive".into(),
        ));
    }
    let p = beta.p()?;
    let mut values = Vec::with_capacity(steps as usize + 2);
    let mut a_prev = Q::zero();
    let mut a_cur = seed.clone();
    values.push(Q::one());
    values.push(Q::one() + &a_cur);
    for _ in 0..steps {
        let a_next = &a_cur + &p * (&a_cur - &a_prev);
        values.push(Q::one() + &a_next);
        a_prev = a_cur;
        a_cur = a_next;
    }
    Ok(GrowthWitness {
        beta: beta.clone(),
        p,
        values,
    })
}

impl GrowthWitness {
    pub fn beta(&self) -> &BetaParam {
        &self.beta
    }

    pub fn p(&self) -> &Q {
        &self.p
    }

    /// Successive value increments `a_{n+1} - a_n`.
    pub fn increments(&self) -> Vec<Q> {
        self.values.windows(2).map(|w| &w[1] - &w[0]).collect()
    }

    /// Stream the recursion without storing it: the first step index `n`
    /// (counting `values[n]`) whose value exceeds `threshold`, with the value.
    pub fn first_value_exceeding(
        beta: &BetaParam,
        seed: &Q,
        threshold: &Q,
    ) -> Result<(u64, Q), SolveError> {
        let w = growth_witness(beta, seed, 0)?;
        let p = w.p;
        let mut a_prev = Q::zero();
        let mut a_cur = seed.clone();
        let mut n = 1u64;
        loop {
            let v = Q::one() + &a_cur;
            if &v > threshold {
                return Ok((n, v));
            }
            let a_next = &a_cur + &p * (&a_cur - &a_prev);
            a_prev = a_cur;
            a_cur = a_next;
            n += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Bulk exact residual verification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ResidualSweepReport {
    pub vertices_checked: u64,
    pub nonzero_residuals: u64,
    pub max_abs_residual: Q,
    /// How many vertices were additionally cross-checked against the
    /// memoizing rational solver.
    pub cross_checked: u64,
}

/// Verify `harmonic_residual == 0` exactly at every vertex to `depth`, for
/// several betas at once.
///
/// Polynomial and m-adic indicator data with moderate magnitudes run on an
/// overflow-checked scaled-integer fast path (one subtree per thread), whose
/// values are cross-checked against [`Solution`] on a subsample; anything
/// else falls back to a plain rational sweep.
pub fn residual_sweep(
    config: TreeConfig,
    datum: &BoundaryDatum,
    betas: &[BetaParam],
    depth: u32,
) -> Result<ResidualSweepReport, SolveError> {
    for beta in betas {
        if !beta.is_subcritical() {
            return Err(SolveError::NoBoundedSolution(beta.beta().to_string()));
        }
    }
    if let Some(report) = fast::try_sweep(config, datum, betas, depth)? {
        return Ok(report);
    }
    generic_sweep(config, datum, betas, depth)
}

fn generic_sweep(
    config: TreeConfig,
    datum: &BoundaryDatum,
    betas: &[BetaParam],
    depth: u32,
) -> Result<ResidualSweepReport, SolveError> {
    let quad = QuadConfig::default();
    let mut report = ResidualSweepReport {
        vertices_checked: 0,
        nonzero_residuals: 0,
        max_abs_residual: Q::zero(),
        cross_checked: 0,
    };
    for beta in betas {
        let sol = Solution::<Q>::solve(datum.clone(), beta.clone(), config, quad)?;
        let mut frontier = vec![config.root()];
        while let Some(x) = frontier.pop() {
            let r = sol.harmonic_residual(&x)?;
            report.vertices_checked += 1;
            if !r.is_zero() {
                report.nonzero_residuals += 1;
                let a = Signed::abs(&r);
                if a > report.max_abs_residual {
                    report.max_abs_residual = a;
                }
            }
            if x.level() < depth {
                frontier.extend(x.successors());
            }
        }
    }
    Ok(report)
}

mod fast {
    //! Scaled-integer residual sweep.
    //!
    //! With `beta = bn/bd`, `F = bd - bn` and a datum whose level-`l` cell
    //! averages are `N/(B*M^l)` for integers `N` (`M = m^deg`), the solution
    //! satisfies `U_l = bn*M*U_{l-1} + (bd-2bn)*F^{l-1}*N_l` for the integers
    //! `U_l = u * F^l * B * M^l`. The mean value defect at a level-`l` vertex,
    //! scaled by `S_{l+1}*bd*m`, is
    //! `F * (bd*m*M*U_l - bn*m*F*M^2*U_{l-1} - sum_i U^i_{l+1})`,
    //! so residuals vanish iff the integer bracket does. A magnitude
    //! pre-check keeps every intermediate far below the i128 limit.

    use super::*;

    const MAX_SLOTS: usize = 64;

    pub(super) struct FastBeta {
        bn: i128,
        bd: i128,
        f: i128,
    }

    pub(super) enum FastDatum {
        Poly {
            /// numerators over the common denominator `cd`
            nums: Vec<i128>,
            /// lcm(1..=deg+1)
            l: i128,
            cd: i128,
            deg: u32,
        },
        /// m-adic indicator `[a, b] * m^{-scale}` (integer endpoints at
        /// resolution `scale`).
        Cell { a: i128, b: i128, scale: u32 },
    }

    struct Ctx {
        m: u32,
        depth: u32,
        betas: Vec<FastBeta>,
        datum: FastDatum,
        /// m^t for t = 0..=needed
        mpow: Vec<i128>,
        /// per-datum level factor M = m^deg
        mfac: i128,
    }

    impl Ctx {
        fn cell_avg_num(&self, level: u32, j: i128) -> i128 {
            match &self.datum {
                FastDatum::Poly { nums, l, deg, .. } => {
                    let mut total: i128 = 0;
                    let mut jp = 1i128; // j^(i)
                    let mut jp1 = 1i128; // (j+1)^(i)
                    for (i, &num) in nums.iter().enumerate() {
                        let i = i as u32;
                        jp *= j;
                        jp1 *= j + 1;
                        // N += num * (L/(i+1)) * ((j+1)^{i+1} - j^{i+1}) * m^{level*(deg-i)}
                        let weight = l / (i as i128 + 1);
                        let diff = jp1 - jp;
                        let mp = self.mpow[(level * (deg - i)) as usize];
                        total += num * weight * diff * mp;
                    }
                    total
                }
                FastDatum::Cell { a, b, scale } => {
                    // overlap of [j, j+1]*m^{-level} with [a, b]*m^{-scale},
                    // in units of m^{-max(level,scale)}; N = overlap_scaled
                    // rescaled so that avg = N / m^scale.
                    let s = (*scale).max(level);
                    let blow_cell = self.mpow[(s - level) as usize];
                    let blow_ind = self.mpow[(s - scale) as usize];
                    let lo = (j * blow_cell).max(a * blow_ind);
                    let hi = ((j + 1) * blow_cell).min(b * blow_ind);
                    let overlap = (hi - lo).max(0);
                    // avg = overlap * m^{level - s}; N = avg * m^{scale}
                    overlap * self.mpow[(level + scale - s) as usize]
                }
            }
        }
    }

    pub(super) fn try_sweep(
        config: TreeConfig,
        datum: &BoundaryDatum,
        betas: &[BetaParam],
        depth: u32,
    ) -> Result<Option<ResidualSweepReport>, SolveError> {
        let m = config.m();
        let nb = betas.len();
        if nb == 0 || (m as usize) * nb > MAX_SLOTS || nb > MAX_SLOTS / 2 {
            return Ok(None);
        }
        let fast_datum = match encode_datum(config, datum) {
            Some(d) => d,
            None => return Ok(None),
        };
        let fast_betas: Option<Vec<FastBeta>> = betas.iter().map(encode_beta).collect();
        let fast_betas = match fast_betas {
            Some(b) => b,
            None => return Ok(None),
        };
        let (deg, base_log2, coeff_log2) = match &fast_datum {
            FastDatum::Poly { nums, l, deg, .. } => {
                let maxn = nums.iter().map(|n| n.abs()).max().unwrap_or(1).max(1);
                (
                    *deg,
                    (*l as f64).log2(),
                    (maxn as f64).log2() + ((deg + 2) as f64).log2(),
                )
            }
            FastDatum::Cell { scale, .. } => (0, (*scale as f64) * (m as f64).log2(), 1.0),
        };
        // magnitude pre-check: the residual bracket must fit comfortably in i128
        let max_f = fast_betas.iter().map(|b| b.f).max().unwrap_or(1);
        let max_bd = fast_betas.iter().map(|b| b.bd).max().unwrap_or(1);
        let levels = depth as f64 + 2.0;
        let bits = levels * ((max_f as f64).log2() + deg as f64 * (m as f64).log2())
            + base_log2
            + coeff_log2
            + 2.0 * (max_bd as f64).log2()
            + 3.0 * (m as f64).log2()
            + 8.0;
        if bits > 120.0 {
            return Ok(None);
        }

        let mpow_needed = ((depth + 2) * deg.max(1)) as usize
            + match &fast_datum {
                FastDatum::Cell { scale, .. } => (*scale as usize) + depth as usize + 2,
                _ => 2,
            };
        let mut mpow = Vec::with_capacity(mpow_needed + 1);
        let mut acc = 1i128;
        for _ in 0..=mpow_needed {
            mpow.push(acc);
            acc = acc.saturating_mul(m as i128);
        }

        let ctx = Ctx {
            m,
            depth,
            betas: fast_betas,
            datum: fast_datum,
            mpow,
            mfac: (m as i128).pow(deg),
        };

        // root state
        let n0 = ctx.cell_avg_num(0, 0);
        let u0: Vec<i128> = ctx.betas.iter().map(|_| n0).collect();

        // level-1 children and the root identity
        let mut u1 = vec![0i128; m as usize * nb];
        for i in 0..m as usize {
            let n1 = ctx.cell_avg_num(1, i as i128);
            for (bi, fb) in ctx.betas.iter().enumerate() {
                u1[i * nb + bi] = fb.bn * ctx.mfac * u0[bi] + (fb.bd - 2 * fb.bn) * n1;
            }
        }
        let mut stats = SubtreeStats::new();
        for (bi, fb) in ctx.betas.iter().enumerate() {
            let sum: i128 = (0..m as usize).map(|i| u1[i * nb + bi]).sum();
            let r = (m as i128) * fb.f * ctx.mfac * u0[bi] - sum;
            // at the root, residual = bracket / (S_1 * m)
            let scale = scale_q(&ctx, &ctx.betas[bi], 1) * Q::new(BigInt::from(ctx.m), 1.into());
            stats.record(r, scale);
        }
        stats.checks += nb as u64;

        // one thread per top-level subtree
        let results: Vec<SubtreeStats> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..m)
                .map(|digit| {
                    let ctx = &ctx;
                    let u0 = &u0;
                    let u1 = &u1;
                    scope.spawn(move || {
                        let mut st = SubtreeStats::new();
                        st.path.push(digit);
                        if ctx.depth >= 1 {
                            let u_cur = &u1[digit as usize * nb..][..nb];
                            descend(ctx, 1, digit as i128, u_cur, u0, &mut st);
                        }
                        st
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep thread"))
                .collect()
        });
        for r in results {
            stats.merge(r);
        }

        // cross-check a subsample against the memoizing rational solver
        let mut cross_checked = 0u64;
        let quad = QuadConfig::default();
        for (bi, beta) in betas.iter().enumerate() {
            let sol = Solution::<Q>::solve(datum.clone(), beta.clone(), config, quad)?;
            for (digits, level, u_int) in &stats.samples {
                let x = Vertex::new(config, digits.clone())?;
                let expected = sol.value(&x)?;
                let scale = scale_q(&ctx, &ctx.betas[bi], *level);
                let got = Q::new(BigInt::from(u_int[bi]), 1.into()) / scale;
                assert_eq!(
                    got, expected,
                    "fast sweep disagrees with the rational solver at {x}"
                );
                cross_checked += 1;
            }
        }

        Ok(Some(ResidualSweepReport {
            vertices_checked: stats.checks,
            nonzero_residuals: stats.nonzero,
            max_abs_residual: stats.max_abs,
            cross_checked,
        }))
    }

    // S_l = F^l * B * M^l with B the datum base scale (L*cd, or m^scale)
    fn scale_q(ctx: &Ctx, fb: &FastBeta, level: u32) -> Q {
        let base: Q = match &ctx.datum {
            FastDatum::Poly { l, cd, .. } => {
                Q::new(BigInt::from(*l) * BigInt::from(*cd), 1.into())
            }
            FastDatum::Cell { scale, .. } => Q::new(BigInt::from(ctx.m).pow(*scale), 1.into()),
        };
        let f = Q::new(BigInt::from(fb.f).pow(level), 1.into());
        let mm = Q::new(BigInt::from(ctx.mfac).pow(level), 1.into());
        f * base * mm
    }

    struct SubtreeStats {
        checks: u64,
        nonzero: u64,
        max_abs: Q,
        samples: Vec<(Vec<u32>, u32, Vec<i128>)>,
        visit_counter: u64,
        path: Vec<u32>,
    }

    impl SubtreeStats {
        fn new() -> Self {
            SubtreeStats {
                checks: 0,
                nonzero: 0,
                max_abs: Q::zero(),
                samples: Vec::new(),
                visit_counter: 0,
                path: Vec::new(),
            }
        }

        fn record(&mut self, bracket: i128, scale: Q) {
            if bracket != 0 {
                self.nonzero += 1;
                let rq = Signed::abs(&(Q::new(BigInt::from(bracket), 1.into()) / scale));
                if rq > self.max_abs {
                    self.max_abs = rq;
                }
            }
        }

        fn merge(&mut self, other: SubtreeStats) {
            self.checks += other.checks;
            self.nonzero += other.nonzero;
            if other.max_abs > self.max_abs {
                self.max_abs = other.max_abs;
            }
            self.samples.extend(other.samples);
        }
    }

    fn descend(
        ctx: &Ctx,
        level: u32,
        j: i128,
        u_cur: &[i128],
        u_par: &[i128],
        st: &mut SubtreeStats,
    ) {
        st.visit_counter += 1;
        if st.visit_counter % 8191 == 1 && st.samples.len() < 48 {
            st.samples.push((st.path.clone(), level, u_cur.to_vec()));
        }

        let m = ctx.m as usize;
        let nb = ctx.betas.len();
        let mut fpow = [0i128; MAX_SLOTS];
        for (bi, fb) in ctx.betas.iter().enumerate() {
            fpow[bi] = fb.f.pow(level);
        }
        let mut child_u = [0i128; MAX_SLOTS];
        for i in 0..m {
            let jc = j * ctx.m as i128 + i as i128;
            let n = ctx.cell_avg_num(level + 1, jc);
            for (bi, fb) in ctx.betas.iter().enumerate() {
                child_u[i * nb + bi] =
                    fb.bn * ctx.mfac * u_cur[bi] + (fb.bd - 2 * fb.bn) * fpow[bi] * n;
            }
        }
        // mean value defect at this vertex
        st.checks += nb as u64;
        for (bi, fb) in ctx.betas.iter().enumerate() {
            let mut sum = 0i128;
            for i in 0..m {
                sum += child_u[i * nb + bi];
            }
            let bracket = fb.bd * (ctx.m as i128) * ctx.mfac * u_cur[bi]
                - fb.bn * (ctx.m as i128) * fb.f * ctx.mfac * ctx.mfac * u_par[bi]
                - sum;
            if bracket != 0 {
                // residual = F * bracket / (S_{l+1} * bd * m)
                let scale = scale_q(ctx, fb, level + 1)
                    * Q::new(
                        BigInt::from(fb.bd) * BigInt::from(ctx.m),
                        BigInt::from(fb.f),
                    );
                st.record(bracket, scale);
            }
        }
        if level < ctx.depth {
            for i in 0..m {
                let jc = j * ctx.m as i128 + i as i128;
                st.path.push(i as u32);
                descend(ctx, level + 1, jc, &child_u[i * nb..][..nb], u_cur, st);
                st.path.pop();
            }
        }
    }

    fn encode_beta(beta: &BetaParam) -> Option<FastBeta> {
        let bn = beta.beta().numer().to_i128()?;
        let bd = beta.beta().denom().to_i128()?;
        if bd > 1_000_000 || bn < 0 {
            return None;
        }
        Some(FastBeta { bn, bd, f: bd - bn })
    }

    fn encode_datum(config: TreeConfig, datum: &BoundaryDatum) -> Option<FastDatum> {
        match datum {
            BoundaryDatum::Polynomial(p) => {
                let coeffs = p.coeffs();
                let deg = coeffs.len() as u32 - 1;
                if deg > 4 {
                    return None;
                }
                // common denominator
                let mut cd = BigInt::one();
                for c in coeffs {
                    cd = num_integer::lcm(cd, c.denom().clone());
                }
                let mut nums = Vec::with_capacity(coeffs.len());
                for c in coeffs {
                    let n = (c * Q::new(cd.clone(), 1.into())).numer().to_i128()?;
                    if n.abs() > 1_000_000_000 {
                        return None;
                    }
                    nums.push(n);
                }
                let cd = cd.to_i128()?;
                if cd > 1_000_000_000 {
                    return None;
                }
                let mut l = 1i128;
                for i in 1..=(deg as i128 + 1) {
                    l = num_integer::lcm(l, i);
                }
                Some(FastDatum::Poly { nums, l, cd, deg })
            }
            BoundaryDatum::Indicator { lo, hi } => {
                let m = BigInt::from(config.m());
                let as_madic = |x: &Q| -> Option<(i128, u32)> {
                    // write x = a / m^e with integer a
                    let mut e = 0u32;
                    let mut scaled = x.clone();
                    while !scaled.denom().is_one() {
                        scaled *= Q::new(m.clone(), 1.into());
                        e += 1;
                        if e > 40 {
                            return None;
                        }
                    }
                    Some((scaled.numer().to_i128()?, e))
                };
                let (a, ea) = as_madic(lo)?;
                let (b, eb) = as_madic(hi)?;
                let scale = ea.max(eb);
                let a = a * (config.m() as i128).checked_pow(scale - ea)?;
                let b = b * (config.m() as i128).checked_pow(scale - eb)?;
                Some(FastDatum::Cell { a, b, scale })
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::q;

    fn cfg(m: u32) -> TreeConfig {
        TreeConfig::new(m).unwrap()
    }

    fn solve_q(datum: BoundaryDatum, beta: BetaParam, m: u32) -> Solution<Q> {
        Solution::solve(datum, beta, cfg(m), QuadConfig::default()).unwrap()
    }

    fn vx(m: u32, digits: &[u32]) -> Vertex {
        Vertex::new(cfg(m), digits.to_vec()).unwrap()
    }

    #[test]
    fn constants_solve_to_themselves() {
        for (num, den) in [(0i64, 1i64), (1, 10), (1, 3), (9, 20)] {
            let sol = solve_q(
                BoundaryDatum::constant(q(7, 3)),
                BetaParam::from_ints(num, den).unwrap(),
                2,
            );
            assert_eq!(sol.value(&vx(2, &[1, 0, 1])).unwrap(), q(7, 3));
        }
    }

    #[test]
    fn beta_zero_value_is_interval_average() {
        let sol = solve_q(BoundaryDatum::linear(), BetaParam::from_ints(0, 1).unwrap(), 2);
        assert_eq!(sol.value(&vx(2, &[1])).unwrap(), q(3, 4));
    }

    #[test]
    fn beta_third_example_values() {
        let sol = solve_q(BoundaryDatum::linear(), BetaParam::from_ints(1, 3).unwrap(), 2);
        assert_eq!(sol.value(&vx(2, &[1])).unwrap(), q(5, 8));
        assert_eq!(sol.value(&vx(2, &[])).unwrap(), q(1, 2));
        assert_eq!(sol.value(&vx(2, &[1, 0])).unwrap(), q(5, 8));
        assert_eq!(sol.value(&vx(2, &[1, 1])).unwrap(), q(3, 4));
        // residual at (1): 5/8 - (1/3)(1/2) - (1/3)(5/8 + 3/4) = 0
        assert_eq!(sol.harmonic_residual(&vx(2, &[1])).unwrap(), q(0, 1));
    }

    #[test]
    fn rejects_supercritical_beta() {
        let err = Solution::<Q>::solve(
            BoundaryDatum::linear(),
            BetaParam::from_ints(1, 2).unwrap(),
            cfg(2),
            QuadConfig::default(),
        );
        assert!(matches!(err, Err(SolveError::NoBoundedSolution(_))));
        let err = Solution::<Q>::solve(
            BoundaryDatum::linear(),
            BetaParam::from_ints(3, 4).unwrap(),
            cfg(2),
            QuadConfig::default(),
        );
        assert!(matches!(err, Err(SolveError::NoBoundedSolution(_))));
    }

    #[test]
    fn beta_one_gives_the_constant_solution() {
        let sol = solve_q(BoundaryDatum::linear(), BetaParam::from_ints(1, 1).unwrap(), 2);
        assert!(sol.note().is_some());
        assert_eq!(sol.value(&vx(2, &[0, 1, 1])).unwrap(), q(1, 2));
    }

    #[test]
    fn float_backend_residual_stays_below_budget() {
        // black-box datum: the float backend's residual is bounded by
        // rounding plus the quadrature tolerance
        let g = BoundaryDatum::callable(
            |t| (2.0 * t).sin(),
            crate::datum::Smoothness::CTwo,
            1.0,
            Some(2.0),
            Some(4.0),
        );
        let quad = QuadConfig::default();
        let sol =
            Solution::<f64>::solve(g, BetaParam::from_ints(1, 3).unwrap(), cfg(2), quad).unwrap();
        for digits in [&[][..], &[0][..], &[1, 0][..], &[0, 1, 1][..]] {
            let r = sol.harmonic_residual(&vx(2, digits)).unwrap();
            assert!(r.abs() <= 1e-10 + 8.0 * quad.abs_tol, "residual {r}");
        }
    }

    #[test]
    fn residual_of_non_solution_is_nonzero() {
        let config = cfg(2);
        let beta = BetaParam::from_ints(0, 1).unwrap();
        let level_fn = |x: &Vertex| qi(x.level() as i64);
        let r = residual_of::<Q>(config, &beta, &level_fn, &config.root());
        assert_eq!(r, q(-1, 1));
    }

    #[test]
    fn direct_sum_matches_recursion_exactly() {
        let sol = solve_q(
            BoundaryDatum::polynomial(vec![q(1, 3), q(2, 7), q(-1, 2)]),
            BetaParam::from_ints(9, 20).unwrap(),
            3,
        );
        for digits in [&[][..], &[2][..], &[0, 1][..], &[2, 2, 1, 0][..]] {
            let x = vx(3, digits);
            assert_eq!(sol.value(&x).unwrap(), sol.value_direct_sum(&x).unwrap());
        }
    }

    #[test]
    fn boundary_trace_for_linear_datum_beta_zero() {
        let sol = solve_q(BoundaryDatum::linear(), BetaParam::from_ints(0, 1).unwrap(), 2);
        let branch = Branch::from_point(&q(0, 1), cfg(2)).unwrap();
        let rows = sol.boundary_trace(&branch, &[1, 2, 3, 4]).unwrap();
        for row in &rows {
            // u(x_k) = 2^{-k-1}, so the gap halves each level
            assert_eq!(row.value, Q::new(1.into(), BigInt::from(2).pow(row.depth + 1)));
            assert_eq!(row.gap, row.value);
        }
    }

    #[test]
    fn indicator_trace_trichotomy() {
        // chi over [0,1/2], beta = 1/3, m = 2
        let datum = BoundaryDatum::indicator_cell(cfg(2), 1, 0u32.into()).unwrap();
        let sol = solve_q(datum, BetaParam::from_ints(1, 3).unwrap(), 2);
        let depths: Vec<u32> = (1..=24).collect();

        // interior (Lebesgue) point 1/3: values converge to chi = 1
        let inside = Branch::from_point(&q(1, 3), cfg(2)).unwrap();
        let rows = sol.boundary_trace(&inside, &depths).unwrap();
        assert!(rows.last().unwrap().gap < q(1, 1000));
        // outside point 3/4: values converge to 0
        let outside = Branch::from_point(&q(3, 4), cfg(2)).unwrap();
        let rows = sol.boundary_trace(&outside, &depths).unwrap();
        assert!(rows.last().unwrap().value < q(1, 1000));

        // at the shared endpoint 1/2 the limit depends on the expansion:
        // the canonical branch (1,0,0,...) leaves the cell and tends to 0,
        // the other expansion (0,1,1,...) stays inside and tends to 1
        let leaves = Branch::from_point(&q(1, 2), cfg(2)).unwrap();
        let v_leaves = sol.value(&leaves.prefix(24)).unwrap();
        assert!(v_leaves < q(1, 1000));
        let stays = Branch::from_digits(cfg(2), vec![0], vec![1]).unwrap();
        assert_eq!(stays.psi(), q(1, 2));
        let v_stays = sol.value(&stays.prefix(24)).unwrap();
        assert!(v_stays > q(999, 1000));
    }

    #[test]
    fn characteristic_recursion_printed_values() {
        let beta = BetaParam::from_ints(1, 3).unwrap();
        let c = solve_characteristic(cfg(2), 1, &0u32.into(), &beta, 3).unwrap();
        assert_eq!(c.b_sequence()[0], q(3, 2));
        assert_eq!(c.b_sequence()[1], q(7, 4));
        assert_eq!(c.b_sequence()[2], q(15, 8));
        assert_eq!(*c.limit(), q(2, 1));
        // normalized root value matches the solved indicator average
        assert_eq!(c.value(&vx(2, &[])), q(1, 2));
    }

    #[test]
    fn characteristic_matches_solver_exactly() {
        // n = 1 and n = 2 cells, both branching factors, all vertices to depth 5
        for m in [2u32, 3] {
            for (n, j) in [(1u32, 0u32), (1, m - 1), (2, 1), (2, m * m - 1)] {
                let beta = BetaParam::from_ints(1, 3).unwrap();
                let c = solve_characteristic(cfg(m), n, &j.into(), &beta, 4).unwrap();
                let sol = solve_q(c.datum(), beta, m);
                let mut frontier = vec![cfg(m).root()];
                while let Some(x) = frontier.pop() {
                    assert_eq!(
                        c.value(&x),
                        sol.value(&x).unwrap(),
                        "mismatch at {x} for m={m} n={n} j={j}"
                    );
                    if x.level() < 5 {
                        frontier.extend(x.successors());
                    }
                }
            }
        }
    }

    #[test]
    fn characteristic_off_branch_decay() {
        let beta = BetaParam::from_ints(1, 3).unwrap();
        let c = solve_characteristic(cfg(2), 1, &0u32.into(), &beta, 3).unwrap();
        let p = beta.p().unwrap();
        // vertices outside the cell's level-1 subtree carry w = p^{|x|}
        for digits in [&[1][..], &[1, 0][..], &[1, 1, 1][..]] {
            let x = vx(2, digits);
            assert_eq!(c.w(&x), pow_u(&p, x.level()));
        }
    }

    #[test]
    fn characteristic_limit_is_cell_measure_inverse() {
        for m in [2u32, 3] {
            for n in 1..=3u32 {
                let beta = BetaParam::from_ints(2, 5).unwrap();
                let c = solve_characteristic(cfg(m), n, &1u32.min(m - 1).into(), &beta, 2).unwrap();
                assert_eq!(*c.limit(), qi((m as i64).pow(n)), "m={m} n={n}");
            }
        }
    }

    #[test]
    fn characteristic_rejects_bad_beta() {
        for (num, den) in [(0i64, 1i64), (1, 2), (3, 5)] {
            let beta = BetaParam::from_ints(num, den).unwrap();
            assert!(solve_characteristic(cfg(2), 1, &0u32.into(), &beta, 2).is_err());
        }
    }

    #[test]
    fn comparison_constant_data() {
        let beta = BetaParam::from_ints(1, 4).unwrap();
        let report = comparison_check::<Q>(
            &BoundaryDatum::constant(q(0, 1)),
            &BoundaryDatum::constant(q(1, 1)),
            &beta,
            cfg(2),
            4,
            &Q::zero(),
            &QuadConfig::default(),
        )
        .unwrap();
        assert!(report.violations.is_empty());
        assert_eq!(report.vertices_checked, 31);
    }

    #[test]
    fn comparison_square_below_linear() {
        let beta = BetaParam::from_ints(1, 4).unwrap();
        let report = comparison_check::<Q>(
            &BoundaryDatum::square(),
            &BoundaryDatum::linear(),
            &beta,
            cfg(2),
            6,
            &Q::zero(),
            &QuadConfig::default(),
        )
        .unwrap();
        assert!(report.violations.is_empty());
    }

    #[test]
    fn comparison_rejects_unordered_data() {
        let beta = BetaParam::from_ints(1, 4).unwrap();
        let err = comparison_check::<Q>(
            &BoundaryDatum::linear(),
            &BoundaryDatum::square(),
            &beta,
            cfg(2),
            3,
            &Q::zero(),
            &QuadConfig::default(),
        );
        assert!(matches!(err, Err(SolveError::PreconditionViolated(_))));
    }

    #[test]
    fn strong_comparison_no_touching_for_positive_gap() {
        // g >= 0 with positive mass: u_g > 0 at every vertex, so u_0 never touches it
        let beta = BetaParam::from_ints(1, 4).unwrap();
        let report = strong_comparison_check::<Q>(
            &BoundaryDatum::constant(q(0, 1)),
            &BoundaryDatum::indicator(q(2, 3), q(1, 1)).unwrap(),
            &beta,
            cfg(3),
            4,
            &Q::zero(),
            &QuadConfig::default(),
        )
        .unwrap();
        assert!(report.touching.is_empty());
        assert!(report.propagation_holds);
    }

    #[test]
    fn strong_comparison_equal_data_touch_everywhere() {
        let beta = BetaParam::from_ints(1, 4).unwrap();
        let report = strong_comparison_check::<Q>(
            &BoundaryDatum::linear(),
            &BoundaryDatum::linear(),
            &beta,
            cfg(2),
            3,
            &Q::zero(),
            &QuadConfig::default(),
        )
        .unwrap();
        assert_eq!(report.touching.len() as u64, report.vertices_checked);
        assert!(report.propagation_holds);
    }

    #[test]
    fn counterexample_values() {
        let ce = counterexample_beta0();
        assert_eq!(ce.u_child0, q(0, 1));
        assert_eq!(ce.u_child2, q(1, 1));
        assert_eq!(ce.u_root, q(1, 3));
    }

    #[test]
    fn growth_witness_linear_at_half() {
        let beta = BetaParam::from_ints(1, 2).unwrap();
        let w = growth_witness(&beta, &Q::one(), 10).unwrap();
        for (n, v) in w.values.iter().enumerate() {
            assert_eq!(*v, qi(1 + n as i64));
        }
    }

    #[test]
    fn growth_witness_increments_double_at_two_thirds() {
        let beta = BetaParam::from_ints(2, 3).unwrap();
        let w = growth_witness(&beta, &Q::one(), 8).unwrap();
        let inc = w.increments();
        for i in 1..inc.len() {
            assert_eq!(inc[i], qi(2) * &inc[i - 1]);
        }
    }

    #[test]
    fn growth_witness_rejects_subcritical() {
        let beta = BetaParam::from_ints(1, 3).unwrap();
        assert!(growth_witness(&beta, &Q::one(), 4).is_err());
        let beta = BetaParam::from_ints(1, 1).unwrap();
        assert!(growth_witness(&beta, &Q::one(), 4).is_err());
    }

    #[test]
    fn residual_sweep_fast_path_is_exact_and_crosschecked() {
        let betas: Vec<BetaParam> = [(0i64, 1i64), (1, 10), (1, 3), (9, 20)]
            .iter()
            .map(|&(n, d)| BetaParam::from_ints(n, d).unwrap())
            .collect();
        for datum in [
            BoundaryDatum::constant(Q::one()),
            BoundaryDatum::linear(),
            BoundaryDatum::square(),
            BoundaryDatum::indicator_cell(cfg(2), 1, 0u32.into()).unwrap(),
        ] {
            let report = residual_sweep(cfg(2), &datum, &betas, 6).unwrap();
            assert_eq!(report.nonzero_residuals, 0);
            assert_eq!(report.vertices_checked, 127 * 4);
            assert!(report.cross_checked > 0, "fast path must cross-check");
        }
    }

    #[test]
    fn residual_sweep_generic_fallback_agrees() {
        // a datum outside the fast path: piecewise polynomial
        let pw = BoundaryDatum::piecewise(
            vec![q(0, 1), q(1, 2), q(1, 1)],
            vec![
                crate::datum::Polynomial::new(vec![q(0, 1), q(1, 1)]),
                crate::datum::Polynomial::new(vec![q(1, 2)]),
            ],
        )
        .unwrap();
        let betas = [BetaParam::from_ints(1, 3).unwrap()];
        let report = residual_sweep(cfg(2), &pw, &betas, 4).unwrap();
        assert_eq!(report.nonzero_residuals, 0);
        assert_eq!(report.cross_checked, 0); // generic path
    }
}
