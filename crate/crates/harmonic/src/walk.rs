//! Monte Carlo oracle: the biased walk on the tree whose transition weights
//! are read off the mean value identity. From a non-root vertex the walk
//! moves to the ancestor with probability `beta` and to each successor with
//! probability `(1-beta)/m`; from the root, uniformly to a successor. For
//! `beta < 1/2` the depth drifts upward at rate `1 - 2*beta`, the walk hits
//! any truncation level almost surely, and the boundary value scored there
//! estimates the solution — independently of the explicit formula, which is
//! what makes this an oracle worth having.

use crate::datum::BoundaryDatum;
use crate::dirichlet::{BetaParam, SolveError};
use crate::tree::{TreeConfig, Vertex};
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WalkError {
    #[error("walk requires beta in [0, 1/2), got {0}")]
    BetaOutOfRange(String),
    #[error("invalid walk configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Datum(#[from] crate::datum::DatumError),
}

#[derive(Debug, Clone)]
pub struct WalkConfig {
    pub beta: BetaParam,
    pub config: TreeConfig,
    /// Truncation level: walks stop on first reaching this depth.
    pub max_depth: u32,
    pub samples: u64,
    pub seed: u64,
}

impl WalkConfig {
    pub fn new(
        beta: BetaParam,
        config: TreeConfig,
        max_depth: u32,
        samples: u64,
        seed: u64,
    ) -> Result<Self, WalkError> {
        if !beta.is_subcritical() {
            return Err(WalkError::BetaOutOfRange(beta.beta().to_string()));
        }
        if max_depth < 1 {
            return Err(WalkError::InvalidConfig("max_depth must be >= 1".into()));
        }
        if samples < 1 {
            return Err(WalkError::InvalidConfig("samples must be >= 1".into()));
        }
        Ok(WalkConfig {
            beta,
            config,
            max_depth,
            samples,
            seed,
        })
    }
}

/// One transition of the biased walk.
pub fn walk_step<R: Rng>(current: &Vertex, beta: &BetaParam, rng: &mut R) -> Vertex {
    let m = current.config().m();
    let beta_f = beta.beta().to_f64().unwrap_or(0.0);
    let u: f64 = rng.gen();
    if !current.is_root() && u < beta_f {
        return current.parent().expect("non-root has a parent");
    }
    // remap the remaining mass uniformly over the m successors
    let rest = if current.is_root() {
        u
    } else {
        (u - beta_f) / (1.0 - beta_f)
    };
    let digit = ((rest * m as f64) as u32).min(m - 1);
    current.child(digit).expect("digit below m")
}

/// Monte Carlo estimate of the solution value with reproducible seeding.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct WalkEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// Deterministic bound on the truncation bias: stopping at `max_depth`
    /// and scoring `g` at the stopped vertex instead of the true exit point.
    pub bias_bound: f64,
    pub samples: u64,
    pub depth: u32,
    pub seed: u64,
}

struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    fn new() -> Self {
        RunningStats {
            n: 0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, other: &RunningStats) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            self.n = other.n;
            self.mean = other.mean;
            self.m2 = other.m2;
            return;
        }
        let n1 = self.n as f64;
        let n2 = other.n as f64;
        let delta = other.mean - self.mean;
        let n = n1 + n2;
        self.mean = (n1 * self.mean + n2 * other.mean) / n;
        self.m2 += other.m2 + delta * delta * n1 * n2 / n;
        self.n += other.n;
    }

    fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2 / (self.n as f64 - 1.0) / self.n as f64).sqrt()
    }
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    // splitmix is enough to decorrelate per-sample streams
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Run one truncated walk from the digit stack `start`, returning the digits
/// of the stopped vertex (first visit to `max_depth`).
fn run_walk(
    start: &[u32],
    m: u32,
    beta_f: f64,
    max_depth: u32,
    rng: &mut ChaCha8Rng,
) -> Vec<u32> {
    let mut digits = start.to_vec();
    digits.reserve(max_depth as usize);
    while (digits.len() as u32) < max_depth {
        let u: f64 = rng.gen();
        if !digits.is_empty() && u < beta_f {
            digits.pop();
        } else {
            let rest = if digits.is_empty() {
                u
            } else {
                (u - beta_f) / (1.0 - beta_f)
            };
            let digit = ((rest * m as f64) as u32).min(m - 1);
            digits.push(digit);
        }
    }
    digits
}

fn psi_f64(digits: &[u32], m: u32) -> f64 {
    let mut acc = 0.0;
    for &d in digits.iter().rev() {
        acc = (acc + d as f64) / m as f64;
    }
    acc
}

/// Estimate the solution at `start` by `cfg.samples` independent truncated
/// walks. Deterministic for a fixed seed: sample `i` always uses the stream
/// derived from `(seed, i)`, and the merge order is fixed.
pub fn estimate_u(
    datum: &BoundaryDatum,
    cfg: &WalkConfig,
    start: &Vertex,
) -> Result<WalkEstimate, WalkError> {
    if start.level() >= cfg.max_depth {
        return Err(WalkError::InvalidConfig(format!(
            "start level {} must be below max_depth {}",
            start.level(),
            cfg.max_depth
        )));
    }
    let m = cfg.config.m();
    let beta_f = cfg.beta.beta().to_f64().unwrap_or(0.0);

    // fixed chunking so the result does not depend on thread scheduling
    const CHUNKS: u64 = 8;
    let chunk_bounds: Vec<(u64, u64)> = (0..CHUNKS)
        .map(|c| {
            let lo = cfg.samples * c / CHUNKS;
            let hi = cfg.samples * (c + 1) / CHUNKS;
            (lo, hi)
        })
        .collect();

    let chunk_stats: Vec<Result<RunningStats, WalkError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunk_bounds
            .iter()
            .map(|&(lo, hi)| {
                scope.spawn(move || {
                    let mut stats = RunningStats::new();
                    for i in lo..hi {
                        let mut rng = sample_rng(cfg.seed, i);
                        let stopped =
                            run_walk(start.digits(), m, beta_f, cfg.max_depth, &mut rng);
                        let score = datum.eval_f64(psi_f64(&stopped, m))?;
                        stats.push(score);
                    }
                    Ok(stats)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("walk thread"))
            .collect()
    });

    let mut total = RunningStats::new();
    for s in chunk_stats {
        total.merge(&s?);
    }

    Ok(WalkEstimate {
        mean: total.mean,
        stderr: total.stderr(),
        bias_bound: truncation_bias_bound(datum, &cfg.beta, m, cfg.max_depth),
        samples: cfg.samples,
        depth: cfg.max_depth,
        seed: cfg.seed,
    })
}

/// Bound on `|u(v) - g(psi(v))|` over level-`depth` vertices `v`: the stopped
/// value is a convex combination of interval averages of `g`, so
/// `bias <= p^D * osc(g) + (1-p) * sum_{j<D} p^j * osc_j`, with `osc_j` the
/// oscillation of `g` over intervals of length `m^{j-D}`.
pub fn truncation_bias_bound(
    datum: &BoundaryDatum,
    beta: &BetaParam,
    m: u32,
    depth: u32,
) -> f64 {
    let p = beta
        .p()
        .map(|p| p.to_f64().unwrap_or(0.0))
        .unwrap_or(1.0);
    let osc_total = 2.0 * datum.sup_abs_bound().to_f64().unwrap_or(f64::INFINITY);
    let mut bound = p.powi(depth as i32) * osc_total;
    let mut pj = 1.0;
    for j in 0..depth {
        let osc = datum
            .interval_osc_bound(m, depth - j)
            .to_f64()
            .unwrap_or(f64::INFINITY);
        bound += (1.0 - p) * pj * osc;
        pj *= p;
    }
    bound
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirichlet::Solution;
    use crate::quad::QuadConfig;
    use crate::value::{q, Q};

    fn cfg(m: u32) -> TreeConfig {
        TreeConfig::new(m).unwrap()
    }

    fn beta(n: i64, d: i64) -> BetaParam {
        BetaParam::from_ints(n, d).unwrap()
    }

    #[test]
    fn beta_zero_always_descends() {
        let mut rng = sample_rng(7, 0);
        let mut v = cfg(3).root();
        for step in 1..=20 {
            v = walk_step(&v, &beta(0, 1), &mut rng);
            assert_eq!(v.level(), step);
        }
    }

    #[test]
    fn root_never_ascends() {
        let mut rng = sample_rng(11, 0);
        let root = cfg(2).root();
        for _ in 0..200 {
            let next = walk_step(&root, &beta(9, 20), &mut rng);
            assert_eq!(next.level(), 1);
        }
    }

    #[test]
    fn transition_frequencies_match_weights() {
        // from a non-root vertex: up with prob beta, each child (1-beta)/m
        let b = beta(1, 3);
        let x = Vertex::new(cfg(2), vec![0, 1]).unwrap();
        let mut up = 0u32;
        let mut child = [0u32; 2];
        let n = 100_000;
        let mut rng = sample_rng(42, 1);
        for _ in 0..n {
            let next = walk_step(&x, &b, &mut rng);
            if next.level() == 1 {
                up += 1;
            } else {
                child[*next.digits().last().unwrap() as usize] += 1;
            }
        }
        let nf = n as f64;
        // four standard errors of a binomial proportion
        let check = |count: u32, prob: f64| {
            let se = (prob * (1.0 - prob) / nf).sqrt();
            let freq = count as f64 / nf;
            assert!(
                (freq - prob).abs() < 4.0 * se,
                "freq {freq} prob {prob} se {se}"
            );
        };
        check(up, 1.0 / 3.0);
        check(child[0], 1.0 / 3.0);
        check(child[1], 1.0 / 3.0);
    }

    #[test]
    fn depth_drift_matches_one_minus_two_beta() {
        let b = beta(1, 10);
        let x = Vertex::new(cfg(2), vec![0; 50]).unwrap();
        let n = 100_000;
        let mut rng = sample_rng(5, 2);
        let mut sum = 0i64;
        for _ in 0..n {
            let next = walk_step(&x, &b, &mut rng);
            sum += next.level() as i64 - 50;
        }
        let drift = sum as f64 / n as f64;
        let expect = 1.0 - 2.0 * 0.1;
        let se = (1.0f64 / n as f64).sqrt(); // step variance <= 1
        assert!((drift - expect).abs() < 4.0 * se + 1e-3);
    }

    #[test]
    fn constant_datum_estimates_exactly() {
        let wc = WalkConfig::new(beta(1, 3), cfg(2), 10, 500, 3).unwrap();
        let est = estimate_u(&BoundaryDatum::constant(q(5, 8)), &wc, &cfg(2).root()).unwrap();
        assert_eq!(est.mean, 0.625);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn estimates_match_exact_solution() {
        // beta = 0, g(t) = t from the root: exact value 1/2
        let wc = WalkConfig::new(beta(0, 1), cfg(2), 30, 100_000, 12345).unwrap();
        let est = estimate_u(&BoundaryDatum::linear(), &wc, &cfg(2).root()).unwrap();
        assert!(
            (est.mean - 0.5).abs() <= 3.0 * est.stderr + est.bias_bound,
            "mean {} stderr {} bias {}",
            est.mean,
            est.stderr,
            est.bias_bound
        );

        // beta = 1/3, g(t) = t at vertex (1): exact value 5/8
        let b = beta(1, 3);
        let x = Vertex::new(cfg(2), vec![1]).unwrap();
        let wc = WalkConfig::new(b.clone(), cfg(2), 30, 100_000, 999).unwrap();
        let est = estimate_u(&BoundaryDatum::linear(), &wc, &x).unwrap();
        let sol = Solution::<Q>::solve(BoundaryDatum::linear(), b, cfg(2), QuadConfig::default())
            .unwrap();
        let exact = sol.value(&x).unwrap().to_f64().unwrap();
        assert_eq!(exact, 0.625);
        assert!((est.mean - exact).abs() <= 3.0 * est.stderr + est.bias_bound);
    }

    #[test]
    fn one_step_martingale_identity() {
        // E[u(next)] == u(x): averaging the exact solution over many single
        // steps reproduces its value within Monte Carlo error
        let b = beta(1, 3);
        let g = BoundaryDatum::linear();
        let sol =
            Solution::<Q>::solve(g, b.clone(), cfg(2), QuadConfig::default()).unwrap();
        let x = Vertex::new(cfg(2), vec![1, 0]).unwrap();
        let ux = sol.value(&x).unwrap().to_f64().unwrap();
        let n = 60_000;
        let mut rng = sample_rng(31, 4);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let next = walk_step(&x, &b, &mut rng);
            let v = sol.value(&next).unwrap().to_f64().unwrap();
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - ux).abs() <= 4.0 * se + 1e-12,
            "mean {mean} vs u(x) {ux} (se {se})"
        );
    }

    #[test]
    fn estimator_consistency_across_a_seeded_grid() {
        // |estimate - solve| <= 3*stderr + bias in at least 99% of trials
        let grid: Vec<(u32, BetaParam, Vec<u32>, BoundaryDatum)> = vec![
            (2, beta(0, 1), vec![], BoundaryDatum::linear()),
            (2, beta(1, 3), vec![1], BoundaryDatum::square()),
            (3, beta(1, 10), vec![2], BoundaryDatum::linear()),
            (3, beta(2, 5), vec![0, 1], BoundaryDatum::square()),
        ];
        let mut pass = 0u32;
        let mut total = 0u32;
        for (m, b, digits, g) in &grid {
            let config = cfg(*m);
            let x = Vertex::new(config, digits.clone()).unwrap();
            let sol =
                Solution::<Q>::solve(g.clone(), b.clone(), config, QuadConfig::default())
                    .unwrap();
            let exact = sol.value(&x).unwrap().to_f64().unwrap();
            for seed in 0..15u64 {
                let wc = WalkConfig::new(b.clone(), config, 22, 3000, 1000 + seed).unwrap();
                let est = estimate_u(g, &wc, &x).unwrap();
                total += 1;
                if (est.mean - exact).abs() <= 3.0 * est.stderr + est.bias_bound {
                    pass += 1;
                }
            }
        }
        assert!(
            pass as f64 >= 0.99 * total as f64,
            "only {pass}/{total} trials within budget"
        );
    }

    #[test]
    fn estimate_is_deterministic_for_fixed_seed() {
        let wc = WalkConfig::new(beta(1, 10), cfg(3), 12, 2000, 777).unwrap();
        let x = cfg(3).root();
        let a = estimate_u(&BoundaryDatum::square(), &wc, &x).unwrap();
        let b = estimate_u(&BoundaryDatum::square(), &wc, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(WalkConfig::new(beta(1, 2), cfg(2), 10, 10, 0).is_err());
        assert!(WalkConfig::new(beta(0, 1), cfg(2), 0, 10, 0).is_err());
        assert!(WalkConfig::new(beta(0, 1), cfg(2), 10, 0, 0).is_err());
        // start at or below max_depth is rejected
        let wc = WalkConfig::new(beta(0, 1), cfg(2), 3, 10, 0).unwrap();
        let deep = Vertex::new(cfg(2), vec![0, 1, 0]).unwrap();
        assert!(estimate_u(&BoundaryDatum::linear(), &wc, &deep).is_err());
    }

    #[test]
    fn bias_bound_beta_zero_is_lipschitz_times_cell() {
        // for beta = 0 the bound collapses to lip * m^{-D}
        let b = truncation_bias_bound(&BoundaryDatum::linear(), &beta(0, 1), 2, 10);
        assert!((b - 2f64.powi(-10)).abs() < 1e-15);
    }
}
