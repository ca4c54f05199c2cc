//! Adaptive Simpson quadrature with an absolute tolerance and an evaluation
//! budget. Used only for black-box boundary data; exact data never come here.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    /// Absolute tolerance per requested integral.
    pub abs_tol: f64,
    /// Hard cap on integrand evaluations per requested integral.
    pub max_evals: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            abs_tol: 1e-12,
            max_evals: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    /// Estimated absolute error actually achieved.
    pub err_estimate: f64,
    pub evals: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error(
        "quadrature failed to reach tolerance {tol:e} within {evals} evaluations \
         (best value {value}, error estimate {err:e})"
    )]
    ToleranceNotMet {
        tol: f64,
        evals: usize,
        value: f64,
        err: f64,
    },
}

struct Worker<'a> {
    f: &'a dyn Fn(f64) -> f64,
    evals: usize,
    max_evals: usize,
    exhausted: bool,
}

impl<'a> Worker<'a> {
    fn eval(&mut self, x: f64) -> f64 {
        self.evals += 1;
        (self.f)(x)
    }

    // Returns (integral, error estimate) over [a, b].
    #[allow(clippy::too_many_arguments)]
    fn simpson(&mut self, a: f64, fa: f64, m: f64, fm: f64, b: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> (f64, f64) {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        if self.evals + 2 > self.max_evals || depth == 0 {
            // out of budget with the local defect still unknown: the error
            // here cannot be certified at all
            self.exhausted = true;
            return (whole, f64::INFINITY);
        }
        let flm = self.eval(lm);
        let frm = self.eval(rm);
        let h6 = (b - a) / 12.0;
        let left = h6 * (fa + 4.0 * flm + fm);
        let right = h6 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            // Richardson extrapolation; the defect/15 is the error estimate.
            (left + right + delta / 15.0, (delta / 15.0).abs())
        } else {
            let (lv, le) = self.simpson(a, fa, lm, flm, m, fm, left, 0.5 * tol, depth - 1);
            let (rv, re) = self.simpson(m, fm, rm, frm, b, fb, right, 0.5 * tol, depth - 1);
            (lv + rv, le + re)
        }
    }
}

/// Integrate `f` over `[a, b]`.
pub fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    cfg: &QuadConfig,
) -> Result<QuadResult, QuadError> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            err_estimate: 0.0,
            evals: 0,
        });
    }
    let mut w = Worker {
        f,
        evals: 0,
        max_evals: cfg.max_evals,
        exhausted: false,
    };
    let m = 0.5 * (a + b);
    let fa = w.eval(a);
    let fm = w.eval(m);
    let fb = w.eval(b);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let (value, err) = w.simpson(a, fa, m, fm, b, fb, whole, cfg.abs_tol, 60);
    let result = QuadResult {
        value,
        err_estimate: err,
        evals: w.evals,
    };
    if w.exhausted && err > cfg.abs_tol {
        return Err(QuadError::ToleranceNotMet {
            tol: cfg.abs_tol,
            evals: w.evals,
            value,
            err,
        });
    }
    Ok(result)
}
