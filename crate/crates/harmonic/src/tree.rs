//! Vertex addressing on the regular m-branching tree, the boundary map to
//! `[0,1]`, m-adic intervals, and branch/interval containment depths.

use crate::value::{qi, Q};
use num::BigInt;
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("branching factor must be at least 2, got {0}")]
    BranchingTooSmall(u32),
    #[error("digit {digit} out of range for branching factor {m}")]
    DigitOutOfRange { digit: u32, m: u32 },
    #[error("cannot take ancestor {j} levels up from a level-{level} vertex")]
    AncestorOutOfRange { j: u32, level: u32 },
    #[error("point {0} lies outside [0,1]")]
    PointOutOfRange(String),
    #[error("interval index {index} out of range at depth {depth}")]
    IndexOutOfRange { index: String, depth: u32 },
    #[error("point {point} is outside the admissible interval {interval}")]
    OutsideDomain { point: String, interval: String },
    #[error("containment depth is undefined at the branch point itself")]
    SingularPoint,
    #[error("cannot parse vertex digits from {0:?}")]
    ParseVertex(String),
}

/// Branching factor of the tree; every vertex has exactly `m` successors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TreeConfig {
    m: u32,
}

impl TreeConfig {
    pub fn new(m: u32) -> Result<Self, TreeError> {
        if m < 2 {
            return Err(TreeError::BranchingTooSmall(m));
        }
        Ok(TreeConfig { m })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn m_q(&self) -> Q {
        qi(self.m as i64)
    }

    pub fn root(&self) -> Vertex {
        Vertex {
            config: *self,
            digits: Vec::new(),
        }
    }
}

/// A vertex: a finite base-m digit sequence. The empty sequence is the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Vertex {
    config: TreeConfig,
    digits: Vec<u32>,
}

impl Vertex {
    pub fn new(config: TreeConfig, digits: Vec<u32>) -> Result<Self, TreeError> {
        for &d in &digits {
            if d >= config.m() {
                return Err(TreeError::DigitOutOfRange {
                    digit: d,
                    m: config.m(),
                });
            }
        }
        Ok(Vertex { config, digits })
    }

    /// Parse `"a1.a2.a3"`; the empty string or `"∅"` is the root.
    pub fn parse(config: TreeConfig, s: &str) -> Result<Self, TreeError> {
        let s = s.trim();
        if s.is_empty() || s == "∅" || s == "root" {
            return Ok(config.root());
        }
        let digits = s
            .split('.')
            .map(|part| part.trim().parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| TreeError::ParseVertex(s.to_string()))?;
        Vertex::new(config, digits)
    }

    pub fn config(&self) -> TreeConfig {
        self.config
    }

    pub fn digits(&self) -> &[u32] {
        &self.digits
    }

    /// Level `|x|`: the number of digits.
    pub fn level(&self) -> u32 {
        self.digits.len() as u32
    }

    pub fn is_root(&self) -> bool {
        self.digits.is_empty()
    }

    pub fn child(&self, digit: u32) -> Result<Vertex, TreeError> {
        if digit >= self.config.m() {
            return Err(TreeError::DigitOutOfRange {
                digit,
                m: self.config.m(),
            });
        }
        let mut digits = self.digits.clone();
        digits.push(digit);
        Ok(Vertex {
            config: self.config,
            digits,
        })
    }

    /// The `m` successors `(x,0), ..., (x,m-1)` in digit order.
    pub fn successors(&self) -> Vec<Vertex> {
        (0..self.config.m())
            .map(|d| self.child(d).expect("digit in range"))
            .collect()
    }

    /// Immediate predecessor; `None` at the root.
    pub fn parent(&self) -> Option<Vertex> {
        if self.is_root() {
            None
        } else {
            let mut digits = self.digits.clone();
            digits.pop();
            Some(Vertex {
                config: self.config,
                digits,
            })
        }
    }

    /// The vertex with the last `j` digits removed; `ancestor(0)` is the
    /// vertex itself.
    pub fn ancestor(&self, j: u32) -> Result<Vertex, TreeError> {
        if j > self.level() {
            return Err(TreeError::AncestorOutOfRange {
                j,
                level: self.level(),
            });
        }
        let keep = self.digits.len() - j as usize;
        Ok(Vertex {
            config: self.config,
            digits: self.digits[..keep].to_vec(),
        })
    }

    /// Digits read as a base-m integer: the index of this vertex's interval
    /// among the level-`|x|` intervals.
    pub fn interval_index(&self) -> BigUint {
        let m = BigUint::from(self.config.m());
        let mut acc = BigUint::zero();
        for &d in &self.digits {
            acc = acc * &m + BigUint::from(d);
        }
        acc
    }

    /// Boundary coordinate of the vertex: the left endpoint of its interval,
    /// `sum a_k m^{-k}`, exact with denominator `m^{|x|}`.
    pub fn psi(&self) -> Q {
        let num = BigInt::from(self.interval_index());
        let den = BigInt::from(self.config.m()).pow(self.level());
        Q::new(num, den)
    }

    /// The m-adic interval `[psi(x), psi(x) + m^{-|x|}]`.
    pub fn interval(&self) -> MadicInterval {
        MadicInterval {
            config: self.config,
            depth: self.level(),
            index: self.interval_index(),
        }
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_root() {
            return write!(f, "∅");
        }
        let parts: Vec<String> = self.digits.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("."))
    }
}

/// The interval `[j m^{-k}, (j+1) m^{-k}]`, stored as `(m, k, j)` so that
/// membership and refinement are integer-exact.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MadicInterval {
    config: TreeConfig,
    depth: u32,
    index: BigUint,
}

impl MadicInterval {
    pub fn new(config: TreeConfig, depth: u32, index: BigUint) -> Result<Self, TreeError> {
        let cells = BigUint::from(config.m()).pow(depth);
        if index >= cells {
            return Err(TreeError::IndexOutOfRange {
                index: index.to_string(),
                depth,
            });
        }
        Ok(MadicInterval {
            config,
            depth,
            index,
        })
    }

    /// The whole boundary `[0,1]`.
    pub fn unit(config: TreeConfig) -> Self {
        MadicInterval {
            config,
            depth: 0,
            index: BigUint::zero(),
        }
    }

    pub fn config(&self) -> TreeConfig {
        self.config
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn index(&self) -> &BigUint {
        &self.index
    }

    pub fn lower(&self) -> Q {
        Q::new(
            BigInt::from(self.index.clone()),
            BigInt::from(self.config.m()).pow(self.depth),
        )
    }

    pub fn upper(&self) -> Q {
        Q::new(
            BigInt::from(self.index.clone() + BigUint::one()),
            BigInt::from(self.config.m()).pow(self.depth),
        )
    }

    pub fn length(&self) -> Q {
        Q::new(
            BigInt::one(),
            BigInt::from(self.config.m()).pow(self.depth),
        )
    }

    pub fn midpoint(&self) -> Q {
        let two_index = BigInt::from(self.index.clone()) * BigInt::from(2);
        Q::new(
            two_index + BigInt::one(),
            BigInt::from(self.config.m()).pow(self.depth) * BigInt::from(2),
        )
    }

    /// Closed-interval membership, exact.
    pub fn contains(&self, t: &Q) -> bool {
        let scaled = t * Q::from_integer(BigInt::from(self.config.m()).pow(self.depth));
        let lo = Q::from_integer(BigInt::from(self.index.clone()));
        let hi = Q::from_integer(BigInt::from(self.index.clone() + BigUint::one()));
        lo <= scaled && scaled <= hi
    }

    /// The sub-interval owned by successor digit `i`.
    pub fn child(&self, i: u32) -> Result<Self, TreeError> {
        if i >= self.config.m() {
            return Err(TreeError::DigitOutOfRange {
                digit: i,
                m: self.config.m(),
            });
        }
        Ok(MadicInterval {
            config: self.config,
            depth: self.depth + 1,
            index: self.index.clone() * BigUint::from(self.config.m()) + BigUint::from(i),
        })
    }

    pub fn parent(&self) -> Option<Self> {
        if self.depth == 0 {
            None
        } else {
            Some(MadicInterval {
                config: self.config,
                depth: self.depth - 1,
                index: self.index.clone() / BigUint::from(self.config.m()),
            })
        }
    }

    /// True when `other ⊆ self` (as m-adic cells).
    pub fn contains_interval(&self, other: &Self) -> bool {
        if other.depth < self.depth || self.config != other.config {
            return false;
        }
        let shift = BigUint::from(self.config.m()).pow(other.depth - self.depth);
        other.index.clone() / shift == self.index
    }
}

impl fmt::Display for MadicInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lower(), self.upper())
    }
}

/// A boundary point as an eventually periodic digit expansion: `pre` followed
/// by `cycle` repeating forever. Any rational in `[0,1]` has such an
/// expansion; `f64` inputs are rationals and are converted exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Branch {
    config: TreeConfig,
    pre: Vec<u32>,
    cycle: Vec<u32>,
}

impl Branch {
    /// The canonical branch over a boundary point: m-adic rationals get the
    /// expansion ending in repeated `0`, except `t = 1` which gets all
    /// `m-1` digits.
    pub fn from_point(t: &Q, config: TreeConfig) -> Result<Self, TreeError> {
        if t < &Q::zero() || t > &Q::one() {
            return Err(TreeError::PointOutOfRange(t.to_string()));
        }
        if t == &Q::one() {
            return Ok(Branch {
                config,
                pre: Vec::new(),
                cycle: vec![config.m() - 1],
            });
        }
        // Long division: remainders share t's denominator, so the digit
        // stream is eventually periodic with period at most den(t).
        let m = BigInt::from(config.m());
        let den = t.denom().clone();
        let mut num = t.numer().clone();
        let mut digits: Vec<u32> = Vec::new();
        let mut seen: HashMap<BigInt, usize> = HashMap::new();
        loop {
            if let Some(&start) = seen.get(&num) {
                let pre = digits[..start].to_vec();
                let cycle = digits[start..].to_vec();
                return Ok(Branch { config, pre, cycle });
            }
            seen.insert(num.clone(), digits.len());
            let scaled = &num * &m;
            let digit = (&scaled / &den).to_u32().expect("digit below m");
            digits.push(digit);
            num = scaled - BigInt::from(digit) * &den;
        }
    }

    pub fn from_digits(config: TreeConfig, pre: Vec<u32>, cycle: Vec<u32>) -> Result<Self, TreeError> {
        let cycle = if cycle.is_empty() { vec![0] } else { cycle };
        for &d in pre.iter().chain(cycle.iter()) {
            if d >= config.m() {
                return Err(TreeError::DigitOutOfRange {
                    digit: d,
                    m: config.m(),
                });
            }
        }
        Ok(Branch { config, pre, cycle })
    }

    pub fn config(&self) -> TreeConfig {
        self.config
    }

    /// Digit `a_k` for `k >= 1`.
    pub fn digit(&self, k: u32) -> u32 {
        let k = k as usize;
        assert!(k >= 1, "digits are 1-indexed");
        if k <= self.pre.len() {
            self.pre[k - 1]
        } else {
            self.cycle[(k - 1 - self.pre.len()) % self.cycle.len()]
        }
    }

    /// The level-k vertex `x_k` the branch passes through.
    pub fn prefix(&self, k: u32) -> Vertex {
        let digits: Vec<u32> = (1..=k).map(|i| self.digit(i)).collect();
        Vertex {
            config: self.config,
            digits,
        }
    }

    /// The interval owned by `x_k`.
    pub fn interval(&self, k: u32) -> MadicInterval {
        self.prefix(k).interval()
    }

    /// Exact boundary coordinate `sum a_k m^{-k}` via the geometric series of
    /// the periodic tail.
    pub fn psi(&self) -> Q {
        let m = BigInt::from(self.config.m());
        let mut pre_val = BigInt::zero();
        for &d in &self.pre {
            pre_val = pre_val * &m + BigInt::from(d);
        }
        let mut cyc_val = BigInt::zero();
        for &d in &self.cycle {
            cyc_val = cyc_val * &m + BigInt::from(d);
        }
        let m_pre = m.pow(self.pre.len() as u32);
        let m_cyc = m.pow(self.cycle.len() as u32);
        let pre_part = Q::new(pre_val, m_pre.clone());
        let tail_part = Q::new(cyc_val, m_pre * (m_cyc - BigInt::one()));
        pre_part + tail_part
    }

    /// `max { k : t ∈ I_{x_k} }`, the deepest prefix interval containing `t`
    /// (closed-interval membership). Finite precisely because `t != psi`.
    pub fn containment_depth(&self, t: &Q) -> Result<u32, TreeError> {
        if t == &self.psi() {
            return Err(TreeError::SingularPoint);
        }
        if !self.interval(1).contains(t) {
            return Err(TreeError::OutsideDomain {
                point: t.to_string(),
                interval: self.interval(1).to_string(),
            });
        }
        let mut k = 1;
        while self.interval(k + 1).contains(t) {
            k += 1;
        }
        Ok(k)
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fmt_digits = |ds: &[u32]| {
            ds.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(".")
        };
        if self.pre.is_empty() {
            write!(f, "({})*", fmt_digits(&self.cycle))
        } else {
            write!(f, "{}.({})*", fmt_digits(&self.pre), fmt_digits(&self.cycle))
        }
    }
}

/// The deepest level `l ∈ {1, ..., |x|}` whose ancestor interval along `x`
/// still contains `t`; errors if even the level-1 ancestor interval misses
/// `t`. Closed-interval membership, ties resolved exactly.
pub fn containment_level(x: &Vertex, t: &Q) -> Result<u32, TreeError> {
    let level = x.level();
    assert!(level >= 1, "containment level needs a non-root vertex");
    let top = x.ancestor(level - 1).expect("level checked");
    if !top.interval().contains(t) {
        return Err(TreeError::OutsideDomain {
            point: t.to_string(),
            interval: top.interval().to_string(),
        });
    }
    let mut deepest = 1;
    for l in 2..=level {
        if x.ancestor(level - l).expect("in range").interval().contains(t) {
            deepest = l;
        } else {
            break;
        }
    }
    Ok(deepest)
}
