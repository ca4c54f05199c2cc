//! Parsing of experiment parameters: exact rationals, boundary data, branch
//! specifications, depth ranges, and weight vectors.

use anyhow::{anyhow, bail, Context, Result};
use num::BigInt;
use num_traits::{One, Zero};
use serde::Deserialize;
use tree_harmonic::{BetaParam, BoundaryDatum, Branch, Q, TreeConfig};

/// Parse an exact rational: `a/b`, an integer, or a decimal literal
/// (`0.35` becomes `35/100` exactly).
pub fn parse_rational(s: &str) -> Result<Q> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let n: BigInt = num.trim().parse().context("rational numerator")?;
        let d: BigInt = den.trim().parse().context("rational denominator")?;
        if d.is_zero() {
            bail!("zero denominator in {s:?}");
        }
        return Ok(Q::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let sign = if int.trim_start().starts_with('-') { -1 } else { 1 };
        let i: BigInt = if int.is_empty() || int == "-" {
            BigInt::zero()
        } else {
            int.parse().context("integer part")?
        };
        if frac.is_empty() {
            return Ok(Q::from_integer(i));
        }
        let digits: BigInt = frac.parse().context("fractional digits")?;
        let scale = BigInt::from(10).pow(frac.len() as u32);
        return Ok(Q::from_integer(i) + Q::new(digits * sign, scale));
    }
    let n: BigInt = s.parse().with_context(|| format!("cannot parse rational {s:?}"))?;
    Ok(Q::from_integer(n))
}

/// Parse beta, preferring exact fractions. Decimal input is converted to the
/// exact rational it literally denotes, with a warning that a repeating
/// fraction like 1/3 cannot be written that way.
pub fn parse_beta(s: &str) -> Result<BetaParam> {
    if s.contains('.') {
        eprintln!(
            "warning: beta {s:?} parsed as the exact decimal fraction; \
             write a/b if you meant a ratio like 1/3"
        );
    }
    let q = parse_rational(s)?;
    BetaParam::new(q).map_err(|e| anyhow!(e.to_string()))
}

/// Datum specifications:
/// `one` | `linear` | `square` | `const:<q>` | `poly:<c0>,<c1>,...` |
/// `chi:<n>,<j>` (m-adic cell indicator) | `indicator:<lo>,<hi>`.
pub fn parse_datum(s: &str, config: TreeConfig) -> Result<BoundaryDatum> {
    let s = s.trim();
    match s {
        "one" => return Ok(BoundaryDatum::constant(Q::one())),
        "linear" => return Ok(BoundaryDatum::linear()),
        "square" => return Ok(BoundaryDatum::square()),
        _ => {}
    }
    let (kind, rest) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("unknown datum {s:?}"))?;
    match kind {
        "const" => Ok(BoundaryDatum::constant(parse_rational(rest)?)),
        "poly" => {
            let coeffs = rest
                .split(',')
                .map(parse_rational)
                .collect::<Result<Vec<_>>>()?;
            Ok(BoundaryDatum::polynomial(coeffs))
        }
        "chi" => {
            let (n, j) = rest
                .split_once(',')
                .ok_or_else(|| anyhow!("chi needs n,j"))?;
            let n: u32 = n.trim().parse().context("chi depth")?;
            let j: num::BigUint = j.trim().parse().context("chi index")?;
            Ok(BoundaryDatum::indicator_cell(config, n, j)?)
        }
        "indicator" => {
            let (lo, hi) = rest
                .split_once(',')
                .ok_or_else(|| anyhow!("indicator needs lo,hi"))?;
            Ok(BoundaryDatum::indicator(
                parse_rational(lo)?,
                parse_rational(hi)?,
            )?)
        }
        _ => bail!("unknown datum kind {kind:?}"),
    }
}

/// Branch specifications: a rational boundary point (`1/3`, `0.25`, `1`), or
/// explicit digits `digits:0.1.0` with an optional repeating tail
/// `digits:0~1.0` (pre `0`, cycle `1.0`).
pub fn parse_branch(s: &str, config: TreeConfig) -> Result<Branch> {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix("digits:") {
        let (pre_str, cycle_str) = match rest.split_once('~') {
            Some((a, b)) => (a, Some(b)),
            None => (rest, None),
        };
        let parse_digits = |part: &str| -> Result<Vec<u32>> {
            if part.is_empty() {
                return Ok(Vec::new());
            }
            part.split('.')
                .map(|d| d.trim().parse::<u32>().context("branch digit"))
                .collect()
        };
        let pre = parse_digits(pre_str)?;
        let cycle = match cycle_str {
            Some(c) => parse_digits(c)?,
            None => vec![0],
        };
        return Ok(Branch::from_digits(config, pre, cycle)?);
    }
    let t = parse_rational(s)?;
    Ok(Branch::from_point(&t, config)?)
}

/// Depth lists: `2..14` (inclusive) or `1,2,5,9`.
pub fn parse_depths(s: &str) -> Result<Vec<u32>> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let lo: u32 = a.trim().parse().context("depth range start")?;
        let hi: u32 = b.trim().parse().context("depth range end")?;
        if lo > hi {
            bail!("empty depth range {s:?}");
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',')
        .map(|d| d.trim().parse::<u32>().context("depth"))
        .collect()
}

/// Comma-separated rational components.
pub fn parse_eta(s: &str) -> Result<Vec<Q>> {
    s.split(',').map(parse_rational).collect()
}

/// Keys shared by the config file and the command line; any flag overrides
/// the file value.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub m: Option<u32>,
    pub beta: Option<String>,
    pub datum: Option<String>,
    pub datum2: Option<String>,
    pub branch: Option<String>,
    pub depths: Option<String>,
    pub eta: Option<String>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub samples: Option<u64>,
    pub out: Option<String>,
    pub format: Option<String>,
    pub grid: Option<u32>,
    pub steps: Option<u32>,
    pub threshold: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rationals() {
        assert_eq!(parse_rational("3/4").unwrap(), Q::new(3.into(), 4.into()));
        assert_eq!(parse_rational("0.35").unwrap(), Q::new(7.into(), 20.into()));
        assert_eq!(parse_rational("2").unwrap(), Q::from_integer(2.into()));
        assert_eq!(
            parse_rational("-0.5").unwrap(),
            Q::new((-1).into(), 2.into())
        );
        assert!(parse_rational("1/0").is_err());
    }

    #[test]
    fn branches() {
        let cfg = TreeConfig::new(2).unwrap();
        let b = parse_branch("1/3", cfg).unwrap();
        assert_eq!(b.digit(1), 0);
        assert_eq!(b.digit(2), 1);
        let b = parse_branch("digits:0~1.0", cfg).unwrap();
        assert_eq!(b.digit(1), 0);
        assert_eq!(b.digit(2), 1);
        assert_eq!(b.digit(3), 0);
        assert_eq!(b.digit(4), 1);
    }

    #[test]
    fn depths() {
        assert_eq!(parse_depths("2..5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_depths("1,4,9").unwrap(), vec![1, 4, 9]);
        assert!(parse_depths("5..2").is_err());
    }

    #[test]
    fn datums() {
        let cfg = TreeConfig::new(3).unwrap();
        assert!(parse_datum("linear", cfg).is_ok());
        assert!(parse_datum("poly:1/2,0,3", cfg).is_ok());
        assert!(parse_datum("chi:1,2", cfg).is_ok());
        assert!(parse_datum("indicator:2/3,1", cfg).is_ok());
        assert!(parse_datum("nope", cfg).is_err());
    }
}
