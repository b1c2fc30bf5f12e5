//! Bracketing root finder for strictly monotone scalar functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotone {
    Increasing,
    Decreasing,
}

impl Monotone {
    pub fn sign(self) -> f64 {
        match self {
            Monotone::Increasing => 1.0,
            Monotone::Decreasing => -1.0,
        }
    }
}

/// Outcome of one root search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Root {
    pub x: f64,
    /// `|phi(x)|` at the returned point.
    pub residual: f64,
    /// Final bracket.
    pub lo: f64,
    pub hi: f64,
    pub evaluations: usize,
}

const BRACKET_LIMIT: f64 = 1e300;
const MAX_BISECTIONS: usize = 4096;

/// Finds the root of a strictly monotone `phi`.
///
/// The bracket grows geometrically (start width 1, factor 2) from `x0` in the
/// direction of the root; bisection then runs until the bracket cannot be
/// split in floating point or `phi` vanishes exactly.
pub fn find_root<F>(mut phi: F, x0: f64, direction: Monotone, node: NodeId) -> Result<Root>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut evaluations = 0;
    let mut eval = |x: f64| -> Result<f64> {
        evaluations += 1;
        let v = phi(x)?;
        if v.is_nan() {
            return Err(Error::InvalidParameter(format!(
                "root function is NaN at {x} (node {node})"
            )));
        }
        Ok(v)
    };

    let x0 = if x0.is_finite() { x0 } else { 0.0 };
    let f0 = eval(x0)?;
    if f0 == 0.0 {
        return Ok(Root { x: x0, residual: 0.0, lo: x0, hi: x0, evaluations: 1 });
    }
    // phi(x0) < 0 with phi increasing means the root lies above x0.
    let step = if (f0 < 0.0) == (direction == Monotone::Increasing) { 1.0 } else { -1.0 };
    let (mut inner, mut f_inner) = (x0, f0);
    let mut width = 1.0;
    let (outer, f_outer) = loop {
        let x = x0 + step * width;
        if !x.is_finite() || x.abs() > BRACKET_LIMIT {
            return Err(Error::BracketOverflow { node });
        }
        let fx = eval(x)?;
        if fx == 0.0 || (fx < 0.0) != (f0 < 0.0) {
            break (x, fx);
        }
        inner = x;
        f_inner = fx;
        width *= 2.0;
    };
    if f_outer == 0.0 {
        let (lo, hi) = if inner < outer { (inner, outer) } else { (outer, inner) };
        return Ok(Root { x: outer, residual: 0.0, lo, hi, evaluations });
    }

    let (mut lo, mut f_lo, mut hi, mut f_hi) = if inner < outer {
        (inner, f_inner, outer, f_outer)
    } else {
        (outer, f_outer, inner, f_inner)
    };
    for _ in 0..MAX_BISECTIONS {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = eval(mid)?;
        if fm == 0.0 {
            return Ok(Root { x: mid, residual: 0.0, lo, hi, evaluations });
        }
        if (fm < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
            f_hi = fm;
        }
    }
    let (x, residual) = if f_lo.abs() <= f_hi.abs() { (lo, f_lo.abs()) } else { (hi, f_hi.abs()) };
    Ok(Root { x, residual, lo, hi, evaluations })
}
