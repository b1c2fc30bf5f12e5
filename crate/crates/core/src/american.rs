//! Strike-independent exercise signal `K` for American puts.
//!
//! `K` solves, for every node at time `t`,
//!
//! ```text
//! -(1+r)^{-t} P_t = E_t[ sum_{u=t}^{N-1} r/(1+r) (1+r)^{-u} max_{t<=v<=u}(-K_v)
//!                        + (1+r)^{-N} max_{t<=v<=N}(-K_v) ]
//! ```
//!
//! and the put with strike `k` is exercised when `K` first drops to `k`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expectation::Operator;
use crate::representation::{residual, solve, FSpec, RepresentationProblem, Residual, SolveReport, Variant};
use crate::stopping::snell;
use crate::tree::{enumerate_extended_rules, first_hitting, NodeId, Process, StoppingRule, Tree};

/// Prices on a tree with a per-period risk-free rate.
#[derive(Debug, Clone)]
pub struct MarketSpec {
    pub prices: Process,
    pub rate: f64,
}

impl MarketSpec {
    pub fn new(tree: &Tree, prices: Process, rate: f64) -> Result<MarketSpec> {
        if prices.len() != tree.len() {
            return Err(Error::LengthMismatch {
                expected: tree.len(),
                found: prices.len(),
            });
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("rate {rate} must be > 0")));
        }
        if let Some(n) = (0..tree.len()).find(|&n| !(prices[n] > 0.0 && prices[n].is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "price {} at node {n} must be positive",
                prices[n]
            )));
        }
        Ok(MarketSpec { prices, rate })
    }

    /// Cox-Ross-Rubinstein market unfolded into a non-recombining tree:
    /// `u = exp(vol * sqrt(dt))`, `d = 1/u`, risk-neutral `p = (1+r-d)/(u-d)`.
    pub fn crr(horizon: usize, spot: f64, rate: f64, vol: f64, dt: f64) -> Result<(Tree, MarketSpec)> {
        if !(vol > 0.0 && vol.is_finite()) {
            return Err(Error::InvalidParameter(format!("volatility {vol} must be > 0")));
        }
        let (up, down, p) = crr_parameters(rate, vol, dt)?;
        let tree = Tree::binomial(horizon, p, 1.0, dt)?;
        let mut prices = vec![spot; tree.len()];
        for n in 1..tree.len() {
            let parent = tree.parent(n).expect("non-root");
            let first = tree.children(parent).start;
            prices[n] = prices[parent] * if n == first { up } else { down };
        }
        let prices = Process::new(&tree, prices)?;
        let market = MarketSpec::new(&tree, prices, rate)?;
        Ok((tree, market))
    }

    pub fn discount(&self, t: usize) -> f64 {
        (1.0 + self.rate).powi(-(t as i32))
    }

    /// `(1+r)^{-t}` for `t = 0..=N`.
    pub fn discounts(&self, horizon: usize) -> Vec<f64> {
        (0..=horizon).map(|t| self.discount(t)).collect()
    }
}

/// `(u, d, p)` of the Cox-Ross-Rubinstein model.
pub fn crr_parameters(rate: f64, vol: f64, dt: f64) -> Result<(f64, f64, f64)> {
    let up = (vol * dt.sqrt()).exp();
    let down = 1.0 / up;
    let p = (1.0 + rate - down) / (up - down);
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "no risk-neutral probability: need d < 1+r < u (u = {up}, d = {down}, r = {rate})"
        )));
    }
    Ok((up, down, p))
}

/// Representation problem for `M = -K`: increasing `f(u, l) = c_u l` and
/// target `-(1+r)^{-t} P_t`.
pub fn boundary_problem(tree: &Tree, market: &MarketSpec) -> Result<RepresentationProblem> {
    let n = tree.horizon();
    let r = market.rate;
    let c: Vec<f64> = (0..=n)
        .map(|u| {
            if u < n {
                r / (1.0 + r) * market.discount(u)
            } else {
                market.discount(n)
            }
        })
        .collect();
    let x = Process::from_fn(tree, |m| -market.discount(tree.time(m)) * market.prices[m]);
    RepresentationProblem::new(tree, x, FSpec::scaled(c), Variant::Plain)
}

#[derive(Debug, Clone)]
pub struct Boundary {
    pub k: Process,
    pub report: SolveReport,
}

pub fn solve_boundary(tree: &Tree, op: &Operator, market: &MarketSpec) -> Result<Boundary> {
    op.require_tower()?;
    let problem = boundary_problem(tree, market)?;
    let sol = solve(tree, op, &problem)?;
    Ok(Boundary {
        k: sol.l.map(|m| -m),
        report: sol.report,
    })
}

/// Largest nodewise defect of the boundary identity for a candidate `K`.
pub fn boundary_residual(tree: &Tree, op: &Operator, market: &MarketSpec, k: &Process) -> Result<Residual> {
    let problem = boundary_problem(tree, market)?;
    residual(tree, op, &problem, &k.map(|v| -v))
}

/// Largest `P - K` over nodes and where it occurs.
pub fn dominance(tree: &Tree, market: &MarketSpec, k: &Process) -> (f64, NodeId) {
    let mut worst = (f64::NEG_INFINITY, 0);
    for n in 0..tree.len() {
        let d = market.prices[n] - k[n];
        if d > worst.0 {
            worst = (d, n);
        }
    }
    worst
}

/// `tau_lower = min{t : K_t <= k}`, `tau_upper = min{t : K_t < k}`, both
/// `+inf` where the level is never reached.
pub fn exercise_times(tree: &Tree, k: &Process, strike: f64) -> (StoppingRule, StoppingRule) {
    let neg = k.map(|v| -v);
    (
        first_hitting(tree, &neg, -strike, false, false),
        first_hitting(tree, &neg, -strike, true, false),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Payoff {
    /// `(1+r)^{-tau} (k - P_tau)` on `tau <= N`, zero on `tau = +inf`.
    Raw,
    /// `(1+r)^{-tau^N} (k - P_{tau^N})^+`.
    PositivePart,
}

/// `E_0` of the discounted put payoff stopped by `tau`.
pub fn put_value(tree: &Tree, op: &Operator, market: &MarketSpec, strike: f64, tau: &StoppingRule, payoff: Payoff) -> Result<f64> {
    let reward = Process::from_fn(tree, |n| {
        let intrinsic = strike - market.prices[n];
        let v = match payoff {
            Payoff::Raw => intrinsic,
            Payoff::PositivePart => intrinsic.max(0.0),
        };
        market.discount(tree.time(n)) * v
    });
    let rule = match payoff {
        Payoff::Raw => tau.clone(),
        Payoff::PositivePart => tau.capped(tree),
    };
    Ok(op.stopped_value(tree, &rule, &reward, 0.0)?[tree.root()])
}

/// Snell value of the discounted positive-part put.
pub fn snell_put_value(tree: &Tree, op: &Operator, market: &MarketSpec, strike: f64) -> Result<f64> {
    let reward = Process::from_fn(tree, |n| market.discount(tree.time(n)) * (strike - market.prices[n]).max(0.0));
    Ok(snell(tree, op, &reward)?.u[tree.root()])
}

/// Exercise criterion for strike `k`: `tau_lower <= tau <= tau_upper` and
/// `min_{0<=v<=tau} K_v = K_tau` on `tau <= N`.
pub fn exercise_criterion(tree: &Tree, k: &Process, lower: &StoppingRule, upper: &StoppingRule, tau: &StoppingRule) -> bool {
    if !(lower.le_pathwise(tau, tree) && tau.le_pathwise(upper, tree)) {
        return false;
    }
    tau.leaf_stops(tree).iter().zip(tree.leaves()).all(|(s, leaf)| match s {
        None => true,
        Some(s) => {
            let t = tree.time(*s);
            tree.path(tree.root(), leaf)[..=t].iter().all(|&m| k[m] >= k[*s])
        }
    })
}

/// `K_tau <= k` wherever `tau <= N`.
pub fn signal_below_strike(k: &Process, strike: f64, tau: &StoppingRule) -> bool {
    tau.stop_nodes().iter().all(|&s| k[s] <= strike)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrikeRow {
    pub strike: f64,
    pub tau_lower: String,
    pub tau_upper: String,
    /// Positive-part value at `tau_upper ^ N`.
    pub value: f64,
    /// Positive-part value at `tau_lower ^ N`.
    pub value_lower: f64,
    /// Raw value at `tau_upper`.
    pub value_raw: f64,
    pub snell: f64,
    pub gap: f64,
    pub criterion_upper: bool,
    pub criterion_lower: bool,
    pub signal_below_strike: bool,
}

/// One row per strike from a single precomputed `K`.
pub fn strike_sweep(tree: &Tree, op: &Operator, market: &MarketSpec, k: &Process, strikes: &[f64]) -> Result<Vec<StrikeRow>> {
    op.require_tower()?;
    if strikes.is_empty() {
        return Err(Error::InvalidParameter("strike grid is empty".into()));
    }
    strikes
        .par_iter()
        .map(|&strike| {
            if !(strike >= 0.0 && strike.is_finite()) {
                return Err(Error::InvalidParameter(format!("strike {strike} must be >= 0")));
            }
            let (lower, upper) = exercise_times(tree, k, strike);
            let value = put_value(tree, op, market, strike, &upper, Payoff::PositivePart)?;
            let value_lower = put_value(tree, op, market, strike, &lower, Payoff::PositivePart)?;
            let value_raw = put_value(tree, op, market, strike, &upper, Payoff::Raw)?;
            let snell = snell_put_value(tree, op, market, strike)?;
            Ok(StrikeRow {
                strike,
                tau_lower: lower.leaf_time_string(tree),
                tau_upper: upper.leaf_time_string(tree),
                value,
                value_lower,
                value_raw,
                snell,
                gap: (value - snell).abs(),
                criterion_upper: exercise_criterion(tree, k, &lower, &upper, &upper),
                criterion_lower: exercise_criterion(tree, k, &lower, &upper, &lower),
                signal_below_strike: signal_below_strike(k, strike, &upper)
                    && signal_below_strike(k, strike, &lower),
            })
        })
        .collect()
}

/// Twenty equally spaced strikes over `[0.5 min P, 1.5 max K]`.
pub fn default_strikes(market: &MarketSpec, k: &Process) -> Vec<f64> {
    let lo = 0.5 * market.prices.values().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = 1.5 * k.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    strike_grid(lo, hi, 20)
}

pub fn strike_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}

/// Every extended rule checked against the criterion for one strike.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnumeratedStrike {
    pub strike: f64,
    pub rules: usize,
    pub satisfying: usize,
    /// Largest `|value - snell|` over satisfying rules.
    pub max_gap: f64,
    /// Largest `|raw - positive part|` over satisfying rules.
    pub max_payoff_gap: f64,
    pub signal_below_strike: bool,
}

pub fn enumerate_strike(tree: &Tree, op: &Operator, market: &MarketSpec, k: &Process, strike: f64) -> Result<EnumeratedStrike> {
    op.require_tower()?;
    let (lower, upper) = exercise_times(tree, k, strike);
    let snell = snell_put_value(tree, op, market, strike)?;
    let rules = enumerate_extended_rules(tree)?;
    let satisfying: Vec<&StoppingRule> = rules
        .iter()
        .filter(|r| exercise_criterion(tree, k, &lower, &upper, r))
        .collect();
    let gaps = satisfying
        .par_iter()
        .map(|r| -> Result<(f64, f64, bool)> {
            let v = put_value(tree, op, market, strike, r, Payoff::PositivePart)?;
            let raw = put_value(tree, op, market, strike, r, Payoff::Raw)?;
            Ok(((v - snell).abs(), (v - raw).abs(), signal_below_strike(k, strike, r)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnumeratedStrike {
        strike,
        rules: rules.len(),
        satisfying: satisfying.len(),
        max_gap: gaps.iter().fold(0.0, |m, g| m.max(g.0)),
        max_payoff_gap: gaps.iter().fold(0.0, |m, g| m.max(g.1)),
        signal_below_strike: gaps.iter().all(|g| g.2),
    })
}
