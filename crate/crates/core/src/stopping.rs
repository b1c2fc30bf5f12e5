//! Optimal stopping by level crossing of the representing process, with
//! Snell-envelope and exhaustive-enumeration oracles.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expectation::Operator;
use crate::representation::{solve, FSpec, RepresentationProblem, SolveReport, Variant};
use crate::tree::{enumerate_rules, first_hitting, Process, StoppingRule, Tree};

/// Values within this distance of the optimum count as ties.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct StoppingSolution {
    /// Representing process (terminal variant, `f(t, l) = l`); `NaN` at time `N`.
    pub l: Process,
    /// First time with `L >= 0`, capped at `N`.
    pub tau_lower: StoppingRule,
    /// First time with `L > 0`, capped at `N`.
    pub tau_upper: StoppingRule,
    /// `E_0[X_tau_upper]`.
    pub value: f64,
    /// `E_0[X_tau_lower]`.
    pub value_lower: f64,
    pub report: SolveReport,
}

/// `E_0[X_tau]` for a rule that stops on every path.
pub fn stopped_value(tree: &Tree, op: &Operator, x: &Process, tau: &StoppingRule) -> Result<f64> {
    if tau.is_extended() {
        return Err(Error::InvalidRule("rule must stop on every path".into()));
    }
    Ok(op.stopped_value(tree, tau, x, f64::NAN)?[tree.root()])
}

pub fn solve_stopping(tree: &Tree, op: &Operator, x: &Process) -> Result<StoppingSolution> {
    op.require_tower()?;
    if tree.horizon() == 0 {
        let value = x[tree.root()];
        let rule = StoppingRule::constant(tree, 0);
        return Ok(StoppingSolution {
            l: Process::constant(tree, f64::NAN),
            tau_lower: rule.clone(),
            tau_upper: rule,
            value,
            value_lower: value,
            report: SolveReport {
                max_root_residual: 0.0,
                iterations: 0,
                per_node_brackets: vec![],
            },
        });
    }
    let problem = RepresentationProblem::new(tree, x.clone(), FSpec::identity(), Variant::Terminal)?;
    let sol = solve(tree, op, &problem)?;
    let tau_lower = first_hitting(tree, &sol.l, 0.0, false, true);
    let tau_upper = first_hitting(tree, &sol.l, 0.0, true, true);
    let value = stopped_value(tree, op, x, &tau_upper)?;
    let value_lower = stopped_value(tree, op, x, &tau_lower)?;
    Ok(StoppingSolution {
        l: sol.l,
        tau_lower,
        tau_upper,
        value,
        value_lower,
        report: sol.report,
    })
}

#[derive(Debug, Clone)]
pub struct Snell {
    pub u: Process,
    pub tau_earliest: StoppingRule,
}

/// `U_N = X_N`, `U_t = max(X_t, E_t[U_{t+1}])`.
pub fn snell(tree: &Tree, op: &Operator, x: &Process) -> Result<Snell> {
    op.require_tower()?;
    let mut u = vec![0.0; tree.len()];
    for n in (0..tree.len()).rev() {
        u[n] = if tree.is_leaf(n) {
            x[n]
        } else {
            let ch = tree.children(n);
            let cont = op.one_step(tree, n, &u[ch])?;
            x[n].max(cont)
        };
    }
    let u = Process::new(tree, u)?;
    let gap = Process::from_fn(tree, |n| if u[n] == x[n] { 0.0 } else { -1.0 });
    let tau_earliest = first_hitting(tree, &gap, 0.0, false, true);
    Ok(Snell { u, tau_earliest })
}

/// Pathwise check of `tau_lower <= tau <= tau_upper` and
/// `max_{0<=v<=tau} L_v = L_tau` (the latter only where `tau < N`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionCheck {
    /// One flag per leaf.
    pub paths: Vec<bool>,
    pub sandwich: bool,
    pub running_max: bool,
    pub holds: bool,
}

pub fn check_criterion(tree: &Tree, sol: &StoppingSolution, tau: &StoppingRule) -> Result<CriterionCheck> {
    if tau.is_extended() {
        return Err(Error::InvalidRule("criterion needs a rule that stops on every path".into()));
    }
    let lower = sol.tau_lower.leaf_times(tree);
    let upper = sol.tau_upper.leaf_times(tree);
    let stops = tau.leaf_stops(tree);
    let mut paths = Vec::with_capacity(stops.len());
    let (mut sandwich, mut running_max) = (true, true);
    for (i, leaf) in tree.leaves().enumerate() {
        let s = stops[i].expect("non-extended rule");
        let ts = tree.time(s);
        let sw = lower[i].is_some_and(|lo| lo <= ts) && upper[i].is_some_and(|up| ts <= up);
        let rm = ts == tree.horizon() || {
            let path = tree.path(tree.root(), leaf);
            let l_tau = sol.l[s];
            path[..=ts].iter().all(|&m| sol.l[m] <= l_tau)
        };
        sandwich &= sw;
        running_max &= rm;
        paths.push(sw && rm);
    }
    Ok(CriterionCheck {
        holds: sandwich && running_max,
        paths,
        sandwich,
        running_max,
    })
}

#[derive(Debug, Clone)]
pub struct BruteForce {
    pub value: f64,
    /// Every rule within [`TIE_TOL`] of the optimum.
    pub argmax: Vec<StoppingRule>,
    pub rules: usize,
}

/// Maximum of `E_0[X_tau]` over every stopping rule of the tree.
pub fn brute_force_value(tree: &Tree, op: &Operator, x: &Process) -> Result<BruteForce> {
    let (rules, values) = enumerate_values(tree, op, x)?;
    let value = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let argmax = rules
        .iter()
        .zip(&values)
        .filter(|(_, v)| value - **v <= TIE_TOL)
        .map(|(r, _)| r.clone())
        .collect();
    Ok(BruteForce {
        value,
        argmax,
        rules: rules.len(),
    })
}

fn enumerate_values(tree: &Tree, op: &Operator, x: &Process) -> Result<(Vec<StoppingRule>, Vec<f64>)> {
    op.require_tower()?;
    let rules = enumerate_rules(tree, None)?;
    let values = rules
        .par_iter()
        .map(|r| stopped_value(tree, op, x, r))
        .collect::<Result<Vec<f64>>>()?;
    Ok((rules, values))
}

/// Outcome of checking the optimality criterion against every rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnumerationCheck {
    pub rules: usize,
    pub brute_force_value: f64,
    /// Rules satisfying the criterion.
    pub satisfying: usize,
    /// Largest `V - E_0[X_tau]` among rules satisfying the criterion.
    pub max_gap_satisfying: f64,
    /// Rules violating the criterion that are strictly suboptimal.
    pub suboptimal_violators: usize,
    /// Rules violating the criterion that are nevertheless optimal.
    pub optimal_violators: usize,
    /// Largest `E_0[X_tau] - U_0` over all rules.
    pub max_envelope_excess: f64,
}

pub fn check_enumerated(
    tree: &Tree,
    op: &Operator,
    x: &Process,
    sol: &StoppingSolution,
    snell_value: f64,
) -> Result<EnumerationCheck> {
    let (rules, values) = enumerate_values(tree, op, x)?;
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = EnumerationCheck {
        rules: rules.len(),
        brute_force_value: best,
        satisfying: 0,
        max_gap_satisfying: 0.0,
        suboptimal_violators: 0,
        optimal_violators: 0,
        max_envelope_excess: f64::NEG_INFINITY,
    };
    for (rule, v) in rules.iter().zip(&values) {
        out.max_envelope_excess = out.max_envelope_excess.max(v - snell_value);
        if check_criterion(tree, sol, rule)?.holds {
            out.satisfying += 1;
            out.max_gap_satisfying = out.max_gap_satisfying.max(sol.value - v);
        } else if best - v > TIE_TOL {
            out.suboptimal_violators += 1;
        } else {
            out.optimal_violators += 1;
        }
    }
    Ok(out)
}
