//! Skorokhod-type obstacle problem: `Y_t = E_t[sum_{u=t}^{N-1} f(u, eta_u) + X_N]`
//! with `eta` the running maximum of the representing process.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expectation::Operator;
use crate::representation::{solve, FSpec, RepresentationProblem, SolveReport, Variant};
use crate::roots::Monotone;
use crate::stopping::stopped_value;
use crate::tree::{enumerate_rules, first_hitting, path_running_max, NodeId, Process, StoppingRule, Tree};

/// Threshold on `eta_t - eta_{t-1}` for a point of increase.
pub const INCREASE_TOL: f64 = 1e-12;
/// Tolerance for domination and flat-off.
pub const CHECK_TOL: f64 = 1e-9;
/// Alternatives closer than this to `eta` count as the same process.
pub const SAME_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// `Y >= X` (increasing `f`).
    Dominates,
    /// `Y <= X` (decreasing `f`).
    Dominated,
}

impl Orientation {
    pub fn of(f: &FSpec) -> Orientation {
        match f.direction {
            Monotone::Increasing => Orientation::Dominates,
            Monotone::Decreasing => Orientation::Dominated,
        }
    }

    /// Amount by which `y` is on the wrong side of `x`.
    fn violation(self, y: f64, x: f64) -> f64 {
        match self {
            Orientation::Dominates => x - y,
            Orientation::Dominated => y - x,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ObstacleSolution {
    pub l: Process,
    /// Running maximum of `L`; `NaN` at time `N`.
    pub eta: Process,
    pub y: Process,
    pub orientation: Orientation,
    pub report: SolveReport,
}

pub fn solve_obstacle(tree: &Tree, op: &Operator, x: &Process, f: &FSpec) -> Result<ObstacleSolution> {
    op.require_tower()?;
    let problem = RepresentationProblem::new(tree, x.clone(), f.clone(), Variant::Terminal)?;
    let sol = solve(tree, op, &problem)?;
    let eta = eta_from(tree, &sol.l);
    let y = obstacle_from_eta(tree, op, x, f, &eta)?;
    Ok(ObstacleSolution {
        l: sol.l,
        eta,
        y,
        orientation: Orientation::of(f),
        report: sol.report,
    })
}

fn eta_from(tree: &Tree, l: &Process) -> Process {
    let mut eta = path_running_max(tree, l, 0);
    for n in tree.leaves() {
        eta[n] = f64::NAN;
    }
    eta
}

/// `Y_t = E_t[sum_{u=t}^{N-1} f(u, eta_u) + X_N]` at every node.
pub fn obstacle_from_eta(tree: &Tree, op: &Operator, x: &Process, f: &FSpec, eta: &Process) -> Result<Process> {
    op.require_tower()?;
    if eta.len() != tree.len() {
        return Err(Error::LengthMismatch {
            expected: tree.len(),
            found: eta.len(),
        });
    }
    let n_max = tree.horizon();
    // Path sums are accumulated top-down over each subtree.
    let values = (0..tree.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; tree.len()],
            |buf, n| -> Result<f64> {
                if tree.is_leaf(n) {
                    return Ok(x[n]);
                }
                let sub = tree.subtree(n);
                for lvl in &sub.levels {
                    for m in lvl.clone() {
                        let before = if m == n { 0.0 } else { buf[tree.parent(m).expect("descendant")] };
                        buf[m] = if tree.time(m) < n_max {
                            before + f.eval(tree.time(m), eta[m])
                        } else {
                            before + x[m]
                        };
                    }
                }
                op.eval_subtree(tree, &sub, buf)
            },
        )
        .collect::<Result<Vec<f64>>>()?;
    Process::new(tree, values)
}

/// Nodes before the horizon where `eta` increases over its parent (and the root).
pub fn increase_points(tree: &Tree, eta: &Process) -> Vec<bool> {
    (0..tree.len())
        .map(|n| {
            if tree.time(n) >= tree.horizon() {
                return false;
            }
            match tree.parent(n) {
                None => true,
                Some(p) => eta[n] - eta[p] > INCREASE_TOL,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckItem {
    pub passed: bool,
    pub max_violation: f64,
    pub node: Option<NodeId>,
}

impl CheckItem {
    fn new() -> CheckItem {
        CheckItem {
            passed: true,
            max_violation: 0.0,
            node: None,
        }
    }

    fn observe(&mut self, violation: f64, node: NodeId, tol: f64) {
        let violation = if violation.is_nan() { f64::INFINITY } else { violation };
        if violation > self.max_violation {
            self.max_violation = violation;
            self.node = Some(node);
        }
        if violation > tol {
            self.passed = false;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObstacleReport {
    pub orientation: Orientation,
    pub domination: CheckItem,
    pub terminal: CheckItem,
    pub flat_off: CheckItem,
    /// `Y` against its defining expectation recomputed from `eta`.
    pub representation: CheckItem,
    pub eta_nondecreasing: CheckItem,
    /// `eta` against the running maximum of `L`.
    pub eta_running_max: CheckItem,
    pub increase_points: usize,
    pub passed: bool,
}

impl ObstacleReport {
    /// Names of the failed checks.
    pub fn failures(&self) -> Vec<&'static str> {
        [
            ("domination", &self.domination),
            ("terminal", &self.terminal),
            ("flat_off", &self.flat_off),
            ("representation", &self.representation),
            ("eta_nondecreasing", &self.eta_nondecreasing),
            ("eta_running_max", &self.eta_running_max),
        ]
        .into_iter()
        .filter(|(_, c)| !c.passed)
        .map(|(name, _)| name)
        .collect()
    }
}

pub fn verify_obstacle(tree: &Tree, op: &Operator, x: &Process, f: &FSpec, sol: &ObstacleSolution) -> Result<ObstacleReport> {
    let recomputed = obstacle_from_eta(tree, op, x, f, &sol.eta)?;
    let running = eta_from(tree, &sol.l);
    let inc = increase_points(tree, &sol.eta);
    let mut domination = CheckItem::new();
    let mut terminal = CheckItem::new();
    let mut flat_off = CheckItem::new();
    let mut representation = CheckItem::new();
    let mut eta_nondecreasing = CheckItem::new();
    let mut eta_running_max = CheckItem::new();
    for n in 0..tree.len() {
        let (y, xn) = (sol.y[n], x[n]);
        domination.observe(sol.orientation.violation(y, xn), n, CHECK_TOL);
        representation.observe((y - recomputed[n]).abs(), n, CHECK_TOL);
        if tree.is_leaf(n) {
            terminal.observe((y - xn).abs(), n, CHECK_TOL);
            continue;
        }
        if inc[n] {
            flat_off.observe((y - xn).abs(), n, CHECK_TOL);
        }
        if let Some(p) = tree.parent(n) {
            eta_nondecreasing.observe(sol.eta[p] - sol.eta[n], n, 0.0);
        }
        eta_running_max.observe((sol.eta[n] - running[n]).abs(), n, 0.0);
    }
    let passed = [domination, terminal, flat_off, representation, eta_nondecreasing, eta_running_max]
        .iter()
        .all(|c| c.passed);
    Ok(ObstacleReport {
        orientation: sol.orientation,
        domination,
        terminal,
        flat_off,
        representation,
        eta_nondecreasing,
        eta_running_max,
        increase_points: inc.iter().filter(|b| **b).count(),
        passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Domination,
    FlatOff,
}

/// Which process exceeds the other by more than `epsilon` at `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Excess {
    EtaAboveZeta,
    ZetaAboveEta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub epsilon: f64,
    /// `None` when the stopping-time construction did not isolate the failure
    /// and a global scan of the alternative system found it instead.
    pub excess: Option<Excess>,
    /// Leaf-wise stopping times, `;`-separated.
    pub sigma: Option<String>,
    pub tau: Option<String>,
    /// Property of the alternative system that fails.
    pub failed: Property,
    pub node: NodeId,
    pub time: usize,
    pub z: f64,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Consistent { max_diff: f64 },
    Refuted { max_diff: f64, witness: Witness },
    /// The alternative differs from `eta` yet satisfies both properties.
    Undetected { max_diff: f64 },
}

impl Verdict {
    pub fn is_refuted(&self) -> bool {
        matches!(self, Verdict::Refuted { .. })
    }
}

/// Random nondecreasing alternative to `eta` (NaN at `N`) that differs from it
/// by more than `10 * SAME_TOL`. Mixes shifted, bumped and unrelated paths.
pub fn random_alternative<R: Rng>(tree: &Tree, eta: &Process, rng: &mut R) -> Process {
    let n_max = tree.horizon();
    let (lo, hi) = eta
        .values()
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo <= hi { (lo, hi) } else { (0.0, 0.0) };
    loop {
        let mode = rng.gen_range(0..3);
        let shift = rng.gen_range(0.01..1.0);
        let mut bump = vec![0.0; tree.len()];
        for n in 0..tree.len() {
            let step = if rng.gen_bool(0.5) { rng.gen_range(0.0..0.5) } else { 0.0 };
            bump[n] = match tree.parent(n) {
                None if mode == 0 => rng.gen_range(-0.5..0.5),
                None => rng.gen_range(lo - 1.0..hi + 1.0),
                Some(p) => bump[p] + step,
            };
        }
        let zeta = Process::from_fn(tree, |n| {
            if tree.time(n) >= n_max {
                f64::NAN
            } else {
                match mode {
                    0 => eta[n] + bump[n],
                    1 => bump[n],
                    _ => eta[n] - shift,
                }
            }
        });
        let diff = (0..tree.len())
            .filter(|&n| tree.time(n) < n_max)
            .map(|n| (zeta[n] - eta[n]).abs())
            .fold(0.0, f64::max);
        if diff > 10.0 * SAME_TOL {
            return zeta;
        }
    }
}

/// Tests the alternative `zeta` (nondecreasing, times `0..N-1`) against the
/// obstacle solution: builds `Z` from `zeta` and locates the property
/// (domination or flat-off) that the pair `(Z, zeta)` must violate.
pub fn falsify_alternative(
    tree: &Tree,
    op: &Operator,
    x: &Process,
    f: &FSpec,
    sol: &ObstacleSolution,
    zeta: &Process,
) -> Result<Verdict> {
    let n_max = tree.horizon();
    if zeta.len() != tree.len() {
        return Err(Error::LengthMismatch {
            expected: tree.len(),
            found: zeta.len(),
        });
    }
    for n in 0..tree.len() {
        if tree.time(n) >= n_max {
            continue;
        }
        if !zeta[n].is_finite() {
            return Err(Error::InvalidParameter(format!("zeta is not finite at node {n}")));
        }
        if let Some(p) = tree.parent(n) {
            if zeta[n] < zeta[p] {
                return Err(Error::InvalidParameter(format!("zeta decreases into node {n}")));
            }
        }
    }
    let mut above = 0.0f64;
    let mut below = 0.0f64;
    for n in (0..tree.len()).filter(|&n| tree.time(n) < n_max) {
        above = above.max(sol.eta[n] - zeta[n]);
        below = below.max(zeta[n] - sol.eta[n]);
    }
    let max_diff = above.max(below);
    if max_diff <= SAME_TOL {
        return Ok(Verdict::Consistent { max_diff });
    }
    let mut zeta_full = zeta.clone();
    for n in tree.leaves() {
        zeta_full[n] = f64::NAN;
    }
    let z = obstacle_from_eta(tree, op, x, f, &zeta_full)?;
    let zeta_inc = increase_points(tree, &zeta_full);
    let orient = sol.orientation;
    let dom_fails = |n: NodeId| orient.violation(z[n], x[n]) > CHECK_TOL;
    let flat_fails = |n: NodeId| zeta_inc[n] && (z[n] - x[n]).abs() > CHECK_TOL;
    let witness = |excess, eps, sigma: Option<&StoppingRule>, tau: Option<&StoppingRule>, failed, n: NodeId| Witness {
        epsilon: eps,
        excess,
        sigma: sigma.map(|r| r.leaf_time_string(tree)),
        tau: tau.map(|r| r.leaf_time_string(tree)),
        failed,
        node: n,
        time: tree.time(n),
        z: z[n],
        x: x[n],
    };

    // Stopping-time construction, in whichever direction the gap is larger first.
    let mut directions = vec![(Excess::EtaAboveZeta, above), (Excess::ZetaAboveEta, below)];
    directions.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (excess, gap) in directions {
        if gap <= SAME_TOL {
            continue;
        }
        let eps = gap / 2.0;
        let (hi, lo) = match excess {
            Excess::EtaAboveZeta => (&sol.eta, zeta),
            Excess::ZetaAboveEta => (zeta, &sol.eta),
        };
        // sigma = min{t : hi_t > lo_t + eps} ^ N, tau = min{t >= sigma : lo_t >= hi_t} ^ N.
        let above_eps = Process::from_fn(tree, |n| {
            if tree.time(n) < n_max && hi[n] > lo[n] + eps {
                1.0
            } else {
                -1.0
            }
        });
        let sigma = first_hitting(tree, &above_eps, 0.0, false, true);
        let mut tau_stops = Vec::new();
        for s in sigma.stop_nodes() {
            if tree.time(s) >= n_max {
                continue;
            }
            let sub = tree.subtree(s);
            let mut stopped = vec![false; tree.len()];
            for m in sub.nodes() {
                if m != s && tree.parent(m).is_some_and(|p| stopped[p]) {
                    stopped[m] = true;
                    continue;
                }
                if tree.time(m) == n_max || lo[m] >= hi[m] {
                    tau_stops.push(m);
                    stopped[m] = true;
                }
            }
        }
        let tau = StoppingRule::from_stops(tree, tau_stops.iter().copied(), true)?;
        let sigma_nodes: Vec<NodeId> = sigma.stop_nodes().into_iter().filter(|&s| tree.time(s) < n_max).collect();
        // With eta above zeta the alternative must fail domination at sigma or
        // flat-off at tau; with zeta above eta it fails flat-off at sigma or
        // domination at tau.
        let found = match excess {
            Excess::EtaAboveZeta => sigma_nodes
                .iter()
                .find(|&&s| dom_fails(s))
                .map(|&s| (Property::Domination, s))
                .or_else(|| {
                    tau_stops
                        .iter()
                        .find(|&&t| tree.time(t) < n_max && flat_fails(t))
                        .map(|&t| (Property::FlatOff, t))
                }),
            Excess::ZetaAboveEta => sigma_nodes
                .iter()
                .find(|&&s| flat_fails(s))
                .map(|&s| (Property::FlatOff, s))
                .or_else(|| {
                    tau_stops
                        .iter()
                        .find(|&&t| dom_fails(t))
                        .map(|&t| (Property::Domination, t))
                }),
        };
        if let Some((failed, n)) = found {
            return Ok(Verdict::Refuted {
                max_diff,
                witness: witness(Some(excess), eps, Some(&sigma), Some(&tau), failed, n),
            });
        }
    }

    // Global scan of the alternative system.
    let found = (0..tree.len())
        .find(|&n| dom_fails(n))
        .map(|n| (Property::Domination, n))
        .or_else(|| (0..tree.len()).find(|&n| flat_fails(n)).map(|n| (Property::FlatOff, n)));
    Ok(match found {
        Some((failed, n)) => Verdict::Refuted {
            max_diff,
            witness: witness(None, 0.0, None, None, failed, n),
        },
        None => Verdict::Undetected { max_diff },
    })
}

/// Optimality of the `eta` level-passage times, for `f(t, l) = l`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingLink {
    pub value_lower: f64,
    pub value_upper: f64,
    pub brute_force_value: f64,
    /// Rules between the passage times with `Y = X` at the stop.
    pub candidates: usize,
    /// Largest `V - E_0[X_tau]` over the candidates.
    pub max_gap: f64,
}

pub fn stopping_link(tree: &Tree, op: &Operator, x: &Process, sol: &ObstacleSolution) -> Result<StoppingLink> {
    op.require_tower()?;
    let n_max = tree.horizon();
    let eta = Process::from_fn(tree, |n| if tree.is_leaf(n) { f64::NAN } else { sol.eta[n] });
    let lower = first_hitting(tree, &eta, 0.0, false, true);
    let upper = first_hitting(tree, &eta, 0.0, true, true);
    let rules = enumerate_rules(tree, None)?;
    let values = rules
        .par_iter()
        .map(|r| stopped_value(tree, op, x, r))
        .collect::<Result<Vec<f64>>>()?;
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut candidates = 0;
    let mut max_gap = 0.0f64;
    for (rule, v) in rules.iter().zip(&values) {
        let between = lower.le_pathwise(rule, tree) && rule.le_pathwise(&upper, tree);
        let flat = rule
            .stop_nodes()
            .iter()
            .all(|&s| tree.time(s) == n_max || (sol.y[s] - x[s]).abs() <= CHECK_TOL);
        if between && flat {
            candidates += 1;
            max_gap = max_gap.max(best - v);
        }
    }
    Ok(StoppingLink {
        value_lower: stopped_value(tree, op, x, &lower)?,
        value_upper: stopped_value(tree, op, x, &upper)?,
        brute_force_value: best,
        candidates,
        max_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expectation::{validate_operator, OperatorSpec};
    use approx::assert_abs_diff_eq;

    fn instance() -> (Tree, Operator, Process) {
        let tree = Tree::binomial(3, 0.5, 1.0, 1.0).unwrap();
        let op = validate_operator(&OperatorSpec::Linear, &tree).unwrap();
        let x = Process::from_fn(&tree, |n| ((n * 7919) % 13) as f64 / 3.0 - 2.0);
        (tree, op, x)
    }

    #[test]
    fn chain_example() {
        let tree = Tree::chain(1, 1.0).unwrap();
        let op = validate_operator(&OperatorSpec::Linear, &tree).unwrap();
        let x = Process::new(&tree, vec![3.0, 1.0]).unwrap();
        let sol = solve_obstacle(&tree, &op, &x, &FSpec::identity()).unwrap();
        assert_abs_diff_eq!(sol.l[0], 2.0, epsilon = 1e-15);
        assert_eq!(sol.eta[0], 2.0);
        assert_abs_diff_eq!(sol.y[0], 3.0, epsilon = 1e-15);
        assert_eq!(sol.y[1], 1.0);
    }

    #[test]
    fn constant_process() {
        let tree = Tree::binomial(2, 0.5, 1.0, 1.0).unwrap();
        let op = validate_operator(&OperatorSpec::Linear, &tree).unwrap();
        let x = Process::constant(&tree, 1.5);
        let sol = solve_obstacle(&tree, &op, &x, &FSpec::identity()).unwrap();
        let inc = increase_points(&tree, &sol.eta);
        assert_eq!(inc.iter().filter(|b| **b).count(), 1);
        assert!(verify_obstacle(&tree, &op, &x, &FSpec::identity(), &sol).unwrap().passed);
    }

    #[test]
    fn solution_verifies() {
        let (tree, op, x) = instance();
        let f = FSpec::identity();
        let sol = solve_obstacle(&tree, &op, &x, &f).unwrap();
        let rep = verify_obstacle(&tree, &op, &x, &f, &sol).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn shifted_eta_breaks_flat_off() {
        let (tree, op, x) = instance();
        let f = FSpec::identity();
        let mut sol = solve_obstacle(&tree, &op, &x, &f).unwrap();
        sol.eta = sol.eta.map(|v| v + 1.0);
        sol.y = obstacle_from_eta(&tree, &op, &x, &f, &sol.eta).unwrap();
        let rep = verify_obstacle(&tree, &op, &x, &f, &sol).unwrap();
        assert!(!rep.flat_off.passed || !rep.domination.passed);
    }

    #[test]
    fn perturbed_y_breaks_representation() {
        let (tree, op, x) = instance();
        let f = FSpec::identity();
        let mut sol = solve_obstacle(&tree, &op, &x, &f).unwrap();
        let inc = increase_points(&tree, &sol.eta);
        let n = (0..tree.len()).find(|&n| !inc[n] && !tree.is_leaf(n)).unwrap();
        sol.y[n] += 0.25;
        let rep = verify_obstacle(&tree, &op, &x, &f, &sol).unwrap();
        assert!(rep.flat_off.passed);
        assert!(!rep.representation.passed);
    }

    #[test]
    fn falsification() {
        let (tree, op, x) = instance();
        let f = FSpec::identity();
        let sol = solve_obstacle(&tree, &op, &x, &f).unwrap();
        let same = falsify_alternative(&tree, &op, &x, &f, &sol, &sol.eta).unwrap();
        assert!(matches!(same, Verdict::Consistent { .. }));
        let up = sol.eta.map(|v| v + 0.5);
        assert!(falsify_alternative(&tree, &op, &x, &f, &sol, &up).unwrap().is_refuted());
        let floor = sol.eta.values().iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
        let flat = Process::constant(&tree, floor - 1.0);
        assert!(falsify_alternative(&tree, &op, &x, &f, &sol, &flat).unwrap().is_refuted());
    }

    #[test]
    fn link_to_stopping() {
        let (tree, op, x) = instance();
        let sol = solve_obstacle(&tree, &op, &x, &FSpec::identity()).unwrap();
        let link = stopping_link(&tree, &op, &x, &sol).unwrap();
        assert!(link.candidates >= 1);
        assert!(link.max_gap <= 1e-9);
        assert_abs_diff_eq!(link.value_upper, link.brute_force_value, epsilon = 1e-9);
    }
}
