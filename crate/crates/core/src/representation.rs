//! Backward-induction solver for the representation
//!
//! ```text
//! X_t = E_t[ sum_{u=t}^{N} f(u, max_{t<=v<=u} L_v) ]
//! ```
//!
//! and its terminal variant, where the sum stops at `N - 1` and `X_N` is added.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expectation::Operator;
use crate::roots::{find_root, Monotone};
use crate::tree::{NodeId, Process, StoppingRule, Tree, NEG_INF};

/// Strictly monotone piecewise-linear map with linear tails.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseLinear {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<PiecewiseLinear> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return Err(Error::InvalidParameter(
                "piecewise f needs at least two knots with matching values".into(),
            ));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("piecewise knots must be finite".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("piecewise knots must be strictly increasing".into()));
        }
        Ok(PiecewiseLinear { xs, ys })
    }

    fn segment(&self, l: f64) -> usize {
        let k = self.xs.partition_point(|&x| x <= l);
        k.clamp(1, self.xs.len() - 1) - 1
    }

    pub fn eval(&self, l: f64) -> f64 {
        let i = self.segment(l);
        let (x0, x1, y0, y1) = (self.xs[i], self.xs[i + 1], self.ys[i], self.ys[i + 1]);
        y0 + (y1 - y0) / (x1 - x0) * (l - x0)
    }

    fn slopes(&self) -> impl Iterator<Item = f64> + '_ {
        self.xs
            .windows(2)
            .zip(self.ys.windows(2))
            .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FFamily {
    /// `f(t, l) = a_t - b_t * l`
    Affine { a: Vec<f64>, b: Vec<f64> },
    /// `f(t, l) = l`
    Identity,
    /// `f(t, l) = c_t * l`
    Scaled { c: Vec<f64> },
    Piecewise { pieces: Vec<PiecewiseLinear> },
}

/// The map `f(t, l)`. Per-time coefficient vectors hold either one entry
/// (used at every time) or `N + 1` entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FSpec {
    pub family: FFamily,
    pub direction: Monotone,
}

fn at<T>(v: &[T], t: usize) -> &T {
    if v.len() == 1 {
        &v[0]
    } else {
        &v[t]
    }
}

impl FSpec {
    pub fn affine(a: Vec<f64>, b: Vec<f64>) -> FSpec {
        let direction = if b.first().is_some_and(|&b| b < 0.0) {
            Monotone::Increasing
        } else {
            Monotone::Decreasing
        };
        FSpec {
            family: FFamily::Affine { a, b },
            direction,
        }
    }

    /// `f(t, l) = -l`.
    pub fn negative_identity() -> FSpec {
        Self::affine(vec![0.0], vec![1.0])
    }

    pub fn identity() -> FSpec {
        FSpec {
            family: FFamily::Identity,
            direction: Monotone::Increasing,
        }
    }

    pub fn scaled(c: Vec<f64>) -> FSpec {
        FSpec {
            family: FFamily::Scaled { c },
            direction: Monotone::Increasing,
        }
    }

    pub fn piecewise(pieces: Vec<PiecewiseLinear>, direction: Monotone) -> FSpec {
        FSpec {
            family: FFamily::Piecewise { pieces },
            direction,
        }
    }

    /// Checks coefficient lengths, finiteness and strict monotonicity in the
    /// declared direction.
    pub fn validate(&self, horizon: usize) -> Result<()> {
        let check_len = |name: &str, len: usize| {
            if len == 1 || len == horizon + 1 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "coefficient `{name}` has {len} entries; expected 1 or {}",
                    horizon + 1
                )))
            }
        };
        let sign = self.direction.sign();
        let slopes: Vec<f64> = match &self.family {
            FFamily::Affine { a, b } => {
                check_len("a", a.len())?;
                check_len("b", b.len())?;
                if a.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter("coefficient `a` must be finite".into()));
                }
                b.iter().map(|b| -b).collect()
            }
            FFamily::Identity => vec![1.0],
            FFamily::Scaled { c } => {
                check_len("c", c.len())?;
                c.clone()
            }
            FFamily::Piecewise { pieces } => {
                check_len("pieces", pieces.len())?;
                pieces.iter().flat_map(|p| p.slopes().collect::<Vec<_>>()).collect()
            }
        };
        if let Some(s) = slopes.iter().find(|&&s| !(s.is_finite() && s * sign > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "f slope {s} is not strictly {}",
                if sign > 0.0 { "positive" } else { "negative" }
            )));
        }
        Ok(())
    }

    pub fn eval(&self, t: usize, l: f64) -> f64 {
        match &self.family {
            FFamily::Affine { a, b } => at(a, t) - at(b, t) * l,
            FFamily::Identity => l,
            FFamily::Scaled { c } => at(c, t) * l,
            FFamily::Piecewise { pieces } => at(pieces, t).eval(l),
        }
    }

    /// Smallest `|df/dl|` at time `t`.
    pub fn min_abs_slope(&self, t: usize) -> f64 {
        match &self.family {
            FFamily::Affine { b, .. } => at(b, t).abs(),
            FFamily::Identity => 1.0,
            FFamily::Scaled { c } => at(c, t).abs(),
            FFamily::Piecewise { pieces } => at(pieces, t).slopes().fold(f64::INFINITY, |m, s| m.min(s.abs())),
        }
    }

    /// `f^{-1}(t, y)` by root finding.
    pub fn inverse(&self, t: usize, y: f64, node: NodeId) -> Result<f64> {
        Ok(find_root(|l| Ok(self.eval(t, l) - y), 0.0, self.direction, node)?.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Sum of `f` runs through `N`.
    Plain,
    /// Sum stops at `N - 1`; `X_N` is added.
    Terminal,
}

#[derive(Debug, Clone)]
pub struct RepresentationProblem {
    pub x: Process,
    pub f: FSpec,
    pub variant: Variant,
}

impl RepresentationProblem {
    pub fn new(tree: &Tree, x: Process, f: FSpec, variant: Variant) -> Result<RepresentationProblem> {
        if x.len() != tree.len() {
            return Err(Error::LengthMismatch {
                expected: tree.len(),
                found: x.len(),
            });
        }
        if let Some(v) = x.values().iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("X contains non-finite value {v}")));
        }
        if variant == Variant::Terminal && tree.horizon() == 0 {
            return Err(Error::InvalidParameter("terminal variant needs N >= 1".into()));
        }
        f.validate(tree.horizon())?;
        Ok(RepresentationProblem { x, f, variant })
    }

    /// Last time at which `L` is defined.
    pub fn last_time(&self, tree: &Tree) -> usize {
        match self.variant {
            Variant::Plain => tree.horizon(),
            Variant::Terminal => tree.horizon() - 1,
        }
    }

    /// Last time whose `f` term enters the sum.
    fn sum_end(&self, tree: &Tree) -> usize {
        self.last_time(tree)
    }
}

/// Root-finding record of one node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeBracket {
    pub node: NodeId,
    pub lo: f64,
    pub hi: f64,
    pub phi: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    /// Largest `|Phi_n(L_n)|` over nodes.
    pub max_root_residual: f64,
    pub iterations: usize,
    pub per_node_brackets: Vec<NodeBracket>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// `NaN` at times beyond [`RepresentationProblem::last_time`].
    pub l: Process,
    pub report: SolveReport,
}

/// Solves for `L` by backward induction with one monotone root search per node.
pub fn solve(tree: &Tree, op: &Operator, problem: &RepresentationProblem) -> Result<Solution> {
    let last = problem.last_time(tree);
    let mut l = vec![f64::NAN; tree.len()];
    let mut brackets: Vec<NodeBracket> = Vec::with_capacity(tree.len());

    for t in (0..=last).rev() {
        let level = tree.level(t);
        let solved = &l;
        let results: Vec<Result<(f64, NodeBracket)>> = level
            .clone()
            .into_par_iter()
            .map_init(
                || vec![0.0; tree.len()],
                |buf, n| {
                    let x0 = tree
                        .children(n)
                        .next()
                        .map(|c| solved[c])
                        .filter(|v| v.is_finite())
                        .unwrap_or(0.0);
                    let root = if t == tree.horizon() {
                        // Plain anchor: f(N, L_N) = X_N.
                        let xn = problem.x[n];
                        find_root(|v| Ok(problem.f.eval(t, v) - xn), x0, problem.f.direction, n)?
                    } else {
                        let phi = Phi::new(tree, problem, solved, n);
                        find_root(|xi| phi.eval(tree, op, problem, xi, buf), x0, problem.f.direction, n)?
                    };
                    Ok((
                        root.x,
                        NodeBracket {
                            node: n,
                            lo: root.lo,
                            hi: root.hi,
                            phi: root.residual,
                            evaluations: root.evaluations,
                        },
                    ))
                },
            )
            .collect();
        let mut level_values = Vec::with_capacity(results.len());
        for r in results {
            let (v, b) = r?;
            level_values.push(v);
            brackets.push(b);
        }
        l[level].copy_from_slice(&level_values);
    }
    brackets.sort_by_key(|b| b.node);
    let report = SolveReport {
        max_root_residual: brackets.iter().fold(0.0, |m, b| m.max(b.phi)),
        iterations: brackets.iter().map(|b| b.evaluations).sum(),
        per_node_brackets: brackets,
    };
    Ok(Solution {
        l: Process::new(tree, l)?,
        report,
    })
}

/// `Phi_n(xi)` with the running maximum of the solved future precomputed.
struct Phi {
    node: NodeId,
    time: usize,
    /// `(node, time, max_{t+1<=v<=u} L_v)` for every descendant, parents first.
    below: Vec<(NodeId, usize, f64)>,
}

impl Phi {
    fn new(tree: &Tree, problem: &RepresentationProblem, l: &[f64], n: NodeId) -> Phi {
        let sub = tree.subtree(n);
        let last = problem.sum_end(tree);
        let mut below: Vec<(NodeId, usize, f64)> = Vec::new();
        // Position in `below` of the first node of the previous level.
        let mut prev_offset = 0;
        for (depth, lvl) in sub.levels.iter().enumerate().skip(1) {
            let offset = below.len();
            let parent_start = sub.levels[depth - 1].start;
            for m in lvl.clone() {
                let t = tree.time(m);
                let parent_max = if depth == 1 {
                    NEG_INF
                } else {
                    below[prev_offset + tree.parent(m).expect("descendant") - parent_start].2
                };
                let own = if t <= last { l[m] } else { NEG_INF };
                let v = if own.is_nan() { parent_max } else { parent_max.max(own) };
                below.push((m, t, v));
            }
            prev_offset = offset;
        }
        Phi {
            node: n,
            time: tree.time(n),
            below,
        }
    }

    fn eval(&self, tree: &Tree, op: &Operator, problem: &RepresentationProblem, xi: f64, buf: &mut [f64]) -> Result<f64> {
        let f = &problem.f;
        let last = problem.sum_end(tree);
        buf[self.node] = f.eval(self.time, xi);
        for &(m, t, runmax) in &self.below {
            let parent = tree.parent(m).expect("descendant");
            buf[m] = buf[parent]
                + if t <= last {
                    f.eval(t, xi.max(runmax))
                } else {
                    problem.x[m]
                };
        }
        let sub = tree.subtree(self.node);
        Ok(op.eval_subtree(tree, &sub, buf)? - problem.x[self.node])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    pub max: f64,
    pub node: NodeId,
}

/// `max_n |X_n - E_t(n)[sum f(u, running max of L from t(n))](n)|`, each term
/// rebuilt leaf by leaf from explicit paths.
pub fn residual(tree: &Tree, op: &Operator, problem: &RepresentationProblem, l: &Process) -> Result<Residual> {
    if l.len() != tree.len() {
        return Err(Error::LengthMismatch {
            expected: tree.len(),
            found: l.len(),
        });
    }
    let last = problem.last_time(tree);
    let per_node: Vec<Result<(f64, NodeId)>> = (0..tree.len())
        .into_par_iter()
        .filter(|&n| tree.time(n) <= last)
        .map_init(
            || vec![0.0; tree.len()],
            |buf, n| {
                let t = tree.time(n);
                let sub = tree.subtree(n);
                for leaf in sub.leaves() {
                    let mut acc = 0.0;
                    let mut runmax = NEG_INF;
                    for m in tree.path(n, leaf) {
                        let u = tree.time(m);
                        if u <= last {
                            runmax = runmax.max(l[m]);
                            acc += problem.f.eval(u, runmax);
                        }
                    }
                    if problem.variant == Variant::Terminal {
                        acc += problem.x[leaf];
                    }
                    buf[leaf] = acc;
                }
                let value = if t == tree.horizon() {
                    buf[n]
                } else {
                    op.eval_subtree(tree, &sub, buf)?
                };
                Ok(((problem.x[n] - value).abs(), n))
            },
        )
        .collect();
    let mut out = Residual { max: 0.0, node: 0 };
    for r in per_node {
        let (dev, n) = r?;
        let dev = if dev.is_nan() { f64::INFINITY } else { dev };
        if dev > out.max {
            out = Residual { max: dev, node: n };
        }
    }
    Ok(out)
}

/// The unique `l` at `sigma_node` with
/// `X_sigma = E_sigma[sum_{u=sigma}^{tau-1} f(u, l) + X_tau]`.
pub fn solve_l(
    tree: &Tree,
    op: &Operator,
    problem: &RepresentationProblem,
    sigma_node: NodeId,
    tau: &StoppingRule,
) -> Result<f64> {
    let s = tree.time(sigma_node);
    if s >= tree.horizon() {
        return Err(Error::NotAfterSigma {
            node: sigma_node,
            reason: "sigma must be below the horizon".into(),
        });
    }
    let sub = tree.subtree(sigma_node);
    let covering = tau.covering_stops(tree);
    let mut stop_of = Vec::with_capacity(sub.leaves().len());
    for leaf in sub.leaves() {
        match covering[leaf] {
            Some(st) if tree.time(st) > s => stop_of.push(st),
            Some(st) => {
                return Err(Error::NotAfterSigma {
                    node: sigma_node,
                    reason: format!("tau stops at node {st}, not strictly after sigma"),
                })
            }
            None => {
                return Err(Error::NotAfterSigma {
                    node: sigma_node,
                    reason: format!("tau never stops on the path to leaf {leaf}"),
                })
            }
        }
    }
    let mut buf = vec![0.0; tree.len()];
    let f = &problem.f;
    let phi = |l: f64, buf: &mut Vec<f64>| -> Result<f64> {
        for (leaf, &st) in sub.leaves().zip(&stop_of) {
            let mut acc = problem.x[st];
            for u in s..tree.time(st) {
                acc += f.eval(u, l);
            }
            buf[leaf] = acc;
        }
        Ok(op.eval_subtree(tree, &sub, buf)? - problem.x[sigma_node])
    };
    let root = find_root(|l| phi(l, &mut buf), 0.0, f.direction, sigma_node)?;
    Ok(root.x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaNodeEntry {
    pub node: NodeId,
    pub time: usize,
    pub l_sigma: f64,
    pub min_l: f64,
    pub gap: f64,
    /// Largest `L_sigma - l_{sigma,tau}` over the enumerated rules.
    pub max_violation: f64,
    /// STOP nodes of the minimising rule on the subtree.
    pub argmin: Vec<NodeId>,
    pub rules: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharacterizationReport {
    pub entries: Vec<SigmaNodeEntry>,
    pub max_gap: f64,
    pub max_violation: f64,
}

/// Enumerates every rule after `sigma` on each of its STOP subtrees and
/// compares `min_tau l_{sigma,tau}` with `L_sigma`.
pub fn essinf_characterization(
    tree: &Tree,
    op: &Operator,
    problem: &RepresentationProblem,
    l: &Process,
    sigma: &StoppingRule,
) -> Result<CharacterizationReport> {
    op.require_tower()?;
    if sigma.is_extended() {
        return Err(Error::InvalidRule("sigma must stop on every path".into()));
    }
    let stops = sigma.stop_nodes();
    if let Some(&s) = stops.iter().find(|&&s| tree.time(s) >= tree.horizon()) {
        return Err(Error::InvalidRule(format!(
            "sigma stops at node {s} on the horizon; values must lie below N"
        )));
    }
    let entries = stops
        .par_iter()
        .map(|&s| -> Result<SigmaNodeEntry> {
            let sets = crate::tree::enumerate_after_node(tree, s)?;
            let values = sets
                .par_iter()
                .map(|set| {
                    let rule = StoppingRule::from_stops(tree, set.iter().copied(), true)?;
                    solve_l(tree, op, problem, s, &rule)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mut best = 0;
            for (i, v) in values.iter().enumerate() {
                if *v < values[best] {
                    best = i;
                }
            }
            let min_l = values[best];
            let l_sigma = l[s];
            let max_violation = values.iter().fold(f64::NEG_INFINITY, |m, v| m.max(l_sigma - v));
            Ok(SigmaNodeEntry {
                node: s,
                time: tree.time(s),
                l_sigma,
                min_l,
                gap: (min_l - l_sigma).abs(),
                max_violation,
                argmin: sets[best].clone(),
                rules: sets.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CharacterizationReport {
        max_gap: entries.iter().fold(0.0, |m, e| m.max(e.gap)),
        max_violation: entries.iter().fold(f64::NEG_INFINITY, |m, e| m.max(e.max_violation)),
        entries,
    })
}

/// `tau*_t = min{s in t+1..N-1 : L_s > L_t} ^ N` on every path.
pub fn tau_star(tree: &Tree, l: &Process, t: usize) -> Result<StoppingRule> {
    let n_max = tree.horizon();
    if t >= n_max {
        return Err(Error::InvalidParameter(format!("tau* needs t < N, got t = {t}")));
    }
    let mut stops = Vec::new();
    let mut reference = vec![f64::NAN; tree.len()];
    let mut stopped = vec![false; tree.len()];
    for n in tree.level(t).start..tree.len() {
        let u = tree.time(n);
        if u == t {
            reference[n] = l[n];
            continue;
        }
        let p = tree.parent(n).expect("t > 0");
        reference[n] = reference[p];
        if stopped[p] {
            stopped[n] = true;
            continue;
        }
        if u == n_max || l[n] > reference[n] {
            stops.push(n);
            stopped[n] = true;
        }
    }
    StoppingRule::from_stops(tree, stops, false)
}
