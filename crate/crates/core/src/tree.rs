//! Finite filtered probability spaces as non-recombining event trees.
//!
//! Nodes are stored in breadth-first order: every time level occupies a
//! contiguous id range, the children of a node are contiguous, and the
//! descendants of a node at any later level form a contiguous range. All
//! path functionals (running maxima, stopped values) are node-local because
//! every node is a full path prefix.

use std::ops::{Index, IndexMut, Range};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Symbolic negative infinity used for running maxima anchored after a node
/// and for the convention `eta_{-1} = -inf`. It is absorbing under `max`.
pub const NEG_INF: f64 = f64::NEG_INFINITY;

/// Largest horizon accepted for binary trees.
pub const MAX_BINARY_DEPTH: usize = 20;

const PROB_TOL: f64 = 1e-12;
const CENTER_TOL: f64 = 1e-12;

/// Edge description used to build explicit trees.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitNode {
    pub id: usize,
    pub parent: Option<usize>,
    /// Transition probability on the edge from the parent (ignored for the root).
    pub prob: f64,
    /// Martingale increment on the edge from the parent (ignored for the root).
    pub increment: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Tree {
    horizon: usize,
    dim: usize,
    dt: Vec<f64>,
    time: Vec<usize>,
    parent: Vec<Option<NodeId>>,
    children: Vec<Range<NodeId>>,
    prob: Vec<f64>,
    increments: Vec<f64>,
    level_start: Vec<NodeId>,
}

impl Tree {
    /// Non-recombining binary tree with `p*e_up + (1-p)*e_down = 0` and
    /// `p*e_up^2 + (1-p)*e_down^2 = sigma^2 * dt`.
    pub fn binomial(horizon: usize, p: f64, sigma: f64, dt: f64) -> Result<Tree> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        if horizon > MAX_BINARY_DEPTH {
            return Err(Error::InvalidParameter(format!(
                "binary tree depth {horizon} exceeds guard {MAX_BINARY_DEPTH}"
            )));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("up-probability {p} not in (0,1)")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma {sigma} must be > 0")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt {dt} must be > 0")));
        }
        let e_up = sigma * (dt * (1.0 - p) / p).sqrt();
        let e_down = -sigma * (dt * p / (1.0 - p)).sqrt();
        Ok(Self::regular(horizon, vec![dt; horizon], &[(p, e_up), (1.0 - p, e_down)]))
    }

    /// Deterministic chain: one child per node, `p = 1`, zero increments.
    pub fn chain(horizon: usize, dt: f64) -> Result<Tree> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt {dt} must be > 0")));
        }
        Ok(Self::regular(horizon, vec![dt; horizon], &[(1.0, 0.0)]))
    }

    fn regular(horizon: usize, dt: Vec<f64>, branches: &[(f64, f64)]) -> Tree {
        let b = branches.len();
        let mut time = vec![0];
        let mut parent = vec![None];
        let mut prob = vec![1.0];
        let mut increments = vec![0.0];
        let mut level_start = vec![0];
        let mut level = 0..1;
        for t in 1..=horizon {
            let start = time.len();
            level_start.push(start);
            for n in level.clone() {
                for &(p, e) in branches {
                    time.push(t);
                    parent.push(Some(n));
                    prob.push(p);
                    increments.push(e);
                }
            }
            level = start..time.len();
        }
        level_start.push(time.len());
        let mut children = vec![0..0; time.len()];
        for (n, ch) in children.iter_mut().enumerate() {
            if time[n] < horizon {
                let first = level_start[time[n] + 1] + (n - level_start[time[n]]) * b;
                *ch = first..first + b;
            }
        }
        Tree {
            horizon,
            dim: 1,
            dt,
            time,
            parent,
            children,
            prob,
            increments,
            level_start,
        }
    }

    /// Builds a tree from an arbitrary node list. Nodes are relabelled in
    /// breadth-first order (children in input order); a list that is already
    /// breadth-first keeps its ids. Probabilities are validated to 1e-12 and
    /// then renormalized.
    pub fn explicit(horizon: usize, dt: Vec<f64>, nodes: &[ExplicitNode]) -> Result<Tree> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        if dt.len() != horizon {
            return Err(Error::InvalidTree(format!(
                "expected {horizon} step sizes, got {}",
                dt.len()
            )));
        }
        if let Some(bad) = dt.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidTree(format!("step size {bad} must be > 0")));
        }
        let index: std::collections::HashMap<usize, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        if index.len() != nodes.len() {
            return Err(Error::InvalidTree("duplicate node ids".into()));
        }
        let roots: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].parent.is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidTree(format!("expected exactly one root, found {}", roots.len())));
        }
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            if let Some(p) = n.parent {
                let pi = *index
                    .get(&p)
                    .ok_or_else(|| Error::InvalidTree(format!("node {} has unknown parent {p}", n.id)))?;
                kids[pi].push(i);
            }
        }
        let dim = nodes
            .iter()
            .filter(|n| n.parent.is_some())
            .map(|n| n.increment.len())
            .max()
            .unwrap_or(0)
            .max(1);
        if nodes.iter().any(|n| n.parent.is_some() && n.increment.len() != dim && !n.increment.is_empty()) {
            return Err(Error::InvalidTree("increment vectors have inconsistent dimension".into()));
        }

        // Breadth-first relabelling.
        let mut order = vec![roots[0]];
        let mut depth = vec![0usize];
        let mut head = 0;
        while head < order.len() {
            let i = order[head];
            let d = depth[head];
            for &c in &kids[i] {
                order.push(c);
                depth.push(d + 1);
            }
            head += 1;
        }
        if order.len() != nodes.len() {
            return Err(Error::InvalidTree("node list is not connected to the root".into()));
        }
        let mut new_id = vec![0; nodes.len()];
        for (k, &i) in order.iter().enumerate() {
            new_id[i] = k;
        }
        let len = nodes.len();
        let mut time = vec![0; len];
        let mut parent = vec![None; len];
        let mut prob = vec![1.0; len];
        let mut increments = vec![0.0; len * dim];
        let mut children = vec![0..0; len];
        for (k, &i) in order.iter().enumerate() {
            time[k] = depth[k];
            parent[k] = nodes[i].parent.map(|p| new_id[index[&p]]);
            if parent[k].is_some() {
                prob[k] = nodes[i].prob;
                if !nodes[i].increment.is_empty() {
                    increments[k * dim..(k + 1) * dim].copy_from_slice(&nodes[i].increment);
                }
            }
            if let Some(&first) = kids[i].first() {
                children[k] = new_id[first]..new_id[first] + kids[i].len();
            }
            if time[k] > horizon {
                return Err(Error::InvalidTree(format!("node {} is deeper than the horizon", nodes[i].id)));
            }
            if kids[i].is_empty() && time[k] != horizon {
                return Err(Error::InvalidTree(format!(
                    "leaf {} sits at time {} instead of {horizon}",
                    nodes[i].id, time[k]
                )));
            }
        }
        let mut level_start = vec![0; horizon + 2];
        for t in 1..=horizon {
            level_start[t] = time.iter().position(|&s| s == t).unwrap_or(len);
        }
        level_start[horizon + 1] = len;

        let mut tree = Tree {
            horizon,
            dim,
            dt,
            time,
            parent,
            children,
            prob,
            increments,
            level_start,
        };
        tree.validate_and_normalize()?;
        Ok(tree)
    }

    fn validate_and_normalize(&mut self) -> Result<()> {
        for n in 0..self.len() {
            let ch = self.children(n);
            if ch.is_empty() {
                continue;
            }
            let mut total = 0.0;
            for c in ch.clone() {
                let p = self.prob[c];
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::InvalidTree(format!("edge into node {c} has probability {p}")));
                }
                total += p;
            }
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidTree(format!(
                    "probabilities at node {n} sum to {total}"
                )));
            }
            for c in ch.clone() {
                self.prob[c] /= total;
            }
            for j in 0..self.dim {
                let centre: f64 = ch.clone().map(|c| self.prob[c] * self.increment(c)[j]).sum();
                if centre.abs() > CENTER_TOL {
                    return Err(Error::InvalidTree(format!(
                        "increments at node {n} are not centred (component {j}: {centre:e})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Dimension of the driving noise increments.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn time(&self, n: NodeId) -> usize {
        self.time[n]
    }

    pub fn parent(&self, n: NodeId) -> Option<NodeId> {
        self.parent[n]
    }

    pub fn children(&self, n: NodeId) -> Range<NodeId> {
        self.children[n].clone()
    }

    pub fn is_leaf(&self, n: NodeId) -> bool {
        self.children[n].is_empty()
    }

    /// Transition probability on the edge into `n` (1 for the root).
    pub fn prob(&self, n: NodeId) -> f64 {
        self.prob[n]
    }

    /// Increment vector on the edge into `n`.
    pub fn increment(&self, n: NodeId) -> &[f64] {
        &self.increments[n * self.dim..(n + 1) * self.dim]
    }

    /// Step size between times `t` and `t + 1`.
    pub fn dt(&self, t: usize) -> f64 {
        self.dt[t]
    }

    pub fn dts(&self) -> &[f64] {
        &self.dt
    }

    pub fn level(&self, t: usize) -> Range<NodeId> {
        self.level_start[t]..self.level_start[t + 1]
    }

    pub fn leaves(&self) -> Range<NodeId> {
        self.level(self.horizon)
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves().len()
    }

    pub fn leaf_offset(&self, leaf: NodeId) -> usize {
        leaf - self.level_start[self.horizon]
    }

    pub fn ancestor_at(&self, mut n: NodeId, t: usize) -> NodeId {
        assert!(t <= self.time[n], "ancestor time after node time");
        while self.time[n] > t {
            n = self.parent[n].expect("non-root node has a parent");
        }
        n
    }

    /// True when `a` is an ancestor of `b` or equal to it.
    pub fn is_ancestor_or_self(&self, a: NodeId, b: NodeId) -> bool {
        self.time[a] <= self.time[b] && self.ancestor_at(b, self.time[a]) == a
    }

    /// Nodes from `from` (an ancestor-or-self of `to`) down to `to`, inclusive.
    pub fn path(&self, from: NodeId, to: NodeId) -> Vec<NodeId> {
        let mut out = vec![to];
        let mut n = to;
        while n != from {
            n = self.parent[n].expect("`from` must be an ancestor of `to`");
            out.push(n);
        }
        out.reverse();
        out
    }

    pub fn subtree(&self, n: NodeId) -> Subtree {
        let mut levels = vec![n..n + 1];
        let mut cur = n..n + 1;
        while !self.is_leaf(cur.start) {
            let next = self.children[cur.start].start..self.children[cur.end - 1].end;
            levels.push(next.clone());
            cur = next;
        }
        Subtree { root: n, levels }
    }
}

/// Descendants of a node grouped by level; `levels[0]` is the root itself.
#[derive(Debug, Clone)]
pub struct Subtree {
    pub root: NodeId,
    pub levels: Vec<Range<NodeId>>,
}

impl Subtree {
    pub fn leaves(&self) -> Range<NodeId> {
        self.levels.last().expect("non-empty").clone()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.levels.iter().flat_map(|r| r.clone())
    }
}

/// One real value per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Process(Vec<f64>);

impl Process {
    pub fn new(tree: &Tree, values: Vec<f64>) -> Result<Process> {
        if values.len() != tree.len() {
            return Err(Error::LengthMismatch {
                expected: tree.len(),
                found: values.len(),
            });
        }
        Ok(Process(values))
    }

    pub fn from_fn(tree: &Tree, f: impl FnMut(NodeId) -> f64) -> Process {
        Process((0..tree.len()).map(f).collect())
    }

    pub fn constant(tree: &Tree, c: f64) -> Process {
        Process(vec![c; tree.len()])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Process {
        Process(self.0.iter().map(|&v| f(v)).collect())
    }

    /// Max-norm distance over nodes where both values are finite.
    pub fn max_abs_diff(&self, other: &Process) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<NodeId> for Process {
    type Output = f64;
    fn index(&self, n: NodeId) -> &f64 {
        &self.0[n]
    }
}

impl IndexMut<NodeId> for Process {
    fn index_mut(&mut self, n: NodeId) -> &mut f64 {
        &mut self.0[n]
    }
}

/// One real value per leaf, indexed by leaf offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Terminal(Vec<f64>);

impl Terminal {
    pub fn new(tree: &Tree, values: Vec<f64>) -> Result<Terminal> {
        if values.len() != tree.num_leaves() {
            return Err(Error::LengthMismatch {
                expected: tree.num_leaves(),
                found: values.len(),
            });
        }
        Ok(Terminal(values))
    }

    /// Builds the variable from a function of the leaf node id.
    pub fn from_leaves(tree: &Tree, f: impl FnMut(NodeId) -> f64) -> Terminal {
        Terminal(tree.leaves().map(f).collect())
    }

    /// Restriction of an adapted process to the leaves.
    pub fn from_process(tree: &Tree, x: &Process) -> Terminal {
        Terminal::from_leaves(tree, |l| x[l])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Index<usize> for Terminal {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Adapted stop/continue decisions, stored as the minimal antichain of STOP nodes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StoppingRule {
    stop: Vec<bool>,
    extended: bool,
}

impl StoppingRule {
    pub fn from_stops(
        tree: &Tree,
        stops: impl IntoIterator<Item = NodeId>,
        extended: bool,
    ) -> Result<StoppingRule> {
        let mut stop = vec![false; tree.len()];
        for n in stops {
            if n >= tree.len() {
                return Err(Error::InvalidRule(format!("node {n} out of range")));
            }
            stop[n] = true;
        }
        let rule = StoppingRule { stop, extended };
        rule.validate(tree)?;
        Ok(rule)
    }

    fn validate(&self, tree: &Tree) -> Result<()> {
        let covering = self.covering_stops(tree);
        for n in 0..tree.len() {
            if self.stop[n] {
                if let Some(p) = tree.parent(n) {
                    if let Some(s) = covering[p] {
                        return Err(Error::InvalidRule(format!(
                            "STOP node {n} lies below STOP node {s}"
                        )));
                    }
                }
            }
        }
        if !self.extended {
            if let Some(l) = tree.leaves().find(|&l| covering[l].is_none()) {
                return Err(Error::InvalidRule(format!(
                    "path to leaf {l} never stops in a non-extended rule"
                )));
            }
        }
        Ok(())
    }

    /// Stops every path at time `t`.
    pub fn constant(tree: &Tree, t: usize) -> StoppingRule {
        let mut stop = vec![false; tree.len()];
        for n in tree.level(t.min(tree.horizon())) {
            stop[n] = true;
        }
        StoppingRule { stop, extended: false }
    }

    /// The extended rule that never stops.
    pub fn never(tree: &Tree) -> StoppingRule {
        StoppingRule {
            stop: vec![false; tree.len()],
            extended: true,
        }
    }

    pub fn is_extended(&self) -> bool {
        self.extended
    }

    pub fn is_stop(&self, n: NodeId) -> bool {
        self.stop[n]
    }

    pub fn stop_nodes(&self) -> Vec<NodeId> {
        (0..self.stop.len()).filter(|&n| self.stop[n]).collect()
    }

    /// For every node, the STOP node that is an ancestor-or-self, if any.
    pub fn covering_stops(&self, tree: &Tree) -> Vec<Option<NodeId>> {
        let mut out = vec![None; tree.len()];
        for n in 0..tree.len() {
            out[n] = match tree.parent(n).and_then(|p| out[p]) {
                Some(s) => Some(s),
                None if self.stop[n] => Some(n),
                None => None,
            };
        }
        out
    }

    /// Stopping node on the path to each leaf (by leaf offset); `None` is `+inf`.
    pub fn leaf_stops(&self, tree: &Tree) -> Vec<Option<NodeId>> {
        let cov = self.covering_stops(tree);
        tree.leaves().map(|l| cov[l]).collect()
    }

    /// Stopping time on the path to each leaf (by leaf offset); `None` is `+inf`.
    pub fn leaf_times(&self, tree: &Tree) -> Vec<Option<usize>> {
        self.leaf_stops(tree)
            .into_iter()
            .map(|s| s.map(|n| tree.time(n)))
            .collect()
    }

    /// `tau ^ N`: paths that never stop are stopped at their leaf.
    pub fn capped(&self, tree: &Tree) -> StoppingRule {
        let cov = self.covering_stops(tree);
        let mut stop = self.stop.clone();
        for l in tree.leaves() {
            if cov[l].is_none() {
                stop[l] = true;
            }
        }
        StoppingRule { stop, extended: false }
    }

    /// Pathwise `self <= other` with `+inf` as the largest value.
    pub fn le_pathwise(&self, other: &StoppingRule, tree: &Tree) -> bool {
        let a = self.leaf_times(tree);
        let b = other.leaf_times(tree);
        a.iter().zip(&b).all(|(x, y)| match (x, y) {
            (_, None) => true,
            (None, Some(_)) => false,
            (Some(x), Some(y)) => x <= y,
        })
    }

    /// Compact text form: the stopping time per leaf, `inf` for never.
    pub fn leaf_time_string(&self, tree: &Tree) -> String {
        self.leaf_times(tree)
            .iter()
            .map(|t| t.map_or_else(|| "inf".to_string(), |t| t.to_string()))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Running maximum of `l` along each path, restarted at time `start`.
/// Nodes before `start` carry [`NEG_INF`].
pub fn path_running_max(tree: &Tree, l: &Process, start: usize) -> Process {
    let mut out = Process::constant(tree, NEG_INF);
    for t in start..=tree.horizon() {
        for n in tree.level(t) {
            out[n] = if t == start {
                l[n]
            } else {
                let prev = out[tree.parent(n).expect("t > 0")];
                if l[n].is_nan() {
                    prev
                } else {
                    prev.max(l[n])
                }
            };
        }
    }
    out
}

/// First time on each path with `l >= level` (or `l > level` when `strict`).
/// With `cap_at_n` unhit paths stop at `N`; otherwise the rule is extended.
pub fn first_hitting(tree: &Tree, l: &Process, level: f64, strict: bool, cap_at_n: bool) -> StoppingRule {
    let mut stop = vec![false; tree.len()];
    let mut stopped = vec![false; tree.len()];
    for n in 0..tree.len() {
        let above = tree.parent(n).is_some_and(|p| stopped[p]);
        if above {
            stopped[n] = true;
            continue;
        }
        let hit = if strict { l[n] > level } else { l[n] >= level };
        if hit || (cap_at_n && tree.is_leaf(n)) {
            stop[n] = true;
            stopped[n] = true;
        }
    }
    StoppingRule {
        stop,
        extended: !cap_at_n,
    }
}

/// Per-leaf value of `x` at the stopping node, multiplied by `discount[t]`
/// when given. Paths with `tau = +inf` take `default_value`.
pub fn stopped_terminal(
    tree: &Tree,
    x: &Process,
    tau: &StoppingRule,
    discount: Option<&[f64]>,
    default_value: Option<f64>,
) -> Result<Terminal> {
    if !tau.is_extended() && default_value.is_some() {
        return Err(Error::InvalidRule(
            "a default value for tau = +inf was requested for a non-extended rule".into(),
        ));
    }
    if let Some(d) = discount {
        if d.len() != tree.horizon() + 1 {
            return Err(Error::InvalidParameter(format!(
                "expected {} discount factors, got {}",
                tree.horizon() + 1,
                d.len()
            )));
        }
    }
    let stops = tau.leaf_stops(tree);
    let mut values = Vec::with_capacity(stops.len());
    for s in stops {
        values.push(match s {
            Some(n) => x[n] * discount.map_or(1.0, |d| d[tree.time(n)]),
            None => default_value.ok_or_else(|| {
                Error::InvalidRule("path never stops and no default value was given".into())
            })?,
        });
    }
    Ok(Terminal(values))
}

/// Leaf-count guard for exhaustive enumeration.
pub const MAX_ENUM_LEAVES: usize = 1 << 12;
/// Rule-count guard for exhaustive enumeration.
pub const MAX_ENUM_RULES: u128 = 10_000_000;

/// Number of stopping rules on the subtree of `n` given which nodes may stop.
/// Leaves that may not stop count as "never" only in extended mode.
fn count_rules(tree: &Tree, n: NodeId, allowed: &dyn Fn(NodeId) -> bool, extended: bool) -> u128 {
    let own = u128::from(allowed(n));
    if tree.is_leaf(n) {
        return own + u128::from(extended);
    }
    let mut prod: u128 = 1;
    for c in tree.children(n) {
        prod = prod.saturating_mul(count_rules(tree, c, allowed, extended));
        if prod == 0 {
            break;
        }
    }
    own.saturating_add(prod)
}

fn rule_sets(tree: &Tree, n: NodeId, allowed: &dyn Fn(NodeId) -> bool, extended: bool) -> Vec<Vec<NodeId>> {
    let mut out = Vec::new();
    if allowed(n) {
        out.push(vec![n]);
    }
    if tree.is_leaf(n) {
        if extended {
            out.push(Vec::new());
        }
        return out;
    }
    let mut acc: Vec<Vec<NodeId>> = vec![Vec::new()];
    for c in tree.children(n) {
        let sub = rule_sets(tree, c, allowed, extended);
        let mut next = Vec::with_capacity(acc.len() * sub.len());
        for a in &acc {
            for s in &sub {
                let mut v = a.clone();
                v.extend_from_slice(s);
                next.push(v);
            }
        }
        acc = next;
    }
    out.extend(acc);
    out
}

fn check_guard(tree: &Tree, count: u128) -> Result<()> {
    if tree.num_leaves() > MAX_ENUM_LEAVES {
        return Err(Error::EnumerationGuard(format!(
            "{} leaves exceed the limit {MAX_ENUM_LEAVES}",
            tree.num_leaves()
        )));
    }
    if count > MAX_ENUM_RULES {
        return Err(Error::EnumerationGuard(format!(
            "{count} rules exceed the limit {MAX_ENUM_RULES}"
        )));
    }
    Ok(())
}

/// Which nodes may carry a STOP for rules with `tau > sigma` on `{sigma < N}`.
/// On `{sigma = N}` the only admissible value is `tau = N`.
fn allowed_after(tree: &Tree, sigma: &StoppingRule) -> Result<Vec<bool>> {
    if sigma.is_extended() {
        return Err(Error::InvalidRule("sigma must take values in {0..N}".into()));
    }
    let cov = sigma.covering_stops(tree);
    Ok((0..tree.len())
        .map(|n| match cov[n] {
            Some(s) if s != n => true,
            Some(_) => tree.is_leaf(n),
            None => false,
        })
        .collect())
}

/// Number of non-extended stopping rules, optionally restricted to `T_sigma`.
pub fn count_stopping_rules(tree: &Tree, after: Option<&StoppingRule>) -> Result<u128> {
    match after {
        None => Ok(count_rules(tree, tree.root(), &|_| true, false)),
        Some(sigma) => {
            let allowed = allowed_after(tree, sigma)?;
            Ok(count_rules(tree, tree.root(), &|n| allowed[n], false))
        }
    }
}

/// All non-extended stopping rules; with `after`, only those in `T_sigma`.
pub fn enumerate_rules(tree: &Tree, after: Option<&StoppingRule>) -> Result<Vec<StoppingRule>> {
    let allowed = match after {
        None => vec![true; tree.len()],
        Some(sigma) => allowed_after(tree, sigma)?,
    };
    let allow = |n: NodeId| allowed[n];
    check_guard(tree, count_rules(tree, tree.root(), &allow, false))?;
    Ok(rule_sets(tree, tree.root(), &allow, false)
        .into_iter()
        .map(|stops| to_rule(tree, &stops, false))
        .collect())
}

/// All extended stopping rules (values in `{0..N, +inf}`).
pub fn enumerate_extended_rules(tree: &Tree) -> Result<Vec<StoppingRule>> {
    let allow = |_: NodeId| true;
    check_guard(tree, count_rules(tree, tree.root(), &allow, true))?;
    Ok(rule_sets(tree, tree.root(), &allow, true)
        .into_iter()
        .map(|stops| to_rule(tree, &stops, true))
        .collect())
}

/// Stop sets on the subtree of `n` that stop strictly after `n`
/// (every path below `n` stops; `n` itself never does unless it is a leaf).
pub fn enumerate_after_node(tree: &Tree, n: NodeId) -> Result<Vec<Vec<NodeId>>> {
    let allow = |m: NodeId| m != n || tree.is_leaf(m);
    check_guard(tree, count_rules(tree, n, &allow, false))?;
    Ok(rule_sets(tree, n, &allow, false))
}

fn to_rule(tree: &Tree, stops: &[NodeId], extended: bool) -> StoppingRule {
    let mut stop = vec![false; tree.len()];
    for &s in stops {
        stop[s] = true;
    }
    StoppingRule { stop, extended }
}
