//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits non-zero when any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nlrepr::american::{boundary_residual, dominance, solve_boundary, strike_sweep, MarketSpec};
use nlrepr::expectation::{axiom_suite, Axiom, AxiomStatus};
use nlrepr::representation::{
    essinf_characterization, residual, solve, solve_l, tau_star, FSpec, PiecewiseLinear, RepresentationProblem,
    Variant,
};
use nlrepr::roots::Monotone;
use nlrepr::skorokhod::{falsify_alternative, random_alternative, solve_obstacle, stopping_link, verify_obstacle};
use nlrepr::stopping::{check_criterion, check_enumerated, snell, solve_stopping};
use nlrepr::tree::ExplicitNode;
use nlrepr::{validate_operator, Alpha, DriverSpec, Operator, OperatorSpec, Process, StoppingRule, Tree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Outcome {
        Outcome {
            passed,
            detail: detail.into(),
        }
    }

    fn error(e: impl std::fmt::Display) -> Outcome {
        Outcome::new(false, format!("error: {e}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Linear,
    AbsZ,
    NegAbsZ,
    Yz,
    Alpha,
}

const TOWER_KINDS: [Kind; 4] = [Kind::Linear, Kind::AbsZ, Kind::NegAbsZ, Kind::Yz];
const ALL_KINDS: [Kind; 5] = [Kind::Linear, Kind::AbsZ, Kind::NegAbsZ, Kind::Yz, Kind::Alpha];

fn spec_for(kind: Kind, kappa: f64, lambda: f64, alpha: &[f64]) -> OperatorSpec {
    match kind {
        Kind::Linear => OperatorSpec::Linear,
        Kind::AbsZ => OperatorSpec::z_driver(DriverSpec::abs_z(kappa)),
        Kind::NegAbsZ => OperatorSpec::z_driver(DriverSpec::neg_abs_z(kappa)),
        Kind::Yz => OperatorSpec::yz_driver(DriverSpec::abs_z(kappa).with_lambda(lambda)),
        Kind::Alpha => OperatorSpec::alpha_maxmin(DriverSpec::abs_z(kappa), Alpha::PerNode(alpha.to_vec())),
    }
}

/// Random operator of the given kind, with the driver shrunk until it certifies.
fn operator(kind: Kind, tree: &Tree, rng: &mut ChaCha8Rng) -> Operator {
    let mut kappa = rng.gen_range(0.05..0.6);
    let mut lambda = rng.gen_range(-0.4..0.4);
    let alpha: Vec<f64> = (0..tree.len()).map(|_| rng.gen_range(0.0..=1.0)).collect();
    loop {
        if let Ok(op) = validate_operator(&spec_for(kind, kappa, lambda, &alpha), tree) {
            return op;
        }
        kappa *= 0.5;
        lambda *= 0.5;
    }
}

fn random_tree(rng: &mut ChaCha8Rng, max_chain: usize, max_binomial: usize) -> Tree {
    let dt = if rng.gen_bool(0.5) { 1.0 } else { 0.5 };
    if rng.gen_bool(0.3) {
        Tree::chain(rng.gen_range(1..=max_chain), dt).unwrap()
    } else {
        let p = rng.gen_range(0.3..0.7);
        Tree::binomial(rng.gen_range(1..=max_binomial), p, 1.0, dt).unwrap()
    }
}

fn random_x(tree: &Tree, rng: &mut ChaCha8Rng) -> Process {
    Process::from_fn(tree, |_| rng.gen_range(-1.0..1.0))
}

fn random_piece(rng: &mut ChaCha8Rng, sign: f64) -> PiecewiseLinear {
    let mut xs: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
    xs.sort_by(f64::total_cmp);
    for i in 1..xs.len() {
        if xs[i] - xs[i - 1] < 0.1 {
            xs[i] = xs[i - 1] + 0.1;
        }
    }
    let mut ys = vec![rng.gen_range(-1.0..1.0)];
    for i in 1..xs.len() {
        let slope = sign * rng.gen_range(0.3..2.0);
        ys.push(ys[i - 1] + slope * (xs[i] - xs[i - 1]));
    }
    PiecewiseLinear::new(xs, ys).unwrap()
}

/// Random AFFINE or PIECEWISE map; decreasing unless `either_direction`.
fn random_f(rng: &mut ChaCha8Rng, horizon: usize, either_direction: bool) -> FSpec {
    let sign = if either_direction && rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    if rng.gen_bool(0.5) {
        let a = (0..=horizon).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = (0..=horizon).map(|_| -sign * rng.gen_range(0.3..2.0)).collect();
        FSpec::affine(a, b)
    } else {
        let pieces = (0..=horizon).map(|_| random_piece(rng, sign)).collect();
        let dir = if sign > 0.0 { Monotone::Increasing } else { Monotone::Decreasing };
        FSpec::piecewise(pieces, dir)
    }
}

fn min_slope(f: &FSpec, horizon: usize) -> f64 {
    (0..=horizon).map(|t| f.min_abs_slope(t)).fold(f64::INFINITY, f64::min)
}

struct ReprInstance {
    tree: Tree,
    op: Operator,
    problem: RepresentationProblem,
    l: Process,
    slope: f64,
}

fn repr_instances() -> Vec<ReprInstance> {
    (0..200u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
            let tree = random_tree(&mut rng, 8, 8);
            let op = operator(ALL_KINDS[i as usize % 5], &tree, &mut rng);
            let variant = if i % 2 == 0 { Variant::Plain } else { Variant::Terminal };
            let f = random_f(&mut rng, tree.horizon(), true);
            let slope = min_slope(&f, tree.horizon());
            let x = random_x(&tree, &mut rng);
            let problem = RepresentationProblem::new(&tree, x, f, variant).unwrap();
            let l = solve(&tree, &op, &problem).unwrap().l;
            ReprInstance {
                tree,
                op,
                problem,
                l,
                slope,
            }
        })
        .collect()
}

fn c1_residual(instances: &[ReprInstance]) -> Outcome {
    let worst = instances
        .par_iter()
        .map(|inst| residual(&inst.tree, &inst.op, &inst.problem, &inst.l).map(|r| r.max))
        .collect::<nlrepr::Result<Vec<f64>>>();
    match worst {
        Err(e) => Outcome::error(e),
        Ok(v) => {
            let max = v.iter().copied().fold(0.0, f64::max);
            Outcome::new(
                max <= 1e-9,
                format!("max residual {max:.3e} over {} instances (limit 1e-9)", v.len()),
            )
        }
    }
}

fn c2_uniqueness(instances: &[ReprInstance]) -> Outcome {
    let ratios = instances
        .par_iter()
        .map(|inst| -> nlrepr::Result<f64> {
            let last = inst.problem.last_time(&inst.tree);
            let mut worst = f64::INFINITY;
            for n in (0..inst.tree.len()).filter(|&n| inst.tree.time(n) <= last) {
                for delta in [1e-3, 1e-1] {
                    let mut moved = inst.l.clone();
                    moved[n] += delta;
                    let rho = residual(&inst.tree, &inst.op, &inst.problem, &moved)?.max;
                    worst = worst.min(rho / (delta * inst.slope));
                }
            }
            Ok(worst)
        })
        .collect::<nlrepr::Result<Vec<f64>>>();
    match ratios {
        Err(e) => Outcome::error(e),
        Ok(v) => {
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            Outcome::new(
                min >= 1e-4,
                format!("min residual/(delta*slope) {min:.3e} over every node of {} instances (bound 1e-4)", v.len()),
            )
        }
    }
}

/// Random stopping rule with values in `0..N-1`.
fn random_sigma(tree: &Tree, rng: &mut ChaCha8Rng) -> StoppingRule {
    let last = tree.horizon() - 1;
    let mut stops = Vec::new();
    let mut covered = vec![false; tree.len()];
    for n in 0..tree.len() {
        if let Some(p) = tree.parent(n) {
            covered[n] = covered[p];
        }
        if covered[n] || tree.time(n) > last {
            continue;
        }
        if tree.time(n) == last || rng.gen_bool(0.4) {
            stops.push(n);
            covered[n] = true;
        }
    }
    StoppingRule::from_stops(tree, stops, false).unwrap()
}

fn c3_characterization() -> Outcome {
    let mut cases = Vec::new();
    for kind in [Kind::Linear, Kind::AbsZ, Kind::NegAbsZ] {
        for n in 1..=4 {
            for p in [0.5, 0.4] {
                cases.push((kind, Tree::binomial(n, p, 1.0, 1.0).unwrap()));
            }
        }
        for n in 1..=8 {
            cases.push((kind, Tree::chain(n, 1.0).unwrap()));
        }
    }
    let results = cases
        .par_iter()
        .enumerate()
        .map(|(i, (kind, tree))| -> nlrepr::Result<(f64, f64, f64, usize)> {
            let mut rng = ChaCha8Rng::seed_from_u64(3000 + i as u64);
            let op = operator(*kind, tree, &mut rng);
            let f = random_f(&mut rng, tree.horizon(), false);
            let x = random_x(tree, &mut rng);
            let problem = RepresentationProblem::new(tree, x, f, Variant::Terminal)?;
            let l = solve(tree, &op, &problem)?.l;
            let mut sigmas: Vec<StoppingRule> = (0..tree.horizon()).map(|t| StoppingRule::constant(tree, t)).collect();
            sigmas.extend((0..3).map(|_| random_sigma(tree, &mut rng)));
            let (mut gap, mut viol, mut star, mut nodes) = (0.0f64, f64::NEG_INFINITY, 0.0f64, 0);
            for sigma in &sigmas {
                let rep = essinf_characterization(tree, &op, &problem, &l, sigma)?;
                gap = gap.max(rep.max_gap);
                viol = viol.max(rep.max_violation);
                nodes += rep.entries.len();
            }
            for t in 0..tree.horizon() {
                let tau = tau_star(tree, &l, t)?;
                for n in tree.level(t) {
                    star = star.max((solve_l(tree, &op, &problem, n, &tau)? - l[n]).abs());
                }
            }
            Ok((gap, viol, star, nodes))
        })
        .collect::<nlrepr::Result<Vec<_>>>();
    match results {
        Err(e) => Outcome::error(e),
        Ok(v) => {
            let gap = v.iter().fold(0.0f64, |m, r| m.max(r.0));
            let viol = v.iter().fold(f64::NEG_INFINITY, |m, r| m.max(r.1));
            let star = v.iter().fold(0.0f64, |m, r| m.max(r.2));
            let nodes: usize = v.iter().map(|r| r.3).sum();
            Outcome::new(
                gap <= 1e-8 && viol <= 1e-9 && star <= 1e-9,
                format!(
                    "{} instances, {nodes} sigma-nodes: essinf gap {gap:.3e} (1e-8), lower-bound excess {viol:.3e} (1e-9), tau* deviation {star:.3e} (1e-9)",
                    v.len()
                ),
            )
        }
    }
}

fn c4_stopping() -> Outcome {
    let jobs: Vec<(Kind, u64)> = TOWER_KINDS.iter().flat_map(|&k| (0..100).map(move |i| (k, i))).collect();
    let results = jobs
        .par_iter()
        .map(|&(kind, i)| -> nlrepr::Result<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(4000 + 1000 * kind as u64 + i);
            let tree = random_tree(&mut rng, 6, 4);
            let op = operator(kind, &tree, &mut rng);
            let x = random_x(&tree, &mut rng);
            let sol = solve_stopping(&tree, &op, &x)?;
            let u0 = snell(&tree, &op, &x)?.u[tree.root()];
            let e = check_enumerated(&tree, &op, &x, &sol, u0)?;
            let bf = e.brute_force_value;
            let mut worst = [
                (sol.value - bf).abs(),
                (sol.value_lower - bf).abs(),
                (u0 - bf).abs(),
                e.max_gap_satisfying,
            ]
            .into_iter()
            .fold(0.0, f64::max);
            let ok = check_criterion(&tree, &sol, &sol.tau_upper)?.holds
                && check_criterion(&tree, &sol, &sol.tau_lower)?.holds
                && e.satisfying > 0;
            if !ok {
                worst = f64::INFINITY;
            }
            Ok(worst)
        })
        .collect::<nlrepr::Result<Vec<f64>>>();
    match results {
        Err(e) => Outcome::error(e),
        Ok(v) => {
            let max = v.iter().copied().fold(0.0, f64::max);
            Outcome::new(
                max <= 1e-9,
                format!(
                    "{} instances (100 per tower operator): max deviation from brute force {max:.3e} (1e-9)",
                    v.len()
                ),
            )
        }
    }
}

fn c5_skorokhod() -> Outcome {
    let jobs: Vec<(Kind, u64)> = TOWER_KINDS.iter().flat_map(|&k| (0..8).map(move |i| (k, i))).collect();
    let results = jobs
        .par_iter()
        .map(|&(kind, i)| -> nlrepr::Result<(bool, f64, usize, usize)> {
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + 100 * kind as u64 + i);
            let tree = random_tree(&mut rng, 6, 4);
            let op = operator(kind, &tree, &mut rng);
            let x = random_x(&tree, &mut rng);
            let f = if i % 2 == 0 {
                FSpec::identity()
            } else {
                random_f(&mut rng, tree.horizon(), true)
            };
            let sol = solve_obstacle(&tree, &op, &x, &f)?;
            let rep = verify_obstacle(&tree, &op, &x, &f, &sol)?;
            // eta against an independent pathwise running max, bit for bit
            let mut exact = true;
            for n in 0..tree.len() {
                if tree.time(n) < tree.horizon() {
                    let m = tree
                        .path(tree.root(), n)
                        .iter()
                        .map(|&v| sol.l[v])
                        .fold(f64::NEG_INFINITY, f64::max);
                    exact &= sol.eta[n] == m;
                }
            }
            let mut refuted = 0;
            for _ in 0..50 {
                let zeta = random_alternative(&tree, &sol.eta, &mut rng);
                if falsify_alternative(&tree, &op, &x, &f, &sol, &zeta)?.is_refuted() {
                    refuted += 1;
                }
            }
            let mut link = 0.0f64;
            if i % 2 == 0 {
                let s = stopping_link(&tree, &op, &x, &sol)?;
                link = s
                    .max_gap
                    .max((s.value_upper - s.brute_force_value).abs())
                    .max((s.value_lower - s.brute_force_value).abs());
            }
            Ok((exact && rep.passed, link, refuted, 50))
        })
        .collect::<nlrepr::Result<Vec<_>>>();
    match results {
        Err(e) => Outcome::error(e),
        Ok(v) => {
            let props = v.iter().all(|r| r.0);
            let link = v.iter().fold(0.0f64, |m, r| m.max(r.1));
            let refuted: usize = v.iter().map(|r| r.2).sum();
            let total: usize = v.iter().map(|r| r.3).sum();
            Outcome::new(
                props && link <= 1e-9 && refuted == total,
                format!(
                    "{} instances: running max, domination, flat-off {}; {refuted}/{total} alternatives refuted; stopping link {link:.3e} (1e-9)",
                    v.len(),
                    if props { "hold" } else { "VIOLATED" }
                ),
            )
        }
    }
}

/// Classical recombining-lattice American put, discounted to time 0.
fn lattice_put(horizon: usize, spot: f64, rate: f64, vol: f64, dt: f64, strike: f64) -> f64 {
    let up = (vol * dt.sqrt()).exp();
    let down = 1.0 / up;
    let p = (1.0 + rate - down) / (up - down);
    let price = |t: usize, j: usize| spot * up.powi(j as i32) * down.powi((t - j) as i32);
    let mut v: Vec<f64> = (0..=horizon).map(|j| (strike - price(horizon, j)).max(0.0)).collect();
    for t in (0..horizon).rev() {
        v = (0..=t)
            .map(|j| {
                let cont = (p * v[j + 1] + (1.0 - p) * v[j]) / (1.0 + rate);
                cont.max(strike - price(t, j))
            })
            .collect();
    }
    v[0]
}

/// Snell envelope under `E = mean + kappa |z| dt` with least-squares `z`.
fn abs_z_snell(tree: &Tree, kappa: f64, reward: impl Fn(usize) -> f64) -> f64 {
    let mut u = vec![0.0; tree.len()];
    for n in (0..tree.len()).rev() {
        if tree.is_leaf(n) {
            u[n] = reward(n);
            continue;
        }
        let (mut mean, mut cov, mut cross) = (0.0, 0.0, 0.0);
        for c in tree.children(n) {
            let e = tree.increment(c)[0];
            mean += tree.prob(c) * u[c];
            cov += tree.prob(c) * e * e;
            cross += tree.prob(c) * e * u[c];
        }
        let z = cross / cov;
        u[n] = reward(n).max(mean + kappa * z.abs() * tree.dt(tree.time(n)));
    }
    u[tree.root()]
}

fn c6_american() -> Outcome {
    let markets = [(100.0, 0.01, 0.2, 0.25), (50.0, 0.03, 0.3, 0.5)];
    let kappa = 0.3;
    let mut lattice_gap = 0.0f64;
    let mut snell_gap = 0.0f64;
    let mut dom = f64::NEG_INFINITY;
    let mut res = 0.0f64;
    for &(spot, rate, vol, dt) in &markets {
        for horizon in 1..=6 {
            let (tree, market) = match MarketSpec::crr(horizon, spot, rate, vol, dt) {
                Ok(m) => m,
                Err(e) => return Outcome::error(e),
            };
            let strikes: Vec<f64> = (0..20).map(|i| spot * (0.6 + 0.8 * i as f64 / 19.0)).collect();
            let linear = validate_operator(&OperatorSpec::Linear, &tree);
            let abs = validate_operator(&OperatorSpec::z_driver(DriverSpec::abs_z(kappa)), &tree);
            let (linear, abs) = match (linear, abs) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => return Outcome::error(e),
            };
            for (op, is_linear) in [(&linear, true), (&abs, false)] {
                let mut run = || -> nlrepr::Result<()> {
                    let b = solve_boundary(&tree, op, &market)?;
                    res = res.max(boundary_residual(&tree, op, &market, &b.k)?.max);
                    dom = dom.max(dominance(&tree, &market, &b.k).0);
                    for row in strike_sweep(&tree, op, &market, &b.k, &strikes)? {
                        if is_linear {
                            let oracle = lattice_put(horizon, spot, rate, vol, dt, row.strike);
                            lattice_gap = lattice_gap.max((row.value - oracle).abs());
                        } else {
                            let oracle = abs_z_snell(&tree, kappa, |n| {
                                (1.0 + rate).powi(-(tree.time(n) as i32)) * (row.strike - market.prices[n]).max(0.0)
                            });
                            snell_gap = snell_gap.max((row.value - oracle).abs());
                        }
                    }
                    Ok(())
                };
                if let Err(e) = run() {
                    return Outcome::error(e);
                }
            }
        }
    }
    // constant prices: the boundary equals the price
    let mut flat = 0.0f64;
    let tree = Tree::binomial(4, 0.5, 1.0, 1.0).unwrap();
    let market = MarketSpec::new(&tree, Process::constant(&tree, 10.0), 0.05).unwrap();
    for spec in [OperatorSpec::Linear, OperatorSpec::z_driver(DriverSpec::abs_z(kappa))] {
        let op = validate_operator(&spec, &tree).unwrap();
        match solve_boundary(&tree, &op, &market) {
            Ok(b) => flat = flat.max(b.k.max_abs_diff(&market.prices)),
            Err(e) => return Outcome::error(e),
        }
    }
    Outcome::new(
        dom <= 1e-9 && res <= 1e-9 && lattice_gap <= 1e-10 && snell_gap <= 1e-8 && flat <= 1e-12,
        format!(
            "max(P-K) {dom:.3e} (1e-9), residual {res:.3e} (1e-9), lattice gap {lattice_gap:.3e} (1e-10), abs-z Snell gap {snell_gap:.3e} (1e-8), constant-price |K-P| {flat:.3e} (1e-12)"
        ),
    )
}

fn trinomial() -> Tree {
    let mut nodes = vec![ExplicitNode {
        id: 0,
        parent: None,
        prob: 1.0,
        increment: vec![0.0],
    }];
    let moves = [(0.25, 1.0), (0.5, 0.0), (0.25, -1.0)];
    let mut frontier = vec![0];
    for _ in 0..2 {
        let mut next = Vec::new();
        for &p in &frontier {
            for &(prob, e) in &moves {
                let id = nodes.len();
                nodes.push(ExplicitNode {
                    id,
                    parent: Some(p),
                    prob,
                    increment: vec![e],
                });
                next.push(id);
            }
        }
        frontier = next;
    }
    Tree::explicit(2, vec![1.0, 1.0], &nodes).unwrap()
}

fn c7_axioms() -> Outcome {
    let trees = [
        Tree::binomial(3, 0.5, 1.0, 1.0).unwrap(),
        Tree::binomial(3, 0.35, 1.0, 0.5).unwrap(),
        trinomial(),
    ];
    let mut checked = 0;
    let mut bad = Vec::new();
    let mut worst = 0.0f64;
    for (ti, tree) in trees.iter().enumerate() {
        let alpha: Vec<f64> = (0..tree.len()).map(|n| (n % 5) as f64 / 4.0).collect();
        let specs = [
            OperatorSpec::Linear,
            OperatorSpec::z_driver(DriverSpec::abs_z(0.3)),
            OperatorSpec::z_driver(DriverSpec::neg_abs_z(0.3)),
            OperatorSpec::z_driver(DriverSpec::linear_z(0.2)),
            OperatorSpec::z_driver(DriverSpec::piecewise_z(0.3, -0.1)),
            OperatorSpec::yz_driver(DriverSpec::abs_z(0.2).with_lambda(0.25)),
            OperatorSpec::alpha_maxmin(DriverSpec::abs_z(0.3), Alpha::PerNode(alpha)),
        ];
        for spec in &specs {
            let op = match validate_operator(spec, tree) {
                Ok(op) => op,
                Err(e) => return Outcome::error(format!("{}: {e}", spec.name())),
            };
            let rep = match axiom_suite(&op, tree, 500, 7000 + ti as u64) {
                Ok(r) => r,
                Err(e) => return Outcome::error(e),
            };
            checked += 1;
            let z_only = !matches!(spec, OperatorSpec::YzDriver { .. });
            let required: &[(Axiom, bool)] = &[
                (Axiom::StrictMonotonicity, true),
                (Axiom::ZeroOneLaw, true),
                (Axiom::TranslationInvariance, op.has_tower() && z_only),
                (Axiom::Tower, op.has_tower()),
            ];
            for &(axiom, must_pass) in required {
                let Some(e) = rep.entry(axiom) else {
                    bad.push(format!("{} missing {axiom:?}", spec.name()));
                    continue;
                };
                let ok = match e.status {
                    AxiomStatus::Pass => true,
                    AxiomStatus::NotApplicable => !must_pass,
                    _ => false,
                };
                if e.status == AxiomStatus::Pass {
                    worst = worst.max(e.max_deviation);
                }
                if !ok {
                    bad.push(format!("{} {axiom:?} {:?} on tree {ti}", spec.name(), e.status));
                }
            }
        }
    }
    // an over-steep driver must be caught
    let tree = Tree::binomial(2, 0.5, 1.0, 1.0).unwrap();
    let steep = OperatorSpec::z_driver(DriverSpec::abs_z(1.5));
    let rejected = validate_operator(&steep, &tree).is_err();
    let witness = Operator::unchecked(&steep, &tree)
        .and_then(|op| axiom_suite(&op, &tree, 500, 7100))
        .ok()
        .and_then(|r| r.entry(Axiom::StrictMonotonicity).cloned())
        .is_some_and(|e| e.status == AxiomStatus::Fail && e.witness.is_some());
    Outcome::new(
        bad.is_empty() && worst <= 1e-10 && rejected && witness,
        format!(
            "{checked} operator/tree pairs x 500 trials, max deviation {worst:.3e} (1e-10); uncertified driver {} with {}{}",
            if rejected { "rejected" } else { "ACCEPTED" },
            if witness { "a monotonicity witness" } else { "NO witness" },
            if bad.is_empty() { String::new() } else { format!("; failures: {}", bad.join(", ")) }
        ),
    )
}

fn digest_dir(dir: &Path) -> std::io::Result<String> {
    let mut names: Vec<_> = fs::read_dir(dir)?.map(|e| e.map(|e| e.file_name())).collect::<Result<_, _>>()?;
    names.sort();
    let mut h = Sha256::new();
    for name in names {
        h.update(name.as_encoded_bytes());
        h.update([0]);
        h.update(fs::read(dir.join(&name))?);
        h.update([0]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn c8_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_nlrepr");
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return Outcome::error(e),
    };
    let base = dir.path();
    let configs = [
        (
            "binomial.json",
            r#"{"tree": {"kind": "binomial", "horizon": 4, "p": 0.45},
                "operator": {"variant": "z_driver", "driver": {"form": "abs_z", "kappa": 0.3}},
                "process": {"random": {"seed": 11}}, "trials": 40, "seed": 5}"#,
        ),
        (
            "yz.json",
            r#"{"tree": {"kind": "binomial", "horizon": 3},
                "operator": {"variant": "yz_driver", "driver": {"form": "abs_z", "kappa": 0.2, "lambda": 0.2}},
                "process": {"random": {"seed": 12}}, "trials": 40, "seed": 6}"#,
        ),
        (
            "market.json",
            r#"{"market": {"kind": "crr", "horizon": 5, "spot": 100, "rate": 0.01, "vol": 0.2, "dt": 0.25},
                "operator": {"variant": "z_driver", "driver": {"form": "abs_z", "kappa": 0.2}},
                "strikes": "80:120:20", "seed": 7}"#,
        ),
    ];
    for (name, text) in configs {
        if let Err(e) = fs::write(base.join(name), text) {
            return Outcome::error(e);
        }
    }
    let runs: &[(&str, &[&str])] = &[
        ("binomial.json", &["tree", "gen", "--random-process"]),
        ("binomial.json", &["axioms", "check"]),
        ("binomial.json", &["repr", "solve"]),
        ("binomial.json", &["repr", "verify"]),
        ("binomial.json", &["repr", "characterize"]),
        ("binomial.json", &["stop", "solve"]),
        ("binomial.json", &["stop", "verify"]),
        ("yz.json", &["stop", "solve"]),
        ("binomial.json", &["skorokhod", "solve"]),
        ("binomial.json", &["skorokhod", "verify"]),
        ("binomial.json", &["skorokhod", "falsify"]),
        ("market.json", &["amput", "boundary"]),
        ("market.json", &["amput", "sweep"]),
    ];
    let mut bad = Vec::new();
    for (i, (config, args)) in runs.iter().enumerate() {
        let mut digests = Vec::new();
        for round in 0..2 {
            let out = base.join(format!("run{i}_{round}"));
            let status = Command::new(bin)
                .args(*args)
                .arg("--config")
                .arg(base.join(config))
                .arg("--out")
                .arg(&out)
                .output();
            match status {
                Ok(o) if o.status.code() == Some(0) => match digest_dir(&out) {
                    Ok(d) => digests.push(d),
                    Err(e) => bad.push(format!("{}: {e}", args.join(" "))),
                },
                Ok(o) => bad.push(format!(
                    "{} exited {:?}: {}",
                    args.join(" "),
                    o.status.code(),
                    String::from_utf8_lossy(&o.stderr).trim()
                )),
                Err(e) => bad.push(format!("{}: {e}", args.join(" "))),
            }
        }
        if digests.len() == 2 && digests[0] != digests[1] {
            bad.push(format!("{} output differs between runs", args.join(" ")));
        }
    }
    Outcome::new(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} commands byte-identical across two runs", runs.len())
        } else {
            bad.join("; ")
        },
    )
}

fn main() {
    let start = Instant::now();
    let mut failed = 0;
    let mut emit = |id: u8, name: &str, o: Outcome, t: Instant| {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        if !o.passed {
            failed += 1;
        }
        println!("[{tag}] {id} {name}: {} ({:.1}s)", o.detail, t.elapsed().as_secs_f64());
    };
    let t = Instant::now();
    let instances = repr_instances();
    emit(1, "representation residual", c1_residual(&instances), t);
    let t = Instant::now();
    emit(2, "uniqueness probe", c2_uniqueness(&instances), t);
    let t = Instant::now();
    emit(3, "characterization", c3_characterization(), t);
    let t = Instant::now();
    emit(4, "optimal stopping", c4_stopping(), t);
    let t = Instant::now();
    emit(5, "obstacle problem", c5_skorokhod(), t);
    let t = Instant::now();
    emit(6, "american put", c6_american(), t);
    let t = Instant::now();
    emit(7, "operator axioms", c7_axioms(), t);
    let t = Instant::now();
    emit(8, "determinism", c8_determinism(), t);
    println!(
        "{} of 8 criteria passed in {:.1}s",
        8 - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
