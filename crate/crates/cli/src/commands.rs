use anyhow::Result;
use log::info;
use nlrepr::american::{
    boundary_residual, default_strikes, dominance, enumerate_strike, solve_boundary, strike_sweep,
};
use nlrepr::doc::{format_f64, random_process};
use nlrepr::expectation::{axiom_suite, AxiomStatus};
use nlrepr::representation::{
    essinf_characterization, residual, solve, solve_l, tau_star, FFamily, FSpec, RepresentationProblem, Variant,
};
use nlrepr::skorokhod::{
    falsify_alternative, random_alternative, solve_obstacle, stopping_link, verify_obstacle, Verdict,
};
use nlrepr::stopping::{brute_force_value, check_criterion, check_enumerated, snell, solve_stopping};
use nlrepr::tree::count_stopping_rules;
use nlrepr::{validate_operator, Operator, StoppingRule, Tree};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::input::Inputs;
use crate::report::Report;

/// Tolerance for the essential-infimum gap and the strike sweep.
const LOOSE_TOL: f64 = 1e-8;
/// Perturbation sizes for the uniqueness probe.
const PROBE_DELTAS: [f64; 2] = [1e-3, 1e-1];
/// Nodes probed at most; larger trees are sampled.
const PROBE_NODES: usize = 512;

fn within_guard(tree: &Tree) -> bool {
    count_stopping_rules(tree, None).is_ok()
}

pub fn tree_gen(inp: &Inputs, with_random: bool) -> Result<bool> {
    let tree = inp.tree()?;
    let mut r = Report::new("tree gen", &inp.out)?;
    let probs: Vec<f64> = (0..tree.len()).map(|n| tree.prob(n)).collect();
    r.write_process("tree.csv", &tree, &probs)?;
    for j in 0..tree.dim() {
        let inc: Vec<f64> = (0..tree.len())
            .map(|n| if n == tree.root() { f64::NAN } else { tree.increment(n)[j] })
            .collect();
        r.write_process(&format!("increment_{j}.csv"), &tree, &inc)?;
    }
    r.set("horizon", tree.horizon())?;
    r.set("nodes", tree.len())?;
    r.set("leaves", tree.num_leaves())?;
    r.set("dim", tree.dim())?;
    r.set("dt", tree.dts())?;
    if with_random {
        let x = random_process(&tree, inp.seed, -1.0, 1.0);
        r.write_process("x.csv", &tree, x.values())?;
    }
    r.finish()
}

pub fn axioms_check(inp: &Inputs, unchecked: bool) -> Result<bool> {
    let tree = inp.tree()?;
    let spec = inp.operator_spec(&tree)?;
    let op = if unchecked {
        Operator::unchecked(&spec, &tree)?
    } else {
        validate_operator(&spec, &tree)?
    };
    let trials = inp.trials.unwrap_or(100);
    info!("running {trials} axiom trials with seed {}", inp.seed);
    let suite = axiom_suite(&op, &tree, trials, inp.seed)?;
    let mut r = Report::new("axioms check", &inp.out)?;
    r.set("operator", &spec)?;
    r.set("certificate", op.certificate())?;
    r.set("axioms", &suite)?;
    for e in &suite.entries {
        if matches!(e.status, AxiomStatus::Pass | AxiomStatus::Fail) {
            let name = serde_json::to_value(e.axiom)?.as_str().unwrap_or_default().to_string();
            r.check_true(&name, e.status == AxiomStatus::Pass);
        }
    }
    r.finish()
}

fn repr_problem(inp: &Inputs, tree: &Tree, default: Variant) -> Result<RepresentationProblem> {
    let x = inp.process(tree)?;
    let f = inp.f(FSpec::negative_identity())?;
    let variant = inp.variant.unwrap_or(default);
    Ok(RepresentationProblem::new(tree, x, f, variant)?)
}

pub fn repr_solve(inp: &Inputs) -> Result<bool> {
    let tree = inp.tree()?;
    let op = inp.operator(&tree)?;
    let problem = repr_problem(inp, &tree, Variant::Plain)?;
    let sol = solve(&tree, &op, &problem)?;
    let res = residual(&tree, &op, &problem, &sol.l)?;
    let mut r = Report::new("repr solve", &inp.out)?;
    r.write_process("l.csv", &tree, sol.l.values())?;
    r.set("variant", problem.variant)?;
    r.set("residual", res.max)?;
    r.set("residual_node", res.node)?;
    r.set("iterations", sol.report.iterations)?;
    r.set("max_root_residual", sol.report.max_root_residual)?;
    r.set("root_tolerance_met", sol.report.max_root_residual <= inp.tol_root)?;
    r.set("per_node_brackets", &sol.report.per_node_brackets)?;
    r.check_le("residual", res.max, inp.tol_residual);
    r.finish()
}

pub fn repr_verify(inp: &Inputs) -> Result<bool> {
    let tree = inp.tree()?;
    let op = inp.operator(&tree)?;
    let problem = repr_problem(inp, &tree, Variant::Plain)?;
    let l = match inp.l(&tree)? {
        Some(l) => l,
        None => solve(&tree, &op, &problem)?.l,
    };
    let res = residual(&tree, &op, &problem, &l)?;
    let last = problem.last_time(&tree);
    let slope = (0..=tree.horizon())
        .map(|t| problem.f.min_abs_slope(t))
        .fold(f64::INFINITY, f64::min);
    let mut nodes: Vec<usize> = (0..tree.len()).filter(|&n| tree.time(n) <= last).collect();
    if nodes.len() > PROBE_NODES {
        let mut rng = ChaCha8Rng::seed_from_u64(inp.seed);
        let mut picked: Vec<usize> = sample(&mut rng, nodes.len(), PROBE_NODES).into_iter().map(|i| nodes[i]).collect();
        picked.sort_unstable();
        nodes = picked;
    }
    let mut min_ratio = f64::INFINITY;
    for &n in &nodes {
        for delta in PROBE_DELTAS {
            let mut moved = l.clone();
            moved[n] += delta;
            let rho = residual(&tree, &op, &problem, &moved)?.max;
            min_ratio = min_ratio.min(rho / (delta * slope));
        }
    }
    let mut r = Report::new("repr verify", &inp.out)?;
    r.set("residual", res.max)?;
    r.set("residual_node", res.node)?;
    r.set("probed_nodes", nodes.len())?;
    r.set("min_slope", slope)?;
    r.set("min_probe_ratio", min_ratio)?;
    r.check_le("residual", res.max, inp.tol_residual);
    r.check_ge("uniqueness", min_ratio, 1e-4);
    r.finish()
}

pub fn repr_characterize(inp: &Inputs) -> Result<bool> {
    let tree = inp.tree()?;
    let op = inp.operator(&tree)?;
    op.require_tower()?;
    // The plain terminal summand depends on the running max, which l_{sigma,tau} cannot see.
    let problem = repr_problem(inp, &tree, Variant::Terminal)?;
    let l = solve(&tree, &op, &problem)?.l;
    let times: Vec<usize> = match inp.sigma_time {
        Some(t) => vec![t],
        None => (0..tree.horizon()).collect(),
    };
    let mut r = Report::new("repr characterize", &inp.out)?;
    let (mut gap, mut violation, mut star) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    let mut per_time = Vec::new();
    for &t in &times {
        if t >= tree.horizon() {
            anyhow::bail!("--sigma-time {t} must be below the horizon {}", tree.horizon());
        }
        let sigma = StoppingRule::constant(&tree, t);
        let rep = essinf_characterization(&tree, &op, &problem, &l, &sigma)?;
        let tau = tau_star(&tree, &l, t)?;
        let mut star_t = 0.0f64;
        for n in tree.level(t) {
            star_t = star_t.max((solve_l(&tree, &op, &problem, n, &tau)? - l[n]).abs());
        }
        gap = gap.max(rep.max_gap);
        violation = violation.max(rep.max_violation);
        star = star.max(star_t);
        per_time.push(json!({
            "time": t,
            "tau_star": tau.leaf_time_string(&tree),
            "tau_star_deviation": star_t,
            "entries": rep.entries,
        }));
    }
    r.set("variant", problem.variant)?;
    r.set("sigma", per_time)?;
    r.check_le("essinf_gap", gap, LOOSE_TOL);
    r.check_le("lower_bound", violation, inp.tol_residual);
    r.check_le("tau_star", star, inp.tol_residual);
    r.finish()
}

pub fn stop_solve(inp: &Inputs, verify: bool) -> Result<bool> {
    let tree = inp.tree()?;
    let op = inp.operator(&tree)?;
    let x = inp.process(&tree)?;
    let sol = solve_stopping(&tree, &op, &x)?;
    let sn = snell(&tree, &op, &x)?;
    let tol = inp.tol_residual;
    let name = if verify { "stop verify" } else { "stop solve" };
    let mut r = Report::new(name, &inp.out)?;
    r.write_process("l.csv", &tree, sol.l.values())?;
    r.write_process("u.csv", &tree, sn.u.values())?;
    let upper = check_criterion(&tree, &sol, &sol.tau_upper)?;
    let lower = check_criterion(&tree, &sol, &sol.tau_lower)?;
    let lo_times = sol.tau_lower.leaf_times(&tree);
    let up_times = sol.tau_upper.leaf_times(&tree);
    let table: Vec<_> = tree
        .leaves()
        .enumerate()
        .map(|(i, leaf)| {
            json!({
                "leaf": leaf,
                "tau_lower": lo_times[i],
                "tau_upper": up_times[i],
                "criterion_lower": lower.paths[i],
                "criterion_upper": upper.paths[i],
            })
        })
        .collect();
    let snell_value = sn.u[tree.root()];
    r.set("value", sol.value)?;
    r.set("value_lower", sol.value_lower)?;
    r.set("snell_value", snell_value)?;
    r.set("tau_lower", sol.tau_lower.leaf_time_string(&tree))?;
    r.set("tau_upper", sol.tau_upper.leaf_time_string(&tree))?;
    r.set("criterion_table", table)?;
    r.check_le("lower_upper_agree", (sol.value - sol.value_lower).abs(), tol);
    r.check_le("snell_agrees", (sol.value - snell_value).abs(), tol);
    r.check_true("criterion_upper", upper.holds);
    r.check_true("criterion_lower", lower.holds);
    let min_excess = (0..tree.len()).map(|n| sn.u[n] - x[n]).fold(f64::INFINITY, f64::min);
    r.check_ge("envelope_dominates", min_excess, -tol);
    if within_guard(&tree) {
        if verify {
            let e = check_enumerated(&tree, &op, &x, &sol, snell_value)?;
            r.set("brute_force_value", e.brute_force_value)?;
            r.set("enumeration", &e)?;
            r.check_le("brute_force_agrees", (sol.value - e.brute_force_value).abs(), tol);
            r.check_le("criterion_rules_optimal", e.max_gap_satisfying, tol);
            r.check_le("envelope_bounds_rules", e.max_envelope_excess, tol);
        } else {
            let bf = brute_force_value(&tree, &op, &x)?;
            r.set("brute_force_value", bf.value)?;
            r.set("brute_force_rules", bf.rules)?;
            r.set("brute_force_ties", bf.argmax.len())?;
            r.check_le("brute_force_agrees", (sol.value - bf.value).abs(), tol);
        }
    } else {
        info!("tree beyond the enumeration guard; brute force skipped");
        r.set("brute_force_value", f64::NAN)?;
    }
    r.finish()
}

pub fn skorokhod_solve(inp: &Inputs, verify: bool) -> Result<bool> {
    let tree = inp.tree()?;
    let op = inp.operator(&tree)?;
    let x = inp.process(&tree)?;
    let f = inp.f(FSpec::identity())?;
    let sol = solve_obstacle(&tree, &op, &x, &f)?;
    let rep = verify_obstacle(&tree, &op, &x, &f, &sol)?;
    let name = if verify { "skorokhod verify" } else { "skorokhod solve" };
    let mut r = Report::new(name, &inp.out)?;
    r.write_process("y.csv", &tree, sol.y.values())?;
    r.write_process("eta.csv", &tree, sol.eta.values())?;
    r.write_process("l.csv", &tree, sol.l.values())?;
    r.set("verification", &rep)?;
    for (name, item) in [
        ("domination", rep.domination),
        ("terminal", rep.terminal),
        ("flat_off", rep.flat_off),
        ("representation", rep.representation),
        ("eta_nondecreasing", rep.eta_nondecreasing),
        ("eta_running_max", rep.eta_running_max),
    ] {
        r.check_true(name, item.passed);
    }
    if verify && matches!(f.family, FFamily::Identity) && within_guard(&tree) {
        let link = stopping_link(&tree, &op, &x, &sol)?;
        let tol = inp.tol_residual;
        r.set("stopping_link", &link)?;
        r.check_le("link_candidates_optimal", link.max_gap, tol);
        r.check_le("link_upper", (link.value_upper - link.brute_force_value).abs(), tol);
        r.check_le("link_lower", (link.value_lower - link.brute_force_value).abs(), tol);
    }
    r.finish()
}

pub fn skorokhod_falsify(inp: &Inputs) -> Result<bool> {
    let tree = inp.tree()?;
    let op = inp.operator(&tree)?;
    let x = inp.process(&tree)?;
    let f = inp.f(FSpec::identity())?;
    let sol = solve_obstacle(&tree, &op, &x, &f)?;
    let mut r = Report::new("skorokhod falsify", &inp.out)?;
    let verdicts: Vec<Verdict> = match inp.zeta(&tree)? {
        Some(zeta) => vec![falsify_alternative(&tree, &op, &x, &f, &sol, &zeta)?],
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(inp.seed);
            let trials = inp.trials.unwrap_or(50);
            (0..trials)
                .map(|_| {
                    let zeta = random_alternative(&tree, &sol.eta, &mut rng);
                    falsify_alternative(&tree, &op, &x, &f, &sol, &zeta)
                })
                .collect::<nlrepr::Result<_>>()?
        }
    };
    let undetected = verdicts.iter().filter(|v| matches!(v, Verdict::Undetected { .. })).count();
    r.set("refuted", verdicts.iter().filter(|v| v.is_refuted()).count())?;
    r.set("verdicts", &verdicts)?;
    r.check_le("alternatives_falsified", undetected as f64, 0.0);
    r.finish()
}

pub fn amput_boundary(inp: &Inputs) -> Result<bool> {
    let (tree, market) = inp.market()?;
    let op = inp.operator(&tree)?;
    let b = solve_boundary(&tree, &op, &market)?;
    let res = boundary_residual(&tree, &op, &market, &b.k)?;
    let (excess, node) = dominance(&tree, &market, &b.k);
    let mut r = Report::new("amput boundary", &inp.out)?;
    r.write_process("k.csv", &tree, b.k.values())?;
    r.write_process("p.csv", &tree, market.prices.values())?;
    r.set("rate", market.rate)?;
    r.set("boundary_residual", res.max)?;
    r.set("boundary_residual_node", res.node)?;
    r.set("max_price_minus_signal", excess)?;
    r.set("max_price_minus_signal_node", node)?;
    r.set("iterations", b.report.iterations)?;
    r.check_le("boundary_residual", res.max, inp.tol_residual);
    r.check_le("signal_dominates_price", excess, inp.tol_residual);
    r.finish()
}

pub fn amput_sweep(inp: &Inputs, enumerate: bool) -> Result<bool> {
    let (tree, market) = inp.market()?;
    let op = inp.operator(&tree)?;
    info!("solving for the exercise signal once");
    let b = solve_boundary(&tree, &op, &market)?;
    let res = boundary_residual(&tree, &op, &market, &b.k)?;
    let (excess, _) = dominance(&tree, &market, &b.k);
    let strikes = match inp.strikes()? {
        Some(s) => s,
        None => default_strikes(&market, &b.k),
    };
    let rows = strike_sweep(&tree, &op, &market, &b.k, &strikes)?;
    let mut r = Report::new("amput sweep", &inp.out)?;
    r.write_process("k.csv", &tree, b.k.values())?;

    let mut wide = String::from(
        "strike,tau_lower,tau_upper,value,snell,gap,value_lower,value_raw,criterion_upper,signal_below_strike\n",
    );
    let mut long = String::from("strike,quantity,value\n");
    for row in &rows {
        wide.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            format_f64(row.strike),
            row.tau_lower,
            row.tau_upper,
            format_f64(row.value),
            format_f64(row.snell),
            format_f64(row.gap),
            format_f64(row.value_lower),
            format_f64(row.value_raw),
            row.criterion_upper,
            row.signal_below_strike
        ));
        for (q, v) in [
            ("value", row.value),
            ("snell", row.snell),
            ("gap", row.gap),
            ("value_lower", row.value_lower),
            ("value_raw", row.value_raw),
        ] {
            long.push_str(&format!("{},{q},{}\n", format_f64(row.strike), format_f64(v)));
        }
    }
    r.write_text("sweep.csv", &wide)?;
    r.write_text("sweep_long.csv", &long)?;
    r.set("boundary_residual", res.max)?;
    r.set("max_price_minus_signal", excess)?;
    r.set("rows", &rows)?;
    let gap = rows
        .iter()
        .filter(|row| row.criterion_upper)
        .map(|row| row.gap)
        .fold(0.0, f64::max);
    r.check_le("boundary_residual", res.max, inp.tol_residual);
    r.check_le("signal_dominates_price", excess, inp.tol_residual);
    let payoff_gap = rows
        .iter()
        .filter(|row| row.criterion_upper)
        .map(|row| (row.value - row.value_raw).abs())
        .fold(0.0, f64::max);
    r.check_le("sweep_gap", gap, LOOSE_TOL);
    r.check_le("payoff_forms_agree", payoff_gap, LOOSE_TOL);
    r.check_true("signal_below_strike", rows.iter().all(|row| row.signal_below_strike));
    if enumerate {
        let checks = strikes
            .iter()
            .map(|&k| enumerate_strike(&tree, &op, &market, &b.k, k))
            .collect::<nlrepr::Result<Vec<_>>>()?;
        let max_gap = checks.iter().fold(0.0f64, |m, c| m.max(c.max_gap));
        let payoff_gap = checks.iter().fold(0.0f64, |m, c| m.max(c.max_payoff_gap));
        r.set("enumeration", &checks)?;
        r.check_le("criterion_rules_optimal", max_gap, LOOSE_TOL);
        r.check_le("criterion_payoffs_agree", payoff_gap, LOOSE_TOL);
        r.check_true("criterion_signal_below_strike", checks.iter().all(|c| c.signal_below_strike));
    }
    r.finish()
}
