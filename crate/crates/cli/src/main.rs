use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nlrepr::representation::Variant;

mod commands;
mod input;
mod report;

use input::{Flags, Inputs};

/// Optional-time representations under non-linear expectations on finite trees.
#[derive(Parser)]
#[command(name = "nlrepr", version)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    group: Group,
}

#[derive(Args)]
struct Shared {
    /// JSON config file; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root residual that counts as converged in the report.
    #[arg(long, global = true)]
    tol_root: Option<f64>,
    /// Tolerance for residual and agreement checks.
    #[arg(long, global = true)]
    tol_residual: Option<f64>,
    /// Largest accepted tree horizon.
    #[arg(long, global = true)]
    max_depth: Option<usize>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Tree document: a path or inline JSON.
    #[arg(long, global = true)]
    tree: Option<String>,
    /// Operator document: a path or inline JSON.
    #[arg(long, global = true)]
    operator: Option<String>,
    /// Process: a CSV file, a JSON document, or inline JSON.
    #[arg(long, global = true)]
    process: Option<String>,
    /// Map f: a path or inline JSON.
    #[arg(long, global = true)]
    f: Option<String>,
    #[arg(long, global = true, value_enum)]
    variant: Option<VariantArg>,
    /// Market document: a path or inline JSON.
    #[arg(long, global = true)]
    market: Option<String>,
    /// Strike grid `lo:hi:n`.
    #[arg(long, global = true)]
    strikes: Option<String>,
    /// Alternative nondecreasing process to falsify.
    #[arg(long, global = true)]
    zeta: Option<String>,
    /// Candidate solution to verify.
    #[arg(long, global = true)]
    l: Option<String>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Single time for the characterization check.
    #[arg(long, global = true)]
    sigma_time: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Plain,
    Terminal,
}

#[derive(Subcommand)]
enum Group {
    /// Tree generation.
    Tree {
        #[command(subcommand)]
        action: TreeAction,
    },
    /// Axiom checks for an operator.
    Axioms {
        #[command(subcommand)]
        action: AxiomsAction,
    },
    /// Representation problem.
    Repr {
        #[command(subcommand)]
        action: ReprAction,
    },
    /// Optimal stopping.
    Stop {
        #[command(subcommand)]
        action: StopAction,
    },
    /// Obstacle problem.
    Skorokhod {
        #[command(subcommand)]
        action: SkorokhodAction,
    },
    /// American put.
    Amput {
        #[command(subcommand)]
        action: AmputAction,
    },
}

#[derive(Subcommand)]
enum TreeAction {
    Gen {
        /// Also write a seeded random process to x.csv.
        #[arg(long)]
        random_process: bool,
    },
}

#[derive(Subcommand)]
enum AxiomsAction {
    Check {
        /// Skip the certificate and check the operator as given.
        #[arg(long)]
        unchecked: bool,
    },
}

#[derive(Subcommand)]
enum ReprAction {
    Solve,
    Verify,
    Characterize,
}

#[derive(Subcommand)]
enum StopAction {
    Solve,
    Verify,
}

#[derive(Subcommand)]
enum SkorokhodAction {
    Solve,
    Verify,
    Falsify,
}

#[derive(Subcommand)]
enum AmputAction {
    Boundary,
    Sweep {
        /// Cross-check every strike against all stopping rules.
        #[arg(long)]
        enumerate: bool,
    },
}

impl From<Shared> for Flags {
    fn from(s: Shared) -> Flags {
        Flags {
            config: s.config,
            tree: s.tree,
            operator: s.operator,
            process: s.process,
            f: s.f,
            variant: s.variant.map(|v| match v {
                VariantArg::Plain => Variant::Plain,
                VariantArg::Terminal => Variant::Terminal,
            }),
            market: s.market,
            strikes: s.strikes,
            zeta: s.zeta,
            l: s.l,
            trials: s.trials,
            sigma_time: s.sigma_time,
            seed: s.seed,
            out: s.out,
            tol_root: s.tol_root,
            tol_residual: s.tol_residual,
            max_depth: s.max_depth,
            threads: s.threads,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let inp = Inputs::resolve(cli.shared.into())?;
    if let Some(n) = inp.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.group {
        Group::Tree { action: TreeAction::Gen { random_process } } => commands::tree_gen(&inp, random_process),
        Group::Axioms { action: AxiomsAction::Check { unchecked } } => commands::axioms_check(&inp, unchecked),
        Group::Repr { action } => match action {
            ReprAction::Solve => commands::repr_solve(&inp),
            ReprAction::Verify => commands::repr_verify(&inp),
            ReprAction::Characterize => commands::repr_characterize(&inp),
        },
        Group::Stop { action } => commands::stop_solve(&inp, matches!(action, StopAction::Verify)),
        Group::Skorokhod { action } => match action {
            SkorokhodAction::Solve => commands::skorokhod_solve(&inp, false),
            SkorokhodAction::Verify => commands::skorokhod_solve(&inp, true),
            SkorokhodAction::Falsify => commands::skorokhod_falsify(&inp),
        },
        Group::Amput { action } => match action {
            AmputAction::Boundary => commands::amput_boundary(&inp),
            AmputAction::Sweep { enumerate } => commands::amput_sweep(&inp, enumerate),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("NLREPR_LOG", "off")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
