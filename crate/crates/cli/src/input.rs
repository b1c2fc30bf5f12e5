//! Problem inputs from a config file and command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nlrepr::american::{strike_grid, MarketSpec};
use nlrepr::doc::{read_json, FDoc, MarketDoc, OperatorDoc, ProcessDoc, Ref, TreeDoc};
use nlrepr::representation::{FSpec, Variant};
use nlrepr::{validate_operator, Operator, OperatorSpec, Process, Tree};
use serde::de::DeserializeOwned;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum StrikesDoc {
    Grid(String),
    List(Vec<f64>),
}

/// Contents of `--config`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub tree: Option<Ref<TreeDoc>>,
    pub operator: Option<Ref<OperatorDoc>>,
    pub process: Option<Ref<ProcessDoc>>,
    pub f: Option<Ref<FDoc>>,
    pub variant: Option<Variant>,
    pub market: Option<Ref<MarketDoc>>,
    pub strikes: Option<StrikesDoc>,
    pub zeta: Option<Ref<ProcessDoc>>,
    pub l: Option<Ref<ProcessDoc>>,
    pub trials: Option<usize>,
    pub sigma_time: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub tol_root: Option<f64>,
    pub tol_residual: Option<f64>,
    pub max_depth: Option<usize>,
    pub threads: Option<usize>,
}

/// One input slot: the reference and the directory it is relative to.
#[derive(Debug, Clone)]
struct Slot<T> {
    value: Ref<T>,
    base: PathBuf,
}

/// Parses a flag value: inline JSON when it starts with `{` or `[`, a path otherwise.
fn flag_ref<T: DeserializeOwned>(arg: &str) -> Result<Ref<T>> {
    let t = arg.trim_start();
    if t.starts_with('{') || t.starts_with('[') {
        Ok(Ref::Inline(serde_json::from_str(t).with_context(|| format!("invalid inline document `{arg}`"))?))
    } else {
        Ok(Ref::Path(PathBuf::from(arg)))
    }
}

/// Flag values for the shared inputs.
#[derive(Debug, Clone, Default)]
pub struct Flags {
    pub config: Option<PathBuf>,
    pub tree: Option<String>,
    pub operator: Option<String>,
    pub process: Option<String>,
    pub f: Option<String>,
    pub variant: Option<Variant>,
    pub market: Option<String>,
    pub strikes: Option<String>,
    pub zeta: Option<String>,
    pub l: Option<String>,
    pub trials: Option<usize>,
    pub sigma_time: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub tol_root: Option<f64>,
    pub tol_residual: Option<f64>,
    pub max_depth: Option<usize>,
    pub threads: Option<usize>,
}

pub struct Inputs {
    tree: Option<Slot<TreeDoc>>,
    operator: Option<Slot<OperatorDoc>>,
    process: Option<Slot<ProcessDoc>>,
    f: Option<Slot<FDoc>>,
    market: Option<Slot<MarketDoc>>,
    zeta: Option<Slot<ProcessDoc>>,
    l: Option<Slot<ProcessDoc>>,
    strikes: Option<StrikesDoc>,
    pub variant: Option<Variant>,
    pub trials: Option<usize>,
    pub sigma_time: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub tol_root: f64,
    pub tol_residual: f64,
    pub max_depth: usize,
    pub threads: Option<usize>,
}

fn pick<T: DeserializeOwned>(flag: &Option<String>, cfg: Option<Ref<T>>, cfg_base: &Path) -> Result<Option<Slot<T>>> {
    Ok(match flag {
        Some(arg) => Some(Slot {
            value: flag_ref(arg)?,
            base: PathBuf::from("."),
        }),
        None => cfg.map(|value| Slot {
            value,
            base: cfg_base.to_path_buf(),
        }),
    })
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        bail!("tolerance --{name} must be positive, got {v}")
    }
}

impl Inputs {
    pub fn resolve(flags: Flags) -> Result<Inputs> {
        let (cfg, base) = match &flags.config {
            Some(path) => {
                let cfg: ConfigDoc = read_json(path)?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (cfg, base)
            }
            None => (ConfigDoc::default(), PathBuf::from(".")),
        };
        let out = flags
            .out
            .or_else(|| cfg.out.map(|o| base.join(o)))
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Inputs {
            tree: pick(&flags.tree, cfg.tree, &base)?,
            operator: pick(&flags.operator, cfg.operator, &base)?,
            process: pick(&flags.process, cfg.process, &base)?,
            f: pick(&flags.f, cfg.f, &base)?,
            market: pick(&flags.market, cfg.market, &base)?,
            zeta: pick(&flags.zeta, cfg.zeta, &base)?,
            l: pick(&flags.l, cfg.l, &base)?,
            strikes: flags.strikes.map(StrikesDoc::Grid).or(cfg.strikes),
            variant: flags.variant.or(cfg.variant),
            trials: flags.trials.or(cfg.trials),
            sigma_time: flags.sigma_time.or(cfg.sigma_time),
            seed: flags.seed.or(cfg.seed).unwrap_or(0),
            out,
            tol_root: positive("tol-root", flags.tol_root.or(cfg.tol_root).unwrap_or(1e-11))?,
            tol_residual: positive("tol-residual", flags.tol_residual.or(cfg.tol_residual).unwrap_or(1e-9))?,
            max_depth: flags.max_depth.or(cfg.max_depth).unwrap_or(nlrepr::tree::MAX_BINARY_DEPTH),
            threads: flags.threads.or(cfg.threads),
        })
    }

    pub fn tree(&self) -> Result<Tree> {
        let slot = self.tree.as_ref().ok_or_else(|| anyhow!("missing --tree"))?;
        let (doc, _) = slot.value.load(&slot.base)?;
        let tree = doc.build(Some(self.max_depth))?;
        if tree.horizon() > self.max_depth {
            bail!("tree horizon {} exceeds --max-depth {}", tree.horizon(), self.max_depth);
        }
        Ok(tree)
    }

    pub fn has_tree(&self) -> bool {
        self.tree.is_some()
    }

    pub fn operator_spec(&self, tree: &Tree) -> Result<OperatorSpec> {
        let slot = self.operator.as_ref().ok_or_else(|| anyhow!("missing --operator"))?;
        let (doc, dir) = slot.value.load(&slot.base)?;
        Ok(doc.build(tree, &dir)?)
    }

    pub fn operator(&self, tree: &Tree) -> Result<Operator> {
        Ok(validate_operator(&self.operator_spec(tree)?, tree)?)
    }

    fn process_slot(slot: &Slot<ProcessDoc>, tree: &Tree) -> Result<Process> {
        // A bare path to a CSV file is a process file, not a JSON document.
        if let Ref::Path(p) = &slot.value {
            if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                return Ok(ProcessDoc::Csv { csv: p.clone() }.build(tree, &slot.base)?);
            }
        }
        let (doc, dir) = slot.value.load(&slot.base)?;
        Ok(doc.build(tree, &dir)?)
    }

    pub fn process(&self, tree: &Tree) -> Result<Process> {
        let slot = self.process.as_ref().ok_or_else(|| anyhow!("missing --process"))?;
        Self::process_slot(slot, tree)
    }

    pub fn zeta(&self, tree: &Tree) -> Result<Option<Process>> {
        self.zeta.as_ref().map(|s| Self::process_slot(s, tree)).transpose()
    }

    pub fn l(&self, tree: &Tree) -> Result<Option<Process>> {
        self.l.as_ref().map(|s| Self::process_slot(s, tree)).transpose()
    }

    /// The map `f`; `default` when none is given.
    pub fn f(&self, default: FSpec) -> Result<FSpec> {
        match &self.f {
            None => Ok(default),
            Some(slot) => {
                let (doc, _) = slot.value.load(&slot.base)?;
                Ok(doc.build()?)
            }
        }
    }

    /// Market and its tree; a CRR market brings its own tree.
    pub fn market(&self) -> Result<(Tree, MarketSpec)> {
        let slot = self.market.as_ref().ok_or_else(|| anyhow!("missing --market"))?;
        let (doc, dir) = slot.value.load(&slot.base)?;
        if let Some((tree, market)) = doc.build_with_tree()? {
            if self.has_tree() {
                bail!("a crr market defines its own tree; drop --tree");
            }
            if tree.horizon() > self.max_depth {
                bail!("tree horizon {} exceeds --max-depth {}", tree.horizon(), self.max_depth);
            }
            return Ok((tree, market));
        }
        let tree = self.tree()?;
        let market = doc.build(&tree, &dir)?;
        Ok((tree, market))
    }

    pub fn strikes(&self) -> Result<Option<Vec<f64>>> {
        match &self.strikes {
            None => Ok(None),
            Some(StrikesDoc::List(v)) => Ok(Some(v.clone())),
            Some(StrikesDoc::Grid(s)) => parse_grid(s).map(Some),
        }
    }
}

/// `a:b:n` is `n` equally spaced points from `a` to `b`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        bail!("strike grid must be a:b:n, got `{s}`");
    }
    let a: f64 = parts[0].trim().parse().with_context(|| format!("bad grid start `{}`", parts[0]))?;
    let b: f64 = parts[1].trim().parse().with_context(|| format!("bad grid end `{}`", parts[1]))?;
    let n: usize = parts[2].trim().parse().with_context(|| format!("bad grid count `{}`", parts[2]))?;
    if n == 0 || !(a.is_finite() && b.is_finite()) || b < a {
        bail!("strike grid `{s}` is empty or reversed");
    }
    Ok(strike_grid(a, b, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("1:3:3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(parse_grid("1:3").is_err());
        assert!(parse_grid("3:1:2").is_err());
    }

    #[test]
    fn inline_flags() {
        let r: Ref<TreeDoc> = flag_ref(r#"{"kind":"chain","horizon":2}"#).unwrap();
        assert!(matches!(r, Ref::Inline(TreeDoc::Chain { .. })));
        let r: Ref<TreeDoc> = flag_ref("tree.json").unwrap();
        assert!(matches!(r, Ref::Path(_)));
    }
}
