//! JSON problem documents and CSV process files.
//!
//! Every document field that holds a sub-document may instead hold a path
//! (string) to a JSON file; relative paths resolve against the directory of
//! the referring document.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::american::MarketSpec;
use crate::error::{Error, Result};
use crate::expectation::{Alpha, DriverForm, DriverSpec, OperatorSpec};
use crate::representation::{FFamily, FSpec, PiecewiseLinear};
use crate::roots::Monotone;
use crate::tree::{ExplicitNode, Process, Tree};

/// A sub-document given inline or as a path.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum Ref<T> {
    Path(PathBuf),
    Inline(T),
}

impl<T: DeserializeOwned + Clone> Ref<T> {
    /// Resolves to the inline value and the directory for nested paths.
    pub fn load(&self, base: &Path) -> Result<(T, PathBuf)> {
        match self {
            Ref::Inline(v) => Ok((v.clone(), base.to_path_buf())),
            Ref::Path(p) => {
                let path = base.join(p);
                let v = read_json(&path)?;
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                Ok((v, dir))
            }
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut text = String::new();
    File::open(path)
        .map_err(|e| Error::Document(format!("{}: {e}", path.display())))?
        .read_to_string(&mut text)?;
    serde_json::from_str(&text).map_err(|e| Error::Document(format!("{}: {e}", path.display())))
}

/// Scalar or per-time list.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum Coeff {
    Scalar(f64),
    List(Vec<f64>),
}

impl Coeff {
    fn into_vec(self) -> Vec<f64> {
        match self {
            Coeff::Scalar(v) => vec![v],
            Coeff::List(v) => v,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ExplicitNodeDoc {
    pub id: usize,
    pub parent: Option<usize>,
    #[serde(default = "one")]
    pub prob: f64,
    #[serde(default)]
    pub increment: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TreeDoc {
    Binomial {
        horizon: usize,
        #[serde(default = "half")]
        p: f64,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one")]
        dt: f64,
    },
    Chain {
        horizon: usize,
        #[serde(default = "one")]
        dt: f64,
    },
    Explicit {
        horizon: usize,
        dt: Coeff,
        nodes: Vec<ExplicitNodeDoc>,
    },
}

fn half() -> f64 {
    0.5
}

impl TreeDoc {
    pub fn build(&self, max_depth: Option<usize>) -> Result<Tree> {
        if let (Some(limit), TreeDoc::Binomial { horizon, .. }) = (max_depth, self) {
            if *horizon > limit {
                return Err(Error::InvalidParameter(format!(
                    "horizon {horizon} exceeds --max-depth {limit}"
                )));
            }
        }
        match self {
            TreeDoc::Binomial { horizon, p, sigma, dt } => Tree::binomial(*horizon, *p, *sigma, *dt),
            TreeDoc::Chain { horizon, dt } => Tree::chain(*horizon, *dt),
            TreeDoc::Explicit { horizon, dt, nodes } => {
                let dt = match dt.clone() {
                    Coeff::Scalar(v) => vec![v; *horizon],
                    Coeff::List(v) => v,
                };
                let nodes: Vec<ExplicitNode> = nodes
                    .iter()
                    .map(|n| ExplicitNode {
                        id: n.id,
                        parent: n.parent,
                        prob: n.prob,
                        increment: n.increment.clone(),
                    })
                    .collect();
                Tree::explicit(*horizon, dt, &nodes)
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DriverDoc {
    pub form: String,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub up: f64,
    #[serde(default)]
    pub down: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub lipschitz: Option<f64>,
}

impl DriverDoc {
    pub fn build(&self) -> Result<DriverSpec> {
        let form = match self.form.as_str() {
            "zero" => DriverForm::Zero,
            "linear_z" => DriverForm::LinearZ { kappa: self.kappa },
            "abs_z" => DriverForm::AbsZ { kappa: self.kappa },
            "neg_abs_z" => DriverForm::NegAbsZ { kappa: self.kappa },
            "piecewise_linear_z" => DriverForm::PiecewiseLinearZ {
                up: self.up,
                down: self.down,
            },
            other => return Err(Error::Document(format!("unknown driver form `{other}`"))),
        };
        Ok(DriverSpec {
            form,
            lambda: self.lambda,
            lipschitz: self.lipschitz,
        })
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum AlphaDoc {
    Constant(f64),
    PerNode(Vec<f64>),
    Csv { csv: PathBuf },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorDoc {
    Linear,
    ZDriver {
        driver: DriverDoc,
    },
    YzDriver {
        driver: DriverDoc,
    },
    AlphaMaxmin {
        driver: DriverDoc,
        #[serde(default)]
        alt_driver: Option<DriverDoc>,
        alpha: AlphaDoc,
    },
}

impl OperatorDoc {
    pub fn build(&self, tree: &Tree, base: &Path) -> Result<OperatorSpec> {
        Ok(match self {
            OperatorDoc::Linear => OperatorSpec::Linear,
            OperatorDoc::ZDriver { driver } => OperatorSpec::ZDriver { driver: driver.build()? },
            OperatorDoc::YzDriver { driver } => OperatorSpec::YzDriver { driver: driver.build()? },
            OperatorDoc::AlphaMaxmin {
                driver,
                alt_driver,
                alpha,
            } => OperatorSpec::AlphaMaxmin {
                driver: driver.build()?,
                alt_driver: alt_driver.as_ref().map(DriverDoc::build).transpose()?,
                alpha: match alpha {
                    AlphaDoc::Constant(a) => Alpha::Constant(*a),
                    AlphaDoc::PerNode(v) => Alpha::PerNode(v.clone()),
                    AlphaDoc::Csv { csv } => {
                        Alpha::PerNode(read_process_csv(tree, &base.join(csv))?.into_values())
                    }
                },
            },
        })
    }
}

/// Random values drawn uniformly from `[low, high)`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RandomDoc {
    pub seed: u64,
    #[serde(default = "minus_one")]
    pub low: f64,
    #[serde(default = "one")]
    pub high: f64,
}

fn minus_one() -> f64 {
    -1.0
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ProcessDoc {
    Values(Vec<f64>),
    Listed { values: Vec<f64> },
    Csv { csv: PathBuf },
    Constant { constant: f64 },
    Random { random: RandomDoc },
}

impl ProcessDoc {
    pub fn build(&self, tree: &Tree, base: &Path) -> Result<Process> {
        match self {
            ProcessDoc::Values(v) | ProcessDoc::Listed { values: v } => Process::new(tree, v.clone()),
            ProcessDoc::Csv { csv } => read_process_csv(tree, &base.join(csv)),
            ProcessDoc::Constant { constant } => Ok(Process::constant(tree, *constant)),
            ProcessDoc::Random { random } => {
                if !(random.low < random.high) {
                    return Err(Error::Document("random process needs low < high".into()));
                }
                Ok(random_process(tree, random.seed, random.low, random.high))
            }
        }
    }
}

pub fn random_process(tree: &Tree, seed: u64, low: f64, high: f64) -> Process {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Process::from_fn(tree, |_| rng.gen_range(low..high))
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PieceDoc {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FDoc {
    Affine {
        a: Coeff,
        b: Coeff,
    },
    Identity,
    Scaled {
        c: Coeff,
    },
    Piecewise {
        pieces: Vec<PieceDoc>,
        direction: Monotone,
    },
}

impl FDoc {
    pub fn build(&self) -> Result<FSpec> {
        Ok(match self {
            FDoc::Affine { a, b } => FSpec::affine(a.clone().into_vec(), b.clone().into_vec()),
            FDoc::Identity => FSpec::identity(),
            FDoc::Scaled { c } => FSpec::scaled(c.clone().into_vec()),
            FDoc::Piecewise { pieces, direction } => FSpec {
                family: FFamily::Piecewise {
                    pieces: pieces
                        .iter()
                        .map(|p| PiecewiseLinear::new(p.xs.clone(), p.ys.clone()))
                        .collect::<Result<_>>()?,
                },
                direction: *direction,
            },
        })
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarketDoc {
    /// Prices on the tree given separately.
    Explicit { prices: ProcessDoc, rate: f64 },
    /// Cox-Ross-Rubinstein market; defines its own tree.
    Crr {
        horizon: usize,
        spot: f64,
        rate: f64,
        vol: f64,
        #[serde(default = "one")]
        dt: f64,
    },
}

impl MarketDoc {
    /// The market's own tree, if it defines one.
    pub fn build_with_tree(&self) -> Result<Option<(Tree, MarketSpec)>> {
        match self {
            MarketDoc::Crr {
                horizon,
                spot,
                rate,
                vol,
                dt,
            } => MarketSpec::crr(*horizon, *spot, *rate, *vol, *dt).map(Some),
            MarketDoc::Explicit { .. } => Ok(None),
        }
    }

    pub fn build(&self, tree: &Tree, base: &Path) -> Result<MarketSpec> {
        match self {
            MarketDoc::Explicit { prices, rate } => MarketSpec::new(tree, prices.build(tree, base)?, *rate),
            MarketDoc::Crr { .. } => Err(Error::Document(
                "a crr market defines its own tree; do not combine it with --tree".into(),
            )),
        }
    }
}

/// Formats a float with 17 significant digits; `NaN` is empty and infinities are `inf`/`-inf`.
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    match s.trim() {
        "" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t.parse().map_err(|e| format!("`{t}`: {e}")),
    }
}

/// Writes `node_id,time,parent,value` rows.
pub fn write_process_csv<W: Write>(tree: &Tree, values: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node_id", "time", "parent", "value"])?;
    for (n, v) in values.iter().enumerate() {
        let parent = tree.parent(n).map(|p| p.to_string()).unwrap_or_default();
        w.write_record([n.to_string(), tree.time(n).to_string(), parent, format_f64(*v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_process_csv(tree: &Tree, path: &Path) -> Result<Process> {
    let file = File::open(path).map_err(|e| Error::Document(format!("{}: {e}", path.display())))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Document(format!("{}: missing column `{name}`", path.display())))
    };
    let (id_col, value_col) = (col("node_id")?, col("value")?);
    let mut values = vec![f64::NAN; tree.len()];
    let mut seen = vec![false; tree.len()];
    for rec in r.records() {
        let rec = rec?;
        let id: usize = rec[id_col]
            .trim()
            .parse()
            .map_err(|e| Error::Document(format!("{}: bad node_id: {e}", path.display())))?;
        if id >= tree.len() {
            return Err(Error::Document(format!("{}: node {id} not in tree", path.display())));
        }
        values[id] = parse_f64(&rec[value_col]).map_err(|e| Error::Document(format!("{}: {e}", path.display())))?;
        seen[id] = true;
    }
    if let Some(n) = seen.iter().position(|s| !s) {
        return Err(Error::Document(format!("{}: node {n} missing", path.display())));
    }
    Process::new(tree, values)
}
