//! Non-linear conditional expectations on a tree.
//!
//! Every operator is an exact one-step backward recursion. For a node with
//! children `c`, transition probabilities `p_c` and increments `e_c`, the
//! martingale integrand is extracted by probability-weighted least squares,
//! `z = sum_c w_c y_c` with `w_c = p_c * Cov^+ e_c`, and
//!
//! ```text
//! Y = sum_c p_c y_c + g(Y, z) * dt
//! ```
//!
//! which is explicit for drivers without a `y` term and a contraction fixed
//! point otherwise.

mod axioms;

pub use axioms::{axiom_suite, Axiom, AxiomEntry, AxiomReport, AxiomStatus, AxiomWitness};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tree::{NodeId, Process, StoppingRule, Subtree, Terminal, Tree};

/// Monotonicity margin demanded of every edge.
pub const MARGIN: f64 = 1e-9;
/// Upper bound on `K * dt` for drivers with a `y` term.
pub const CONTRACTION_LIMIT: f64 = 0.5;
const FIXED_POINT_TOL: f64 = 1e-14;
const FIXED_POINT_MAX_ITER: usize = 200;
/// Largest supported increment dimension.
pub const MAX_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum DriverForm {
    Zero,
    /// `kappa * sum_j z_j`
    LinearZ { kappa: f64 },
    /// `kappa * |z|`
    AbsZ { kappa: f64 },
    /// `-kappa * |z|`
    NegAbsZ { kappa: f64 },
    /// Componentwise `up * z_j` for `z_j >= 0`, `down * z_j` otherwise.
    PiecewiseLinearZ { up: f64, down: f64 },
}

/// Driver `g(y, z) = lambda * y + g_z(z)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriverSpec {
    pub form: DriverForm,
    pub lambda: f64,
    /// Declared Lipschitz constant; defaults to the intrinsic one.
    pub lipschitz: Option<f64>,
}

impl DriverSpec {
    pub fn new(form: DriverForm) -> DriverSpec {
        DriverSpec { form, lambda: 0.0, lipschitz: None }
    }

    pub fn zero() -> DriverSpec {
        Self::new(DriverForm::Zero)
    }

    pub fn linear_z(kappa: f64) -> DriverSpec {
        Self::new(DriverForm::LinearZ { kappa })
    }

    pub fn abs_z(kappa: f64) -> DriverSpec {
        Self::new(DriverForm::AbsZ { kappa })
    }

    pub fn neg_abs_z(kappa: f64) -> DriverSpec {
        Self::new(DriverForm::NegAbsZ { kappa })
    }

    pub fn piecewise_z(up: f64, down: f64) -> DriverSpec {
        Self::new(DriverForm::PiecewiseLinearZ { up, down })
    }

    pub fn with_lambda(mut self, lambda: f64) -> DriverSpec {
        self.lambda = lambda;
        self
    }

    pub fn with_lipschitz(mut self, k: f64) -> DriverSpec {
        self.lipschitz = Some(k);
        self
    }

    pub fn eval_z(&self, z: &[f64]) -> f64 {
        match self.form {
            DriverForm::Zero => 0.0,
            DriverForm::LinearZ { kappa } => kappa * z.iter().sum::<f64>(),
            DriverForm::AbsZ { kappa } => kappa * norm(z),
            DriverForm::NegAbsZ { kappa } => -kappa * norm(z),
            DriverForm::PiecewiseLinearZ { up, down } => z
                .iter()
                .map(|&v| if v >= 0.0 { up * v } else { down * v })
                .sum(),
        }
    }

    pub fn eval(&self, y: f64, z: &[f64]) -> f64 {
        self.lambda * y + self.eval_z(z)
    }

    /// Bound on every partial derivative in `(y, z)`.
    pub fn intrinsic_lipschitz(&self) -> f64 {
        let z_slope = match self.form {
            DriverForm::Zero => 0.0,
            DriverForm::LinearZ { kappa } | DriverForm::AbsZ { kappa } | DriverForm::NegAbsZ { kappa } => {
                kappa.abs()
            }
            DriverForm::PiecewiseLinearZ { up, down } => up.abs().max(down.abs()),
        };
        z_slope.max(self.lambda.abs())
    }

    pub fn has_y_term(&self) -> bool {
        self.lambda != 0.0
    }

    /// The driver `-g`.
    pub fn negated(&self) -> DriverSpec {
        let form = match self.form {
            DriverForm::Zero => DriverForm::Zero,
            DriverForm::LinearZ { kappa } => DriverForm::LinearZ { kappa: -kappa },
            DriverForm::AbsZ { kappa } => DriverForm::NegAbsZ { kappa },
            DriverForm::NegAbsZ { kappa } => DriverForm::AbsZ { kappa },
            DriverForm::PiecewiseLinearZ { up, down } => DriverForm::PiecewiseLinearZ { up: -up, down: -down },
        };
        DriverSpec {
            form,
            lambda: -self.lambda,
            lipschitz: self.lipschitz,
        }
    }

    /// Checks parameters, `g(0, 0) = 0`, and the declared Lipschitz constant.
    /// Returns the constant used for certification.
    pub fn check(&self) -> Result<f64> {
        let params: Vec<f64> = match self.form {
            DriverForm::Zero => vec![],
            DriverForm::LinearZ { kappa } | DriverForm::AbsZ { kappa } | DriverForm::NegAbsZ { kappa } => {
                vec![kappa]
            }
            DriverForm::PiecewiseLinearZ { up, down } => vec![up, down],
        };
        if params.iter().chain([&self.lambda]).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDriver("driver parameters must be finite".into()));
        }
        let g0 = self.eval(0.0, &[0.0; MAX_DIM]);
        if g0 != 0.0 {
            return Err(Error::InvalidDriver(format!("g(t, 0) = {g0} != 0")));
        }
        let intrinsic = self.intrinsic_lipschitz();
        match self.lipschitz {
            Some(k) if !(k.is_finite() && k >= 0.0) => {
                Err(Error::InvalidDriver(format!("declared Lipschitz constant {k} is invalid")))
            }
            Some(k) if k < intrinsic => Err(Error::InvalidDriver(format!(
                "declared Lipschitz constant {k} is below the driver slope {intrinsic}"
            ))),
            Some(k) => Ok(k),
            None => Ok(intrinsic),
        }
    }
}

fn norm(z: &[f64]) -> f64 {
    if z.len() == 1 {
        z[0].abs()
    } else {
        z.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Mixing weight of the alpha-maxmin operator.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Alpha {
    Constant(f64),
    PerNode(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum OperatorSpec {
    Linear,
    ZDriver {
        driver: DriverSpec,
    },
    YzDriver {
        driver: DriverSpec,
    },
    /// `alpha_t E^g + (1 - alpha_t) E^{alt}` with `alt = -g` unless given.
    AlphaMaxmin {
        driver: DriverSpec,
        alt_driver: Option<DriverSpec>,
        alpha: Alpha,
    },
}

impl OperatorSpec {
    pub fn z_driver(driver: DriverSpec) -> OperatorSpec {
        OperatorSpec::ZDriver { driver }
    }

    pub fn yz_driver(driver: DriverSpec) -> OperatorSpec {
        OperatorSpec::YzDriver { driver }
    }

    pub fn alpha_maxmin(driver: DriverSpec, alpha: Alpha) -> OperatorSpec {
        OperatorSpec::AlphaMaxmin {
            driver,
            alt_driver: None,
            alpha,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OperatorSpec::Linear => "linear",
            OperatorSpec::ZDriver { .. } => "z_driver",
            OperatorSpec::YzDriver { .. } => "yz_driver",
            OperatorSpec::AlphaMaxmin { .. } => "alpha_maxmin",
        }
    }

    /// Time-consistent (`E_s o E_t = E_s`) variants.
    pub fn has_tower(&self) -> bool {
        !matches!(self, OperatorSpec::AlphaMaxmin { .. })
    }
}

/// Outcome of certification: the smallest edge margin
/// `p_c - K * dt * sum_j |w_cj|` and where it occurs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub lipschitz: f64,
    pub min_margin: f64,
    pub argmin_node: Option<NodeId>,
    pub argmin_child: Option<NodeId>,
    /// `K * dt` maximised over steps, for drivers with a `y` term.
    pub contraction: Option<f64>,
    pub certified: bool,
}

#[derive(Debug, Clone)]
enum Kind {
    Linear,
    Driven(DriverSpec),
    Mixed {
        driver: DriverSpec,
        alt: DriverSpec,
        alpha: Vec<f64>,
    },
}

/// An operator bound to a tree.
#[derive(Debug, Clone)]
pub struct Operator {
    spec: OperatorSpec,
    kind: Kind,
    certificate: Certificate,
    dim: usize,
    /// z-extraction weights per child node (`dim` entries each).
    weights: Vec<f64>,
    tree_len: usize,
}

/// Certifies `spec` on `tree`.
pub fn validate_operator(spec: &OperatorSpec, tree: &Tree) -> Result<Operator> {
    let op = Operator::build(spec, tree)?;
    let cert = &op.certificate;
    if !cert.certified {
        if let Some(c) = cert.contraction {
            if c > CONTRACTION_LIMIT {
                return Err(Error::InvalidDriver(format!(
                    "K * dt = {c} exceeds the contraction limit {CONTRACTION_LIMIT}"
                )));
            }
        }
        return Err(Error::ConditionViolated {
            node: cert.argmin_node.unwrap_or(0),
            child: cert.argmin_child.unwrap_or(0),
            margin: cert.min_margin,
        });
    }
    Ok(op)
}

impl Operator {
    /// Builds the operator without enforcing the certificate. Only for
    /// falsification experiments; the axioms may fail.
    pub fn unchecked(spec: &OperatorSpec, tree: &Tree) -> Result<Operator> {
        Self::build(spec, tree)
    }

    fn build(spec: &OperatorSpec, tree: &Tree) -> Result<Operator> {
        if tree.dim() > MAX_DIM {
            return Err(Error::InvalidTree(format!(
                "increment dimension {} exceeds {MAX_DIM}",
                tree.dim()
            )));
        }
        let (kind, drivers): (Kind, Vec<&DriverSpec>) = match spec {
            OperatorSpec::Linear => (Kind::Linear, vec![]),
            OperatorSpec::ZDriver { driver } => {
                if driver.has_y_term() {
                    return Err(Error::InvalidDriver(
                        "z_driver must not depend on y; use yz_driver".into(),
                    ));
                }
                (Kind::Driven(driver.clone()), vec![driver])
            }
            OperatorSpec::YzDriver { driver } => (Kind::Driven(driver.clone()), vec![driver]),
            OperatorSpec::AlphaMaxmin { driver, alt_driver, alpha } => {
                let alt = alt_driver.clone().unwrap_or_else(|| driver.negated());
                let alpha = match alpha {
                    Alpha::Constant(a) => vec![*a; tree.len()],
                    Alpha::PerNode(v) => {
                        if v.len() != tree.len() {
                            return Err(Error::LengthMismatch {
                                expected: tree.len(),
                                found: v.len(),
                            });
                        }
                        v.clone()
                    }
                };
                if let Some(a) = alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
                    return Err(Error::InvalidParameter(format!("alpha value {a} outside [0, 1]")));
                }
                (
                    Kind::Mixed {
                        driver: driver.clone(),
                        alt,
                        alpha,
                    },
                    vec![],
                )
            }
        };
        let lipschitz = match &kind {
            Kind::Mixed { driver, alt, .. } => driver.check()?.max(alt.check()?),
            _ => drivers.iter().map(|d| d.check()).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max),
        };
        let has_y = match &kind {
            Kind::Linear => false,
            Kind::Driven(d) => d.has_y_term() || matches!(spec, OperatorSpec::YzDriver { .. }),
            Kind::Mixed { driver, alt, .. } => driver.has_y_term() || alt.has_y_term(),
        };

        let dim = tree.dim();
        let weights = extraction_weights(tree);
        let mut cert = Certificate {
            lipschitz,
            min_margin: f64::INFINITY,
            argmin_node: None,
            argmin_child: None,
            contraction: None,
            certified: true,
        };
        for n in 0..tree.len() {
            let dt = if tree.is_leaf(n) { continue } else { tree.dt(tree.time(n)) };
            for c in tree.children(n) {
                let wsum: f64 = weights[c * dim..(c + 1) * dim].iter().map(|w| w.abs()).sum();
                let margin = tree.prob(c) - lipschitz * dt * wsum;
                if margin < cert.min_margin {
                    cert.min_margin = margin;
                    cert.argmin_node = Some(n);
                    cert.argmin_child = Some(c);
                }
            }
        }
        if cert.min_margin < MARGIN {
            cert.certified = false;
        }
        if has_y {
            let worst = tree.dts().iter().fold(0.0f64, |m, &dt| m.max(lipschitz * dt));
            cert.contraction = Some(worst);
            if worst > CONTRACTION_LIMIT {
                cert.certified = false;
            }
        }
        Ok(Operator {
            spec: spec.clone(),
            kind,
            certificate: cert,
            dim,
            weights,
            tree_len: tree.len(),
        })
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    pub fn has_tower(&self) -> bool {
        self.spec.has_tower()
    }

    /// Whether `E_t[c] = c` holds for `F_t`-measurable `c`.
    pub fn preserves_constants(&self) -> bool {
        match &self.kind {
            Kind::Linear => true,
            Kind::Driven(d) => !d.has_y_term(),
            Kind::Mixed { driver, alt, .. } => !driver.has_y_term() && !alt.has_y_term(),
        }
    }

    /// Errors unless the operator is time-consistent.
    pub fn require_tower(&self) -> Result<()> {
        if self.has_tower() {
            Ok(())
        } else {
            Err(Error::NonTowerOperator)
        }
    }

    fn check_tree(&self, tree: &Tree) {
        assert_eq!(self.tree_len, tree.len(), "operator used with a different tree");
    }

    /// Weights `w_c` (one slice per child) used to extract `z` at a node.
    pub fn weights(&self, child: NodeId) -> &[f64] {
        &self.weights[child * self.dim..(child + 1) * self.dim]
    }

    /// One backward step at `node` from values at its children (in child order).
    /// Not defined for the alpha-maxmin operator.
    pub fn one_step(&self, tree: &Tree, node: NodeId, child_values: &[f64]) -> Result<f64> {
        self.check_tree(tree);
        let ch = tree.children(node);
        if child_values.len() != ch.len() {
            return Err(Error::LengthMismatch {
                expected: ch.len(),
                found: child_values.len(),
            });
        }
        let mut buf = vec![0.0; tree.len()];
        buf[ch].copy_from_slice(child_values);
        match &self.kind {
            Kind::Linear => Ok(self.step(None, tree, node, &buf)?),
            Kind::Driven(d) => Ok(self.step(Some(d), tree, node, &buf)?),
            Kind::Mixed { .. } => Err(Error::NonTowerOperator),
        }
    }

    /// One step under `driver` (linear when `None`), reading child values from `buf`.
    fn step(&self, driver: Option<&DriverSpec>, tree: &Tree, node: NodeId, buf: &[f64]) -> Result<f64> {
        let ch = tree.children(node);
        let mut mean = 0.0;
        for c in ch.clone() {
            mean += tree.prob(c) * buf[c];
        }
        let Some(driver) = driver else {
            return Ok(mean);
        };
        let mut z = [0.0; MAX_DIM];
        let z = &mut z[..self.dim];
        for c in ch {
            let w = self.weights(c);
            for j in 0..self.dim {
                z[j] += w[j] * buf[c];
            }
        }
        let dt = tree.dt(tree.time(node));
        let gz = driver.eval_z(z);
        if !driver.has_y_term() {
            return Ok(mean + gz * dt);
        }
        let mut y = mean;
        for _ in 0..FIXED_POINT_MAX_ITER {
            let next = mean + (driver.lambda * y + gz) * dt;
            if (next - y).abs() <= FIXED_POINT_TOL * y.abs().max(1.0) {
                return Ok(next);
            }
            y = next;
        }
        Err(Error::FixedPointDiverged {
            node,
            iterations: FIXED_POINT_MAX_ITER,
        })
    }

    fn backward(&self, driver: Option<&DriverSpec>, tree: &Tree, sub: &Subtree, buf: &mut [f64]) -> Result<()> {
        for lvl in (0..sub.levels.len() - 1).rev() {
            for n in sub.levels[lvl].clone() {
                buf[n] = self.step(driver, tree, n, buf)?;
            }
        }
        Ok(())
    }

    /// `E_{t(n),N}` at the subtree root, with terminal values read from the
    /// subtree's leaves in `buf`. Interior entries of `buf` are overwritten.
    pub fn eval_subtree(&self, tree: &Tree, sub: &Subtree, buf: &mut [f64]) -> Result<f64> {
        self.check_tree(tree);
        match &self.kind {
            Kind::Linear => self.backward(None, tree, sub, buf)?,
            Kind::Driven(d) => self.backward(Some(d), tree, sub, buf)?,
            Kind::Mixed { driver, alt, alpha } => {
                let mut other = buf.to_vec();
                self.backward(Some(driver), tree, sub, buf)?;
                self.backward(Some(alt), tree, sub, &mut other)?;
                let a = alpha[sub.root];
                return Ok(a * buf[sub.root] + (1.0 - a) * other[sub.root]);
            }
        }
        Ok(buf[sub.root])
    }

    /// `E_{t(n),N}[xi]` at every node `n`.
    pub fn expect_all(&self, tree: &Tree, xi: &Terminal) -> Result<Process> {
        self.check_tree(tree);
        if xi.len() != tree.num_leaves() {
            return Err(Error::LengthMismatch {
                expected: tree.num_leaves(),
                found: xi.len(),
            });
        }
        let sub = tree.subtree(tree.root());
        let mut buf = vec![0.0; tree.len()];
        buf[tree.leaves()].copy_from_slice(xi.values());
        match &self.kind {
            Kind::Linear => self.backward(None, tree, &sub, &mut buf)?,
            Kind::Driven(d) => self.backward(Some(d), tree, &sub, &mut buf)?,
            Kind::Mixed { driver, alt, alpha } => {
                let mut other = buf.clone();
                self.backward(Some(driver), tree, &sub, &mut buf)?;
                self.backward(Some(alt), tree, &sub, &mut other)?;
                for n in 0..tree.len() {
                    buf[n] = alpha[n] * buf[n] + (1.0 - alpha[n]) * other[n];
                }
            }
        }
        Process::new(tree, buf)
    }

    /// Values of `E_t[xi]` at the time-`t` nodes, in node order.
    pub fn condexp(&self, tree: &Tree, t: usize, xi: &Terminal) -> Result<Vec<f64>> {
        if t > tree.horizon() {
            return Err(Error::InvalidParameter(format!("time {t} beyond horizon")));
        }
        let all = self.expect_all(tree, xi)?;
        Ok(all.values()[tree.level(t)].to_vec())
    }

    /// `E_{s,t}` applied to time-`t` values, for every node at times `<= t`.
    /// Time-consistent operators only.
    pub fn expect_from_level(&self, tree: &Tree, t: usize, values: &[f64]) -> Result<Process> {
        self.check_tree(tree);
        self.require_tower()?;
        let level = tree.level(t);
        if values.len() != level.len() {
            return Err(Error::LengthMismatch {
                expected: level.len(),
                found: values.len(),
            });
        }
        let mut buf = vec![f64::NAN; tree.len()];
        buf[level].copy_from_slice(values);
        let driver = match &self.kind {
            Kind::Driven(d) => Some(d),
            _ => None,
        };
        for s in (0..t).rev() {
            for n in tree.level(s) {
                buf[n] = self.step(driver, tree, n, &buf)?;
            }
        }
        Process::new(tree, buf)
    }

    /// Value of the reward stopped by `rule`: backward recursion that freezes
    /// at STOP nodes and takes `never` at leaves reached without stopping.
    /// Entry `n` is `E_{t(n),tau}[reward_tau]` for nodes not below a STOP.
    pub fn stopped_value(&self, tree: &Tree, rule: &StoppingRule, reward: &Process, never: f64) -> Result<Process> {
        self.check_tree(tree);
        self.require_tower()?;
        let driver = match &self.kind {
            Kind::Driven(d) => Some(d),
            _ => None,
        };
        // Nodes strictly below a stop are never reached.
        let mut dead = vec![false; tree.len()];
        for n in 0..tree.len() {
            if let Some(p) = tree.parent(n) {
                dead[n] = dead[p] || rule.is_stop(p);
            }
        }
        let mut buf = vec![0.0; tree.len()];
        for n in (0..tree.len()).rev() {
            buf[n] = if dead[n] {
                f64::NAN
            } else if rule.is_stop(n) {
                reward[n]
            } else if tree.is_leaf(n) {
                never
            } else {
                self.step(driver, tree, n, &buf)?
            };
        }
        Process::new(tree, buf)
    }
}

/// Least-squares weights expressing `z` from child values, per child node.
fn extraction_weights(tree: &Tree) -> Vec<f64> {
    let dim = tree.dim();
    let mut weights = vec![0.0; tree.len() * dim];
    for n in 0..tree.len() {
        let ch = tree.children(n);
        if ch.is_empty() {
            continue;
        }
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for c in ch.clone() {
            let e = DVector::from_column_slice(tree.increment(c));
            cov += tree.prob(c) * &e * e.transpose();
        }
        let scale = cov.trace().abs().max(f64::MIN_POSITIVE);
        if cov.trace().abs() < 1e-300 {
            continue;
        }
        let Ok(pinv) = cov.clone().pseudo_inverse(1e-12 * scale) else {
            continue;
        };
        for c in ch {
            let e = DVector::from_column_slice(tree.increment(c));
            let w = tree.prob(c) * &pinv * e;
            weights[c * dim..(c + 1) * dim].copy_from_slice(w.as_slice());
        }
    }
    weights
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn binomial(n: usize, p: f64) -> Tree {
        Tree::binomial(n, p, 1.0, 1.0).unwrap()
    }

    #[test]
    fn linear_is_certified_everywhere() {
        let tree = binomial(3, 0.3);
        let op = validate_operator(&OperatorSpec::Linear, &tree).unwrap();
        assert!(op.certificate().certified);
        assert_eq!(op.certificate().lipschitz, 0.0);
    }

    #[test]
    fn abs_z_certificate_margin() {
        let tree = binomial(2, 0.5);
        let op = validate_operator(&OperatorSpec::z_driver(DriverSpec::abs_z(0.2)), &tree).unwrap();
        assert_abs_diff_eq!(op.weights(1)[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(op.weights(2)[0], -0.5, epsilon = 1e-15);
        // 0.5 - 0.2 * 1 * 0.5
        assert_abs_diff_eq!(op.certificate().min_margin, 0.4, epsilon = 1e-15);
    }

    #[test]
    fn abs_z_too_steep_is_rejected() {
        let tree = binomial(2, 0.5);
        let err = validate_operator(&OperatorSpec::z_driver(DriverSpec::abs_z(1.5)), &tree).unwrap_err();
        match err {
            Error::ConditionViolated { margin, .. } => assert_abs_diff_eq!(margin, -0.25, epsilon = 1e-15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binary_weights_are_difference_quotients() {
        let tree = binomial(1, 0.25);
        let op = validate_operator(&OperatorSpec::Linear, &tree).unwrap();
        let gap = tree.increment(1)[0] - tree.increment(2)[0];
        assert_abs_diff_eq!(op.weights(1)[0], 1.0 / gap, epsilon = 1e-14);
        assert_abs_diff_eq!(op.weights(2)[0], -1.0 / gap, epsilon = 1e-14);
    }

    #[test]
    fn yz_contraction_limit() {
        let tree = binomial(2, 0.5);
        let ok = OperatorSpec::yz_driver(DriverSpec::abs_z(0.2).with_lambda(0.3));
        assert!(validate_operator(&ok, &tree).is_ok());
        let steep = OperatorSpec::yz_driver(DriverSpec::zero().with_lambda(0.8));
        assert!(validate_operator(&steep, &tree).is_err());
    }

    #[test]
    fn declared_lipschitz_must_bound_slope() {
        let tree = binomial(1, 0.5);
        let spec = OperatorSpec::z_driver(DriverSpec::abs_z(0.3).with_lipschitz(0.1));
        assert!(matches!(validate_operator(&spec, &tree), Err(Error::InvalidDriver(_))));
        let spec = OperatorSpec::z_driver(DriverSpec::abs_z(0.3).with_lipschitz(0.5));
        let op = validate_operator(&spec, &tree).unwrap();
        assert_eq!(op.certificate().lipschitz, 0.5);
    }

    #[test]
    fn z_driver_rejects_y_term() {
        let tree = binomial(1, 0.5);
        let spec = OperatorSpec::z_driver(DriverSpec::abs_z(0.3).with_lambda(0.1));
        assert!(validate_operator(&spec, &tree).is_err());
    }

    #[test]
    fn one_step_examples() {
        let tree = binomial(1, 0.5);
        let op = validate_operator(&OperatorSpec::z_driver(DriverSpec::abs_z(0.2)), &tree).unwrap();
        assert_abs_diff_eq!(op.one_step(&tree, 0, &[2.0, 0.0]).unwrap(), 1.2, epsilon = 1e-15);
        assert_eq!(op.one_step(&tree, 0, &[3.5, 3.5]).unwrap(), 3.5);

        let skew = binomial(1, 0.25);
        let lin = validate_operator(&OperatorSpec::Linear, &skew).unwrap();
        assert_abs_diff_eq!(lin.one_step(&skew, 0, &[2.0, 0.0]).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn yz_one_step_matches_closed_form() {
        let tree = binomial(1, 0.5);
        let d = DriverSpec::abs_z(0.2).with_lambda(0.25);
        let op = validate_operator(&OperatorSpec::yz_driver(d), &tree).unwrap();
        // y = 1 + 0.25 y + 0.2 * 1  =>  y = 1.2 / 0.75
        let y = op.one_step(&tree, 0, &[2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(y, 1.6, epsilon = 1e-13);
    }

    #[test]
    fn condexp_examples() {
        let tree = binomial(1, 0.5);
        let xi = Terminal::new(&tree, vec![4.0, 0.0]).unwrap();
        let lin = validate_operator(&OperatorSpec::Linear, &tree).unwrap();
        assert_eq!(lin.condexp(&tree, 0, &xi).unwrap(), vec![2.0]);
        let abs = validate_operator(&OperatorSpec::z_driver(DriverSpec::abs_z(0.2)), &tree).unwrap();
        // 2 + 0.2 * |0.5 * 4 - 0.5 * 0| * 1
        assert_abs_diff_eq!(abs.condexp(&tree, 0, &xi).unwrap()[0], 2.4, epsilon = 1e-15);
    }

    #[test]
    fn constants_preserved() {
        let tree = binomial(3, 0.3);
        let xi = Terminal::from_leaves(&tree, |_| 1.75);
        for spec in [
            OperatorSpec::Linear,
            OperatorSpec::z_driver(DriverSpec::abs_z(0.2)),
            OperatorSpec::alpha_maxmin(DriverSpec::abs_z(0.2), Alpha::Constant(0.3)),
        ] {
            let op = validate_operator(&spec, &tree).unwrap();
            let all = op.expect_all(&tree, &xi).unwrap();
            for v in all.values() {
                assert_abs_diff_eq!(*v, 1.75, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn chain_driver_reduces_to_linear() {
        let tree = Tree::chain(5, 1.0).unwrap();
        let op = validate_operator(&OperatorSpec::z_driver(DriverSpec::abs_z(3.0)), &tree).unwrap();
        let xi = Terminal::new(&tree, vec![2.5]).unwrap();
        assert_eq!(op.condexp(&tree, 0, &xi).unwrap(), vec![2.5]);
    }

    #[test]
    fn alpha_maxmin_mixes_extremes() {
        let tree = binomial(1, 0.5);
        let xi = Terminal::new(&tree, vec![4.0, 0.0]).unwrap();
        let op = validate_operator(
            &OperatorSpec::alpha_maxmin(DriverSpec::abs_z(0.2), Alpha::Constant(0.25)),
            &tree,
        )
        .unwrap();
        // 0.25 * 2.4 + 0.75 * 1.6
        assert_abs_diff_eq!(op.condexp(&tree, 0, &xi).unwrap()[0], 1.8, epsilon = 1e-15);
        assert!(op.one_step(&tree, 0, &[1.0, 0.0]).is_err());
        assert!(op.expect_from_level(&tree, 1, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn alpha_outside_unit_interval() {
        let tree = binomial(1, 0.5);
        let spec = OperatorSpec::alpha_maxmin(DriverSpec::abs_z(0.2), Alpha::Constant(1.5));
        assert!(validate_operator(&spec, &tree).is_err());
    }

    #[test]
    fn stopped_value_freezes_at_stops() {
        let tree = binomial(2, 0.5);
        let op = validate_operator(&OperatorSpec::Linear, &tree).unwrap();
        let x = Process::from_fn(&tree, |n| n as f64);
        let rule = StoppingRule::from_stops(&tree, [1, 5, 6], false).unwrap();
        let v = op.stopped_value(&tree, &rule, &x, 0.0).unwrap();
        assert_abs_diff_eq!(v[0], 0.5 * 1.0 + 0.5 * 5.5, epsilon = 1e-15);
    }
}
