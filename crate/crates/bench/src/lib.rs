//! Shared fixtures for the solver benchmarks.

use nlrepr::representation::{FSpec, RepresentationProblem, Variant};
use nlrepr::{validate_operator, DriverSpec, Operator, OperatorSpec, Process, Tree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub tree: Tree,
    pub op: Operator,
    pub x: Process,
}

/// Binary tree of the given depth with an `|z|` driver and a seeded random process.
pub fn fixture(horizon: usize, kappa: f64) -> Fixture {
    let tree = Tree::binomial(horizon, 0.5, 1.0, 1.0).expect("valid tree");
    let spec = if kappa == 0.0 {
        OperatorSpec::Linear
    } else {
        OperatorSpec::z_driver(DriverSpec::abs_z(kappa))
    };
    let op = validate_operator(&spec, &tree).expect("certified driver");
    let mut rng = ChaCha8Rng::seed_from_u64(horizon as u64);
    let x = Process::from_fn(&tree, |_| rng.gen_range(-1.0..1.0));
    Fixture { tree, op, x }
}

impl Fixture {
    pub fn problem(&self, variant: Variant) -> RepresentationProblem {
        RepresentationProblem::new(&self.tree, self.x.clone(), FSpec::negative_identity(), variant).expect("valid problem")
    }
}
