//! Seeded random forests and 3CNF formulas for tests and benchmarks.

use rand::Rng;

use crate::cnf::CnfFormula;
use crate::forest::{Condition, Feature, Forest, Node, Tree};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Categorical features, each with `categories` values.
    pub categorical: usize,
    pub categories: usize,
    /// Numeric features; thresholds are drawn from `1..=thresholds`.
    pub numeric: usize,
    pub thresholds: usize,
    pub classes: usize,
    pub trees: usize,
    pub max_depth: usize,
    /// Probability that a node below the root splits.
    pub split_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            categorical: 4,
            categories: 2,
            numeric: 0,
            thresholds: 4,
            classes: 2,
            trees: 3,
            max_depth: 3,
            split_prob: 0.7,
        }
    }
}

fn random_node<R: Rng + ?Sized>(rng: &mut R, c: &SynthConfig, depth: usize) -> Node {
    let features = c.categorical + c.numeric;
    let split = features > 0 && depth < c.max_depth && (depth == 0 || rng.random_bool(c.split_prob));
    if !split {
        return Node::leaf(rng.random_range(0..c.classes));
    }
    let feature = rng.random_range(0..features);
    let test = if feature < c.categorical {
        Condition::Equals {
            feature,
            value: rng.random_range(0..c.categories),
        }
    } else {
        Condition::LessEq {
            feature,
            threshold: rng.random_range(1..=c.thresholds) as f64,
        }
    };
    let yes = random_node(rng, c, depth + 1);
    let no = random_node(rng, c, depth + 1);
    Node::split(test, yes, no)
}

pub fn random_forest<R: Rng + ?Sized>(rng: &mut R, c: &SynthConfig) -> Forest {
    let values: Vec<String> = (0..c.categories).map(|v| v.to_string()).collect();
    let features = (0..c.categorical)
        .map(|i| Feature::categorical(&format!("f{i}"), values.iter().cloned()))
        .chain((0..c.numeric).map(|i| Feature::numeric(&format!("n{i}"))))
        .collect();
    let classes = (0..c.classes).map(|y| format!("c{y}")).collect();
    let trees = (0..c.trees).map(|_| Tree::new(random_node(rng, c, 0))).collect();
    Forest::new(features, classes, trees).expect("generated forests are valid")
}

/// Uniform random 3CNF with `m` clauses over `n` variables.
pub fn random_3cnf<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> CnfFormula {
    let clauses = (0..m)
        .map(|_| {
            std::array::from_fn(|_| {
                let v = rng.random_range(1..=n) as i32;
                if rng.random_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
        })
        .collect();
    CnfFormula::new(n, clauses).expect("literals are in range")
}
