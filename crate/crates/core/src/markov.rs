//! Markov-network view of a forest: one random variable per feature, one per
//! tree and one class variable, tied together by deterministic 0/1 factors.
//!
//! A tree factor is 1 iff its tree variable holds the rule that is active for
//! the feature assignment; the class factor is 1 iff the class variable holds
//! the strict-majority winner of the rules assigned to the tree variables.
//! Factors are evaluated on demand and never tabulated.

use crate::error::{Error, Result};
use crate::exact::ExactContext;
use crate::forest::{Forest, Output};
use crate::partition::{CompiledForest, DomainPartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RandomVariable {
    Feature(usize),
    Tree(usize),
    Class,
}

/// A full assignment: a partition set per feature, a rule per tree and a class.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    pub features: Vec<usize>,
    pub trees: Vec<usize>,
    pub class: usize,
}

/// Restriction of a feature variable to a subset of its (effective) sets.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureConstraint {
    pub feature: usize,
    pub allowed: Vec<bool>,
}

impl FeatureConstraint {
    pub fn single(partition: &DomainPartition, feature: usize, set: usize) -> Result<Self> {
        let n = partition
            .features
            .get(feature)
            .ok_or(Error::UnknownFeature {
                index: feature,
                count: partition.len(),
            })?
            .effective_len();
        if set >= n {
            return Err(Error::InvalidParameter(format!(
                "set index {set} out of range for feature `{}` ({n} sets)",
                partition.features[feature].name
            )));
        }
        let mut allowed = vec![false; n];
        allowed[set] = true;
        Ok(FeatureConstraint { feature, allowed })
    }

    /// The single allowed set, if exactly one is allowed.
    pub fn as_single(&self) -> Option<usize> {
        let mut it = self.allowed.iter().enumerate().filter(|(_, a)| **a);
        match (it.next(), it.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    }
}

/// A partial assignment (or union of them) over the class and feature variables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Event {
    pub class: Option<usize>,
    pub features: Vec<FeatureConstraint>,
}

impl Event {
    pub fn any() -> Self {
        Event::default()
    }

    pub fn class(class: usize) -> Self {
        Event {
            class: Some(class),
            features: Vec::new(),
        }
    }

    pub fn feature(partition: &DomainPartition, feature: usize, set: usize) -> Result<Self> {
        Ok(Event {
            class: None,
            features: vec![FeatureConstraint::single(partition, feature, set)?],
        })
    }

    /// Conjunction of single-set feature conditions.
    pub fn features(partition: &DomainPartition, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut event = Event::any();
        for &(f, s) in pairs {
            event.constrain(FeatureConstraint::single(partition, f, s)?);
        }
        Ok(event)
    }

    /// Adds a constraint, intersecting with an existing one on the same feature.
    pub fn constrain(&mut self, c: FeatureConstraint) {
        match self.features.iter_mut().find(|e| e.feature == c.feature) {
            Some(existing) => existing
                .allowed
                .iter_mut()
                .zip(&c.allowed)
                .for_each(|(a, b)| *a = *a && *b),
            None => self.features.push(c),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.class.is_none() && self.features.is_empty()
    }

    pub fn mentions_class(&self) -> bool {
        self.class.is_some()
    }

    pub fn matches_features(&self, class: &[usize]) -> bool {
        self.features.iter().all(|c| c.allowed[class[c.feature]])
    }

    pub fn matches(&self, class: &[usize], winner: usize) -> bool {
        self.class.is_none_or(|y| y == winner) && self.matches_features(class)
    }
}

/// Exact probability as a ratio of class counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Probability {
    pub numerator: u64,
    pub denominator: u64,
}

impl Probability {
    pub fn value(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

#[derive(Debug, Clone)]
pub struct PlausibilityModel {
    forest: Forest,
    partition: DomainPartition,
    compiled: CompiledForest,
    tree_scopes: Vec<Vec<usize>>,
}

impl PlausibilityModel {
    pub fn build(forest: Forest) -> Self {
        let partition = DomainPartition::build(&forest);
        let compiled = CompiledForest::new(&forest, &partition);
        let tree_scopes = forest
            .trees
            .iter()
            .map(|t| {
                let mut scope: Vec<usize> = t
                    .rules()
                    .iter()
                    .flat_map(|r| r.premise.iter().map(|l| l.condition.feature()))
                    .collect();
                scope.sort_unstable();
                scope.dedup();
                scope
            })
            .collect();
        PlausibilityModel {
            forest,
            partition,
            compiled,
            tree_scopes,
        }
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    pub fn partition(&self) -> &DomainPartition {
        &self.partition
    }

    pub fn compiled(&self) -> &CompiledForest {
        &self.compiled
    }

    pub fn variables(&self) -> Vec<RandomVariable> {
        (0..self.partition.len())
            .map(RandomVariable::Feature)
            .chain((0..self.forest.trees.len()).map(RandomVariable::Tree))
            .chain(std::iter::once(RandomVariable::Class))
            .collect()
    }

    pub fn domain_size(&self, var: RandomVariable) -> usize {
        match var {
            RandomVariable::Feature(i) => self.partition.features[i].effective_len(),
            RandomVariable::Tree(t) => self.forest.trees[t].rules().len(),
            RandomVariable::Class => self.forest.classes.len(),
        }
    }

    /// Feature variables in the scope of a tree factor (besides the tree variable).
    pub fn tree_scope(&self, tree: usize) -> &[usize] {
        &self.tree_scopes[tree]
    }

    /// Total number of assignments to all variables.
    pub fn assignment_count(&self) -> Result<u128> {
        self.variables().into_iter().try_fold(1u128, |acc, v| {
            acc.checked_mul(self.domain_size(v) as u128)
                .ok_or(Error::ClassCountOverflow)
        })
    }

    pub fn tree_factor(&self, tree: usize, u: &Assignment) -> u8 {
        let (active, _) = self.compiled.active_rule(tree, &u.features);
        u8::from(active == u.trees[tree])
    }

    pub fn class_factor(&self, u: &Assignment) -> u8 {
        let mut votes = vec![0u32; self.forest.classes.len()];
        for (t, &rule) in u.trees.iter().enumerate() {
            votes[self.forest.trees[t].rules()[rule].conclusion] += 1;
        }
        u8::from(Output::from_votes(&votes) == Output::Class(u.class))
    }

    /// Product of all factors.
    pub fn plausibility(&self, u: &Assignment) -> u8 {
        (0..self.forest.trees.len())
            .map(|t| self.tree_factor(t, u))
            .product::<u8>()
            * self.class_factor(u)
    }

    /// Deterministic completion of a feature assignment; `None` when the
    /// equivalence class is ambiguous.
    pub fn complete(&self, class: &[usize]) -> Option<Assignment> {
        let mut votes = vec![0; self.forest.classes.len()];
        let mut trees = vec![0; self.forest.trees.len()];
        let out = self.compiled.evaluate(class, &mut votes, Some(&mut trees));
        out.class().map(|c| Assignment {
            features: class.to_vec(),
            trees,
            class: c,
        })
    }

    pub fn exact(&self, cap: u64) -> Result<ExactContext<'_>> {
        ExactContext::new(self, cap)
    }

    /// Partition function: the number of non-ambiguous equivalence classes.
    pub fn partition_function_exact(&self, cap: u64) -> Result<u64> {
        Ok(self.exact(cap)?.partition_function())
    }

    /// `P(target | condition)` under the Gibbs distribution, by enumeration.
    pub fn query_exact(&self, target: &Event, condition: &Event, cap: u64) -> Result<Probability> {
        self.exact(cap)?.query(target, condition)
    }
}
