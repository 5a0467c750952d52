//! Finite quotient of the input space induced by a forest's feature conditions.
//!
//! Categorical features split into singletons over their declared values;
//! numeric features split into half-open intervals `(lo, hi]` at the sorted,
//! deduplicated thresholds the forest tests. Every partition set either wholly
//! satisfies or wholly violates every condition in the forest, so a vector of
//! set indices (an [`EquivalenceClass`]) can be classified symbolically.
//!
//! Categorical features the forest never tests keep their singleton sets, but
//! enumeration and sampling collapse them to a single representative index.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forest::{Condition, FeatureKind, FlatNode, Forest, Input, Output, ResolvedValue, Value};

/// Default cap on the number of equivalence classes enumerated exactly.
pub const DEFAULT_MAX_EXACT_CLASSES: u64 = 1 << 22;

#[derive(Debug, Clone, PartialEq)]
pub enum PartitionSet {
    /// `{value}`; `index` is the position among the declared values.
    Value { index: usize, label: String },
    /// `(lo, hi]`, with `None` for an infinite bound. The last interval is
    /// open at `+inf`.
    Interval { lo: Option<f64>, hi: Option<f64> },
}

impl PartitionSet {
    pub fn contains(&self, value: &ResolvedValue) -> bool {
        match (self, value) {
            (PartitionSet::Value { index, .. }, ResolvedValue::Category(v)) => index == v,
            (PartitionSet::Interval { lo, hi }, ResolvedValue::Number(x)) => {
                lo.is_none_or(|lo| *x > lo) && hi.is_none_or(|hi| *x <= hi)
            }
            _ => false,
        }
    }

    /// Whether every member of the set satisfies `cond` (the alternative
    /// being that none does).
    pub fn satisfies(&self, cond: &Condition) -> bool {
        match (self, cond) {
            (PartitionSet::Value { index, .. }, Condition::Equals { value, .. }) => index == value,
            (PartitionSet::Interval { hi, .. }, Condition::LessEq { threshold, .. }) => {
                hi.is_some_and(|hi| hi <= *threshold)
            }
            _ => false,
        }
    }
}

impl fmt::Display for PartitionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionSet::Value { label, .. } => write!(f, "{{{label}}}"),
            PartitionSet::Interval { lo, hi } => {
                let lo = lo.map_or_else(|| "-inf".to_string(), crate::forest::format_number);
                match hi {
                    Some(hi) => write!(f, "({lo}, {}]", crate::forest::format_number(*hi)),
                    None => write!(f, "({lo}, inf)"),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePartition {
    pub name: String,
    pub kind: FeatureKind,
    pub sets: Vec<PartitionSet>,
    /// Whether any tree tests this feature.
    pub used: bool,
}

impl FeaturePartition {
    /// Number of sets that enumeration and sampling distinguish.
    pub fn effective_len(&self) -> usize {
        if self.used {
            self.sets.len()
        } else {
            1
        }
    }

    /// Whether the feature only has one effective set (never tested, or a
    /// single-valued categorical domain).
    pub fn is_collapsed(&self) -> bool {
        self.effective_len() == 1
    }

    /// Renders an effective set; collapsed features render as their full domain.
    pub fn render_set(&self, set: usize) -> String {
        if !self.used && self.sets.len() > 1 {
            "*".to_string()
        } else {
            self.sets[set].to_string()
        }
    }
}

/// Partition indices, one per feature (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EquivalenceClass(pub Vec<usize>);

impl EquivalenceClass {
    pub fn indices(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainPartition {
    pub features: Vec<FeaturePartition>,
}

impl DomainPartition {
    pub fn build(forest: &Forest) -> Self {
        let used = forest.used_features();
        let mut thresholds: Vec<Vec<f64>> = vec![Vec::new(); forest.features.len()];
        for tree in &forest.trees {
            for node in tree.flat() {
                if let FlatNode::Split {
                    test: Condition::LessEq { feature, threshold },
                    ..
                } = node
                {
                    thresholds[*feature].push(*threshold);
                }
            }
        }
        let features = forest
            .features
            .iter()
            .zip(thresholds)
            .zip(used)
            .map(|((f, mut ts), used)| {
                let sets = match f.kind {
                    FeatureKind::Categorical => f
                        .values
                        .iter()
                        .enumerate()
                        .map(|(index, label)| PartitionSet::Value {
                            index,
                            label: label.clone(),
                        })
                        .collect(),
                    FeatureKind::Numeric => {
                        ts.sort_by(|a, b| a.total_cmp(b));
                        ts.dedup();
                        let mut sets = Vec::with_capacity(ts.len() + 1);
                        let mut lo = None;
                        for t in ts {
                            sets.push(PartitionSet::Interval { lo, hi: Some(t) });
                            lo = Some(t);
                        }
                        sets.push(PartitionSet::Interval { lo, hi: None });
                        sets
                    }
                };
                FeaturePartition {
                    name: f.name.clone(),
                    kind: f.kind,
                    sets,
                    used,
                }
            })
            .collect();
        DomainPartition { features }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Per-feature set counts of the full (uncollapsed) partition.
    pub fn set_counts(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.sets.len()).collect()
    }

    pub fn radices(&self) -> Vec<usize> {
        self.features.iter().map(FeaturePartition::effective_len).collect()
    }

    /// Characteristic vector of a resolved input (full partition indices).
    pub fn class_of(&self, input: &Input) -> EquivalenceClass {
        EquivalenceClass(
            self.features
                .iter()
                .zip(&input.values)
                .map(|(f, v)| {
                    f.sets
                        .iter()
                        .position(|s| s.contains(v))
                        .expect("partition sets cover the whole domain")
                })
                .collect(),
        )
    }

    /// Characteristic vector of a raw input.
    pub fn characteristic(&self, values: &[Value]) -> Result<EquivalenceClass> {
        if values.len() != self.features.len() {
            return Err(Error::InputLength {
                got: values.len(),
                expected: self.features.len(),
            });
        }
        let indices = self
            .features
            .iter()
            .zip(values)
            .map(|(f, v)| {
                let resolved = match (f.kind, v) {
                    (FeatureKind::Categorical, Value::Category(s)) => f
                        .sets
                        .iter()
                        .position(|set| matches!(set, PartitionSet::Value { label, .. } if label == s))
                        .map(ResolvedValue::Category),
                    (FeatureKind::Categorical, Value::Number(x)) => {
                        let s = crate::forest::format_number(*x);
                        f.sets
                            .iter()
                            .position(|set| matches!(set, PartitionSet::Value { label, .. } if *label == s))
                            .map(ResolvedValue::Category)
                    }
                    (FeatureKind::Numeric, Value::Number(x)) if !x.is_nan() => Some(ResolvedValue::Number(*x)),
                    (FeatureKind::Numeric, Value::Category(s)) => s
                        .trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|x| !x.is_nan())
                        .map(ResolvedValue::Number),
                    (FeatureKind::Numeric, Value::Number(_)) => None,
                };
                let resolved = resolved.ok_or_else(|| Error::UnknownValue {
                    feature: f.name.clone(),
                    value: match v {
                        Value::Category(s) => s.clone(),
                        Value::Number(x) => x.to_string(),
                    },
                })?;
                Ok(f.sets
                    .iter()
                    .position(|s| s.contains(&resolved))
                    .expect("sets cover the domain"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EquivalenceClass(indices))
    }

    /// Some raw input whose characteristic vector is `class`.
    pub fn representative(&self, class: &EquivalenceClass) -> Vec<Value> {
        self.features
            .iter()
            .zip(&class.0)
            .map(|(f, &i)| match &f.sets[i] {
                PartitionSet::Value { label, .. } => Value::Category(label.clone()),
                PartitionSet::Interval { lo, hi } => Value::Number(match (lo, hi) {
                    (_, Some(hi)) => *hi,
                    (Some(lo), None) => lo + 1.0,
                    (None, None) => 0.0,
                }),
            })
            .collect()
    }

    pub fn indistinguishable(&self, x1: &[Value], x2: &[Value]) -> Result<bool> {
        Ok(self.characteristic(x1)? == self.characteristic(x2)?)
    }

    /// Maps collapsed features to their representative index 0.
    pub fn collapse(&self, class: &EquivalenceClass) -> EquivalenceClass {
        EquivalenceClass(
            self.features
                .iter()
                .zip(&class.0)
                .map(|(f, &i)| if f.used { i } else { 0 })
                .collect(),
        )
    }

    /// Number of (collapsed) equivalence classes.
    pub fn class_count(&self) -> Result<u128> {
        self.features.iter().try_fold(1u128, |acc, f| {
            acc.checked_mul(f.effective_len() as u128)
                .ok_or(Error::ClassCountOverflow)
        })
    }

    /// Class count checked against an enumeration cap.
    pub fn enumerable_count(&self, cap: u64) -> Result<u64> {
        let classes = self.class_count()?;
        if classes > cap as u128 {
            return Err(Error::CapExceeded { classes, cap });
        }
        Ok(classes as u64)
    }

    /// Mixed-radix decoding of a class index; feature 0 varies slowest.
    pub fn decode_into(&self, mut index: u64, out: &mut [usize]) {
        for (slot, f) in out.iter_mut().zip(&self.features).rev() {
            let r = f.effective_len() as u64;
            *slot = (index % r) as usize;
            index /= r;
        }
    }

    pub fn decode(&self, index: u64) -> EquivalenceClass {
        let mut v = vec![0; self.features.len()];
        self.decode_into(index, &mut v);
        EquivalenceClass(v)
    }

    pub fn encode(&self, class: &EquivalenceClass) -> u64 {
        let collapsed = self.collapse(class);
        self.features
            .iter()
            .zip(&collapsed.0)
            .fold(0u64, |acc, (f, &i)| acc * f.effective_len() as u64 + i as u64)
    }

    /// Renders `feature ∈ set` for one feature.
    pub fn describe(&self, feature: usize, set: usize) -> String {
        let f = &self.features[feature];
        format!("{} ∈ {}", f.name, f.render_set(set))
    }

    pub fn describe_class(&self, class: &EquivalenceClass) -> String {
        let parts: Vec<_> = class
            .0
            .iter()
            .enumerate()
            .filter(|(i, _)| self.features[*i].used)
            .map(|(i, &s)| self.describe(i, s))
            .collect();
        format!("[{}]", parts.join(", "))
    }
}

#[derive(Debug, Clone)]
enum CompiledNode {
    Leaf { rule: u32, class: u32 },
    Split { feature: u32, mask: u32, yes: u32, no: u32 },
}

/// Forest evaluator over equivalence classes. Each split stores, per
/// partition set of its feature, whether the set satisfies the test.
#[derive(Debug, Clone)]
pub struct CompiledForest {
    trees: Vec<Vec<CompiledNode>>,
    masks: Vec<bool>,
    mask_offsets: Vec<usize>,
    num_classes: usize,
}

impl CompiledForest {
    pub fn new(forest: &Forest, partition: &DomainPartition) -> Self {
        let mut masks = Vec::new();
        let mut mask_offsets = Vec::new();
        let trees = forest
            .trees
            .iter()
            .map(|tree| {
                tree.flat()
                    .iter()
                    .map(|node| match node {
                        FlatNode::Leaf { rule } => CompiledNode::Leaf {
                            rule: *rule as u32,
                            class: tree.rules()[*rule].conclusion as u32,
                        },
                        FlatNode::Split { test, yes, no } => {
                            let feature = test.feature();
                            mask_offsets.push(masks.len());
                            masks.extend(partition.features[feature].sets.iter().map(|s| s.satisfies(test)));
                            CompiledNode::Split {
                                feature: feature as u32,
                                mask: (mask_offsets.len() - 1) as u32,
                                yes: *yes as u32,
                                no: *no as u32,
                            }
                        }
                    })
                    .collect()
            })
            .collect();
        CompiledForest {
            trees,
            masks,
            mask_offsets,
            num_classes: forest.classes.len(),
        }
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Active rule index and its conclusion for one tree.
    #[inline]
    pub fn active_rule(&self, tree: usize, class: &[usize]) -> (usize, usize) {
        let nodes = &self.trees[tree];
        let mut at = 0usize;
        loop {
            match nodes[at] {
                CompiledNode::Leaf { rule, class } => return (rule as usize, class as usize),
                CompiledNode::Split { feature, mask, yes, no } => {
                    let offset = self.mask_offsets[mask as usize];
                    at = if self.masks[offset + class[feature as usize]] {
                        yes as usize
                    } else {
                        no as usize
                    };
                }
            }
        }
    }

    /// Classifies an equivalence class; when `rules` is given, the active
    /// rule of every tree is written into it.
    pub fn evaluate(&self, class: &[usize], votes: &mut [u32], mut rules: Option<&mut [usize]>) -> Output {
        votes.iter_mut().for_each(|v| *v = 0);
        for t in 0..self.trees.len() {
            let (rule, conclusion) = self.active_rule(t, class);
            votes[conclusion] += 1;
            if let Some(rules) = rules.as_deref_mut() {
                rules[t] = rule;
            }
        }
        Output::from_votes(votes)
    }

    pub fn classify_class(&self, class: &EquivalenceClass) -> Output {
        let mut votes = vec![0; self.num_classes];
        self.evaluate(&class.0, &mut votes, None)
    }
}

/// Symbolic classification of an equivalence class.
pub fn classify_class(forest: &Forest, partition: &DomainPartition, class: &EquivalenceClass) -> Output {
    CompiledForest::new(forest, partition).classify_class(class)
}

/// Output of every (collapsed) equivalence class, indexed by
/// [`DomainPartition::encode`] order.
#[derive(Debug, Clone)]
pub struct ClassTable {
    outputs: Vec<Output>,
}

impl ClassTable {
    pub fn build(compiled: &CompiledForest, partition: &DomainPartition, cap: u64) -> Result<Self> {
        let total = partition.enumerable_count(cap)?;
        const CHUNK: u64 = 4096;
        let chunks = total.div_ceil(CHUNK);
        let outputs = (0..chunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut class = vec![0; partition.len()];
                let mut votes = vec![0; compiled.num_classes()];
                let start = c * CHUNK;
                let end = (start + CHUNK).min(total);
                (start..end)
                    .map(|i| {
                        partition.decode_into(i, &mut class);
                        compiled.evaluate(&class, &mut votes, None)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(ClassTable { outputs })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn output(&self, index: u64) -> Output {
        self.outputs[index as usize]
    }

    pub fn outputs(&self) -> &[Output] {
        &self.outputs
    }

    pub fn ambiguous(&self) -> u64 {
        self.outputs.iter().filter(|o| o.is_tie()).count() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AmbiguityCount {
    pub ambiguous: u64,
    pub total: u64,
}

impl AmbiguityCount {
    pub fn non_ambiguous(&self) -> u64 {
        self.total - self.ambiguous
    }

    pub fn ambiguous_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.ambiguous as f64 / self.total as f64
        }
    }
}

/// Exhaustive count of ambiguous equivalence classes.
pub fn count_ambiguous_exact(forest: &Forest, partition: &DomainPartition, cap: u64) -> Result<AmbiguityCount> {
    let compiled = CompiledForest::new(forest, partition);
    let table = ClassTable::build(&compiled, partition, cap)?;
    Ok(AmbiguityCount {
        ambiguous: table.ambiguous(),
        total: table.len() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::forest::{Feature, Node, Tree};

    #[test]
    fn f_med_partition() {
        let p = DomainPartition::build(&fixtures::f_med());
        let rendered: Vec<Vec<String>> = p
            .features
            .iter()
            .map(|f| f.sets.iter().map(ToString::to_string).collect())
            .collect();
        assert_eq!(rendered[0], vec!["{0}", "{1}"]);
        assert_eq!(rendered[2], vec!["{0}", "{1}"]);
        assert_eq!(rendered[3], vec!["(-inf, 35]", "(35, inf)"]);
        assert!(!p.features[2].used);
        assert_eq!(p.class_count().unwrap(), 8);
    }

    fn numeric_forest(thresholds: &[f64]) -> Forest {
        let mut node = Node::leaf(0);
        for (i, &t) in thresholds.iter().enumerate() {
            node = Node::split(
                Condition::LessEq {
                    feature: 0,
                    threshold: t,
                },
                node,
                Node::leaf(i % 2),
            );
        }
        Forest::new(
            vec![Feature::numeric("Age"), Feature::numeric("X")],
            vec!["a".into(), "b".into()],
            vec![Tree::new(node)],
        )
        .unwrap()
    }

    #[test]
    fn two_thresholds_give_three_intervals() {
        let p = DomainPartition::build(&numeric_forest(&[50.0, 35.0, 50.0]));
        let age: Vec<_> = p.features[0].sets.iter().map(ToString::to_string).collect();
        assert_eq!(age, vec!["(-inf, 35]", "(35, 50]", "(50, inf)"]);
        assert_eq!(p.features[1].sets.len(), 1);
        assert_eq!(p.features[1].sets[0].to_string(), "(-inf, inf)");
    }

    #[test]
    fn unused_numeric_feature_alone_has_one_class() {
        let f = Forest::new(
            vec![Feature::numeric("X")],
            vec!["a".into(), "b".into()],
            vec![Tree::new(Node::leaf(1))],
        )
        .unwrap();
        assert_eq!(DomainPartition::build(&f).class_count().unwrap(), 1);
    }

    #[test]
    fn two_used_binaries_give_four_classes() {
        let cond = |feature| Condition::Equals { feature, value: 1 };
        let f = Forest::new(
            vec![
                Feature::categorical("p", ["0", "1"]),
                Feature::categorical("q", ["0", "1"]),
            ],
            vec!["a".into(), "b".into()],
            vec![Tree::new(Node::split(
                cond(0),
                Node::split(cond(1), Node::leaf(0), Node::leaf(1)),
                Node::leaf(1),
            ))],
        )
        .unwrap();
        assert_eq!(DomainPartition::build(&f).class_count().unwrap(), 4);
    }

    #[test]
    fn characteristic_respects_half_open_intervals() {
        let p = DomainPartition::build(&fixtures::f_med());
        let x = |age: f64| {
            p.characteristic(&["1".into(), "1".into(), "0".into(), age.into()])
                .unwrap()
        };
        assert_eq!(x(25.0).0, vec![1, 1, 0, 0]);
        assert_eq!(x(35.0).0[3], 0);
        assert_eq!(x(35.0001).0[3], 1);
        assert!(matches!(
            p.characteristic(&["2".into(), "1".into(), "0".into(), 1.0.into()]),
            Err(Error::UnknownValue { .. })
        ));
    }

    #[test]
    fn indistinguishability_examples() {
        let p = DomainPartition::build(&fixtures::f_med());
        let x = |age: f64| vec![Value::from("1"), "0".into(), "1".into(), age.into()];
        assert!(p.indistinguishable(&x(20.0), &x(30.0)).unwrap());
        assert!(!p.indistinguishable(&x(20.0), &x(40.0)).unwrap());
        assert!(p.indistinguishable(&x(20.0), &x(20.0)).unwrap());
    }

    #[test]
    fn classify_class_examples() {
        let f = fixtures::f_med();
        let p = DomainPartition::build(&f);
        assert_eq!(
            classify_class(&f, &p, &EquivalenceClass(vec![1, 1, 0, 0])),
            Output::Class(0)
        );
        assert_eq!(classify_class(&f, &p, &EquivalenceClass(vec![1, 0, 0, 0])), Output::Tie);
        for age in 0..2 {
            assert_eq!(
                classify_class(&f, &p, &EquivalenceClass(vec![0, 0, 0, age])),
                Output::Class(1)
            );
        }
    }

    #[test]
    fn ambiguity_counts() {
        let f = fixtures::f_med();
        let p = DomainPartition::build(&f);
        assert_eq!(
            count_ambiguous_exact(&f, &p, DEFAULT_MAX_EXACT_CLASSES).unwrap(),
            AmbiguityCount { ambiguous: 4, total: 8 }
        );
        let s = fixtures::stump(3);
        let ps = DomainPartition::build(&s);
        assert_eq!(count_ambiguous_exact(&s, &ps, 10).unwrap().ambiguous, 0);
        assert!(matches!(
            count_ambiguous_exact(&f, &p, 7),
            Err(Error::CapExceeded { classes: 8, cap: 7 })
        ));
    }

    #[test]
    fn encode_decode_agree() {
        let p = DomainPartition::build(&fixtures::f_med());
        for i in 0..8 {
            assert_eq!(p.encode(&p.decode(i)), i);
        }
        assert_eq!(
            p.encode(&EquivalenceClass(vec![1, 1, 1, 1])),
            p.encode(&EquivalenceClass(vec![1, 1, 0, 1]))
        );
    }

    #[test]
    fn describe_class_skips_unused_features() {
        let p = DomainPartition::build(&fixtures::f_med());
        assert_eq!(
            p.describe_class(&EquivalenceClass(vec![1, 0, 0, 0])),
            "[A ∈ {1}, B ∈ {0}, Age ∈ (-inf, 35]]"
        );
    }
}
