//! Bipolar argumentation graph explaining a forest.
//!
//! Arguments are numbered class arguments first, then rule arguments tree by
//! tree, then feature arguments feature by feature over the effective
//! partition sets.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::forest::{Forest, Value};
use crate::markov::Assignment;
use crate::partition::{CompiledForest, DomainPartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Argument {
    Class(usize),
    Rule { tree: usize, rule: usize },
    Feature { feature: usize, set: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    In,
    Out,
    Und,
}

/// A total labelling, indexed by argument id.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Labelling(pub Vec<Label>);

impl Labelling {
    pub fn get(&self, id: usize) -> Label {
        self.0[id]
    }
}

#[derive(Debug, Clone)]
pub struct Bag {
    arguments: Vec<Argument>,
    attacks: Vec<(usize, usize)>,
    supports: Vec<(usize, usize)>,
    attackers: Vec<Vec<usize>>,
    supporters: Vec<Vec<usize>>,
    num_classes: usize,
    rule_base: Vec<usize>,
    feature_base: Vec<usize>,
}

impl Bag {
    /// Builds the explanation graph of `forest` over `partition`.
    pub fn build(forest: &Forest, partition: &DomainPartition) -> Self {
        let mut arguments: Vec<Argument> = (0..forest.classes.len()).map(Argument::Class).collect();
        let mut rule_base = Vec::with_capacity(forest.trees.len());
        for (tree, t) in forest.trees.iter().enumerate() {
            rule_base.push(arguments.len());
            arguments.extend((0..t.rules().len()).map(|rule| Argument::Rule { tree, rule }));
        }
        let mut feature_base = Vec::with_capacity(partition.len());
        for (feature, fp) in partition.features.iter().enumerate() {
            feature_base.push(arguments.len());
            arguments.extend((0..fp.effective_len()).map(|set| Argument::Feature { feature, set }));
        }

        let mut attacks = Vec::new();
        let mut supports = Vec::new();
        // rule arguments against class arguments
        for (tree, t) in forest.trees.iter().enumerate() {
            for (r, rule) in t.rules().iter().enumerate() {
                let id = rule_base[tree] + r;
                for y in 0..forest.classes.len() {
                    if y == rule.conclusion {
                        supports.push((id, y));
                    } else {
                        attacks.push((id, y));
                    }
                }
            }
        }
        // feature arguments against rule arguments with an inconsistent literal
        for (feature, fp) in partition.features.iter().enumerate() {
            for set in 0..fp.effective_len() {
                let id = feature_base[feature] + set;
                for (tree, t) in forest.trees.iter().enumerate() {
                    for (r, rule) in t.rules().iter().enumerate() {
                        let clash = rule.premise.iter().any(|l| {
                            l.condition.feature() == feature && fp.sets[set].satisfies(&l.condition) != l.positive
                        });
                        if clash {
                            attacks.push((id, rule_base[tree] + r));
                        }
                    }
                }
            }
        }
        // feature arguments of the same feature attack each other
        for (feature, fp) in partition.features.iter().enumerate() {
            let base = feature_base[feature];
            let n = fp.effective_len();
            for a in 0..n {
                for b in 0..n {
                    if a != b {
                        attacks.push((base + a, base + b));
                    }
                }
            }
        }
        let mut bag = Bag::from_parts(arguments, attacks, supports);
        bag.num_classes = forest.classes.len();
        bag.rule_base = rule_base;
        bag.feature_base = feature_base;
        bag
    }

    /// A graph with arbitrary edges. Ids index `arguments`; edges are sorted
    /// and deduplicated.
    pub fn from_parts(
        arguments: Vec<Argument>,
        mut attacks: Vec<(usize, usize)>,
        mut supports: Vec<(usize, usize)>,
    ) -> Self {
        attacks.sort_unstable();
        attacks.dedup();
        supports.sort_unstable();
        supports.dedup();
        let mut attackers = vec![Vec::new(); arguments.len()];
        let mut supporters = vec![Vec::new(); arguments.len()];
        for &(a, b) in &attacks {
            attackers[b].push(a);
        }
        for &(a, b) in &supports {
            supporters[b].push(a);
        }
        let num_classes = arguments.iter().filter(|a| matches!(a, Argument::Class(_))).count();
        Bag {
            arguments,
            attacks,
            supports,
            attackers,
            supporters,
            num_classes,
            rule_base: Vec::new(),
            feature_base: Vec::new(),
        }
    }

    pub fn arguments(&self) -> &[Argument] {
        &self.arguments
    }

    pub fn len(&self) -> usize {
        self.arguments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arguments.is_empty()
    }

    pub fn attacks(&self) -> &[(usize, usize)] {
        &self.attacks
    }

    pub fn supports(&self) -> &[(usize, usize)] {
        &self.supports
    }

    pub fn attackers(&self, id: usize) -> &[usize] {
        &self.attackers[id]
    }

    pub fn supporters(&self, id: usize) -> &[usize] {
        &self.supporters[id]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Id of an argument of a graph built by [`Bag::build`].
    pub fn id(&self, arg: Argument) -> Option<usize> {
        let id = match arg {
            Argument::Class(y) => y,
            Argument::Rule { tree, rule } => self.rule_base.get(tree)? + rule,
            Argument::Feature { feature, set } => self.feature_base.get(feature)? + set,
        };
        (self.arguments.get(id) == Some(&arg)).then_some(id)
    }

    pub fn attackers_dominate(&self, l: &Labelling, id: usize) -> bool {
        let strong = self.attackers[id].iter().filter(|&&b| l.get(b) == Label::In).count();
        let weak = self.supporters[id].iter().filter(|&&b| l.get(b) != Label::Out).count();
        strong > weak
    }

    pub fn supporters_dominate(&self, l: &Labelling, id: usize) -> bool {
        let strong = self.supporters[id].iter().filter(|&&b| l.get(b) == Label::In).count();
        let weak = self.attackers[id].iter().filter(|&&b| l.get(b) != Label::Out).count();
        strong > weak
    }

    fn all_attackers_out(&self, l: &Labelling, id: usize) -> bool {
        self.attackers[id].iter().all(|&b| l.get(b) == Label::Out)
    }

    pub fn is_bicomplete(&self, l: &Labelling) -> bool {
        l.0.len() == self.len()
            && (0..self.len()).all(|id| {
                let accept = self.all_attackers_out(l, id) || self.supporters_dominate(l, id);
                let reject = self.attackers_dominate(l, id);
                (l.get(id) == Label::In) == accept && (l.get(id) == Label::Out) == reject
            })
    }

    pub fn is_bistable(&self, l: &Labelling) -> bool {
        !l.0.contains(&Label::Und) && self.is_bicomplete(l)
    }

    /// Labels class arguments by domination given fixed feature and rule labels.
    fn label_classes(&self, labels: &mut Labelling) {
        for y in 0..self.num_classes {
            labels.0[y] = if self.supporters_dominate(labels, y) {
                Label::In
            } else if self.attackers_dominate(labels, y) {
                Label::Out
            } else {
                Label::Und
            };
        }
    }

    fn base_labelling(&self, sets: &[usize], rules: &[usize]) -> Labelling {
        let mut l = Labelling(vec![Label::Out; self.len()]);
        for (feature, &set) in sets.iter().enumerate() {
            l.0[self.feature_base[feature] + set] = Label::In;
        }
        for (tree, &rule) in rules.iter().enumerate() {
            l.0[self.rule_base[tree] + rule] = Label::In;
        }
        l
    }

    /// The labelling induced by an input: its partition sets and active rules
    /// are in, class arguments follow domination.
    pub fn labelling_from_input(&self, forest: &Forest, partition: &DomainPartition, x: &[Value]) -> Result<Labelling> {
        let input = forest.resolve_input(x)?;
        let class = partition.collapse(&partition.class_of(&input));
        let rules: Vec<usize> = forest.trees.iter().map(|t| t.active_rule_index(&input)).collect();
        let mut l = self.base_labelling(&class.0, &rules);
        self.label_classes(&mut l);
        Ok(l)
    }

    /// Same as [`Bag::labelling_from_input`], for a (collapsed) equivalence class.
    pub fn labelling_for_class(&self, compiled: &CompiledForest, class: &[usize]) -> Labelling {
        let rules: Vec<usize> = (0..compiled.num_trees())
            .map(|t| compiled.active_rule(t, class).0)
            .collect();
        let mut l = self.base_labelling(class, &rules);
        self.label_classes(&mut l);
        l
    }

    /// The labelling read off a full assignment of the Markov network.
    pub fn labelling_from_assignment(&self, u: &Assignment) -> Labelling {
        let mut l = self.base_labelling(&u.features, &u.trees);
        l.0[u.class] = Label::In;
        l
    }

    /// The accepted class argument, if exactly one is in.
    pub fn accepted_class(&self, l: &Labelling) -> Option<usize> {
        let mut it = (0..self.num_classes).filter(|&y| l.get(y) == Label::In);
        match (it.next(), it.next()) {
            (Some(y), None) => Some(y),
            _ => None,
        }
    }

    /// Line-oriented description: `arg`, then `att`, then `sup` lines, by id.
    pub fn to_graph_text(&self, forest: &Forest, partition: &DomainPartition) -> String {
        let mut out = String::new();
        for (id, arg) in self.arguments.iter().enumerate() {
            let (kind, detail) = match *arg {
                Argument::Class(y) => ("class", forest.classes[y].clone()),
                Argument::Rule { tree, rule } => (
                    "rule",
                    format!(
                        "T{tree}.r{rule} {}",
                        forest.describe_rule(&forest.trees[tree].rules()[rule])
                    ),
                ),
                Argument::Feature { feature, set } => ("feature", partition.describe(feature, set)),
            };
            let _ = writeln!(out, "arg {id} {kind} {detail}");
        }
        for (a, b) in &self.attacks {
            let _ = writeln!(out, "att {a} {b}");
        }
        for (a, b) in &self.supports {
            let _ = writeln!(out, "sup {a} {b}");
        }
        out
    }
}

/// Rejects reasons containing anything but feature arguments and returns
/// their `(feature, set)` pairs.
pub fn feature_pairs(args: &[Argument]) -> Result<Vec<(usize, usize)>> {
    args.iter()
        .map(|a| match *a {
            Argument::Feature { feature, set } => Ok((feature, set)),
            other => Err(Error::NonFeatureReason(format!("{other:?}"))),
        })
        .collect()
}
