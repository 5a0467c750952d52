//! Random forests as sets of exhaustive, exclusive rules per tree.
//!
//! A [`Forest`] is parsed from (and serialized to) the JSON interchange
//! document shared with the training-side exporter:
//!
//! ```text
//! { "features": [ {"name":"A","kind":"categorical","values":["0","1"]},
//!                 {"name":"Age","kind":"numeric"} ],
//!   "classes": ["Pos","Neg"],
//!   "trees": [ {"root": <node>} ] }
//! <node> := {"test":{"feature":<idx>,"op":"eq"|"le","value":<v>},
//!            "true":<node>,"false":<node>}
//!         | {"leaf":<class idx>}
//! ```

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Categorical,
    Numeric,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Categorical => "categorical",
            FeatureKind::Numeric => "numeric",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    /// Declared domain of a categorical feature; empty for numeric features.
    pub values: Vec<String>,
}

impl Feature {
    pub fn categorical<S: Into<String>>(name: &str, values: impl IntoIterator<Item = S>) -> Self {
        Feature {
            name: name.to_string(),
            kind: FeatureKind::Categorical,
            values: values.into_iter().map(Into::into).collect(),
        }
    }

    pub fn numeric(name: &str) -> Self {
        Feature {
            name: name.to_string(),
            kind: FeatureKind::Numeric,
            values: Vec::new(),
        }
    }

    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

/// A positive feature condition: `X_i = v` or `X_i <= v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    /// Categorical equality; `value` indexes the feature's declared values.
    Equals {
        feature: usize,
        value: usize,
    },
    LessEq {
        feature: usize,
        threshold: f64,
    },
}

impl Condition {
    pub fn feature(&self) -> usize {
        match *self {
            Condition::Equals { feature, .. } | Condition::LessEq { feature, .. } => feature,
        }
    }

    pub fn holds(&self, input: &Input) -> bool {
        match (*self, &input.values[self.feature()]) {
            (Condition::Equals { value, .. }, ResolvedValue::Category(v)) => *v == value,
            (Condition::LessEq { threshold, .. }, ResolvedValue::Number(x)) => *x <= threshold,
            // Inputs are resolved against the same forest, so kinds always agree.
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Literal {
    pub condition: Condition,
    pub positive: bool,
}

impl Literal {
    pub fn holds(&self, input: &Input) -> bool {
        self.condition.holds(input) == self.positive
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub premise: Vec<Literal>,
    pub conclusion: usize,
}

impl Rule {
    pub fn applies(&self, input: &Input) -> bool {
        self.premise.iter().all(|l| l.holds(input))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        class: usize,
    },
    Split {
        test: Condition,
        if_true: Box<Node>,
        if_false: Box<Node>,
    },
}

impl Node {
    pub fn leaf(class: usize) -> Self {
        Node::Leaf { class }
    }

    pub fn split(test: Condition, if_true: Node, if_false: Node) -> Self {
        Node::Split {
            test,
            if_true: Box::new(if_true),
            if_false: Box::new(if_false),
        }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { if_true, if_false, .. } => 1 + if_true.depth().max(if_false.depth()),
        }
    }

    fn node_count(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { if_true, if_false, .. } => 1 + if_true.node_count() + if_false.node_count(),
        }
    }
}

/// Flattened node used for traversal; leaves carry their rule index.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum FlatNode {
    Leaf { rule: usize },
    Split { test: Condition, yes: usize, no: usize },
}

/// A decision tree together with its derived rule list (one rule per leaf,
/// enumerated depth-first with the `true` branch first).
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    root: Node,
    rules: Vec<Rule>,
    flat: Vec<FlatNode>,
}

impl Tree {
    pub fn new(root: Node) -> Self {
        let mut rules = Vec::new();
        let mut flat = Vec::new();
        let mut path = Vec::new();
        flatten(&root, &mut path, &mut rules, &mut flat);
        Tree { root, rules, flat }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    pub(crate) fn flat(&self) -> &[FlatNode] {
        &self.flat
    }

    /// Index of the unique rule whose premise `input` satisfies.
    pub fn active_rule_index(&self, input: &Input) -> usize {
        let mut at = 0;
        loop {
            match &self.flat[at] {
                FlatNode::Leaf { rule } => return *rule,
                FlatNode::Split { test, yes, no } => {
                    at = if test.holds(input) { *yes } else { *no };
                }
            }
        }
    }

    pub fn active_rule(&self, input: &Input) -> &Rule {
        &self.rules[self.active_rule_index(input)]
    }
}

fn flatten(node: &Node, path: &mut Vec<Literal>, rules: &mut Vec<Rule>, flat: &mut Vec<FlatNode>) -> usize {
    let at = flat.len();
    match node {
        Node::Leaf { class } => {
            flat.push(FlatNode::Leaf { rule: rules.len() });
            rules.push(Rule {
                premise: path.clone(),
                conclusion: *class,
            });
        }
        Node::Split {
            test,
            if_true,
            if_false,
        } => {
            flat.push(FlatNode::Leaf { rule: usize::MAX });
            let branch = |positive: bool,
                          child: &Node,
                          path: &mut Vec<Literal>,
                          rules: &mut Vec<Rule>,
                          flat: &mut Vec<FlatNode>| {
                let lit = Literal {
                    condition: *test,
                    positive,
                };
                // repeated tests on one path add nothing to the premise
                let fresh = !path.contains(&lit);
                if fresh {
                    path.push(lit);
                }
                let idx = flatten(child, path, rules, flat);
                if fresh {
                    path.pop();
                }
                idx
            };
            let yes = branch(true, if_true, path, rules, flat);
            let no = branch(false, if_false, path, rules, flat);
            flat[at] = FlatNode::Split { test: *test, yes, no };
        }
    }
    at
}

/// Forest output: a class index or the tie value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Output {
    Class(usize),
    Tie,
}

impl Output {
    pub fn class(self) -> Option<usize> {
        match self {
            Output::Class(c) => Some(c),
            Output::Tie => None,
        }
    }

    pub fn is_tie(self) -> bool {
        self == Output::Tie
    }

    /// Strict-majority decision over per-class vote counts.
    pub fn from_votes(votes: &[u32]) -> Output {
        let mut best = 0;
        let mut best_votes = 0;
        let mut shared = false;
        for (class, &v) in votes.iter().enumerate() {
            if v > best_votes {
                best = class;
                best_votes = v;
                shared = false;
            } else if v == best_votes {
                shared = true;
            }
        }
        if shared {
            Output::Tie
        } else {
            Output::Class(best)
        }
    }
}

/// A raw input value before it is checked against a forest's features.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Category(String),
    Number(f64),
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Category(s.to_string())
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Number(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolvedValue {
    Category(usize),
    Number(f64),
}

/// A full assignment validated against a forest's feature list.
#[derive(Debug, Clone, PartialEq)]
pub struct Input {
    pub values: Vec<ResolvedValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub features: Vec<Feature>,
    pub classes: Vec<String>,
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Builds a forest and checks every structural invariant.
    pub fn new(features: Vec<Feature>, classes: Vec<String>, trees: Vec<Tree>) -> Result<Self> {
        let forest = Forest {
            features,
            classes,
            trees,
        };
        forest.validate()?;
        Ok(forest)
    }

    fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::InvalidForest(format!(
                "at least two classes are required, found {}",
                self.classes.len()
            )));
        }
        let mut seen = HashSet::new();
        for c in &self.classes {
            if !seen.insert(c.as_str()) {
                return Err(Error::InvalidForest(format!("duplicate class label `{c}`")));
            }
        }
        let mut names = HashSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::InvalidForest(format!("duplicate feature name `{}`", f.name)));
            }
            match f.kind {
                FeatureKind::Categorical => {
                    if f.values.is_empty() {
                        return Err(Error::InvalidForest(format!(
                            "categorical feature `{}` declares no values",
                            f.name
                        )));
                    }
                    let distinct: HashSet<_> = f.values.iter().collect();
                    if distinct.len() != f.values.len() {
                        return Err(Error::InvalidForest(format!(
                            "categorical feature `{}` declares duplicate values",
                            f.name
                        )));
                    }
                }
                FeatureKind::Numeric => {
                    if !f.values.is_empty() {
                        return Err(Error::InvalidForest(format!(
                            "numeric feature `{}` must not declare values",
                            f.name
                        )));
                    }
                }
            }
        }
        for tree in &self.trees {
            self.validate_node(tree.root())?;
        }
        Ok(())
    }

    fn validate_node(&self, node: &Node) -> Result<()> {
        match node {
            Node::Leaf { class } => {
                if *class >= self.classes.len() {
                    return Err(Error::InvalidForest(format!(
                        "leaf references class {class} but only {} classes exist",
                        self.classes.len()
                    )));
                }
                Ok(())
            }
            Node::Split {
                test,
                if_true,
                if_false,
            } => {
                let feature = self.features.get(test.feature()).ok_or(Error::UnknownFeature {
                    index: test.feature(),
                    count: self.features.len(),
                })?;
                match (*test, feature.kind) {
                    (Condition::Equals { value, .. }, FeatureKind::Categorical) => {
                        if value >= feature.values.len() {
                            return Err(Error::InvalidForest(format!(
                                "value index {value} out of range for feature `{}`",
                                feature.name
                            )));
                        }
                    }
                    (Condition::LessEq { threshold, .. }, FeatureKind::Numeric) => {
                        if !threshold.is_finite() {
                            return Err(Error::InvalidForest(format!(
                                "non-finite threshold on feature `{}`",
                                feature.name
                            )));
                        }
                    }
                    (cond, kind) => {
                        return Err(Error::OperatorMismatch {
                            op: op_name(&cond).to_string(),
                            kind: kind.as_str(),
                            feature: feature.name.clone(),
                        })
                    }
                }
                self.validate_node(if_true)?;
                self.validate_node(if_false)
            }
        }
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn rule_count(&self) -> usize {
        self.trees.iter().map(|t| t.rules().len()).sum()
    }

    /// Checks a raw value vector against the declared features.
    pub fn resolve_input(&self, values: &[Value]) -> Result<Input> {
        if values.len() != self.features.len() {
            return Err(Error::InputLength {
                got: values.len(),
                expected: self.features.len(),
            });
        }
        let values = self
            .features
            .iter()
            .zip(values)
            .map(|(f, v)| match (f.kind, v) {
                (FeatureKind::Categorical, Value::Category(s)) => f
                    .value_index(s)
                    .map(ResolvedValue::Category)
                    .ok_or_else(|| Error::UnknownValue {
                        feature: f.name.clone(),
                        value: s.clone(),
                    }),
                (FeatureKind::Categorical, Value::Number(x)) => {
                    let s = format_number(*x);
                    f.value_index(&s)
                        .map(ResolvedValue::Category)
                        .ok_or(Error::UnknownValue {
                            feature: f.name.clone(),
                            value: s,
                        })
                }
                (FeatureKind::Numeric, Value::Number(x)) if x.is_nan() => Err(Error::InvalidInput {
                    feature: f.name.clone(),
                    reason: "NaN is not a domain value".into(),
                }),
                (FeatureKind::Numeric, Value::Number(x)) => Ok(ResolvedValue::Number(*x)),
                (FeatureKind::Numeric, Value::Category(s)) => s
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| !x.is_nan())
                    .map(ResolvedValue::Number)
                    .ok_or_else(|| Error::InvalidInput {
                        feature: f.name.clone(),
                        reason: format!("`{s}` is not a number"),
                    }),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Input { values })
    }

    pub fn votes(&self, input: &Input) -> Vec<u32> {
        let mut votes = vec![0u32; self.classes.len()];
        for tree in &self.trees {
            votes[tree.active_rule(input).conclusion] += 1;
        }
        votes
    }

    pub fn classify(&self, input: &Input) -> Output {
        Output::from_votes(&self.votes(input))
    }

    /// Which features are tested anywhere in the forest.
    pub fn used_features(&self) -> Vec<bool> {
        let mut used = vec![false; self.features.len()];
        fn mark(node: &Node, used: &mut [bool]) {
            if let Node::Split {
                test,
                if_true,
                if_false,
            } = node
            {
                used[test.feature()] = true;
                mark(if_true, used);
                mark(if_false, used);
            }
        }
        for t in &self.trees {
            mark(t.root(), &mut used);
        }
        used
    }

    pub fn describe_condition(&self, cond: &Condition) -> String {
        match *cond {
            Condition::Equals { feature, value } => {
                let f = &self.features[feature];
                format!("{}={}", f.name, f.values[value])
            }
            Condition::LessEq { feature, threshold } => {
                format!("{}<={}", self.features[feature].name, format_number(threshold))
            }
        }
    }

    pub fn describe_literal(&self, lit: &Literal) -> String {
        if lit.positive {
            return self.describe_condition(&lit.condition);
        }
        match lit.condition {
            Condition::Equals { feature, value } => {
                let f = &self.features[feature];
                format!("{}!={}", f.name, f.values[value])
            }
            Condition::LessEq { feature, threshold } => {
                format!("{}>{}", self.features[feature].name, format_number(threshold))
            }
        }
    }

    pub fn describe_rule(&self, rule: &Rule) -> String {
        let premise: Vec<_> = rule.premise.iter().map(|l| self.describe_literal(l)).collect();
        format!("{{{}}} -> {}", premise.join(", "), self.classes[rule.conclusion])
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ForestDoc = serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
        doc.into_forest()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ForestDoc::from_forest(self)).expect("forest documents always serialize")
    }
}

fn op_name(cond: &Condition) -> &'static str {
    match cond {
        Condition::Equals { .. } => "eq",
        Condition::LessEq { .. } => "le",
    }
}

/// Renders a float without a trailing `.0` for integral values.
pub fn format_number(x: f64) -> String {
    if x.is_finite() && x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

// Interchange document layer.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForestDoc {
    features: Vec<FeatureDoc>,
    classes: Vec<String>,
    trees: Vec<TreeDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureDoc {
    name: String,
    kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<serde_json::Value>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDoc {
    #[serde(default)]
    root: Option<NodeDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum NodeDoc {
    Leaf {
        leaf: usize,
    },
    Split {
        test: TestDoc,
        #[serde(rename = "true")]
        if_true: Box<NodeDoc>,
        #[serde(rename = "false")]
        if_false: Box<NodeDoc>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestDoc {
    feature: usize,
    op: String,
    value: serde_json::Value,
}

fn json_scalar_to_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(match n.as_f64() {
            Some(x) => format_number(x),
            None => n.to_string(),
        }),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

impl ForestDoc {
    fn into_forest(self) -> Result<Forest> {
        let features = self
            .features
            .into_iter()
            .map(|f| {
                let values = match (f.kind, f.values) {
                    (FeatureKind::Categorical, Some(vs)) => vs
                        .iter()
                        .map(|v| {
                            json_scalar_to_string(v).ok_or_else(|| {
                                Error::Malformed(format!("feature `{}` has a non-scalar value {v}", f.name))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?,
                    (FeatureKind::Categorical, None) => {
                        return Err(Error::Malformed(format!(
                            "categorical feature `{}` is missing `values`",
                            f.name
                        )))
                    }
                    (FeatureKind::Numeric, None) => Vec::new(),
                    (FeatureKind::Numeric, Some(vs)) if vs.is_empty() => Vec::new(),
                    (FeatureKind::Numeric, Some(_)) => {
                        return Err(Error::Malformed(format!(
                            "numeric feature `{}` must not declare `values`",
                            f.name
                        )))
                    }
                };
                Ok(Feature {
                    name: f.name,
                    kind: f.kind,
                    values,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let trees = self
            .trees
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let root = t.root.ok_or(Error::EmptyTree(i))?;
                Ok(Tree::new(node_from_doc(root, &features)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Forest::new(features, self.classes, trees)
    }

    fn from_forest(forest: &Forest) -> Self {
        ForestDoc {
            features: forest
                .features
                .iter()
                .map(|f| FeatureDoc {
                    name: f.name.clone(),
                    kind: f.kind,
                    values: match f.kind {
                        FeatureKind::Categorical => {
                            Some(f.values.iter().map(|v| serde_json::Value::String(v.clone())).collect())
                        }
                        FeatureKind::Numeric => None,
                    },
                })
                .collect(),
            classes: forest.classes.clone(),
            trees: forest
                .trees
                .iter()
                .map(|t| TreeDoc {
                    root: Some(node_to_doc(t.root(), &forest.features)),
                })
                .collect(),
        }
    }
}

fn node_from_doc(doc: NodeDoc, features: &[Feature]) -> Result<Node> {
    match doc {
        NodeDoc::Leaf { leaf } => Ok(Node::leaf(leaf)),
        NodeDoc::Split {
            test,
            if_true,
            if_false,
        } => {
            let feature = features.get(test.feature).ok_or(Error::UnknownFeature {
                index: test.feature,
                count: features.len(),
            })?;
            let cond = match (test.op.as_str(), feature.kind) {
                ("eq", FeatureKind::Categorical) => {
                    let raw = json_scalar_to_string(&test.value)
                        .ok_or_else(|| Error::Malformed(format!("test value {} is not a scalar", test.value)))?;
                    let value = feature.value_index(&raw).ok_or_else(|| Error::UnknownValue {
                        feature: feature.name.clone(),
                        value: raw.clone(),
                    })?;
                    Condition::Equals {
                        feature: test.feature,
                        value,
                    }
                }
                ("le", FeatureKind::Numeric) => {
                    let threshold = test
                        .value
                        .as_f64()
                        .ok_or_else(|| Error::Malformed(format!("threshold {} is not a number", test.value)))?;
                    Condition::LessEq {
                        feature: test.feature,
                        threshold,
                    }
                }
                (op @ ("eq" | "le"), kind) => {
                    return Err(Error::OperatorMismatch {
                        op: op.to_string(),
                        kind: kind.as_str(),
                        feature: feature.name.clone(),
                    })
                }
                (op, _) => return Err(Error::Malformed(format!("unknown operator `{op}`"))),
            };
            Ok(Node::split(
                cond,
                node_from_doc(*if_true, features)?,
                node_from_doc(*if_false, features)?,
            ))
        }
    }
}

fn node_to_doc(node: &Node, features: &[Feature]) -> NodeDoc {
    match node {
        Node::Leaf { class } => NodeDoc::Leaf { leaf: *class },
        Node::Split {
            test,
            if_true,
            if_false,
        } => {
            let (op, value) = match *test {
                Condition::Equals { feature, value } => {
                    ("eq", serde_json::Value::String(features[feature].values[value].clone()))
                }
                Condition::LessEq { threshold, .. } => ("le", serde_json::json!(threshold)),
            };
            NodeDoc::Split {
                test: TestDoc {
                    feature: test.feature(),
                    op: op.to_string(),
                    value,
                },
                if_true: Box::new(node_to_doc(if_true, features)),
                if_false: Box::new(node_to_doc(if_false, features)),
            }
        }
    }
}

impl fmt::Display for Output {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Output::Class(c) => write!(f, "class {c}"),
            Output::Tie => write!(f, "tie"),
        }
    }
}
