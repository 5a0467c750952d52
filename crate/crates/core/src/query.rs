//! Text queries such as `C=Pos | B=1, Age<=35`.
//!
//! Atoms are separated by commas; the part after `|` is the condition.
//!
//! * `C=<label>` or `class=<label>` fixes the class (unless a feature has that name)
//! * `<feature>=<value>` and `<feature> in {v1, v2}` for categorical features
//! * `<feature><=<t>`, `<feature>> <t>` and `<feature> in (lo, hi]` for numeric
//!   features, where the bounds must be partition boundaries
//!
//! Feature names may be quoted with `'`.

use crate::error::{Error, Result};
use crate::forest::FeatureKind;
use crate::markov::{Event, FeatureConstraint, PlausibilityModel};
use crate::partition::PartitionSet;
use crate::sampler::QuerySpec;

fn query_err(query: &str, reason: impl Into<String>) -> Error {
    Error::Query {
        query: query.to_string(),
        reason: reason.into(),
    }
}

/// Splits on commas outside of brackets.
fn split_atoms(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in text.char_indices() {
        match ch {
            '{' | '(' | '[' => depth += 1,
            '}' | ')' | ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(text[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(text[start..].trim());
    out.into_iter().filter(|s| !s.is_empty()).collect()
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    s.strip_prefix('\'').and_then(|s| s.strip_suffix('\'')).unwrap_or(s)
}

enum Op<'a> {
    Eq(&'a str),
    Le(&'a str),
    Gt(&'a str),
    In(&'a str),
}

fn split_atom(atom: &str) -> Option<(&str, Op<'_>)> {
    if let Some(i) = atom.find("<=") {
        return Some((&atom[..i], Op::Le(atom[i + 2..].trim())));
    }
    if let Some(i) = atom.find('>') {
        return Some((&atom[..i], Op::Gt(atom[i + 1..].trim())));
    }
    if let Some(i) = atom.find('=') {
        return Some((&atom[..i], Op::Eq(atom[i + 1..].trim())));
    }
    let lower = atom.to_ascii_lowercase();
    lower.find(" in ").map(|i| (&atom[..i], Op::In(atom[i + 4..].trim())))
}

fn parse_bound(query: &str, s: &str) -> Result<Option<f64>> {
    match s.trim() {
        "-inf" | "inf" | "+inf" => Ok(None),
        t => t
            .parse::<f64>()
            .map(Some)
            .map_err(|_| query_err(query, format!("bad number `{t}`"))),
    }
}

/// Parses a conjunction of atoms. `target` disallows features the forest
/// never tests, whose distribution the model does not represent.
pub fn parse_event(model: &PlausibilityModel, text: &str, target: bool) -> Result<Event> {
    let forest = model.forest();
    let partition = model.partition();
    let mut event = Event::any();
    for atom in split_atoms(text) {
        let (name, op) = split_atom(atom).ok_or_else(|| query_err(atom, "expected `=`, `<=`, `>` or `in`"))?;
        let name = unquote(name);
        let feature = forest.feature_index(name);
        // a feature called `C` wins unless the value is a class label only
        let names_class = (name == "C" || name == "class")
            && match (feature, &op) {
                (None, _) => true,
                (Some(f), Op::Eq(v)) => {
                    let v = unquote(v);
                    forest.class_index(v).is_some() && forest.features[f].value_index(v).is_none()
                }
                _ => false,
            };
        if names_class {
            let Op::Eq(label) = op else {
                return Err(query_err(atom, "the class only supports `=`"));
            };
            let y = forest
                .class_index(unquote(label))
                .ok_or_else(|| query_err(atom, format!("unknown class `{label}`")))?;
            if event.class.is_some_and(|c| c != y) {
                return Err(query_err(atom, "conflicting class constraints"));
            }
            event.class = Some(y);
            continue;
        }
        let f = feature.ok_or_else(|| query_err(atom, format!("unknown feature `{name}`")))?;
        let fp = &partition.features[f];
        let feat = &forest.features[f];
        let mut full = vec![false; fp.sets.len()];
        match (feat.kind, op) {
            (FeatureKind::Categorical, Op::Eq(v)) => {
                let v = unquote(v);
                let i = feat
                    .value_index(v)
                    .ok_or_else(|| query_err(atom, format!("unknown value `{v}`")))?;
                full[i] = true;
            }
            (FeatureKind::Categorical, Op::In(list)) => {
                let inner = list
                    .strip_prefix('{')
                    .and_then(|s| s.strip_suffix('}'))
                    .ok_or_else(|| query_err(atom, "expected `{v1, v2, ...}`"))?;
                for v in inner.split(',').map(unquote).filter(|v| !v.is_empty()) {
                    let i = feat
                        .value_index(v)
                        .ok_or_else(|| query_err(atom, format!("unknown value `{v}`")))?;
                    full[i] = true;
                }
            }
            (FeatureKind::Numeric, op) => {
                let (lo, hi) = match op {
                    Op::Le(t) => (None, parse_bound(atom, t)?),
                    Op::Gt(t) => (parse_bound(atom, t)?, None),
                    Op::In(range) => {
                        let inner = range
                            .strip_prefix('(')
                            .and_then(|s| s.strip_suffix(']').or_else(|| s.strip_suffix(')')))
                            .ok_or_else(|| query_err(atom, "expected `(lo, hi]`"))?;
                        let (a, b) = inner
                            .split_once(',')
                            .ok_or_else(|| query_err(atom, "expected `(lo, hi]`"))?;
                        (parse_bound(atom, a)?, parse_bound(atom, b)?)
                    }
                    Op::Eq(_) => return Err(query_err(atom, "numeric features need `<=`, `>` or `in`")),
                };
                // a set is inside (lo, hi] iff both of its bounds are
                for (slot, set) in full.iter_mut().zip(&fp.sets) {
                    if let PartitionSet::Interval { lo: slo, hi: shi } = set {
                        let lo_ok = lo.is_none_or(|lo| slo.is_some_and(|s| s >= lo));
                        let hi_ok = hi.is_none_or(|hi| shi.is_some_and(|s| s <= hi));
                        *slot = lo_ok && hi_ok;
                    }
                }
                // and the union must cover exactly (lo, hi]
                let aligned = [lo, hi].iter().flatten().all(|&b| {
                    fp.sets
                        .iter()
                        .any(|s| matches!(s, PartitionSet::Interval { hi: Some(h), .. } if *h == b))
                });
                if !aligned || !full.contains(&true) {
                    return Err(query_err(atom, "bounds must coincide with the forest's thresholds"));
                }
            }
            (FeatureKind::Categorical, _) => {
                return Err(query_err(atom, "categorical features need `=` or `in`"));
            }
        }
        if !full.contains(&true) {
            return Err(query_err(atom, "the condition allows no value"));
        }
        let allowed = if fp.used {
            full
        } else if target {
            return Err(query_err(
                atom,
                format!("feature `{name}` is never tested by the forest"),
            ));
        } else {
            vec![true]
        };
        event.constrain(FeatureConstraint { feature: f, allowed });
    }
    Ok(event)
}

/// Parses `target | condition` (the condition may be omitted).
pub fn parse_query(model: &PlausibilityModel, text: &str) -> Result<QuerySpec> {
    let (target, condition) = match text.split_once('|') {
        Some((t, c)) => (t, c),
        None => (text, ""),
    };
    let target = parse_event(model, target, true).map_err(|e| wrap(text, e))?;
    let condition = parse_event(model, condition, false).map_err(|e| wrap(text, e))?;
    QuerySpec::new(target, condition).map_err(|e| match e {
        Error::Query { reason, .. } => query_err(text, reason),
        e => e,
    })
}

fn wrap(text: &str, e: Error) -> Error {
    match e {
        Error::Query { query, reason } => query_err(text, format!("in `{query}`: {reason}")),
        e => e,
    }
}
