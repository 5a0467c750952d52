//! Mining almost-sufficient and almost-necessary reasons.
//!
//! Stage 1 estimates every atomic query `P(C=y | X_i=s)` and `P(X_i=s | C=y)`
//! plus the class priors from one sampling run. Stage 2 estimates
//! `P(C=y | X_i=s, X_j=t)` for every pair of used features by conditional
//! forward sampling, one independent RNG stream per candidate.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ExactContext;
use crate::markov::{Event, PlausibilityModel};
use crate::sampler::{
    self, conditional_forward_sample, rng_for, Counters, Estimate, ForwardSample, QuerySpec, SamplerConfig,
};

/// Stream offsets for stage-2 candidates and minimization checks.
pub const PAIR_STREAM_BASE: u64 = 2 << 32;
pub const MINIMIZE_STREAM_BASE: u64 = 3 << 32;

/// Stage-2 candidates evaluated in parallel before their reports are emitted.
const PAIR_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinerConfig {
    pub delta: f64,
    pub lift: f64,
    /// Draws per stage-2 candidate and per sampled minimization check,
    /// rejected ones included.
    pub pair_budget: u64,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            delta: 0.9,
            lift: 1.1,
            pair_budget: 2000,
        }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must be in (0, 1], got {}",
                self.delta
            )));
        }
        if !(self.lift >= 1.0 && self.lift.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lift must be at least 1, got {}",
                self.lift
            )));
        }
        if self.pair_budget == 0 {
            return Err(Error::InvalidParameter(
                "the per-candidate budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasonKind {
    Sufficient,
    Necessary,
}

/// A mined reason over partition-set indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Reason {
    pub kind: ReasonKind,
    pub class: usize,
    /// `(feature, set)` pairs, sorted by feature.
    pub conditions: Vec<(usize, usize)>,
    pub p: f64,
    pub samples: u64,
    pub vacuous: bool,
    pub redundant: bool,
    pub minimal: bool,
}

impl Reason {
    pub fn new(kind: ReasonKind, class: usize, mut conditions: Vec<(usize, usize)>, p: f64, samples: u64) -> Self {
        conditions.sort_unstable();
        Reason {
            kind,
            class,
            conditions,
            p,
            samples,
            vacuous: false,
            redundant: false,
            minimal: false,
        }
    }

    pub fn record(&self, model: &PlausibilityModel) -> ReasonRecord {
        let p = model.partition();
        let mut flags = Vec::new();
        for (set, name) in [
            (self.vacuous, "vacuous"),
            (self.redundant, "redundant"),
            (self.minimal, "minimal"),
        ] {
            if set {
                flags.push(name.to_string());
            }
        }
        ReasonRecord {
            kind: self.kind,
            class: model.forest().classes[self.class].clone(),
            conditions: self
                .conditions
                .iter()
                .map(|&(f, s)| ConditionRecord {
                    feature: p.features[f].name.clone(),
                    set: p.features[f].render_set(s),
                })
                .collect(),
            p: self.p,
            samples: self.samples,
            flags,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub feature: String,
    pub set: String,
}

impl ConditionRecord {
    fn to_text(&self) -> String {
        let single = self
            .set
            .strip_prefix('{')
            .and_then(|s| s.strip_suffix('}'))
            .filter(|s| !s.contains(','));
        match single {
            Some(v) => format!("'{}'={v}", self.feature),
            None => format!("'{}' in {}", self.feature, self.set),
        }
    }
}

/// Serializable form of a reason, with names instead of indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonRecord {
    pub kind: ReasonKind,
    pub class: String,
    pub conditions: Vec<ConditionRecord>,
    pub p: f64,
    pub samples: u64,
    pub flags: Vec<String>,
}

impl ReasonRecord {
    /// `P( class | conditions )=p (n samples)`, or the reverse for necessary reasons.
    pub fn to_text(&self) -> String {
        let conds: Vec<String> = self.conditions.iter().map(ConditionRecord::to_text).collect();
        let conds = conds.join(", ");
        let mut out = match self.kind {
            ReasonKind::Sufficient => format!("P( {} | {} )", self.class, conds),
            ReasonKind::Necessary => format!("P( {} | {} )", conds, self.class),
        };
        let _ = write!(out, "={:.2} ({} samples)", self.p, self.samples);
        if !self.flags.is_empty() {
            let _ = write!(out, " [{}]", self.flags.join(", "));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AtomicQuery {
    pub kind: ReasonKind,
    pub class: usize,
    pub feature: usize,
    pub set: usize,
}

impl AtomicQuery {
    pub fn spec(&self, model: &PlausibilityModel) -> Result<QuerySpec> {
        let feature = Event::feature(model.partition(), self.feature, self.set)?;
        let class = Event::class(self.class);
        match self.kind {
            ReasonKind::Sufficient => QuerySpec::new(class, feature),
            ReasonKind::Necessary => QuerySpec::new(feature, class),
        }
    }
}

/// For every class and every set of every used feature: the sufficient
/// query `(C=y | X_i=s)` followed by the necessary query `(X_i=s | C=y)`.
pub fn stage1_atomic_queries(model: &PlausibilityModel) -> Vec<AtomicQuery> {
    let p = model.partition();
    let mut out = Vec::new();
    for class in 0..model.forest().classes.len() {
        for (feature, fp) in p.features.iter().enumerate().filter(|(_, fp)| fp.used) {
            for set in 0..fp.effective_len() {
                for kind in [ReasonKind::Sufficient, ReasonKind::Necessary] {
                    out.push(AtomicQuery {
                        kind,
                        class,
                        feature,
                        set,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage1Outcome {
    #[serde(skip)]
    pub atomic: Vec<AtomicQuery>,
    pub estimates: Vec<Estimate>,
    pub priors: Vec<Estimate>,
    /// Caller-supplied queries estimated alongside the atomic ones.
    pub extra: Vec<Estimate>,
    pub non_ambiguous: Estimate,
    pub counters: Option<Counters>,
}

impl Stage1Outcome {
    /// Accepted samples of the condition `X_i=s` (shared by all classes).
    fn condition_samples(&self, feature: usize, set: usize) -> u64 {
        self.atomic
            .iter()
            .zip(&self.estimates)
            .filter(|(q, _)| q.kind == ReasonKind::Sufficient && q.feature == feature && q.set == set)
            .map(|(_, e)| e.samples)
            .max()
            .unwrap_or(0)
    }
}

pub fn run_stage1_sampled(
    model: &PlausibilityModel,
    config: &SamplerConfig,
    extra: &[QuerySpec],
) -> Result<Stage1Outcome> {
    let atomic = stage1_atomic_queries(model);
    let classes = model.forest().classes.len();
    let mut specs: Vec<QuerySpec> = atomic.iter().map(|q| q.spec(model)).collect::<Result<_>>()?;
    for y in 0..classes {
        specs.push(QuerySpec::new(Event::class(y), Event::any())?);
    }
    specs.extend_from_slice(extra);
    let progress = |c: &Counters| log::debug!("stage 1: {} samples, {} ambiguous", c.iterations, c.ambiguous);
    let r = sampler::run_stage1(model, &specs, config, Some(&progress))?;
    let mut estimates = r.estimates;
    let extra = estimates.split_off(atomic.len() + classes);
    let priors = estimates.split_off(atomic.len());
    Ok(Stage1Outcome {
        atomic,
        estimates,
        priors,
        extra,
        non_ambiguous: r.non_ambiguous,
        counters: Some(r.counters),
    })
}

fn exact_estimate(ctx: &ExactContext, target: &Event, condition: &Event) -> Result<Estimate> {
    match ctx.query(target, condition) {
        Ok(p) => Ok(Estimate {
            value: Some(p.value()),
            samples: p.denominator,
            bound: None,
        }),
        Err(Error::ZeroProbability) => Ok(Estimate {
            value: None,
            samples: 0,
            bound: None,
        }),
        Err(e) => Err(e),
    }
}

/// Stage 1 with exact probabilities; `samples` holds the number of
/// non-ambiguous classes matching each condition.
pub fn run_stage1_exact(ctx: &ExactContext, extra: &[QuerySpec]) -> Result<Stage1Outcome> {
    let model = ctx.model();
    let atomic = stage1_atomic_queries(model);
    let estimates = atomic
        .iter()
        .map(|q| {
            let s = q.spec(model)?;
            exact_estimate(ctx, &s.target, &s.condition)
        })
        .collect::<Result<_>>()?;
    let priors = (0..model.forest().classes.len())
        .map(|y| exact_estimate(ctx, &Event::class(y), &Event::any()))
        .collect::<Result<_>>()?;
    let extra = extra
        .iter()
        .map(|q| exact_estimate(ctx, &q.target, &q.condition))
        .collect::<Result<_>>()?;
    let amb = ctx.ambiguity();
    Ok(Stage1Outcome {
        atomic,
        estimates,
        priors,
        extra,
        non_ambiguous: Estimate {
            value: (amb.total > 0).then(|| amb.non_ambiguous() as f64 / amb.total as f64),
            samples: amb.total,
            bound: None,
        },
        counters: None,
    })
}

/// The probability threshold alone, without the lift filter.
pub fn meets_delta(estimate: &Estimate, config: &MinerConfig) -> bool {
    estimate.value.is_some_and(|v| v >= config.delta)
}

pub fn is_almost_sufficient(estimate: &Estimate, prior: &Estimate, config: &MinerConfig) -> bool {
    match (estimate.value, prior.value) {
        (Some(v), Some(prior)) => meets_delta(estimate, config) && v > config.lift * prior,
        _ => false,
    }
}

pub fn is_almost_necessary(estimate: &Estimate, config: &MinerConfig) -> bool {
    meets_delta(estimate, config)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stage1Reports {
    pub sufficient: Vec<Reason>,
    /// Atomic almost-necessary reasons, in query order.
    pub necessary: Vec<Reason>,
}

pub fn stage1_reports(outcome: &Stage1Outcome, config: &MinerConfig) -> Stage1Reports {
    let mut out = Stage1Reports::default();
    for (q, e) in outcome.atomic.iter().zip(&outcome.estimates) {
        let (pass, list) = match q.kind {
            ReasonKind::Sufficient => (
                is_almost_sufficient(e, &outcome.priors[q.class], config),
                &mut out.sufficient,
            ),
            ReasonKind::Necessary => (is_almost_necessary(e, config), &mut out.necessary),
        };
        if pass {
            list.push(Reason::new(
                q.kind,
                q.class,
                vec![(q.feature, q.set)],
                e.value.unwrap_or(0.0),
                e.samples,
            ));
        }
    }
    out
}

/// Combines the atomic necessary reasons of one class into a single one,
/// with the smallest member probability and sample count.
pub fn merge_necessary(members: &[Reason]) -> Option<Reason> {
    let first = members.first()?;
    if members.len() == 1 {
        return Some(first.clone());
    }
    let mut conditions: Vec<(usize, usize)> = members.iter().flat_map(|r| r.conditions.iter().copied()).collect();
    conditions.dedup();
    let p = members.iter().map(|r| r.p).fold(f64::INFINITY, f64::min);
    let samples = members.iter().map(|r| r.samples).min().unwrap_or(0);
    Some(Reason::new(ReasonKind::Necessary, first.class, conditions, p, samples))
}

/// Merged necessary reason per class, in class order.
pub fn merged_necessary(necessary: &[Reason], classes: usize) -> Vec<Reason> {
    (0..classes)
        .filter_map(|y| {
            let members: Vec<Reason> = necessary.iter().filter(|r| r.class == y).cloned().collect();
            merge_necessary(&members)
        })
        .collect()
}

/// Flags pair reasons dominated by a reported singleton for the same class.
#[derive(Debug, Clone, Default)]
pub struct RedundancyFilter {
    singles: HashMap<(usize, usize, usize), f64>,
}

impl RedundancyFilter {
    pub fn new(sufficient_singles: &[Reason]) -> Self {
        let singles = sufficient_singles
            .iter()
            .filter(|r| r.kind == ReasonKind::Sufficient && r.conditions.len() == 1)
            .map(|r| ((r.class, r.conditions[0].0, r.conditions[0].1), r.p))
            .collect();
        RedundancyFilter { singles }
    }

    pub fn is_redundant(&self, r: &Reason) -> bool {
        r.kind == ReasonKind::Sufficient
            && r.conditions.len() == 2
            && r.conditions
                .iter()
                .any(|&(f, s)| self.singles.get(&(r.class, f, s)).is_some_and(|&p| p >= r.p))
    }
}

/// Drops redundant pairs, keeping everything else in order.
pub fn filter_redundant(singles: &[Reason], reports: Vec<Reason>) -> Vec<Reason> {
    let filter = RedundancyFilter::new(singles);
    reports.into_iter().filter(|r| !filter.is_redundant(r)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Stage2Summary {
    pub candidates: u64,
    pub skipped: u64,
    pub draws: u64,
    pub reported: u64,
}

/// Pair candidates `((i, s), (j, t))` with `i < j`, skipping value pairs
/// whose single conditions were never sampled in stage 1.
fn pair_candidates(
    model: &PlausibilityModel,
    stage1: &Stage1Outcome,
    summary: &mut Stage2Summary,
) -> Vec<[(usize, usize); 2]> {
    let p = model.partition();
    let used: Vec<usize> = (0..p.len()).filter(|&f| p.features[f].used).collect();
    let mut out = Vec::new();
    for (a, &i) in used.iter().enumerate() {
        for &j in &used[a + 1..] {
            for s in 0..p.features[i].effective_len() {
                for t in 0..p.features[j].effective_len() {
                    let starved = stage1.counters.is_some()
                        && (stage1.condition_samples(i, s) == 0 || stage1.condition_samples(j, t) == 0);
                    if starved {
                        log::info!(
                            "skipping pair ({}, {}): a single condition had no stage-1 samples",
                            p.describe(i, s),
                            p.describe(j, t)
                        );
                        summary.skipped += 1;
                    } else {
                        out.push([(i, s), (j, t)]);
                    }
                }
            }
        }
    }
    out
}

/// Class counts among accepted draws, and the number of draws.
fn sample_pair(
    model: &PlausibilityModel,
    pair: &[(usize, usize); 2],
    budget: u64,
    seed: u64,
    stream: u64,
) -> Result<(Vec<u64>, u64)> {
    let condition = Event::features(model.partition(), pair)?;
    let mut rng = rng_for(seed, stream);
    let mut counts = vec![0u64; model.forest().classes.len()];
    for _ in 0..budget {
        if let ForwardSample::Accepted(a) = conditional_forward_sample(model, &condition, &mut rng)? {
            counts[a.class] += 1;
        }
    }
    Ok((counts, budget))
}

/// Runs stage 2 and passes each almost-sufficient pair to `sink` in
/// candidate order. With `exact`, probabilities are computed by enumeration.
pub fn stage2_pairs(
    model: &PlausibilityModel,
    stage1: &Stage1Outcome,
    config: &MinerConfig,
    seed: u64,
    exact: Option<&ExactContext>,
    sink: &mut dyn FnMut(Reason),
) -> Result<Stage2Summary> {
    config.validate()?;
    let mut summary = Stage2Summary::default();
    let candidates = pair_candidates(model, stage1, &mut summary);
    summary.candidates = candidates.len() as u64;
    let classes = model.forest().classes.len();
    for (c, chunk) in candidates.chunks(PAIR_CHUNK).enumerate() {
        let results: Vec<(Vec<Estimate>, u64)> = chunk
            .par_iter()
            .enumerate()
            .map(|(k, pair)| -> Result<(Vec<Estimate>, u64)> {
                match exact {
                    Some(ctx) => {
                        let cond = Event::features(model.partition(), pair)?;
                        let est = (0..classes)
                            .map(|y| exact_estimate(ctx, &Event::class(y), &cond))
                            .collect::<Result<_>>()?;
                        Ok((est, 0))
                    }
                    None => {
                        let index = (c * PAIR_CHUNK + k) as u64;
                        let (counts, draws) =
                            sample_pair(model, pair, config.pair_budget, seed, PAIR_STREAM_BASE + index)?;
                        let accepted: u64 = counts.iter().sum();
                        let est = counts
                            .iter()
                            .map(|&n| Estimate::from_counts(n, accepted, None))
                            .collect();
                        Ok((est, draws))
                    }
                }
            })
            .collect::<Result<_>>()?;
        for (pair, (estimates, draws)) in chunk.iter().zip(results) {
            summary.draws += draws;
            for (y, e) in estimates.iter().enumerate() {
                if is_almost_sufficient(e, &stage1.priors[y], config) {
                    summary.reported += 1;
                    sink(Reason::new(
                        ReasonKind::Sufficient,
                        y,
                        pair.to_vec(),
                        e.value.unwrap_or(0.0),
                        e.samples,
                    ));
                }
            }
        }
    }
    Ok(summary)
}

/// How [`minimize_sufficient`] decides sufficiency of a reduced reason.
pub enum SufficiencyOracle<'a, 'm> {
    /// Fraction of all matching classes whose output is the class.
    Exact(&'a ExactContext<'m>),
    /// Same fraction estimated by conditional forward sampling; rejected
    /// (ambiguous) draws count as misses.
    Sampled {
        model: &'a PlausibilityModel,
        budget: u64,
        seed: u64,
    },
}

impl SufficiencyOracle<'_, '_> {
    fn fraction(&self, conditions: &[(usize, usize)], class: usize, step: u64) -> Result<(f64, u64)> {
        match self {
            SufficiencyOracle::Exact(ctx) => {
                let q = ctx.completion_fraction(conditions, class)?;
                Ok((if q.denominator == 0 { 0.0 } else { q.value() }, q.denominator))
            }
            SufficiencyOracle::Sampled { model, budget, seed } => {
                let condition = Event::features(model.partition(), conditions)?;
                let mut rng = rng_for(*seed, MINIMIZE_STREAM_BASE + step);
                let mut hits = 0u64;
                for _ in 0..*budget {
                    if let ForwardSample::Accepted(a) = conditional_forward_sample(model, &condition, &mut rng)? {
                        hits += u64::from(a.class == class);
                    }
                }
                Ok((hits as f64 / *budget as f64, *budget))
            }
        }
    }

    fn is_exact(&self) -> bool {
        matches!(self, SufficiencyOracle::Exact(_))
    }
}

/// Greedily drops conditions in ascending feature order while the rest
/// still forces the class with probability at least `delta`.
pub fn minimize_sufficient(oracle: &SufficiencyOracle, reason: &Reason, config: &MinerConfig) -> Result<Reason> {
    if reason.kind != ReasonKind::Sufficient {
        return Err(Error::InvalidParameter(
            "only sufficient reasons can be minimized".into(),
        ));
    }
    let mut step = 0u64;
    let mut check = |conds: &[(usize, usize)]| -> Result<(bool, f64, u64)> {
        let (p, n) = oracle.fraction(conds, reason.class, step)?;
        step += 1;
        Ok((n > 0 && p >= config.delta, p, n))
    };
    let mut current = reason.conditions.clone();
    current.sort_unstable();
    let (ok, mut p, mut n) = check(&current)?;
    if !ok {
        let mut out = reason.clone();
        out.minimal = false;
        return Ok(out);
    }
    let mut i = 0;
    while i < current.len() {
        let mut reduced = current.clone();
        reduced.remove(i);
        let (ok, rp, rn) = check(&reduced)?;
        if ok {
            current = reduced;
            p = rp;
            n = rn;
        } else {
            i += 1;
        }
    }
    let mut out = Reason::new(ReasonKind::Sufficient, reason.class, current, p, n);
    out.minimal = oracle.is_exact();
    Ok(out)
}
