//! Forward sampling over equivalence classes.
//!
//! Stage 1 draws classes uniformly, discards ambiguous ones and updates
//! positive/negative counters of every query whose condition holds. Work is
//! split into rounds; in each round every worker draws a fixed share from
//! its own ChaCha stream and the counters are added up, so results depend
//! only on `(seed, workers)` and never on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::markov::{Assignment, Event, PlausibilityModel};
use crate::partition::DomainPartition;

/// Draws per worker and round.
const ROUND: u64 = 1024;
/// Stream offset for per-query conditional sampling.
pub const CONDITIONAL_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Rejection,
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerConfig {
    pub seed: u64,
    pub max_iterations: u64,
    pub min_samples_per_query: u64,
    pub workers: usize,
    pub mode: SamplingMode,
    /// Relative error used to plan sample sizes.
    pub epsilon: f64,
    /// Failure probability used to plan sample sizes.
    pub failure_prob: f64,
    /// Assumed lower bound on estimated probabilities when planning.
    pub p_lower: f64,
    /// Stop before `max_iterations` once every query is saturated.
    pub early_stop: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            seed: 0,
            max_iterations: 100_000,
            min_samples_per_query: 100,
            workers: 1,
            mode: SamplingMode::Rejection,
            epsilon: 0.1,
            failure_prob: 0.05,
            p_lower: 0.5,
            early_stop: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidParameter("workers must be at least 1".into()));
        }
        chernoff_sample_size(self.p_lower, self.epsilon, self.failure_prob).map(|_| ())
    }

    pub fn planned_samples(&self) -> Result<u64> {
        chernoff_sample_size(self.p_lower, self.epsilon, self.failure_prob)
    }

    fn bound(&self) -> Option<Bound> {
        self.planned_samples().ok().map(|required| Bound {
            epsilon: self.epsilon,
            failure_prob: self.failure_prob,
            p_lower: self.p_lower,
            required,
        })
    }
}

/// `ceil(3 ln(2/delta) / (p epsilon^2))` samples guarantee relative error
/// `epsilon` with probability `1 - delta` for an event of probability `p`.
pub fn chernoff_sample_size(p_lower: f64, epsilon: f64, delta: f64) -> Result<u64> {
    if !(p_lower > 0.0 && p_lower <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "p_lower must be in (0, 1], got {p_lower}"
        )));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "failure probability must be in (0, 1), got {delta}"
        )));
    }
    Ok((3.0 * (2.0 / delta).ln() / (p_lower * epsilon * epsilon)).ceil() as u64)
}

/// A conditional query `P(target | condition)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySpec {
    pub target: Event,
    pub condition: Event,
}

impl QuerySpec {
    pub fn new(target: Event, condition: Event) -> Result<Self> {
        let overlap = target
            .features
            .iter()
            .find(|t| condition.features.iter().any(|c| c.feature == t.feature));
        if let Some(c) = overlap {
            return Err(Error::Query {
                query: format!("{target:?} | {condition:?}"),
                reason: format!("feature {} appears in both target and condition", c.feature),
            });
        }
        if target.class.is_some() && condition.class.is_some() {
            return Err(Error::Query {
                query: format!("{target:?} | {condition:?}"),
                reason: "the class variable appears in both target and condition".into(),
            });
        }
        if target.is_empty() {
            return Err(Error::Query {
                query: format!("{target:?} | {condition:?}"),
                reason: "empty target".into(),
            });
        }
        Ok(QuerySpec { target, condition })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QueryCounts {
    pub pos: u64,
    pub neg: u64,
}

impl QueryCounts {
    pub fn samples(&self) -> u64 {
        self.pos + self.neg
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub iterations: u64,
    pub ambiguous: u64,
    pub non_ambiguous: u64,
    pub queries: Vec<QueryCounts>,
    /// Symbolic forest evaluations performed.
    pub forest_evaluations: u64,
    /// Query conditions tested against completed samples.
    pub query_checks: u64,
}

impl Counters {
    pub fn new(queries: usize) -> Self {
        Counters {
            queries: vec![QueryCounts::default(); queries],
            ..Default::default()
        }
    }

    pub fn merge(&mut self, other: &Counters) {
        self.iterations += other.iterations;
        self.ambiguous += other.ambiguous;
        self.non_ambiguous += other.non_ambiguous;
        self.forest_evaluations += other.forest_evaluations;
        self.query_checks += other.query_checks;
        for (a, b) in self.queries.iter_mut().zip(&other.queries) {
            a.pos += b.pos;
            a.neg += b.neg;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bound {
    pub epsilon: f64,
    pub failure_prob: f64,
    pub p_lower: f64,
    pub required: u64,
}

/// A sampled probability. `value` is absent without samples; `bound` is
/// present once the planned sample size was reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: Option<f64>,
    pub samples: u64,
    pub bound: Option<Bound>,
}

impl Estimate {
    pub fn from_counts(pos: u64, samples: u64, plan: Option<Bound>) -> Self {
        Estimate {
            value: (samples > 0).then(|| pos as f64 / samples as f64),
            samples,
            bound: plan.filter(|b| samples >= b.required),
        }
    }
}

/// Fraction of non-ambiguous classes among the drawn ones.
pub fn ambiguity_estimate(counters: &Counters) -> Estimate {
    Estimate::from_counts(
        counters.non_ambiguous,
        counters.non_ambiguous + counters.ambiguous,
        None,
    )
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws every feature's partition index uniformly.
pub fn sample_equivalence_class<R: Rng + ?Sized>(partition: &DomainPartition, rng: &mut R) -> Vec<usize> {
    let mut out = vec![0; partition.len()];
    sample_into(partition, rng, &mut out);
    out
}

fn sample_into<R: Rng + ?Sized>(partition: &DomainPartition, rng: &mut R, out: &mut [usize]) {
    for (slot, fp) in out.iter_mut().zip(&partition.features) {
        let n = fp.effective_len();
        *slot = if n > 1 { rng.random_range(0..n) } else { 0 };
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ForwardSample {
    Accepted(Assignment),
    /// The drawn class is ambiguous; carries its feature indices.
    Rejected(Vec<usize>),
}

/// Fixes the feature variables constrained by `condition` (uniformly among
/// the allowed sets), draws the others uniformly and completes the
/// assignment deterministically.
pub fn conditional_forward_sample<R: Rng + ?Sized>(
    model: &PlausibilityModel,
    condition: &Event,
    rng: &mut R,
) -> Result<ForwardSample> {
    if condition.class.is_some() {
        return Err(Error::InvalidParameter(
            "conditional forward sampling cannot fix the class variable".into(),
        ));
    }
    let choices = allowed_choices(model.partition(), condition)?;
    let mut class = vec![0; model.partition().len()];
    Ok(draw_conditional(model, &choices, rng, &mut class))
}

/// Per feature, the sets a conditional draw may pick from.
fn allowed_choices(partition: &DomainPartition, condition: &Event) -> Result<Vec<Vec<usize>>> {
    let mut choices: Vec<Vec<usize>> = partition
        .features
        .iter()
        .map(|fp| (0..fp.effective_len()).collect())
        .collect();
    for c in &condition.features {
        let allowed: Vec<usize> = (0..c.allowed.len()).filter(|&s| c.allowed[s]).collect();
        if allowed.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "condition on feature `{}` allows no value",
                partition.features[c.feature].name
            )));
        }
        choices[c.feature] = allowed;
    }
    Ok(choices)
}

fn draw_conditional<R: Rng + ?Sized>(
    model: &PlausibilityModel,
    choices: &[Vec<usize>],
    rng: &mut R,
    class: &mut [usize],
) -> ForwardSample {
    for (slot, options) in class.iter_mut().zip(choices) {
        *slot = if options.len() > 1 {
            options[rng.random_range(0..options.len())]
        } else {
            options[0]
        };
    }
    match model.complete(class) {
        Some(a) => ForwardSample::Accepted(a),
        None => ForwardSample::Rejected(class.to_vec()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage1Result {
    /// Estimated fraction of non-ambiguous classes.
    pub non_ambiguous: Estimate,
    pub estimates: Vec<Estimate>,
    pub counters: Counters,
}

fn batch(model: &PlausibilityModel, queries: &[QuerySpec], rng: &mut ChaCha8Rng, draws: u64) -> Counters {
    let p = model.partition();
    let compiled = model.compiled();
    let mut c = Counters::new(queries.len());
    let mut class = vec![0; p.len()];
    let mut votes = vec![0; compiled.num_classes()];
    for _ in 0..draws {
        sample_into(p, rng, &mut class);
        c.iterations += 1;
        c.forest_evaluations += 1;
        match compiled.evaluate(&class, &mut votes, None).class() {
            None => c.ambiguous += 1,
            Some(y) => {
                c.non_ambiguous += 1;
                for (q, counts) in queries.iter().zip(c.queries.iter_mut()) {
                    c.query_checks += 1;
                    if q.condition.matches(&class, y) {
                        if q.target.matches(&class, y) {
                            counts.pos += 1;
                        } else {
                            counts.neg += 1;
                        }
                    }
                }
            }
        }
    }
    c
}

fn saturated(c: &Counters, config: &SamplerConfig, planned: u64) -> bool {
    config.early_stop
        && c.queries.iter().all(|q| q.samples() >= config.min_samples_per_query)
        && c.ambiguous + c.non_ambiguous >= planned
}

/// Runs the stage-1 loop. `progress` is called after every round with the
/// cumulative counters.
pub fn run_stage1(
    model: &PlausibilityModel,
    queries: &[QuerySpec],
    config: &SamplerConfig,
    progress: Option<&(dyn Fn(&Counters) + Sync)>,
) -> Result<Stage1Result> {
    config.validate()?;
    match config.mode {
        SamplingMode::Rejection => run_rejection(model, queries, config, progress),
        SamplingMode::Conditional => run_conditional(model, queries, config, progress),
    }
}

fn run_rejection(
    model: &PlausibilityModel,
    queries: &[QuerySpec],
    config: &SamplerConfig,
    progress: Option<&(dyn Fn(&Counters) + Sync)>,
) -> Result<Stage1Result> {
    let planned = config.planned_samples()?;
    let workers = config.workers;
    let mut rngs: Vec<ChaCha8Rng> = (0..workers as u64).map(|w| rng_for(config.seed, w)).collect();
    let mut total = Counters::new(queries.len());
    while total.iterations < config.max_iterations {
        let round = (config.max_iterations - total.iterations).min(ROUND * workers as u64);
        let share = |w: usize| round / workers as u64 + u64::from((w as u64) < round % workers as u64);
        let parts: Vec<Counters> = rngs
            .par_iter_mut()
            .enumerate()
            .map(|(w, rng)| batch(model, queries, rng, share(w)))
            .collect();
        for part in &parts {
            total.merge(part);
        }
        if let Some(cb) = progress {
            cb(&total);
        }
        if saturated(&total, config, planned) {
            break;
        }
    }
    let plan = config.bound();
    let mut non_ambiguous = ambiguity_estimate(&total);
    non_ambiguous.bound = plan.filter(|b| non_ambiguous.samples >= b.required);
    Ok(Stage1Result {
        non_ambiguous,
        estimates: total
            .queries
            .iter()
            .map(|q| Estimate::from_counts(q.pos, q.samples(), plan))
            .collect(),
        counters: total,
    })
}

/// Outcome of estimating one query by conditional forward sampling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalRun {
    pub estimate: Estimate,
    pub counts: QueryCounts,
    /// Draws made, including rejected ones.
    pub draws: u64,
    pub rejected: u64,
}

/// Estimates `query` by conditional forward sampling with at most `budget`
/// draws from stream `stream`. With `stop_after`, sampling ends once that
/// many draws were accepted.
pub fn estimate_conditional(
    model: &PlausibilityModel,
    query: &QuerySpec,
    budget: u64,
    seed: u64,
    stream: u64,
    stop_after: Option<u64>,
    plan: Option<Bound>,
) -> Result<ConditionalRun> {
    if query.condition.class.is_some() {
        return Err(Error::InvalidParameter(
            "conditional forward sampling cannot fix the class variable".into(),
        ));
    }
    let choices = allowed_choices(model.partition(), &query.condition)?;
    let mut rng = rng_for(seed, stream);
    let mut class = vec![0; model.partition().len()];
    let mut counts = QueryCounts::default();
    let (mut draws, mut rejected) = (0, 0);
    while draws < budget && stop_after.is_none_or(|n| counts.samples() < n) {
        draws += 1;
        match draw_conditional(model, &choices, &mut rng, &mut class) {
            ForwardSample::Rejected(_) => rejected += 1,
            ForwardSample::Accepted(a) => {
                if query.target.matches(&a.features, a.class) {
                    counts.pos += 1;
                } else {
                    counts.neg += 1;
                }
            }
        }
    }
    Ok(ConditionalRun {
        estimate: Estimate::from_counts(counts.pos, counts.samples(), plan),
        counts,
        draws,
        rejected,
    })
}

fn run_conditional(
    model: &PlausibilityModel,
    queries: &[QuerySpec],
    config: &SamplerConfig,
    progress: Option<&(dyn Fn(&Counters) + Sync)>,
) -> Result<Stage1Result> {
    let plan = config.bound();
    let stop_after = config
        .early_stop
        .then(|| config.min_samples_per_query.max(plan.map_or(0, |b| b.required)));
    let runs: Vec<ConditionalRun> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            estimate_conditional(
                model,
                q,
                config.max_iterations,
                config.seed,
                CONDITIONAL_STREAM_BASE + i as u64,
                stop_after,
                plan,
            )
        })
        .collect::<Result<_>>()?;
    let mut total = Counters::new(queries.len());
    for (slot, run) in total.queries.iter_mut().zip(&runs) {
        *slot = run.counts;
        total.iterations += run.draws;
        total.forest_evaluations += run.draws;
        total.ambiguous += run.rejected;
        total.non_ambiguous += run.draws - run.rejected;
        total.query_checks += run.draws - run.rejected;
    }
    if let Some(cb) = progress {
        cb(&total);
    }
    Ok(Stage1Result {
        // conditioned draws are not uniform over the whole domain
        non_ambiguous: Estimate::from_counts(0, 0, None),
        estimates: runs.into_iter().map(|r| r.estimate).collect(),
        counters: total,
    })
}
