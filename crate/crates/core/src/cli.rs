//! The `forestbag` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 input error, 3 refusal because an
//! exact computation exceeds `--max-exact-classes`.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};

use crate::bag::Bag;
use crate::cnf::{parse_dimacs, reduce_3cnf_to_forest};
use crate::error::Error;
use crate::exact::ExactContext;
use crate::forest::Forest;
use crate::markov::PlausibilityModel;
use crate::miner::{
    merged_necessary, minimize_sufficient, run_stage1_exact, run_stage1_sampled, stage1_reports, stage2_pairs,
    MinerConfig, Reason, ReasonRecord, RedundancyFilter, Stage1Outcome, SufficiencyOracle,
};
use crate::partition::DEFAULT_MAX_EXACT_CLASSES;
use crate::query::parse_query;
use crate::sampler::{Estimate, QuerySpec, SamplerConfig};

#[derive(Debug, Parser)]
#[command(
    name = "forestbag",
    version,
    about = "Explain random forests with argumentation and sampling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Partition, rule and argument statistics of a forest.
    Inspect {
        forest: PathBuf,
        /// Also write the argumentation graph in line format to this file.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Exact ambiguity, partition function and queries by enumeration.
    Exact {
        forest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Stage-1 sampling: ambiguity estimate and atomic reasons.
    Sample {
        forest: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Stage-2 mining of reasons over feature pairs, streamed.
    Mine {
        forest: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampling: Sampling,
        /// Draws per pair candidate, rejected ones included.
        #[arg(long, default_value_t = 2000)]
        pair_budget: u64,
        /// Greedily shorten every reported pair.
        #[arg(long)]
        minimize: bool,
        /// Report pairs dominated by a single-condition reason, flagged.
        #[arg(long)]
        keep_redundant: bool,
        /// Compute probabilities by enumeration instead of sampling.
        #[arg(long)]
        exact: bool,
    },
    /// Convert a DIMACS 3CNF formula into a forest document.
    Cnf2forest {
        dimacs: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long, default_value_t = DEFAULT_MAX_EXACT_CLASSES)]
    pub max_exact_classes: u64,
    /// Query such as `C=Pos | B=1, Age<=35`; repeatable.
    #[arg(long = "query")]
    pub queries: Vec<String>,
    /// Record wall-clock duration in the manifest.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct Sampling {
    /// Drawn from system entropy and reported when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stage-1 iterations (an upper bound with `--early-stop`).
    #[arg(long, default_value_t = 100_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 0.9)]
    pub delta: f64,
    #[arg(long, default_value_t = 1.1)]
    pub lift: f64,
    #[arg(long, default_value_t = 100)]
    pub min_samples: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Stop once every query has enough samples.
    #[arg(long)]
    pub early_stop: bool,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::CapExceeded { .. } | Error::TooManyVariables { .. } | Error::ClassCountOverflow => 3,
            Error::InvalidParameter(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        // a closed downstream pipe ends the run quietly
        let code = if e.kind() == io::ErrorKind::BrokenPipe { 0 } else { 2 };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn input_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    }
}

#[derive(Debug, Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: Json,
    inputs: Vec<InputDigest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    duration_ms: Option<u128>,
}

fn read_input(path: &Path, digests: &mut Vec<InputDigest>) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| input_error(path, e))?;
    digests.push(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    });
    String::from_utf8(bytes).map_err(|e| input_error(path, e))
}

fn load_forest(path: &Path, digests: &mut Vec<InputDigest>) -> Result<Forest, Failure> {
    let text = read_input(path, digests)?;
    Forest::from_json(&text).map_err(|e| input_error(path, e))
}

struct Run {
    command: &'static str,
    config: Json,
    inputs: Vec<InputDigest>,
    started: Instant,
    timing: bool,
}

impl Run {
    fn manifest(&mut self) -> Manifest {
        let duration = self.started.elapsed().as_millis();
        if !self.timing {
            log::info!("{} finished in {duration} ms", self.command);
        }
        Manifest {
            tool: "forestbag",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config: self.config.clone(),
            inputs: std::mem::take(&mut self.inputs),
            duration_ms: self.timing.then_some(duration),
        }
    }

    fn finish_text(&mut self, out: &mut dyn Write) -> io::Result<()> {
        let m = self.manifest();
        match m.duration_ms {
            Some(ms) => writeln!(out, "duration: {ms} ms"),
            None => Ok(()),
        }
    }
}

fn emit_json(out: &mut dyn Write, manifest: Manifest, results: Json) -> io::Result<()> {
    let doc = json!({ "manifest": manifest, "results": results });
    serde_json::to_writer_pretty(&mut *out, &doc)?;
    writeln!(out)
}

fn parse_queries(model: &PlausibilityModel, texts: &[String]) -> Result<Vec<QuerySpec>, Failure> {
    texts
        .iter()
        .map(|q| parse_query(model, q).map_err(Failure::from))
        .collect()
}

fn sampler_config(s: &Sampling) -> SamplerConfig {
    SamplerConfig {
        seed: s.seed.unwrap_or_default(),
        max_iterations: s.samples,
        min_samples_per_query: s.min_samples,
        workers: s.workers,
        early_stop: s.early_stop,
        ..SamplerConfig::default()
    }
}

/// Fills in a missing seed from system entropy and reports it.
fn resolve_seed(s: &mut Sampling) {
    if s.seed.is_none() {
        let seed: u64 = rand::random();
        eprintln!("seed: {seed}");
        s.seed = Some(seed);
    }
}

fn estimate_text(e: &Estimate) -> String {
    match e.value {
        Some(v) => format!("{v:.4} ({} samples)", e.samples),
        None => "n/a (0 samples)".to_string(),
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    let started = Instant::now();
    match cli.command {
        Command::Inspect { forest, graph, common } => {
            let mut run = Run {
                command: "inspect",
                config: json!({ "max_exact_classes": common.max_exact_classes }),
                inputs: Vec::new(),
                started,
                timing: common.timing,
            };
            let forest = load_forest(&forest, &mut run.inputs)?;
            cmd_inspect(forest, graph.as_deref(), &common, &mut run, out)
        }
        Command::Exact { forest, common } => {
            let mut run = Run {
                command: "exact",
                config: json!({ "max_exact_classes": common.max_exact_classes, "queries": common.queries }),
                inputs: Vec::new(),
                started,
                timing: common.timing,
            };
            let forest = load_forest(&forest, &mut run.inputs)?;
            cmd_exact(forest, &common, &mut run, out)
        }
        Command::Sample {
            forest,
            common,
            mut sampling,
        } => {
            resolve_seed(&mut sampling);
            let mut run = Run {
                command: "sample",
                config: sampling_echo(&sampling, &common, None),
                inputs: Vec::new(),
                started,
                timing: common.timing,
            };
            let forest = load_forest(&forest, &mut run.inputs)?;
            cmd_sample(forest, &common, &sampling, &mut run, out)
        }
        Command::Mine {
            forest,
            common,
            mut sampling,
            pair_budget,
            minimize,
            keep_redundant,
            exact,
        } => {
            resolve_seed(&mut sampling);
            let extra = json!({
                "pair_budget": pair_budget,
                "minimize": minimize,
                "keep_redundant": keep_redundant,
                "exact": exact,
            });
            let mut run = Run {
                command: "mine",
                config: sampling_echo(&sampling, &common, Some(extra)),
                inputs: Vec::new(),
                started,
                timing: common.timing,
            };
            let forest = load_forest(&forest, &mut run.inputs)?;
            let opts = MineOptions {
                pair_budget,
                minimize,
                keep_redundant,
                exact,
            };
            cmd_mine(forest, &common, &sampling, &opts, &mut run, out)
        }
        Command::Cnf2forest {
            dimacs,
            out: target,
            common,
        } => {
            let mut run = Run {
                command: "cnf2forest",
                config: json!({}),
                inputs: Vec::new(),
                started,
                timing: common.timing,
            };
            cmd_cnf2forest(&dimacs, &target, &common, &mut run, out)
        }
    }
}

fn sampling_echo(s: &Sampling, c: &Common, extra: Option<Json>) -> Json {
    let mut v = json!({
        "seed": s.seed,
        "samples": s.samples,
        "delta": s.delta,
        "lift": s.lift,
        "min_samples": s.min_samples,
        "workers": s.workers,
        "early_stop": s.early_stop,
        "max_exact_classes": c.max_exact_classes,
        "queries": c.queries,
    });
    if let (Some(Json::Object(extra)), Json::Object(map)) = (extra, &mut v) {
        map.extend(extra);
    }
    v
}

fn cmd_inspect(
    forest: Forest,
    graph: Option<&Path>,
    common: &Common,
    run: &mut Run,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let model = PlausibilityModel::build(forest);
    let (f, p) = (model.forest(), model.partition());
    let bag = Bag::build(f, p);
    if let Some(path) = graph {
        std::fs::write(path, bag.to_graph_text(f, p))?;
    }
    let count = |pred: fn(&crate::bag::Argument) -> bool| bag.arguments().iter().filter(|a| pred(a)).count();
    let features: Vec<Json> = p
        .features
        .iter()
        .map(|fp| {
            json!({
                "name": fp.name,
                "kind": fp.kind.as_str(),
                "used": fp.used,
                "sets": fp.sets.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                "effective_sets": fp.effective_len(),
            })
        })
        .collect();
    let classes = p.class_count()?;
    let results = json!({
        "classes": f.classes,
        "features": features,
        "trees": f.trees.len(),
        "rules": f.rule_count(),
        "max_depth": f.trees.iter().map(|t| t.depth()).max().unwrap_or(0),
        // beyond 64 bits the count is given as a decimal string
        "equivalence_classes": u64::try_from(classes).map_or_else(|_| Json::from(classes.to_string()), Json::from),
        "bag": {
            "arguments": bag.len(),
            "class_arguments": count(|a| matches!(a, crate::bag::Argument::Class(_))),
            "rule_arguments": count(|a| matches!(a, crate::bag::Argument::Rule { .. })),
            "feature_arguments": count(|a| matches!(a, crate::bag::Argument::Feature { .. })),
            "attacks": bag.attacks().len(),
            "supports": bag.supports().len(),
        },
    });
    match common.format {
        Format::Json => emit_json(out, run.manifest(), results)?,
        Format::Text => {
            writeln!(out, "classes: {}", f.classes.join(", "))?;
            writeln!(out, "trees: {}, rules: {}", f.trees.len(), f.rule_count())?;
            for fp in &p.features {
                let sets: Vec<String> = (0..fp.effective_len()).map(|s| fp.render_set(s)).collect();
                writeln!(
                    out,
                    "feature {} ({}): {} sets {}",
                    fp.name,
                    fp.kind.as_str(),
                    sets.len(),
                    sets.join(" ")
                )?;
            }
            writeln!(out, "equivalence classes: {classes}")?;
            writeln!(
                out,
                "bag: {} arguments, {} attacks, {} supports",
                bag.len(),
                bag.attacks().len(),
                bag.supports().len()
            )?;
            run.finish_text(out)?;
        }
    }
    Ok(())
}

fn cmd_exact(forest: Forest, common: &Common, run: &mut Run, out: &mut dyn Write) -> Result<(), Failure> {
    let model = PlausibilityModel::build(forest);
    let queries = parse_queries(&model, &common.queries)?;
    let ctx = ExactContext::new(&model, common.max_exact_classes)?;
    let amb = ctx.ambiguity();
    let answers: Vec<Json> = common
        .queries
        .iter()
        .zip(&queries)
        .map(|(text, q)| match ctx.query(&q.target, &q.condition) {
            Ok(p) => Ok(json!({
                "query": text,
                "p": p.value(),
                "numerator": p.numerator,
                "denominator": p.denominator,
            })),
            Err(Error::ZeroProbability) => Ok(json!({ "query": text, "p": null, "numerator": 0, "denominator": 0 })),
            Err(e) => Err(Failure::from(e)),
        })
        .collect::<Result<_, _>>()?;
    let results = json!({
        "equivalence_classes": amb.total,
        "partition_function": ctx.partition_function(),
        "ambiguous": amb.ambiguous,
        "ambiguous_fraction": amb.ambiguous_fraction(),
        "queries": answers,
    });
    match common.format {
        Format::Json => emit_json(out, run.manifest(), results)?,
        Format::Text => {
            writeln!(out, "equivalence classes: {}", amb.total)?;
            writeln!(out, "Z (non-ambiguous classes): {}", ctx.partition_function())?;
            writeln!(
                out,
                "ambiguous: {} ({:.2}%)",
                amb.ambiguous,
                100.0 * amb.ambiguous_fraction()
            )?;
            for a in &answers {
                match a["p"].as_f64() {
                    Some(p) => writeln!(
                        out,
                        "P( {} )={p:.4} ({}/{})",
                        a["query"].as_str().unwrap_or(""),
                        a["numerator"],
                        a["denominator"]
                    )?,
                    None => writeln!(
                        out,
                        "P( {} ) undefined: no non-ambiguous support",
                        a["query"].as_str().unwrap_or("")
                    )?,
                }
            }
            run.finish_text(out)?;
        }
    }
    Ok(())
}

fn miner_config(s: &Sampling, pair_budget: u64) -> Result<MinerConfig, Failure> {
    let c = MinerConfig {
        delta: s.delta,
        lift: s.lift,
        pair_budget,
    };
    c.validate()?;
    Ok(c)
}

fn stage1(model: &PlausibilityModel, s: &Sampling, queries: &[QuerySpec]) -> Result<Stage1Outcome, Failure> {
    Ok(run_stage1_sampled(model, &sampler_config(s), queries)?)
}

fn cmd_sample(
    forest: Forest,
    common: &Common,
    sampling: &Sampling,
    run: &mut Run,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let model = PlausibilityModel::build(forest);
    let config = miner_config(sampling, 1)?;
    let queries = parse_queries(&model, &common.queries)?;
    let s1 = stage1(&model, sampling, &queries)?;
    let reports = stage1_reports(&s1, &config);
    let merged = merged_necessary(&reports.necessary, model.forest().classes.len());
    let records = |rs: &[Reason]| rs.iter().map(|r| r.record(&model)).collect::<Vec<ReasonRecord>>();
    let sufficient = records(&reports.sufficient);
    let necessary = records(&merged);
    let priors: Vec<Json> = model
        .forest()
        .classes
        .iter()
        .zip(&s1.priors)
        .map(|(c, e)| json!({ "class": c, "estimate": e }))
        .collect();
    let answers: Vec<Json> = common
        .queries
        .iter()
        .zip(&s1.extra)
        .map(|(q, e)| json!({ "query": q, "estimate": e }))
        .collect();
    let results = json!({
        "non_ambiguous": s1.non_ambiguous,
        "counters": s1.counters,
        "priors": priors,
        "sufficient": sufficient,
        "necessary": necessary,
        "queries": answers,
    });
    match common.format {
        Format::Json => emit_json(out, run.manifest(), results)?,
        Format::Text => {
            let na = &s1.non_ambiguous;
            writeln!(
                out,
                "non-ambiguous: {:.2}% ({} samples)",
                100.0 * na.value.unwrap_or(0.0),
                na.samples
            )?;
            for (c, e) in model.forest().classes.iter().zip(&s1.priors) {
                writeln!(out, "prior P( {c} )={}", estimate_text(e))?;
            }
            writeln!(out, "almost sufficient:")?;
            for r in &sufficient {
                writeln!(out, "  {}", r.to_text())?;
            }
            writeln!(out, "almost necessary:")?;
            for r in &necessary {
                writeln!(out, "  {}", r.to_text())?;
            }
            for (q, e) in common.queries.iter().zip(&s1.extra) {
                writeln!(out, "P( {q} )={}", estimate_text(e))?;
            }
            run.finish_text(out)?;
        }
    }
    Ok(())
}

struct MineOptions {
    pair_budget: u64,
    minimize: bool,
    keep_redundant: bool,
    exact: bool,
}

fn cmd_mine(
    forest: Forest,
    common: &Common,
    sampling: &Sampling,
    opts: &MineOptions,
    run: &mut Run,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let model = PlausibilityModel::build(forest);
    let config = miner_config(sampling, opts.pair_budget)?;
    let seed = sampling.seed.unwrap_or_default();
    let ctx = if opts.exact {
        Some(ExactContext::new(&model, common.max_exact_classes)?)
    } else if opts.minimize {
        // exact minimization when affordable
        ExactContext::new(&model, common.max_exact_classes).ok()
    } else {
        None
    };
    let s1 = match (&ctx, opts.exact) {
        (Some(ctx), true) => run_stage1_exact(ctx, &[])?,
        _ => stage1(&model, sampling, &[])?,
    };
    let singles = stage1_reports(&s1, &config).sufficient;
    let filter = RedundancyFilter::new(&singles);
    let oracle = match &ctx {
        Some(ctx) => SufficiencyOracle::Exact(ctx),
        None => SufficiencyOracle::Sampled {
            model: &model,
            budget: opts.pair_budget,
            seed,
        },
    };

    if common.format == Format::Json {
        serde_json::to_writer(&mut *out, &json!({ "manifest": run.manifest() })).map_err(Error::from)?;
        writeln!(out)?;
    } else {
        writeln!(
            out,
            "non-ambiguous: {:.2}% ({} samples)",
            100.0 * s1.non_ambiguous.value.unwrap_or(0.0),
            s1.non_ambiguous.samples
        )?;
    }
    out.flush()?;

    let mut io_error: Option<io::Error> = None;
    let mut dropped = 0u64;
    let mut min_error: Option<Error> = None;
    let exact_pairs = if opts.exact { ctx.as_ref() } else { None };
    let summary = stage2_pairs(&model, &s1, &config, seed, exact_pairs, &mut |mut r: Reason| {
        if io_error.is_some() || min_error.is_some() {
            return;
        }
        if filter.is_redundant(&r) {
            if !opts.keep_redundant {
                dropped += 1;
                return;
            }
            r.redundant = true;
        }
        if opts.minimize {
            match minimize_sufficient(&oracle, &r, &config) {
                Ok(m) => {
                    let redundant = r.redundant;
                    r = m;
                    r.redundant = redundant;
                }
                Err(e) => {
                    min_error = Some(e);
                    return;
                }
            }
        }
        let record = r.record(&model);
        let written = match common.format {
            Format::Json => serde_json::to_writer(&mut *out, &record)
                .map_err(io::Error::from)
                .and_then(|_| writeln!(out)),
            Format::Text => writeln!(out, "{}", record.to_text()),
        };
        if let Err(e) = written.and_then(|_| out.flush()) {
            io_error = Some(e);
        }
    })?;
    if let Some(e) = min_error {
        return Err(e.into());
    }
    if let Some(e) = io_error {
        return Err(e.into());
    }
    let summary = json!({
        "non_ambiguous": s1.non_ambiguous,
        "stage1_singles": singles.len(),
        "candidates": summary.candidates,
        "skipped": summary.skipped,
        "draws": summary.draws,
        "reported": summary.reported - dropped,
        "redundant_dropped": dropped,
    });
    match common.format {
        Format::Json => {
            serde_json::to_writer(&mut *out, &json!({ "summary": summary })).map_err(Error::from)?;
            writeln!(out)?;
        }
        Format::Text => writeln!(
            out,
            "{} candidates, {} skipped, {} reported, {} redundant dropped",
            summary["candidates"], summary["skipped"], summary["reported"], dropped
        )?,
    }
    Ok(())
}

fn cmd_cnf2forest(
    dimacs: &Path,
    target: &Path,
    common: &Common,
    run: &mut Run,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let text = read_input(dimacs, &mut run.inputs)?;
    let formula = parse_dimacs(&text).map_err(|e| input_error(dimacs, e))?;
    let forest = reduce_3cnf_to_forest(&formula);
    std::fs::write(target, forest.to_json())?;
    let max_leaves = forest.trees.iter().map(|t| t.rules().len()).max().unwrap_or(0);
    let nodes: usize = forest.trees.iter().map(|t| t.node_count()).sum();
    let results = json!({
        "variables": formula.num_vars,
        "clauses": formula.clauses.len(),
        "padded_clauses": formula.padded,
        "trees": forest.trees.len(),
        "nodes": nodes,
        "max_leaves": max_leaves,
        "b4l": max_leaves <= 4,
        "output": target.display().to_string(),
    });
    match common.format {
        Format::Json => emit_json(out, run.manifest(), results)?,
        Format::Text => {
            writeln!(
                out,
                "{} variables, {} clauses ({} padded)",
                formula.num_vars,
                formula.clauses.len(),
                formula.padded.len()
            )?;
            writeln!(
                out,
                "{} trees, {nodes} nodes, at most {max_leaves} leaves per tree",
                forest.trees.len()
            )?;
            writeln!(out, "wrote {}", target.display())?;
            run.finish_text(out)?;
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(f) if f.code == 0 => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
