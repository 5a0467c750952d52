//! Acceptance criteria P1..P8. Runs without the libtest harness and prints
//! one PASS/FAIL line per criterion; exits non-zero if any criterion fails.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use forestbag::bag::{Argument, Label};
use forestbag::cnf::{count_ambiguous_assignments, count_sat_bruteforce, parse_dimacs, reduce_3cnf_to_forest};
use forestbag::markov::Assignment;
use forestbag::miner::{self, meets_delta, minimize_sufficient, MinerConfig, Reason, ReasonKind, SufficiencyOracle};
use forestbag::partition::DEFAULT_MAX_EXACT_CLASSES as CAP;
use forestbag::query::parse_query;
use forestbag::sampler::{ambiguity_estimate, chernoff_sample_size, rng_for, run_stage1, SamplerConfig};
use forestbag::synth::{random_3cnf, random_forest, SynthConfig};
use forestbag::{fixtures, Forest, Output, PlausibilityModel};

type Check = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Check);

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn feat(feature: usize, set: usize) -> Argument {
    Argument::Feature { feature, set }
}

fn p1() -> Check {
    let start = Instant::now();
    let m = PlausibilityModel::build(fixtures::f_med());
    let ctx = m.exact(CAP).map_err(|e| e.to_string())?;
    let amb = ctx.ambiguity();
    ensure(amb.total == 8, || format!("class_count {} != 8", amb.total))?;
    ensure(ctx.partition_function() == 4, || {
        format!("Z {} != 4", ctx.partition_function())
    })?;
    ensure(amb.ambiguous * 2 == amb.total, || {
        format!("ambiguity {}/{}", amb.ambiguous, amb.total)
    })?;
    for (q, want) in [("C=Pos | B=1, Age<=35", (2, 2)), ("A=0 | C=Neg", (2, 2))] {
        let parsed = parse_query(&m, q).map_err(|e| e.to_string())?;
        let p = ctx.query(&parsed.target, &parsed.condition).map_err(|e| e.to_string())?;
        ensure((p.numerator, p.denominator) == want, || {
            format!("P({q}) = {}/{}", p.numerator, p.denominator)
        })?;
    }
    let neg = ctx.maximal_necessary_features(1).map_err(|e| e.to_string())?;
    ensure(neg.arguments == vec![feat(0, 0), feat(1, 0)] && !neg.vacuous, || {
        format!("necessary(Neg) = {:?}", neg.arguments)
    })?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!(
        "class_count=8 Z=4 ambiguity=50% queries=1.0 in {:.2?}",
        start.elapsed()
    ))
}

/// Random forest over binary features with up to `max_classes` classes.
fn small_binary(seed: u64, max_features: usize, max_trees: usize, max_depth: usize, max_classes: usize) -> Forest {
    let mut rng = rng_for(seed, 0);
    use rand::Rng;
    let cfg = SynthConfig {
        categorical: rng.random_range(1..=max_features),
        categories: 2,
        numeric: 0,
        thresholds: 1,
        classes: rng.random_range(2..=max_classes),
        trees: rng.random_range(1..=max_trees),
        max_depth: rng.random_range(1..=max_depth),
        split_prob: 0.7,
    };
    random_forest(&mut rng, &cfg)
}

/// Faithfulness of the argumentation graph over every equivalence class.
fn check_faithful(forest: &Forest) -> Result<usize, String> {
    let m = PlausibilityModel::build(forest.clone());
    let (p, compiled) = (m.partition(), m.compiled());
    let bag = forestbag::bag::Bag::build(forest, p);
    let n = p.enumerable_count(CAP).map_err(|e| e.to_string())?;
    let args = bag.arguments();
    for i in 0..n {
        let class = p.decode(i);
        let x = p.representative(&class);
        let input = forest.resolve_input(&x).map_err(|e| e.to_string())?;
        let out = forest.classify(&input);
        ensure(compiled.classify_class(&class) == out, || {
            format!("class {class:?}: symbolic output differs")
        })?;
        let l = bag.labelling_from_input(forest, p, &x).map_err(|e| e.to_string())?;
        ensure(bag.is_bicomplete(&l), || format!("class {class:?}: not bi-complete"))?;
        ensure(bag.is_bistable(&l) == (out != Output::Tie), || {
            format!("class {class:?}: bi-stability mismatch")
        })?;
        if bag.is_bistable(&l) {
            ensure(bag.accepted_class(&l) == out.class(), || {
                format!("class {class:?}: accepted class differs")
            })?;
        }
        let ins = |pred: &dyn Fn(&Argument) -> bool| {
            args.iter()
                .enumerate()
                .filter(|(id, a)| pred(a) && l.get(*id) == Label::In)
                .count()
        };
        for f in 0..p.len() {
            let k = ins(&|a| matches!(a, Argument::Feature { feature, .. } if *feature == f));
            ensure(k == 1, || format!("class {class:?}: feature {f} has {k} in-arguments"))?;
        }
        for (t, tree) in forest.trees.iter().enumerate() {
            let active = tree.active_rule_index(&input);
            let k = ins(&|a| matches!(a, Argument::Rule { tree, .. } if *tree == t));
            let id = bag
                .id(Argument::Rule { tree: t, rule: active })
                .ok_or("missing rule argument")?;
            ensure(k == 1 && l.get(id) == Label::In, || {
                format!("class {class:?}: tree {t} in-labels wrong")
            })?;
        }
        let classes_in = ins(&|a| matches!(a, Argument::Class(_)));
        ensure(classes_in <= 1, || {
            format!("class {class:?}: {classes_in} classes accepted")
        })?;
    }
    Ok(n as usize)
}

fn p2() -> Check {
    let start = Instant::now();
    let mut classes = 0;
    // Two classes: with more, domination needs an absolute majority while the
    // forest votes by plurality (see tests/multiclass.rs).
    for seed in 0..50 {
        let forest = small_binary(1000 + seed, 5, 5, 3, 2);
        classes += check_faithful(&forest).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "50 forests, {classes} classes, 0 violations in {:.2?}",
        start.elapsed()
    ))
}

/// Enumerates every assignment of the Markov network in mixed radix.
fn for_each_assignment(
    m: &PlausibilityModel,
    mut f: impl FnMut(&Assignment) -> Result<(), String>,
) -> Result<(), String> {
    let p = m.partition();
    let radices: Vec<usize> = p
        .radices()
        .into_iter()
        .chain(m.forest().trees.iter().map(|t| t.rules().len()))
        .chain([m.forest().classes.len()])
        .collect();
    let nf = p.len();
    let nt = m.forest().trees.len();
    let mut digits = vec![0usize; radices.len()];
    loop {
        let u = Assignment {
            features: digits[..nf].to_vec(),
            trees: digits[nf..nf + nt].to_vec(),
            class: digits[nf + nt],
        };
        f(&u)?;
        let mut i = radices.len();
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < radices[i] {
                break;
            }
            digits[i] = 0;
        }
    }
}

fn p3() -> Check {
    let mut forests = vec![fixtures::f_med(), fixtures::stump(3)];
    let mut seed = 5000;
    while forests.len() < 30 {
        let f = small_binary(seed, 4, 4, 2, 2);
        seed += 1;
        let m = PlausibilityModel::build(f.clone());
        if m.assignment_count().is_ok_and(|n| n <= 1 << 12) {
            forests.push(f);
        }
    }
    let mut total = 0u64;
    for (k, forest) in forests.into_iter().enumerate() {
        let m = PlausibilityModel::build(forest);
        let bag = forestbag::bag::Bag::build(m.forest(), m.partition());
        let ctx = m.exact(CAP).map_err(|e| e.to_string())?;
        let mut z = 0u64;
        for_each_assignment(&m, |u| {
            total += 1;
            let w = m.plausibility(u);
            ensure(w <= 1, || format!("forest {k}: weight {w}"))?;
            let stable = bag.is_bistable(&bag.labelling_from_assignment(u));
            ensure((w == 1) == stable, || {
                format!("forest {k}: {u:?} weight {w}, bi-stable {stable}")
            })?;
            z += u64::from(w);
            Ok(())
        })?;
        ensure(z == ctx.partition_function(), || {
            format!("forest {k}: Z {z} != {}", ctx.partition_function())
        })?;
    }
    Ok(format!("30 forests, {total} assignments, 0 violations"))
}

fn p4() -> Check {
    let start = Instant::now();
    let m = PlausibilityModel::build(fixtures::f_med());
    let planned = chernoff_sample_size(0.5, 0.1, 0.05).map_err(|e| e.to_string())?;
    ensure(planned == 2214, || format!("M = {planned}"))?;
    let mut hits = 0;
    for seed in 0..50 {
        let cfg = SamplerConfig {
            seed,
            max_iterations: planned,
            early_stop: false,
            ..Default::default()
        };
        let r = run_stage1(&m, &[], &cfg, None).map_err(|e| e.to_string())?;
        ensure(r.counters.iterations == planned, || {
            format!("{} iterations", r.counters.iterations)
        })?;
        let amb = 1.0 - ambiguity_estimate(&r.counters).value.unwrap_or(0.0);
        hits += usize::from((0.45..=0.55).contains(&amb));
    }
    ensure(hits >= 44, || format!("only {hits}/50 runs within 0.5±10%"))?;

    let extra: Vec<_> = ["C=Pos | B=1, Age<=35", "A=0 | C=Neg"]
        .iter()
        .map(|q| parse_query(&m, q))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let cfg = SamplerConfig {
        seed: 42,
        max_iterations: 50_000,
        early_stop: false,
        ..Default::default()
    };
    let sampled = miner::run_stage1_sampled(&m, &cfg, &extra).map_err(|e| e.to_string())?;
    let ctx = m.exact(CAP).map_err(|e| e.to_string())?;
    let exact = miner::run_stage1_exact(&ctx, &extra).map_err(|e| e.to_string())?;
    let pairs = sampled
        .estimates
        .iter()
        .chain(&sampled.priors)
        .chain(&sampled.extra)
        .zip(exact.estimates.iter().chain(&exact.priors).chain(&exact.extra));
    let mut worst = 0.0f64;
    for (k, (s, e)) in pairs.enumerate() {
        match (s.value, e.value) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            (a, b) => return Err(format!("query {k}: sampled {a:?}, exact {b:?}")),
        }
    }
    ensure(worst <= 0.02, || format!("max error {worst:.4}"))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "{hits}/50 seeds within tolerance, max query error {worst:.4} in {:.2?}",
        start.elapsed()
    ))
}

fn p5() -> Check {
    let start = Instant::now();
    let mut cases = Vec::new();
    for name in ["clause.cnf", "contradiction.cnf"] {
        let text = std::fs::read_to_string(fixture(name)).map_err(|e| e.to_string())?;
        cases.push((name.to_string(), parse_dimacs(&text).map_err(|e| e.to_string())?));
    }
    let mut rng = rng_for(77, 0);
    for k in 0..50 {
        use rand::Rng;
        let n = rng.random_range(3..=15);
        let m = rng.random_range(1..=30);
        cases.push((format!("random #{k} (n={n}, m={m})"), random_3cnf(&mut rng, n, m)));
    }
    let mut seen = Vec::new();
    for (name, formula) in &cases {
        let sat = count_sat_bruteforce(formula, 22).map_err(|e| e.to_string())?;
        let forest = reduce_3cnf_to_forest(formula);
        let amb = count_ambiguous_assignments(&forest, CAP).map_err(|e| e.to_string())?;
        ensure(amb == sat as u128, || format!("{name}: ambiguous {amb} != #SAT {sat}"))?;
        seen.push(sat);
    }
    ensure(seen[0] == 7 && seen[1] == 0, || {
        format!("hand cases gave {} and {}", seen[0], seen[1])
    })?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("52 formulas match brute force in {:.2?}", start.elapsed()))
}

/// Exact stage-1 decisions at delta = 1 against the argumentation oracles.
fn check_miner_oracle(forest: Forest) -> Result<usize, String> {
    let m = PlausibilityModel::build(forest);
    let ctx = m.exact(CAP).map_err(|e| e.to_string())?;
    let outcome = miner::run_stage1_exact(&ctx, &[]).map_err(|e| e.to_string())?;
    let config = MinerConfig {
        delta: 1.0,
        ..Default::default()
    };
    for (q, e) in outcome.atomic.iter().zip(&outcome.estimates) {
        let args = [feat(q.feature, q.set)];
        let check = match q.kind {
            ReasonKind::Sufficient => ctx.is_sufficient_reason(&args, q.class),
            ReasonKind::Necessary => ctx.is_necessary_reason(&args, q.class),
        }
        .map_err(|e| e.to_string())?;
        let oracle = check.holds && !check.vacuous;
        ensure(meets_delta(e, &config) == oracle, || {
            format!("{q:?}: miner {:?}, oracle {check:?}", e.value)
        })?;
    }
    let reports = miner::stage1_reports(&outcome, &config);
    for y in 0..m.forest().classes.len() {
        let exact = ctx.maximal_necessary_features(y).map_err(|e| e.to_string())?;
        let merged: Vec<Argument> = reports
            .necessary
            .iter()
            .filter(|r| r.class == y)
            .flat_map(|r| r.conditions.iter().map(|&(f, s)| feat(f, s)))
            .collect();
        let want = if exact.vacuous { Vec::new() } else { exact.arguments };
        ensure(merged == want, || {
            format!("class {y}: merged necessary {merged:?}, oracle {want:?}")
        })?;
    }
    Ok(outcome.atomic.len())
}

fn p6() -> Check {
    let mut decisions = check_miner_oracle(fixtures::f_med()).map_err(|e| format!("F_med: {e}"))?;
    for seed in 0..20 {
        decisions +=
            check_miner_oracle(small_binary(9000 + seed, 4, 3, 3, 3)).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    let m = PlausibilityModel::build(fixtures::f_med());
    let ctx = m.exact(CAP).map_err(|e| e.to_string())?;
    let start = Reason::new(ReasonKind::Sufficient, 0, vec![(0, 1), (1, 1), (3, 0)], 1.0, 0);
    let config = MinerConfig {
        delta: 1.0,
        ..Default::default()
    };
    let min = minimize_sufficient(&SufficiencyOracle::Exact(&ctx), &start, &config).map_err(|e| e.to_string())?;
    ensure(min.conditions == vec![(1, 1), (3, 0)] && min.minimal, || {
        format!("minimized to {:?}", min.conditions)
    })?;
    Ok(format!(
        "{decisions} atomic decisions agree; minimal reason (B ∈ {{1}}, Age ∈ (-inf, 35])"
    ))
}

fn p7() -> Check {
    let text = std::fs::read_to_string(fixture("forest100.json")).map_err(|e| e.to_string())?;
    let forest = Forest::from_json(&text).map_err(|e| e.to_string())?;
    ensure(forest.trees.len() == 100, || format!("{} trees", forest.trees.len()))?;
    let m = PlausibilityModel::build(forest);
    let cfg = SamplerConfig {
        seed: 1,
        max_iterations: 10_000,
        workers: 1,
        early_stop: false,
        ..Default::default()
    };
    let start = Instant::now();
    let outcome = miner::run_stage1_sampled(&m, &cfg, &[]).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let counters = outcome.counters.ok_or("no counters")?;
    ensure(counters.iterations == 10_000, || {
        format!("{} iterations", counters.iterations)
    })?;
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!(
        "10000 samples, {} queries, 100 trees in {elapsed:.2?}",
        outcome.atomic.len() + outcome.priors.len()
    ))
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_forestbag"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(out.stdout)
}

fn p8() -> Check {
    let f_med = fixture("f_med.json");
    let big = fixture("forest100.json");
    let (f_med, big) = (f_med.to_str().unwrap(), big.to_str().unwrap());
    let runs: [&[&str]; 4] = [
        &[
            "sample",
            f_med,
            "--seed",
            "11",
            "--samples",
            "20000",
            "--workers",
            "3",
            "--format",
            "json",
            "--query",
            "C=Pos | B=1",
        ],
        &[
            "mine",
            f_med,
            "--seed",
            "11",
            "--samples",
            "20000",
            "--workers",
            "2",
            "--format",
            "json",
            "--minimize",
        ],
        &["mine", f_med, "--seed", "5", "--samples", "5000"],
        &[
            "sample",
            big,
            "--seed",
            "3",
            "--samples",
            "3000",
            "--workers",
            "2",
            "--format",
            "json",
        ],
    ];
    for args in runs {
        let a = run_cli(args)?;
        let b = run_cli(args)?;
        ensure(!a.is_empty() && a == b, || format!("{args:?}: outputs differ"))?;
    }
    Ok("sample and mine reports byte-identical across runs (4 configurations)".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("P1", "fixture oracle", p1),
        ("P2", "argumentation faithfulness", p2),
        ("P3", "Markov network / argumentation bridge", p3),
        ("P4", "sampler convergence", p4),
        ("P5", "3CNF reduction parsimony", p5),
        ("P6", "miner / oracle equivalence", p6),
        ("P7", "sampling performance", p7),
        ("P8", "determinism", p8),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        match check() {
            Ok(detail) => println!("{id} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("{id} FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
