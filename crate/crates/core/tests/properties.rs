use proptest::prelude::*;

use forestbag::bag::{Argument, Bag, Label};
use forestbag::cnf::{parse_dimacs, CnfFormula};
use forestbag::forest::FeatureKind;
use forestbag::markov::Event;
use forestbag::partition::DEFAULT_MAX_EXACT_CLASSES as CAP;
use forestbag::sampler::{rng_for, run_stage1, SamplerConfig};
use forestbag::synth::{random_3cnf, random_forest, SynthConfig};
use forestbag::{DomainPartition, EquivalenceClass, Forest, Output, PlausibilityModel, Value};

fn forest_strategy(max_classes: usize) -> impl Strategy<Value = Forest> {
    (
        any::<u64>(),
        0..4usize,
        0..3usize,
        2..=max_classes,
        1..6usize,
        1..4usize,
    )
        .prop_map(|(seed, categorical, numeric, classes, trees, depth)| {
            let cfg = SynthConfig {
                categorical: categorical.max(usize::from(numeric == 0)),
                categories: 3,
                numeric,
                thresholds: 5,
                classes,
                trees,
                max_depth: depth,
                split_prob: 0.7,
            };
            random_forest(&mut rng_for(seed, 0), &cfg)
        })
}

/// Raw values for `forest`, drawn from the unit draws in `u`.
fn input_from(forest: &Forest, u: &[f64]) -> Vec<Value> {
    forest
        .features
        .iter()
        .zip(u.iter().cycle())
        .map(|(f, &r)| match f.kind {
            FeatureKind::Categorical => Value::Category(f.values[(r * f.values.len() as f64) as usize].clone()),
            // thresholds are integers in 1..=5; half steps hit both sides
            FeatureKind::Numeric => Value::Number(((r * 16.0).floor() - 2.0) / 2.0),
        })
        .collect()
}

fn unit_draws() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, 8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn every_value_lies_in_exactly_one_set(f in forest_strategy(3), u in unit_draws()) {
        let p = DomainPartition::build(&f);
        let input = f.resolve_input(&input_from(&f, &u)).unwrap();
        for (fp, v) in p.features.iter().zip(&input.values) {
            prop_assert_eq!(fp.sets.iter().filter(|s| s.contains(v)).count(), 1);
        }
    }

    #[test]
    fn rules_are_exhaustive_and_exclusive(f in forest_strategy(3), u in unit_draws()) {
        let input = f.resolve_input(&input_from(&f, &u)).unwrap();
        for tree in &f.trees {
            let active: Vec<usize> = tree.rules().iter().enumerate()
                .filter(|(_, r)| r.applies(&input)).map(|(i, _)| i).collect();
            prop_assert_eq!(active, vec![tree.active_rule_index(&input)]);
        }
    }

    #[test]
    fn quotient_respects_the_forest(f in forest_strategy(3), u in unit_draws()) {
        let m = PlausibilityModel::build(f.clone());
        let x = input_from(&f, &u);
        let out = f.classify(&f.resolve_input(&x).unwrap());
        let class = m.partition().characteristic(&x).unwrap();
        prop_assert_eq!(m.compiled().classify_class(&class), out);
        let votes = f.votes(&f.resolve_input(&x).unwrap());
        let max = *votes.iter().max().unwrap();
        match out {
            Output::Class(y) => prop_assert!(votes.iter().enumerate().all(|(c, &v)| c == y || v < votes[y])),
            Output::Tie => prop_assert!(votes.iter().filter(|&&v| v == max).count() >= 2),
        }
    }

    #[test]
    fn representatives_and_codes_round_trip(f in forest_strategy(3), i in any::<u64>()) {
        let p = DomainPartition::build(&f);
        let n = p.enumerable_count(CAP).unwrap();
        let class = p.decode(i % n);
        prop_assert_eq!(p.encode(&class), i % n);
        let x = p.representative(&class);
        let back = p.characteristic(&x).unwrap();
        prop_assert_eq!(p.collapse(&back), class.clone());
        prop_assert!(p.indistinguishable(&x, &p.representative(&back)).unwrap());
    }

    #[test]
    fn indistinguishability_is_an_equivalence(f in forest_strategy(3), a in unit_draws(), b in unit_draws(), c in unit_draws()) {
        let p = DomainPartition::build(&f);
        let (x, y, z) = (input_from(&f, &a), input_from(&f, &b), input_from(&f, &c));
        prop_assert!(p.indistinguishable(&x, &x).unwrap());
        prop_assert_eq!(p.indistinguishable(&x, &y).unwrap(), p.indistinguishable(&y, &x).unwrap());
        if p.indistinguishable(&x, &y).unwrap() && p.indistinguishable(&y, &z).unwrap() {
            prop_assert!(p.indistinguishable(&x, &z).unwrap());
        }
        if p.indistinguishable(&x, &y).unwrap() {
            prop_assert_eq!(f.classify(&f.resolve_input(&x).unwrap()), f.classify(&f.resolve_input(&y).unwrap()));
        }
    }

    #[test]
    fn input_labellings_are_faithful(f in forest_strategy(2), u in unit_draws()) {
        let p = DomainPartition::build(&f);
        let bag = Bag::build(&f, &p);
        let x = input_from(&f, &u);
        let out = f.classify(&f.resolve_input(&x).unwrap());
        let l = bag.labelling_from_input(&f, &p, &x).unwrap();
        prop_assert!(bag.is_bicomplete(&l));
        prop_assert_eq!(bag.is_bistable(&l), !out.is_tie());
        let accepted: Vec<usize> = bag.arguments().iter().enumerate()
            .filter_map(|(id, a)| match a { Argument::Class(y) if l.get(id) == Label::In => Some(*y), _ => None })
            .collect();
        prop_assert!(accepted.len() <= 1);
        prop_assert_eq!(accepted.first().copied(), out.class());
    }

    #[test]
    fn class_posteriors_sum_to_one(f in forest_strategy(3)) {
        let m = PlausibilityModel::build(f);
        let ctx = m.exact(CAP).unwrap();
        let z = ctx.partition_function();
        let per_class: u64 = (0..m.forest().classes.len()).map(|y| ctx.count(&Event::class(y))).sum();
        prop_assert_eq!(per_class, z);
        prop_assert_eq!(ctx.count(&Event::any()), z);
        for (class, y) in ctx.bistable().take(16) {
            let u = m.complete(class.indices()).unwrap();
            prop_assert_eq!(u.class, y);
            prop_assert_eq!(m.plausibility(&u), 1);
        }
    }

    #[test]
    fn sampler_counters_add_up(f in forest_strategy(3), seed in any::<u64>(), workers in 1..4usize) {
        let m = PlausibilityModel::build(f);
        let cfg = SamplerConfig { seed, max_iterations: 3000, workers, early_stop: false, ..Default::default() };
        let r = run_stage1(&m, &[], &cfg, None).unwrap();
        prop_assert_eq!(r.counters.iterations, 3000);
        prop_assert_eq!(r.counters.ambiguous + r.counters.non_ambiguous, 3000);
        if let Some(v) = r.non_ambiguous.value {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn dimacs_round_trips(seed in any::<u64>(), n in 1..12usize, m in 1..20usize) {
        let f: CnfFormula = random_3cnf(&mut rng_for(seed, 0), n, m);
        let back = parse_dimacs(&f.to_dimacs()).unwrap();
        prop_assert_eq!(back.num_vars, f.num_vars);
        prop_assert_eq!(back.clauses, f.clauses);
    }
}

#[test]
fn collapsed_features_share_one_class() {
    let f = forestbag::fixtures::f_med();
    let p = DomainPartition::build(&f);
    let x = |c: &str| [Value::from("1"), Value::from("1"), Value::from(c), Value::Number(20.0)];
    let (a, b) = (p.characteristic(&x("0")).unwrap(), p.characteristic(&x("1")).unwrap());
    assert_ne!(a, b);
    assert_eq!(p.collapse(&a), p.collapse(&b));
    assert_eq!(p.collapse(&a), EquivalenceClass(vec![1, 1, 0, 0]));
}
