//! With three or more classes, domination in the argumentation graph needs an
//! absolute majority of trees while the forest votes by plurality. These tests
//! pin down where the two disagree; the Markov model and the exact engine
//! follow the forest.

use forestbag::bag::{Bag, Label};
use forestbag::forest::{Feature, Node, Tree};
use forestbag::partition::DEFAULT_MAX_EXACT_CLASSES as CAP;
use forestbag::{DomainPartition, Forest, Output, PlausibilityModel, Value};

fn stumps(votes: &[usize]) -> Forest {
    Forest::new(
        vec![Feature::categorical("x", ["0", "1"])],
        vec!["a".into(), "b".into(), "c".into()],
        votes.iter().map(|&y| Tree::new(Node::leaf(y))).collect(),
    )
    .unwrap()
}

fn labelling(f: &Forest) -> (Bag, forestbag::bag::Labelling, Output) {
    let p = DomainPartition::build(f);
    let bag = Bag::build(f, &p);
    let x = [Value::from("0")];
    let l = bag.labelling_from_input(f, &p, &x).unwrap();
    (bag, l, f.classify(&f.resolve_input(&x).unwrap()))
}

#[test]
fn three_way_tie_rejects_every_class() {
    let f = stumps(&[0, 1, 2]);
    let (bag, l, out) = labelling(&f);
    assert_eq!(out, Output::Tie);
    assert_eq!(&l.0[..3], &[Label::Out; 3]);
    // bi-stable, yet no class is accepted
    assert!(bag.is_bistable(&l));
    assert_eq!(bag.accepted_class(&l), None);
}

#[test]
fn plurality_without_majority_is_undecided() {
    let f = stumps(&[0, 0, 1, 2]);
    let (bag, l, out) = labelling(&f);
    assert_eq!(out, Output::Class(0));
    assert_eq!(l.get(0), Label::Und);
    assert!(bag.is_bicomplete(&l));
    assert!(!bag.is_bistable(&l));
}

#[test]
fn markov_model_follows_the_forest() {
    let m = PlausibilityModel::build(stumps(&[0, 0, 1, 2]));
    let ctx = m.exact(CAP).unwrap();
    assert_eq!(ctx.partition_function(), 1);
    let u = m.complete(&[0]).unwrap();
    assert_eq!(u.class, 0);
    assert_eq!(m.plausibility(&u), 1);

    let tie = PlausibilityModel::build(stumps(&[0, 1, 2]));
    assert_eq!(tie.exact(CAP).unwrap().partition_function(), 0);
    assert!(tie.complete(&[0]).is_none());
}

#[test]
fn two_classes_never_disagree() {
    for votes in [[0, 0, 1], [0, 1, 1], [1, 1, 1]] {
        let f = Forest::new(
            vec![Feature::categorical("x", ["0", "1"])],
            vec!["a".into(), "b".into()],
            votes.iter().map(|&y| Tree::new(Node::leaf(y))).collect(),
        )
        .unwrap();
        let (bag, l, out) = labelling(&f);
        assert!(bag.is_bistable(&l));
        assert_eq!(bag.accepted_class(&l), out.class());
    }
}
