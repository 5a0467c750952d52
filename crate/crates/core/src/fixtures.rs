//! Small reference forests used throughout the test-suites and examples.

use crate::forest::{Condition, Feature, Forest, Node, Tree};

/// The two-tree medical forest: symptoms `A`, `B`, `C` in {0,1}, numeric
/// `Age`, classes `[Pos, Neg]`.
///
/// Tree 1: `{A=1}->Pos`, `{A!=1, B=1}->Pos`, `{A!=1, B!=1}->Neg`.
/// Tree 2: `{B=1, Age<=35}->Pos`, `{B=1, Age>35}->Neg`, `{B!=1}->Neg`.
/// `C` is declared but never tested.
pub fn f_med() -> Forest {
    let a1 = Condition::Equals { feature: 0, value: 1 };
    let b1 = Condition::Equals { feature: 1, value: 1 };
    let young = Condition::LessEq {
        feature: 3,
        threshold: 35.0,
    };
    let (pos, neg) = (0, 1);
    let left = Node::split(a1, Node::leaf(pos), Node::split(b1, Node::leaf(pos), Node::leaf(neg)));
    let right = Node::split(
        b1,
        Node::split(young, Node::leaf(pos), Node::leaf(neg)),
        Node::leaf(neg),
    );
    Forest::new(
        vec![
            Feature::categorical("A", ["0", "1"]),
            Feature::categorical("B", ["0", "1"]),
            Feature::categorical("C", ["0", "1"]),
            Feature::numeric("Age"),
        ],
        vec!["Pos".into(), "Neg".into()],
        vec![Tree::new(left), Tree::new(right)],
    )
    .expect("fixture is valid")
}

/// A single-leaf forest over `unused` binary features that always votes `"0"`.
pub fn stump(unused: usize) -> Forest {
    Forest::new(
        (0..unused)
            .map(|i| Feature::categorical(&format!("x{}", i + 1), ["0", "1"]))
            .collect(),
        vec!["0".into(), "1".into()],
        vec![Tree::new(Node::leaf(0))],
    )
    .expect("fixture is valid")
}
