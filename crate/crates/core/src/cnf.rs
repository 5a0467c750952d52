//! 3CNF formulas as forests whose ambiguous inputs are exactly the
//! satisfying assignments.
//!
//! Every clause becomes a tree of depth at most 3 that votes `1` iff the
//! clause is satisfied, and every clause adds a stump voting `0`. An input
//! ties iff all clause trees vote `1`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forest::{Condition, Feature, Forest, Node, Tree};
use crate::partition::{count_ambiguous_exact, DomainPartition};

pub const DEFAULT_MAX_VARS: usize = 22;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnfFormula {
    pub num_vars: usize,
    /// Signed, 1-based variable indices.
    pub clauses: Vec<[i32; 3]>,
    /// Indices of clauses padded to three literals while parsing.
    pub padded: Vec<usize>,
}

impl CnfFormula {
    pub fn new(num_vars: usize, clauses: Vec<[i32; 3]>) -> Result<Self> {
        for (i, c) in clauses.iter().enumerate() {
            for &l in c {
                if l == 0 || l.unsigned_abs() as usize > num_vars {
                    return Err(Error::Dimacs {
                        line: 0,
                        reason: format!("clause {i}: literal {l} out of range 1..={num_vars}"),
                    });
                }
            }
        }
        Ok(CnfFormula {
            num_vars,
            clauses,
            padded: Vec::new(),
        })
    }

    pub fn satisfied_by(&self, assignment: u64) -> bool {
        self.clauses.iter().all(|c| {
            c.iter().any(|&l| {
                let value = assignment >> (l.unsigned_abs() - 1) & 1 == 1;
                value == (l > 0)
            })
        })
    }

    pub fn to_dimacs(&self) -> String {
        let mut out = format!("p cnf {} {}\n", self.num_vars, self.clauses.len());
        for c in &self.clauses {
            out.push_str(&format!("{} {} {} 0\n", c[0], c[1], c[2]));
        }
        out
    }
}

/// Parses DIMACS CNF with one clause per line. Clauses with fewer than three
/// literals are padded by repeating their last literal.
pub fn parse_dimacs(text: &str) -> Result<CnfFormula> {
    let err = |line: usize, reason: String| Error::Dimacs { line, reason };
    let mut header: Option<(usize, usize)> = None;
    let mut clauses = Vec::new();
    let mut padded = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('c') {
            continue;
        }
        if line.starts_with('%') {
            break;
        }
        if line.starts_with('p') {
            if header.is_some() {
                return Err(err(line_no, "duplicate header".into()));
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parsed = match parts.as_slice() {
                ["p", "cnf", n, m] => n.parse().ok().zip(m.parse().ok()),
                _ => None,
            };
            header = Some(parsed.ok_or_else(|| err(line_no, format!("malformed header `{line}`")))?);
            continue;
        }
        let (n, _) = header.ok_or_else(|| err(line_no, "clause before the `p cnf` header".into()))?;
        let lits: Vec<i64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(line_no, format!("bad literal `{t}`"))))
            .collect::<Result<_>>()?;
        match lits.split_last() {
            Some((0, body)) if !body.contains(&0) => {
                if body.is_empty() {
                    return Err(err(line_no, "empty clause".into()));
                }
                if body.len() > 3 {
                    return Err(err(
                        line_no,
                        format!("clause has {} literals, at most 3 allowed", body.len()),
                    ));
                }
                let mut clause = [0i32; 3];
                for (slot, &l) in clause.iter_mut().zip(body) {
                    if l == 0 || l.unsigned_abs() as usize > n {
                        return Err(err(line_no, format!("literal {l} out of range 1..={n}")));
                    }
                    *slot = l as i32;
                }
                if body.len() < 3 {
                    padded.push(clauses.len());
                    for k in body.len()..3 {
                        clause[k] = clause[body.len() - 1];
                    }
                }
                clauses.push(clause);
            }
            _ => return Err(err(line_no, "clause must end with a single terminating 0".into())),
        }
    }
    let (n, m) = header.ok_or_else(|| err(0, "missing `p cnf` header".into()))?;
    if clauses.len() != m {
        return Err(err(0, format!("header declares {m} clauses, found {}", clauses.len())));
    }
    Ok(CnfFormula {
        num_vars: n,
        clauses,
        padded,
    })
}

fn clause_tree(clause: &[i32; 3]) -> Node {
    clause.iter().rev().fold(Node::leaf(0), |next, &l| {
        let test = Condition::Equals {
            feature: l.unsigned_abs() as usize - 1,
            value: 1,
        };
        if l > 0 {
            Node::split(test, Node::leaf(1), next)
        } else {
            Node::split(test, next, Node::leaf(1))
        }
    })
}

/// Clause trees first, then one stump per clause.
pub fn reduce_3cnf_to_forest(formula: &CnfFormula) -> Forest {
    let features = (1..=formula.num_vars)
        .map(|v| Feature::categorical(&format!("x{v}"), ["0", "1"]))
        .collect();
    let trees = formula
        .clauses
        .iter()
        .map(|c| Tree::new(clause_tree(c)))
        .chain(formula.clauses.iter().map(|_| Tree::new(Node::leaf(0))))
        .collect();
    Forest::new(features, vec!["0".into(), "1".into()], trees).expect("reduction yields a valid forest")
}

pub fn count_sat_bruteforce(formula: &CnfFormula, cap_vars: usize) -> Result<u64> {
    if formula.num_vars > cap_vars {
        return Err(Error::TooManyVariables {
            vars: formula.num_vars,
            cap: cap_vars,
        });
    }
    Ok((0..1u64 << formula.num_vars)
        .into_par_iter()
        .filter(|&a| formula.satisfied_by(a))
        .count() as u64)
}

/// Ambiguous inputs of the reduced forest, counted over full binary
/// assignments: variables that occur in no clause are collapsed by the
/// partition and each multiplies the count by two.
pub fn count_ambiguous_assignments(forest: &Forest, cap: u64) -> Result<u128> {
    let partition = DomainPartition::build(forest);
    let amb = count_ambiguous_exact(forest, &partition, cap)?;
    let multiplicity: u128 = partition
        .features
        .iter()
        .map(|f| (f.sets.len() / f.effective_len()) as u128)
        .product();
    Ok(amb.ambiguous as u128 * multiplicity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::Output;
    use crate::partition::DEFAULT_MAX_EXACT_CLASSES as CAP;

    #[test]
    fn parses_a_clause() {
        let f = parse_dimacs("c example\np cnf 3 1\n1 2 3 0\n").unwrap();
        assert_eq!(f.clauses, vec![[1, 2, 3]]);
        assert!(f.padded.is_empty());
    }

    #[test]
    fn pads_short_clauses() {
        let f = parse_dimacs("p cnf 1 2\n1 0\n-1 0\n").unwrap();
        assert_eq!(f.clauses, vec![[1, 1, 1], [-1, -1, -1]]);
        assert_eq!(f.padded, vec![0, 1]);
        let g = parse_dimacs("p cnf 2 1\n1 -2 0\n").unwrap();
        assert_eq!(g.clauses, vec![[1, -2, -2]]);
    }

    #[test]
    fn parse_errors() {
        for bad in [
            "p cnf 3 1\n1 2 3\n",
            "p cnf 3\n1 2 3 0\n",
            "p cnf 2 1\n1 3 0\n",
            "1 2 3 0\n",
            "p cnf 3 2\n1 2 3 0\n",
            "p cnf 4 1\n1 2 3 4 0\n",
            "p cnf 3 1\n0\n",
            "p cnf 3 1\n1 x 3 0\n",
        ] {
            assert!(matches!(parse_dimacs(bad), Err(Error::Dimacs { .. })), "{bad:?}");
        }
    }

    #[test]
    fn single_clause_reduction() {
        let f = parse_dimacs("p cnf 3 1\n1 2 3 0\n").unwrap();
        let forest = reduce_3cnf_to_forest(&f);
        assert_eq!(forest.trees.len(), 2);
        assert_eq!(forest.trees[0].rules().len(), 4);
        assert_eq!(count_sat_bruteforce(&f, 22).unwrap(), 7);
        assert_eq!(count_ambiguous_assignments(&forest, CAP).unwrap(), 7);
    }

    #[test]
    fn contradiction_reduction() {
        let f = parse_dimacs("p cnf 1 2\n1 0\n-1 0\n").unwrap();
        let forest = reduce_3cnf_to_forest(&f);
        assert_eq!(forest.trees.len(), 4);
        assert_eq!(count_sat_bruteforce(&f, 22).unwrap(), 0);
        assert_eq!(count_ambiguous_assignments(&forest, CAP).unwrap(), 0);
    }

    #[test]
    fn negative_literal_swaps_branches() {
        let f = CnfFormula::new(3, vec![[-1, 2, 3]]).unwrap();
        let forest = reduce_3cnf_to_forest(&f);
        match forest.trees[0].root() {
            Node::Split { if_false, .. } => assert_eq!(**if_false, Node::leaf(1)),
            other => panic!("unexpected root {other:?}"),
        }
        let x = forest.resolve_input(&["0".into(), "0".into(), "0".into()]).unwrap();
        assert_eq!(forest.classify(&x), Output::Tie);
    }

    #[test]
    fn counting() {
        let empty = CnfFormula::new(4, vec![]).unwrap();
        assert_eq!(count_sat_bruteforce(&empty, 22).unwrap(), 16);
        assert!(matches!(
            count_sat_bruteforce(&CnfFormula::new(23, vec![]).unwrap(), 22),
            Err(Error::TooManyVariables { .. })
        ));
    }

    #[test]
    fn unused_variables_multiply_the_count() {
        let f = CnfFormula::new(4, vec![[1, 2, 2]]).unwrap();
        let forest = reduce_3cnf_to_forest(&f);
        assert_eq!(count_sat_bruteforce(&f, 22).unwrap(), 12);
        assert_eq!(count_ambiguous_assignments(&forest, CAP).unwrap(), 12);
    }

    #[test]
    fn dimacs_round_trip() {
        let f = CnfFormula::new(3, vec![[1, -2, 3], [-1, -1, 2]]).unwrap();
        assert_eq!(parse_dimacs(&f.to_dimacs()).unwrap(), f);
    }
}
