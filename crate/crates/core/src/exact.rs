//! Exhaustive reasoning over equivalence classes.
//!
//! For two-class forests every non-ambiguous class corresponds to exactly one
//! bi-stable labelling (the one induced by any of its inputs), so bi-stable
//! labellings are enumerated by walking the class table instead of the
//! labelling space. With more classes the engine follows the forest's
//! plurality vote, like the Markov model; the graph itself only accepts a
//! class backed by an absolute majority of trees.

use rayon::prelude::*;

use crate::bag::{feature_pairs, Argument, Bag};
use crate::error::{Error, Result};
use crate::markov::{Event, FeatureConstraint, PlausibilityModel, Probability};
use crate::partition::{AmbiguityCount, ClassTable, EquivalenceClass};

/// Outcome of a sufficiency or necessity check. `vacuous` is set when no
/// bi-stable labelling satisfies the premise of the check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReasonCheck {
    pub holds: bool,
    pub vacuous: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NecessarySet {
    pub arguments: Vec<Argument>,
    pub vacuous: bool,
}

pub struct ExactContext<'m> {
    model: &'m PlausibilityModel,
    bag: Bag,
    table: ClassTable,
}

impl<'m> ExactContext<'m> {
    pub fn new(model: &'m PlausibilityModel, cap: u64) -> Result<Self> {
        let table = ClassTable::build(model.compiled(), model.partition(), cap)?;
        let bag = Bag::build(model.forest(), model.partition());
        Ok(ExactContext { model, bag, table })
    }

    pub fn model(&self) -> &'m PlausibilityModel {
        self.model
    }

    pub fn bag(&self) -> &Bag {
        &self.bag
    }

    pub fn table(&self) -> &ClassTable {
        &self.table
    }

    pub fn ambiguity(&self) -> AmbiguityCount {
        AmbiguityCount {
            ambiguous: self.table.ambiguous(),
            total: self.table.len() as u64,
        }
    }

    /// Number of bi-stable labellings, equal to the partition function.
    pub fn partition_function(&self) -> u64 {
        self.ambiguity().non_ambiguous()
    }

    /// Non-ambiguous classes with their accepted class, in index order.
    pub fn bistable(&self) -> impl Iterator<Item = (EquivalenceClass, usize)> + '_ {
        let p = self.model.partition();
        self.table
            .outputs()
            .iter()
            .enumerate()
            .filter_map(move |(i, o)| o.class().map(|y| (p.decode(i as u64), y)))
    }

    /// Counts non-ambiguous classes matching `event`.
    pub fn count(&self, event: &Event) -> u64 {
        let p = self.model.partition();
        const CHUNK: usize = 4096;
        self.table
            .outputs()
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut class = vec![0; p.len()];
                let mut n = 0u64;
                for (k, o) in chunk.iter().enumerate() {
                    if let Some(y) = o.class() {
                        p.decode_into((c * CHUNK + k) as u64, &mut class);
                        n += u64::from(event.matches(&class, y));
                    }
                }
                n
            })
            .sum()
    }

    pub fn query(&self, target: &Event, condition: &Event) -> Result<Probability> {
        let denominator = self.count(condition);
        if denominator == 0 {
            return Err(Error::ZeroProbability);
        }
        let mut joint = condition.clone();
        for c in &target.features {
            joint.constrain(c.clone());
        }
        joint.class = match (target.class, condition.class) {
            (Some(a), Some(b)) if a != b => {
                return Ok(Probability {
                    numerator: 0,
                    denominator,
                })
            }
            (a, b) => a.or(b),
        };
        Ok(Probability {
            numerator: self.count(&joint),
            denominator,
        })
    }

    fn reason_event(&self, args: &[Argument]) -> Result<Event> {
        let p = self.model.partition();
        let mut event = Event::any();
        for (f, s) in feature_pairs(args)? {
            event.constrain(FeatureConstraint::single(p, f, s)?);
        }
        Ok(event)
    }

    /// Every bi-stable labelling accepting all of `args` accepts `class`.
    pub fn is_sufficient_reason(&self, args: &[Argument], class: usize) -> Result<ReasonCheck> {
        let event = self.reason_event(args)?;
        let accepting = self.count(&event);
        let mut with_class = event;
        with_class.class = Some(class);
        let agree = self.count(&with_class);
        Ok(ReasonCheck {
            holds: agree == accepting,
            vacuous: accepting == 0,
        })
    }

    /// Every bi-stable labelling accepting `class` accepts all of `args`.
    pub fn is_necessary_reason(&self, args: &[Argument], class: usize) -> Result<ReasonCheck> {
        let mut event = self.reason_event(args)?;
        let accepting = self.count(&Event::class(class));
        event.class = Some(class);
        let agree = self.count(&event);
        Ok(ReasonCheck {
            holds: agree == accepting,
            vacuous: accepting == 0,
        })
    }

    /// Union of all individually necessary feature arguments. Features the
    /// forest never tests are left out: their only argument is always in.
    pub fn maximal_necessary_features(&self, class: usize) -> Result<NecessarySet> {
        let p = self.model.partition();
        let mut arguments = Vec::new();
        let vacuous = self.count(&Event::class(class)) == 0;
        for &arg in self.bag.arguments() {
            if let Argument::Feature { feature, .. } = arg {
                if !p.features[feature].used {
                    continue;
                }
                if self.is_necessary_reason(&[arg], class)?.holds {
                    arguments.push(arg);
                }
            }
        }
        Ok(NecessarySet { arguments, vacuous })
    }

    /// Fraction of all classes matching `conditions` (ambiguous ones
    /// included, and counted as misses) whose output is `class`.
    pub fn completion_fraction(&self, conditions: &[(usize, usize)], class: usize) -> Result<Probability> {
        let p = self.model.partition();
        let event = Event::features(p, conditions)?;
        let mut buf = vec![0; p.len()];
        let (mut hit, mut total) = (0u64, 0u64);
        for (i, o) in self.table.outputs().iter().enumerate() {
            p.decode_into(i as u64, &mut buf);
            if event.matches_features(&buf) {
                total += 1;
                hit += u64::from(o.class() == Some(class));
            }
        }
        Ok(Probability {
            numerator: hit,
            denominator: total,
        })
    }
}
