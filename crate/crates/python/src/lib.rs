//! Python module `forestbag`.
//!
//! Reports that the CLI prints as JSON come back as plain dicts; reasons are
//! rendered in the same `P( class | conditions )` text as the CLI.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use engine::bag::{Argument, Bag};
use engine::cnf::{count_ambiguous_assignments, parse_dimacs, reduce_3cnf_to_forest};
use engine::error::Error;
use engine::exact::ExactContext;
use engine::miner::{self, minimize_sufficient, MinerConfig, Reason, ReasonKind, SufficiencyOracle};
use engine::partition::DEFAULT_MAX_EXACT_CLASSES;
use engine::query::{parse_event, parse_query};
use engine::sampler::SamplerConfig;
use engine::{Output, PlausibilityModel, Value};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::CapExceeded { .. } | Error::ClassCountOverflow | Error::TooManyVariables { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        e => PyValueError::new_err(e.to_string()),
    }
}

/// Accepts str, int and float entries.
fn values(raw: &Bound<'_, PyAny>) -> PyResult<Vec<Value>> {
    raw.try_iter()?
        .map(|item| {
            let item = item?;
            if let Ok(s) = item.extract::<String>() {
                Ok(Value::Category(s))
            } else {
                Ok(Value::Number(item.extract::<f64>()?))
            }
        })
        .collect()
}

#[pyclass(name = "Forest", module = "forestbag", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyForest {
    inner: Arc<engine::Forest>,
}

#[pymethods]
impl PyForest {
    /// Parses an interchange document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = engine::Forest::from_json(text).map_err(py_err)?;
        Ok(PyForest { inner: Arc::new(inner) })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let text =
            std::fs::read_to_string(&path).map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.inner.features.iter().map(|f| f.name.clone()).collect()
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.inner.classes.clone()
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.trees.len()
    }

    #[getter]
    fn n_rules(&self) -> usize {
        self.inner.rule_count()
    }

    /// Class label chosen by the vote, or None on a tie.
    fn classify(&self, x: &Bound<'_, PyAny>) -> PyResult<Option<String>> {
        let input = self.inner.resolve_input(&values(x)?).map_err(py_err)?;
        Ok(match self.inner.classify(&input) {
            Output::Class(c) => Some(self.inner.classes[c].clone()),
            Output::Tie => None,
        })
    }

    fn votes(&self, x: &Bound<'_, PyAny>) -> PyResult<Vec<u32>> {
        let input = self.inner.resolve_input(&values(x)?).map_err(py_err)?;
        Ok(self.inner.votes(&input))
    }

    /// The explanation graph as `arg`/`att`/`sup` lines.
    fn graph(&self) -> String {
        let p = engine::DomainPartition::build(&self.inner);
        Bag::build(&self.inner, &p).to_graph_text(&self.inner, &p)
    }

    fn __repr__(&self) -> String {
        format!(
            "Forest(features={}, classes={:?}, trees={})",
            self.inner.features.len(),
            self.inner.classes,
            self.inner.trees.len()
        )
    }
}

#[pyclass(name = "Model", module = "forestbag", frozen)]
struct PyModel {
    inner: PlausibilityModel,
    max_classes: u64,
}

impl PyModel {
    fn exact(&self) -> PyResult<ExactContext<'_>> {
        self.inner.exact(self.max_classes).map_err(py_err)
    }

    fn class_index(&self, label: &str) -> PyResult<usize> {
        self.inner
            .forest()
            .class_index(label)
            .ok_or_else(|| PyValueError::new_err(format!("unknown class `{label}`")))
    }

    /// Parses `A=1, Age<=35` into one partition set per feature.
    fn conditions(&self, text: &str) -> PyResult<Vec<(usize, usize)>> {
        let event = parse_event(&self.inner, text, false).map_err(py_err)?;
        event
            .features
            .iter()
            .map(|c| {
                c.as_single().map(|s| (c.feature, s)).ok_or_else(|| {
                    PyValueError::new_err(format!(
                        "condition on `{}` must select a single partition set",
                        self.inner.partition().features[c.feature].name
                    ))
                })
            })
            .collect()
    }

    fn render(&self, reasons: &[Reason]) -> Vec<String> {
        reasons.iter().map(|r| r.record(&self.inner).to_text()).collect()
    }
}

fn args(pairs: &[(usize, usize)]) -> Vec<Argument> {
    pairs
        .iter()
        .map(|&(feature, set)| Argument::Feature { feature, set })
        .collect()
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (forest, max_exact_classes = DEFAULT_MAX_EXACT_CLASSES))]
    fn new(forest: &PyForest, max_exact_classes: u64) -> Self {
        PyModel {
            inner: PlausibilityModel::build((*forest.inner).clone()),
            max_classes: max_exact_classes,
        }
    }

    /// Number of equivalence classes, unused features collapsed.
    fn class_count(&self) -> PyResult<u128> {
        self.inner.partition().class_count().map_err(py_err)
    }

    /// Exact ambiguity statistics by enumeration.
    fn exact_summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let ctx = self.exact()?;
        let amb = ctx.ambiguity();
        let d = PyDict::new(py);
        d.set_item("equivalence_classes", amb.total)?;
        d.set_item("ambiguous", amb.ambiguous)?;
        d.set_item("partition_function", ctx.partition_function())?;
        Ok(d)
    }

    /// Exact value of a query such as `C=Pos | B=1, Age<=35`.
    fn query(&self, text: &str) -> PyResult<f64> {
        let q = parse_query(&self.inner, text).map_err(py_err)?;
        let p = self.exact()?.query(&q.target, &q.condition).map_err(py_err)?;
        Ok(p.value())
    }

    fn is_sufficient(&self, conditions: &str, label: &str) -> PyResult<bool> {
        let pairs = self.conditions(conditions)?;
        let check = self
            .exact()?
            .is_sufficient_reason(&args(&pairs), self.class_index(label)?)
            .map_err(py_err)?;
        Ok(check.holds && !check.vacuous)
    }

    fn is_necessary(&self, conditions: &str, label: &str) -> PyResult<bool> {
        let pairs = self.conditions(conditions)?;
        let check = self
            .exact()?
            .is_necessary_reason(&args(&pairs), self.class_index(label)?)
            .map_err(py_err)?;
        Ok(check.holds && !check.vacuous)
    }

    /// Feature conditions individually necessary for `label`.
    fn necessary_features(&self, label: &str) -> PyResult<Vec<String>> {
        let set = self
            .exact()?
            .maximal_necessary_features(self.class_index(label)?)
            .map_err(py_err)?;
        let p = self.inner.partition();
        Ok(set
            .arguments
            .iter()
            .filter_map(|a| match *a {
                Argument::Feature { feature, set } => Some(p.describe(feature, set)),
                _ => None,
            })
            .collect())
    }

    /// Greedily shortens a sufficient reason; returns the remaining
    /// conditions and whether the result is certified minimal.
    #[pyo3(signature = (conditions, label, delta = 1.0))]
    fn minimize(&self, conditions: &str, label: &str, delta: f64) -> PyResult<(Vec<String>, bool)> {
        let pairs = self.conditions(conditions)?;
        let reason = Reason::new(ReasonKind::Sufficient, self.class_index(label)?, pairs, 1.0, 0);
        let config = MinerConfig {
            delta,
            ..Default::default()
        };
        config.validate().map_err(py_err)?;
        let ctx = self.exact()?;
        let out = minimize_sufficient(&SufficiencyOracle::Exact(&ctx), &reason, &config).map_err(py_err)?;
        let p = self.inner.partition();
        Ok((
            out.conditions.iter().map(|&(f, s)| p.describe(f, s)).collect(),
            out.minimal,
        ))
    }

    /// Stage-1 sampling run: ambiguity estimate, extra query estimates and
    /// the almost-sufficient / merged almost-necessary reasons.
    #[pyo3(signature = (seed, samples = 100_000, workers = 1, queries = Vec::new(), delta = 0.9, lift = 1.1))]
    #[allow(clippy::too_many_arguments)]
    fn sample<'py>(
        &self,
        py: Python<'py>,
        seed: u64,
        samples: u64,
        workers: usize,
        queries: Vec<String>,
        delta: f64,
        lift: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let specs = queries
            .iter()
            .map(|q| parse_query(&self.inner, q))
            .collect::<Result<Vec<_>, _>>()
            .map_err(py_err)?;
        let cfg = SamplerConfig {
            seed,
            max_iterations: samples,
            workers,
            early_stop: false,
            ..Default::default()
        };
        let config = MinerConfig {
            delta,
            lift,
            ..Default::default()
        };
        config.validate().map_err(py_err)?;
        let model = &self.inner;
        let outcome = py
            .detach(|| miner::run_stage1_sampled(model, &cfg, &specs))
            .map_err(py_err)?;
        let reports = miner::stage1_reports(&outcome, &config);
        let merged = miner::merged_necessary(&reports.necessary, model.forest().classes.len());
        let d = PyDict::new(py);
        d.set_item("non_ambiguous", outcome.non_ambiguous.value)?;
        d.set_item("samples", outcome.non_ambiguous.samples)?;
        let estimates: Vec<(String, Option<f64>, u64)> = queries
            .into_iter()
            .zip(&outcome.extra)
            .map(|(q, e)| (q, e.value, e.samples))
            .collect();
        d.set_item("queries", estimates)?;
        d.set_item("sufficient", self.render(&reports.sufficient))?;
        d.set_item("necessary", self.render(&merged))?;
        Ok(d)
    }
}

/// Forest whose ambiguous inputs correspond to the formula's models.
#[pyfunction]
fn cnf_to_forest(dimacs: &str) -> PyResult<PyForest> {
    let formula = parse_dimacs(dimacs).map_err(py_err)?;
    Ok(PyForest {
        inner: Arc::new(reduce_3cnf_to_forest(&formula)),
    })
}

/// Ambiguous assignments of a forest over binary features.
#[pyfunction]
#[pyo3(signature = (forest, max_exact_classes = DEFAULT_MAX_EXACT_CLASSES))]
fn count_ambiguous(forest: &PyForest, max_exact_classes: u64) -> PyResult<u128> {
    count_ambiguous_assignments(&forest.inner, max_exact_classes).map_err(py_err)
}

/// Runs the command-line tool in-process: `(exit code, stdout, stderr)`.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> (i32, String, String) {
    py.detach(|| {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let argv = std::iter::once("forestbag".to_string()).chain(args);
        let code = engine::cli::main_with_args(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8_lossy(&out).into_owned(),
            String::from_utf8_lossy(&err).into_owned(),
        )
    })
}

#[pymodule]
fn forestbag(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyForest>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(cnf_to_forest, m)?)?;
    m.add_function(wrap_pyfunction!(count_ambiguous, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
