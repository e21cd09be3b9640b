//! Python bindings: load a dataset, mine and ground rules, train and evaluate.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;

use rulekge::cli::{evaluate as run_eval, EvalOptions, SettingArg, Task};
use rulekge::evaluator::TieRule;
use rulekge::models::save_params;
use rulekge::rules::{self, ConceptHierarchy, MinerConfig};
use rulekge::{ColumnOrder, DatasetSplits, Error, GroundingMode, ModelKind, ModelParams, Norm, Thresholds, TrainConfig};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::IoAt { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// Train/valid/test triples sharing one vocabulary.
#[pyclass]
struct Dataset {
    splits: DatasetSplits,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    #[pyo3(signature = (train, valid=None, test=None, columns="hrt"))]
    fn load(train: &str, valid: Option<&str>, test: Option<&str>, columns: &str) -> PyResult<Self> {
        let order: ColumnOrder = parse(columns)?;
        let splits = DatasetSplits::load(Path::new(train), valid.map(Path::new), test.map(Path::new), order)
            .map_err(py_err)?;
        Ok(Dataset { splits })
    }

    #[getter]
    fn num_entities(&self) -> usize {
        self.splits.entities().len()
    }

    #[getter]
    fn num_relations(&self) -> usize {
        self.splits.relations().len()
    }

    /// `(train, valid, test)` triple counts.
    fn sizes(&self) -> (usize, usize, usize) {
        (self.splits.train.len(), self.splits.valid.len(), self.splits.test.len())
    }
}

/// A mined rule with relation labels.
#[pyclass(get_all, skip_from_py_object)]
#[derive(Clone)]
struct Rule {
    rule_type: String,
    relations: Vec<String>,
    confidence: f64,
    support: usize,
}

#[pymethods]
impl Rule {
    fn __repr__(&self) -> String {
        format!("Rule({}, {:?}, confidence={:.4}, support={})", self.rule_type, self.relations, self.confidence, self.support)
    }
}

/// Rules mined from a dataset, kept with their ids for grounding.
#[pyclass]
struct RuleSet {
    rules: Vec<rulekge::Rule>,
    labelled: Vec<Rule>,
}

#[pymethods]
impl RuleSet {
    fn __len__(&self) -> usize {
        self.rules.len()
    }

    fn rules(&self) -> Vec<Rule> {
        self.labelled.clone()
    }

    /// Rule count per type name.
    fn counts(&self) -> HashMap<String, usize> {
        rulekge::RuleType::ALL
            .iter()
            .map(|t| (t.as_str().to_owned(), self.rules.iter().filter(|r| r.rule_type == *t).count()))
            .collect()
    }
}

#[pyclass]
struct GroundRules {
    grounds: Vec<rulekge::GroundRule>,
}

#[pymethods]
impl GroundRules {
    fn __len__(&self) -> usize {
        self.grounds.len()
    }

    fn counts(&self) -> HashMap<String, usize> {
        let mut out = HashMap::new();
        for g in &self.grounds {
            *out.entry(g.rule_type().as_str().to_owned()).or_insert(0) += 1;
        }
        out
    }
}

#[pyfunction]
#[pyo3(signature = (dataset, tau1=0.5, tau2=0.6, tau3=0.5))]
fn mine(dataset: &Dataset, tau1: f64, tau2: f64, tau3: f64) -> PyResult<RuleSet> {
    let thresholds = Thresholds { inference: tau1, transitivity: tau2, antisymmetry: tau3 };
    let report = rules::mine(&dataset.splits.train, &MinerConfig::with_thresholds(thresholds)).map_err(py_err)?;
    let rel = dataset.splits.relations();
    let labelled = report
        .rules
        .iter()
        .map(|r| Rule {
            rule_type: r.rule_type.as_str().to_owned(),
            relations: r.relations.iter().map(|&x| rel.label(x).to_owned()).collect(),
            confidence: r.confidence,
            support: r.support,
        })
        .collect();
    Ok(RuleSet { rules: report.rules, labelled })
}

#[pyfunction]
#[pyo3(signature = (dataset, rules, mode="novel"))]
fn ground(dataset: &Dataset, rules: &RuleSet, mode: &str) -> PyResult<GroundRules> {
    let mode: GroundingMode = parse(mode)?;
    Ok(GroundRules { grounds: rules::ground(&rules.rules, &dataset.splits.train, mode) })
}

/// Trained embedding parameters.
#[pyclass]
struct Model {
    params: ModelParams,
    norm: Norm,
}

#[pyfunction]
#[pyo3(signature = (
    dataset, ground_rules=None, model="transe", dim=50, margin=2.0, norm="l1",
    lr=0.01, lr2=0.01, epochs=1000, epochs2=100, seed=1, threads=1
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: &Dataset,
    ground_rules: Option<&GroundRules>,
    model: &str,
    dim: usize,
    margin: f64,
    norm: &str,
    lr: f64,
    lr2: f64,
    epochs: usize,
    epochs2: usize,
    seed: u64,
    threads: usize,
) -> PyResult<Model> {
    let kind: ModelKind = parse(model)?;
    let norm: Norm = parse(norm)?;
    let config = TrainConfig { kind, dim, margin, norm, lr, lr2, epochs, epochs2, batch_size: 1, seed, threads };
    let grounds = ground_rules.map(|g| g.grounds.as_slice()).unwrap_or(&[]);
    let graph = &dataset.splits.train;
    let params = py
        .detach(|| rulekge::train(graph, grounds, &config, &mut |_, _| Ok(())))
        .map_err(py_err)?;
    Ok(Model { params, norm })
}

#[pymethods]
impl Model {
    #[getter]
    fn dim(&self) -> usize {
        self.params.dim()
    }

    /// Dissimilarity of a labelled triple; lower is more plausible.
    fn score(&self, dataset: &Dataset, head: &str, relation: &str, tail: &str) -> PyResult<f64> {
        let e = dataset.splits.entities();
        let look = |v: Option<u32>, s: &str| v.ok_or_else(|| PyKeyError::new_err(s.to_owned()));
        let h = look(e.get(head), head)?;
        let t = look(e.get(tail), tail)?;
        let r = look(dataset.splits.relations().get(relation), relation)?;
        Ok(self.params.score_triple(&rulekge::Triple::new(h, r, t), self.norm))
    }

    /// Filtered and raw link-prediction metrics plus classification accuracy,
    /// keyed like `filtered_hits@10` or `tc_accuracy`.
    #[pyo3(signature = (dataset, task="both", seed=1))]
    fn evaluate(&self, py: Python<'_>, dataset: &Dataset, task: &str, seed: u64) -> PyResult<HashMap<String, f64>> {
        let task = match task {
            "lp" => Task::Lp,
            "tc" => Task::Tc,
            "both" => Task::Both,
            other => return Err(PyValueError::new_err(format!("unknown task {other:?}"))),
        };
        let opts = EvalOptions {
            task,
            setting: SettingArg::Both,
            norm: self.norm,
            tie: TieRule::Optimistic,
            tc_per_side: 5,
            seed,
        };
        let (out, _, _) = py.detach(|| run_eval(&self.params, &dataset.splits, &opts)).map_err(py_err)?;
        let mut m = HashMap::new();
        for lp in &out.lp {
            let s = lp.setting.as_str();
            m.insert(format!("{s}_mr"), lp.mr);
            m.insert(format!("{s}_mrr"), lp.mrr);
            for &(k, v) in &lp.hits {
                m.insert(format!("{s}_hits@{k}"), v);
            }
        }
        if let Some(tc) = out.tc {
            m.insert("tc_accuracy".into(), tc.accuracy);
        }
        Ok(m)
    }

    /// Writes a text checkpoint readable by the command-line tool.
    fn save(&self, dataset: &Dataset, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        let concepts = ConceptHierarchy::from_relations(dataset.splits.relations());
        let mut w = BufWriter::new(f);
        save_params(&mut w, &self.params, dataset.splits.entities(), dataset.splits.relations(), concepts.concepts())
            .map_err(py_err)?;
        w.flush().map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
    }
}

#[pymodule]
fn rulekge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Rule>()?;
    m.add_class::<RuleSet>()?;
    m.add_class::<GroundRules>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(mine, m)?)?;
    m.add_function(wrap_pyfunction!(ground, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
