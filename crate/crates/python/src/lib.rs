use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use softgroup::evaluation::{semantic_pr_sweep, GtInstances};
use softgroup::grouping::{GroupingConfig, GroupingMode};
use softgroup::{io, losses, refinement, synthesis, Error};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A point cloud with semantic scores, offsets and ground truth.
#[pyclass(module = "softgroup_py")]
struct Scene {
    inner: softgroup::Scene,
}

#[pymethods]
impl Scene {
    /// Synthetic scene of well-separated box-shaped instances.
    #[staticmethod]
    #[pyo3(signature = (seed=0, n_instances=5, n_classes=18, corruption=0.0))]
    fn synth(seed: u64, n_instances: usize, n_classes: usize, corruption: f64) -> PyResult<Self> {
        let config = synthesis::SynthConfig {
            seed,
            n_instances,
            n_classes,
            corruption_fraction: corruption,
            ..Default::default()
        };
        let (inner, _) = synthesis::generate(&config).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        io::read_scene(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_scene(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn n_points(&self) -> usize {
        self.inner.n_points()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    #[getter]
    fn n_instances(&self) -> usize {
        self.inner.truth.n_instances()
    }

    fn coords(&self) -> Vec<[f64; 3]> {
        self.inner.cloud.coords.clone()
    }

    fn offsets(&self) -> Vec<[f64; 3]> {
        self.inner.offsets.offsets.clone()
    }

    fn scores(&self) -> Vec<Vec<f64>> {
        self.inner.semantic.rows().map(<[f64]>::to_vec).collect()
    }

    fn semantic_labels(&self) -> Vec<i32> {
        self.inner.truth.semantic_label.clone()
    }

    fn instance_ids(&self) -> Vec<i32> {
        self.inner.truth.instance_id.clone()
    }

    /// Sorted point ids of every ground-truth instance.
    fn instance_masks(&self) -> Vec<Vec<usize>> {
        self.inner.truth.instance_masks()
    }

    /// Human-readable invariant violations; empty for a valid scene.
    fn validate(&self) -> Vec<String> {
        softgroup::validate_scene(&self.inner).iter().map(ToString::to_string).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene(n_points={}, n_classes={}, n_instances={})",
            self.inner.n_points(),
            self.inner.n_classes(),
            self.inner.truth.n_instances()
        )
    }
}

#[pyclass(module = "softgroup_py", get_all, skip_from_py_object)]
#[derive(Clone)]
struct Proposal {
    point_ids: Vec<usize>,
    source_class: usize,
}

impl From<softgroup::Proposal> for Proposal {
    fn from(p: softgroup::Proposal) -> Self {
        Self {
            point_ids: p.point_ids,
            source_class: p.source_class,
        }
    }
}

impl Proposal {
    fn to_core(&self) -> softgroup::Proposal {
        softgroup::Proposal {
            point_ids: self.point_ids.clone(),
            source_class: self.source_class,
        }
    }
}

#[pymethods]
impl Proposal {
    #[new]
    fn new(point_ids: Vec<usize>, source_class: usize) -> Self {
        Self {
            point_ids,
            source_class,
        }
    }

    fn __len__(&self) -> usize {
        self.point_ids.len()
    }

    fn __repr__(&self) -> String {
        format!("Proposal(source_class={}, n_points={})", self.source_class, self.point_ids.len())
    }
}

#[pyclass(module = "softgroup_py", skip_from_py_object)]
#[derive(Clone)]
struct Instance {
    inner: softgroup::RefinedInstance,
}

#[pymethods]
impl Instance {
    #[getter]
    fn mask(&self) -> Vec<usize> {
        self.inner.mask.clone()
    }

    #[getter]
    fn category(&self) -> usize {
        self.inner.category
    }

    #[getter]
    fn class_score(&self) -> f64 {
        self.inner.class_score
    }

    #[getter]
    fn mask_score(&self) -> f64 {
        self.inner.mask_score
    }

    #[getter]
    fn confidence(&self) -> f64 {
        self.inner.confidence
    }

    /// `(min, max)` corners of the axis-aligned box around the mask.
    #[getter]
    fn bbox(&self) -> ([f64; 3], [f64; 3]) {
        (self.inner.bbox.min, self.inner.bbox.max)
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(category={}, confidence={:.4}, n_points={})",
            self.inner.category,
            self.inner.confidence,
            self.inner.mask.len()
        )
    }
}

fn run_grouping(
    scene: &Scene,
    mode: GroupingMode,
    tau: f64,
    bandwidth: f64,
    min_points: usize,
) -> PyResult<Vec<Proposal>> {
    let config = GroupingConfig {
        tau,
        bandwidth,
        min_points,
        n_classes: scene.inner.n_classes(),
    };
    let props = softgroup::group(&scene.inner, &config, mode).map_err(to_py)?;
    Ok(props.into_iter().map(Proposal::from).collect())
}

#[pyfunction]
#[pyo3(signature = (scene, tau=0.2, bandwidth=0.04, min_points=50))]
fn soft_group(scene: PyRef<'_, Scene>, tau: f64, bandwidth: f64, min_points: usize) -> PyResult<Vec<Proposal>> {
    run_grouping(&scene, GroupingMode::Soft, tau, bandwidth, min_points)
}

#[pyfunction]
#[pyo3(signature = (scene, bandwidth=0.04, min_points=50))]
fn hard_group(scene: PyRef<'_, Scene>, bandwidth: f64, min_points: usize) -> PyResult<Vec<Proposal>> {
    run_grouping(&scene, GroupingMode::Hard, 0.5, bandwidth, min_points)
}

fn core_proposals(proposals: &[PyRef<'_, Proposal>]) -> Vec<softgroup::Proposal> {
    proposals.iter().map(|p| p.to_core()).collect()
}

/// Heuristic refinement of each proposal from its member scores.
#[pyfunction]
#[pyo3(signature = (scene, proposals, mask_threshold=0.5))]
fn refine(scene: PyRef<'_, Scene>, proposals: Vec<PyRef<'_, Proposal>>, mask_threshold: f64) -> PyResult<Vec<Instance>> {
    let props = core_proposals(&proposals);
    let s = &scene.inner;
    refinement::heuristic_refine_all(&props, &s.semantic, &s.cloud.coords, mask_threshold)
        .map(|v| v.into_iter().map(|inner| Instance { inner }).collect())
        .map_err(to_py)
}

/// Training targets per proposal as dictionaries.
#[pyfunction]
#[pyo3(signature = (scene, proposals, iou_threshold=0.5))]
fn assign_targets(
    py: Python<'_>,
    scene: PyRef<'_, Scene>,
    proposals: Vec<PyRef<'_, Proposal>>,
    iou_threshold: f64,
) -> PyResult<Vec<Py<PyAny>>> {
    let props = core_proposals(&proposals);
    let s = &scene.inner;
    refinement::assign_targets(&props, &s.truth, s.n_classes(), iou_threshold)
        .into_iter()
        .map(|t| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("is_positive", t.is_positive)?;
            d.set_item("gt_index", t.gt_index)?;
            d.set_item("class_target", t.class_target)?;
            d.set_item("mask_target", t.mask_target)?;
            d.set_item("mask_score_target", t.mask_score_target)?;
            d.set_item("max_iou", t.max_iou)?;
            Ok(d.into_any().unbind())
        })
        .collect()
}

/// Every evaluation metric as a flat `{key: value}` mapping.
#[pyfunction]
fn evaluate(scene: PyRef<'_, Scene>, instances: Vec<PyRef<'_, Instance>>) -> PyResult<BTreeMap<String, String>> {
    let s = &scene.inner;
    let gt = GtInstances::from_truth(&s.truth, &s.cloud.coords, s.n_classes()).map_err(to_py)?;
    let preds: Vec<_> = instances.iter().map(|i| i.inner.clone()).collect();
    let report = softgroup::evaluate(&preds, &gt).map_err(to_py)?;
    Ok(report.key_values().into_iter().collect())
}

type SweepRow = (String, String, Option<f64>, Option<f64>);

/// Rows of `(tau, class, recall, precision)`; `None` where undefined.
#[pyfunction]
#[pyo3(signature = (scene, taus=vec![0.01, 0.1, 0.2, 0.3, 0.4, 0.5]))]
fn sweep_tau(
    scene: PyRef<'_, Scene>,
    taus: Vec<f64>,
) -> PyResult<Vec<SweepRow>> {
    let s = &scene.inner;
    let sweep = semantic_pr_sweep(&s.semantic, &s.truth.semantic_label, &taus).map_err(to_py)?;
    let labels = taus.iter().map(|t| t.to_string()).chain(std::iter::once("hard".to_string()));
    let mut rows = Vec::new();
    for (label, points) in labels.zip(sweep.thresholded.iter().chain(std::iter::once(&sweep.hard))) {
        for (c, p) in points.iter().enumerate() {
            rows.push((label.clone(), c.to_string(), p.recall, p.precision));
        }
    }
    Ok(rows)
}

#[pyfunction]
fn mask_iou(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    let (mut a, mut b) = (a, b);
    a.sort_unstable();
    b.sort_unstable();
    refinement::mask_iou(&a, &b).map_err(to_py)
}

#[pyfunction]
fn cross_entropy(logits: Vec<f64>, label: usize) -> PyResult<f64> {
    losses::cross_entropy(&logits, label).map_err(to_py)
}

#[pyfunction]
fn ce_logit_gradient(logits: Vec<f64>, label: usize) -> PyResult<Vec<f64>> {
    losses::ce_logit_gradient(&logits, label).map_err(to_py)
}

#[pyfunction]
fn bce_with_logits(z: f64, target: f64) -> f64 {
    losses::bce_with_logits(z, target)
}

#[pyfunction]
fn bce_logit_gradient(z: f64, target: f64) -> f64 {
    losses::bce_logit_gradient(z, target)
}

/// Mean cross entropy over points whose label is not -1.
#[pyfunction]
fn semantic_loss(logits: Vec<Vec<f64>>, labels: Vec<i32>) -> PyResult<f64> {
    let c = logits.first().map_or(0, Vec::len);
    if logits.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("logit rows must have equal length"));
    }
    let flat: Vec<f64> = logits.into_iter().flatten().collect();
    losses::semantic_loss(&flat, c, &labels).map_err(to_py)
}

#[pyfunction]
fn offset_loss(offsets: Vec<[f64; 3]>, targets: Vec<[f64; 3]>, foreground: Vec<bool>) -> PyResult<f64> {
    losses::offset_loss(&offsets, &targets, &foreground).map_err(to_py)
}

#[pymodule]
fn softgroup_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scene>()?;
    m.add_class::<Proposal>()?;
    m.add_class::<Instance>()?;
    m.add_function(wrap_pyfunction!(soft_group, m)?)?;
    m.add_function(wrap_pyfunction!(hard_group, m)?)?;
    m.add_function(wrap_pyfunction!(refine, m)?)?;
    m.add_function(wrap_pyfunction!(assign_targets, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_tau, m)?)?;
    m.add_function(wrap_pyfunction!(mask_iou, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(ce_logit_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(bce_with_logits, m)?)?;
    m.add_function(wrap_pyfunction!(bce_logit_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(semantic_loss, m)?)?;
    m.add_function(wrap_pyfunction!(offset_loss, m)?)?;
    Ok(())
}
