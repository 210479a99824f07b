//! In-memory scene model: points, per-point semantic scores and offsets,
//! ground-truth labels, and the proposal / refined-instance records that
//! flow through the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Label value marking a point as ignored (semantic) or as belonging to no
/// instance (instance id).
pub const IGNORE_LABEL: i32 = -1;

const ROW_SUM_TOLERANCE: f64 = 1e-6;
const CENTER_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub coords: Vec<Point3>,
    pub colors: Option<Vec<Point3>>,
}

impl PointCloud {
    pub fn new(coords: Vec<Point3>) -> Self {
        Self {
            coords,
            colors: None,
        }
    }

    pub fn n_points(&self) -> usize {
        self.coords.len()
    }
}

/// Row-major `N x C` matrix of per-point class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticField {
    n_classes: usize,
    scores: Vec<f64>,
}

impl SemanticField {
    pub fn new(n_classes: usize, scores: Vec<f64>) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::param("n_classes", "must be at least 1"));
        }
        if !scores.len().is_multiple_of(n_classes) {
            return Err(Error::LengthMismatch {
                what: "semantic scores (multiple of n_classes)",
                expected: scores.len() / n_classes * n_classes,
                actual: scores.len(),
            });
        }
        Ok(Self { n_classes, scores })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_classes = rows.first().map_or(0, |r| r.as_ref().len());
        let mut scores = Vec::with_capacity(rows.len() * n_classes);
        for row in rows {
            let row = row.as_ref();
            if row.len() != n_classes {
                return Err(Error::LengthMismatch {
                    what: "semantic score row",
                    expected: n_classes,
                    actual: row.len(),
                });
            }
            scores.extend_from_slice(row);
        }
        Self::new(n_classes, scores)
    }

    /// Each point's score is 1 for its label; ignored labels get a uniform row.
    pub fn one_hot(n_classes: usize, labels: &[i32]) -> Result<Self> {
        let mut scores = vec![0.0; labels.len() * n_classes];
        for (i, &label) in labels.iter().enumerate() {
            let row = &mut scores[i * n_classes..(i + 1) * n_classes];
            match usize::try_from(label) {
                Ok(l) if l < n_classes => row[l] = 1.0,
                Ok(l) => {
                    return Err(Error::OutOfRange {
                        what: "class label",
                        index: l,
                        limit: n_classes,
                    })
                }
                Err(_) => row.fill(1.0 / n_classes as f64),
            }
        }
        Self::new(n_classes, scores)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_points(&self) -> usize {
        self.scores.len() / self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.scores[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.scores.chunks_exact(self.n_classes)
    }

    pub fn score(&self, point: usize, class: usize) -> f64 {
        self.scores[point * self.n_classes + class]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OffsetField {
    pub offsets: Vec<Point3>,
}

/// Ground-truth labels. Instance centers are derived from the coordinates
/// at construction, and offset targets are derived from the centers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub semantic_label: Vec<i32>,
    pub instance_id: Vec<i32>,
    /// Class of each instance, indexed by instance id.
    pub instance_class: Vec<i32>,
    /// Mean coordinate of each instance, indexed by instance id.
    pub instance_center: Vec<Point3>,
}

impl GroundTruth {
    pub fn new(
        coords: &[Point3],
        semantic_label: Vec<i32>,
        instance_id: Vec<i32>,
        instance_class: Vec<i32>,
    ) -> Result<Self> {
        for (what, len) in [
            ("semantic labels", semantic_label.len()),
            ("instance ids", instance_id.len()),
        ] {
            if len != coords.len() {
                return Err(Error::LengthMismatch {
                    what,
                    expected: coords.len(),
                    actual: len,
                });
            }
        }
        let k = instance_class.len();
        let mut sums = vec![[0.0f64; 3]; k];
        let mut counts = vec![0usize; k];
        for (p, &id) in coords.iter().zip(&instance_id) {
            if id < 0 {
                continue;
            }
            let id = id as usize;
            if id >= k {
                return Err(Error::OutOfRange {
                    what: "instance id",
                    index: id,
                    limit: k,
                });
            }
            for d in 0..3 {
                sums[id][d] += p[d];
            }
            counts[id] += 1;
        }
        let instance_center = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| {
                let c = c as f64;
                [s[0] / c, s[1] / c, s[2] / c]
            })
            .collect();
        Ok(Self {
            semantic_label,
            instance_id,
            instance_class,
            instance_center,
        })
    }

    pub fn n_instances(&self) -> usize {
        self.instance_class.len()
    }

    pub fn is_foreground(&self, point: usize) -> bool {
        self.instance_id[point] >= 0
    }

    /// Sorted point ids of every instance, indexed by instance id.
    pub fn instance_masks(&self) -> Vec<Vec<usize>> {
        let mut masks = vec![Vec::new(); self.n_instances()];
        for (i, &id) in self.instance_id.iter().enumerate() {
            if id >= 0 {
                if let Some(mask) = masks.get_mut(id as usize) {
                    mask.push(i);
                }
            }
        }
        masks
    }

    /// `center - coord` for instance points, zero elsewhere.
    pub fn offset_targets(&self, coords: &[Point3]) -> Vec<Point3> {
        coords
            .iter()
            .zip(&self.instance_id)
            .map(|(p, &id)| {
                if id < 0 {
                    return [0.0; 3];
                }
                let c = self.instance_center[id as usize];
                [c[0] - p[0], c[1] - p[1], c[2] - p[2]]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub semantic: SemanticField,
    pub offsets: OffsetField,
    pub truth: GroundTruth,
}

impl Scene {
    pub fn n_points(&self) -> usize {
        self.cloud.n_points()
    }

    pub fn n_classes(&self) -> usize {
        self.semantic.n_classes()
    }

    pub fn empty(n_classes: usize) -> Result<Self> {
        Ok(Self {
            cloud: PointCloud::default(),
            semantic: SemanticField::new(n_classes, Vec::new())?,
            offsets: OffsetField::default(),
            truth: GroundTruth::default(),
        })
    }
}

/// A grouped point set together with the class channel that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Proposal {
    pub point_ids: Vec<usize>,
    pub source_class: usize,
}

impl Proposal {
    pub fn len(&self) -> usize {
        self.point_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_ids.is_empty()
    }

    pub fn min_id(&self) -> Option<usize> {
        self.point_ids.first().copied()
    }
}

/// Axis-aligned box as `(min corner, max corner)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn volume(&self) -> f64 {
        (0..3).map(|d| (self.max[d] - self.min[d]).max(0.0)).product()
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|d| self.min[d] <= p[d] && p[d] <= self.max[d])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedInstance {
    pub mask: Vec<usize>,
    /// Class index; `n_classes` denotes background.
    pub category: usize,
    pub class_score: f64,
    pub mask_score: f64,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: Aabb,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub index: Option<usize>,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{}[{}]: {}", self.field, i, self.reason),
            None => write!(f, "{}: {}", self.field, self.reason),
        }
    }
}

/// Checks every scene invariant. Returns an empty list for a valid scene.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field, index, reason: String| {
        out.push(Violation {
            field,
            index,
            reason,
        })
    };
    let n = scene.n_points();
    let coords = &scene.cloud.coords;

    for (i, p) in coords.iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            push("coords", Some(i), "non-finite coordinate".into());
        }
    }

    if let Some(colors) = &scene.cloud.colors {
        if colors.len() != n {
            push(
                "colors",
                None,
                format!("length {} != {n} points", colors.len()),
            );
        }
        for (i, c) in colors.iter().enumerate() {
            if !c.iter().all(|v| (0.0..=1.0).contains(v)) {
                push("colors", Some(i), "component outside [0, 1]".into());
            }
        }
    }

    let field = &scene.semantic;
    if field.n_points() != n {
        push(
            "semantic",
            None,
            format!("{} rows != {n} points", field.n_points()),
        );
    }
    for (i, row) in field.rows().enumerate() {
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            push("semantic", Some(i), format!("score {v} outside [0, 1]"));
            continue;
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            push("semantic", Some(i), format!("row sums to {sum}, not 1"));
        }
    }

    if scene.offsets.offsets.len() != n {
        push(
            "offsets",
            None,
            format!("length {} != {n} points", scene.offsets.offsets.len()),
        );
    }
    for (i, o) in scene.offsets.offsets.iter().enumerate() {
        if !o.iter().all(|v| v.is_finite()) {
            push("offsets", Some(i), "non-finite offset".into());
        }
    }

    let truth = &scene.truth;
    let c = field.n_classes() as i32;
    let k = truth.n_instances();
    if truth.semantic_label.len() != n {
        push(
            "semantic_label",
            None,
            format!("length {} != {n} points", truth.semantic_label.len()),
        );
    }
    if truth.instance_id.len() != n {
        push(
            "instance_id",
            None,
            format!("length {} != {n} points", truth.instance_id.len()),
        );
    }
    for (i, &l) in truth.semantic_label.iter().enumerate() {
        if l < IGNORE_LABEL || l >= c {
            push("semantic_label", Some(i), format!("label {l} not in -1..{c}"));
        }
    }
    for (g, &cls) in truth.instance_class.iter().enumerate() {
        if cls < 0 || cls >= c {
            push("instance_class", Some(g), format!("class {cls} not in 0..{c}"));
        }
    }
    let mut sums = vec![[0.0f64; 3]; k];
    let mut counts = vec![0usize; k];
    for (i, &id) in truth.instance_id.iter().enumerate() {
        if id < IGNORE_LABEL || id >= k as i32 {
            push("instance_id", Some(i), format!("id {id} not in -1..{k}"));
            continue;
        }
        if id < 0 {
            continue;
        }
        let id = id as usize;
        let expected = truth.instance_class[id];
        if let Some(&label) = truth.semantic_label.get(i) {
            if label != expected {
                push(
                    "semantic_label",
                    Some(i),
                    format!("label {label} differs from class {expected} of instance {id}"),
                );
            }
        }
        if let Some(p) = coords.get(i) {
            for d in 0..3 {
                sums[id][d] += p[d];
            }
            counts[id] += 1;
        }
    }
    if truth.instance_center.len() != k {
        push(
            "instance_center",
            None,
            format!("{} centers for {k} instances", truth.instance_center.len()),
        );
    } else {
        for g in 0..k {
            if counts[g] == 0 {
                push("instance_id", Some(g), "instance has no points".into());
                continue;
            }
            let mean = sums[g].map(|s| s / counts[g] as f64);
            let center = truth.instance_center[g];
            if (0..3).any(|d| (mean[d] - center[d]).abs() > CENTER_TOLERANCE) {
                push(
                    "instance_center",
                    Some(g),
                    format!("center {center:?} differs from point mean {mean:?}"),
                );
            }
        }
    }
    out
}

/// `coords[i] + offsets[i]` for every point.
pub fn shift_points(coords: &[Point3], offsets: &[Point3]) -> Result<Vec<Point3>> {
    if coords.len() != offsets.len() {
        return Err(Error::LengthMismatch {
            what: "offsets",
            expected: coords.len(),
            actual: offsets.len(),
        });
    }
    Ok(coords
        .iter()
        .zip(offsets)
        .map(|(p, o)| [p[0] + o[0], p[1] + o[1], p[2] + o[2]])
        .collect())
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn hard_labels(field: &SemanticField) -> Vec<usize> {
    field.rows().map(argmax).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point_scene() -> Scene {
        let coords = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let truth = GroundTruth::new(&coords, vec![1, 1], vec![0, 0], vec![1]).unwrap();
        Scene {
            cloud: PointCloud::new(coords),
            semantic: SemanticField::from_rows(&[[0.2, 0.8], [0.4, 0.6]]).unwrap(),
            offsets: OffsetField {
                offsets: vec![[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]],
            },
            truth,
        }
    }

    #[test]
    fn valid_scene_has_no_violations() {
        assert_eq!(validate_scene(&two_point_scene()), vec![]);
    }

    #[test]
    fn short_row_sum_is_reported() {
        let mut scene = two_point_scene();
        scene.semantic.row_mut(1)[1] = 0.5;
        let v = validate_scene(&scene);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "semantic");
        assert_eq!(v[0].index, Some(1));
    }

    #[test]
    fn cross_label_mismatch_is_reported() {
        let mut scene = two_point_scene();
        scene.truth.semantic_label[0] = 0;
        let v = validate_scene(&scene);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].field, "semantic_label");
        assert_eq!(v[0].index, Some(0));
    }

    #[test]
    fn stale_center_is_reported() {
        let mut scene = two_point_scene();
        scene.truth.instance_center[0][2] = 0.1;
        let v = validate_scene(&scene);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "instance_center");
    }

    #[test]
    fn colors_out_of_range_are_reported() {
        let mut scene = two_point_scene();
        scene.cloud.colors = Some(vec![[0.0, 0.5, 1.0], [0.0, 1.5, 0.0]]);
        let v = validate_scene(&scene);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].field, v[0].index), ("colors", Some(1)));
    }

    #[test]
    fn shift_points_examples() {
        assert_eq!(
            shift_points(&[[1.0, 1.0, 1.0]], &[[0.0; 3]]).unwrap(),
            vec![[1.0, 1.0, 1.0]]
        );
        assert_eq!(
            shift_points(&[[1.0, 0.0, 0.0]], &[[-1.0, 0.0, 0.0]]).unwrap(),
            vec![[0.0, 0.0, 0.0]]
        );
        assert!(matches!(
            shift_points(&[[0.0; 3]], &[]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ground_truth_offsets_collapse_instances() {
        let coords = vec![
            [0.1, 0.2, 0.3],
            [0.4, -0.2, 0.0],
            [5.0, 5.0, 5.0],
            [5.5, 5.1, 4.9],
            [9.0, 9.0, 9.0],
        ];
        let truth =
            GroundTruth::new(&coords, vec![0, 0, 2, 2, -1], vec![0, 0, 1, 1, -1], vec![0, 2])
                .unwrap();
        let shifted = shift_points(&coords, &truth.offset_targets(&coords)).unwrap();
        for (i, &id) in truth.instance_id.iter().enumerate() {
            if id < 0 {
                assert_eq!(shifted[i], coords[i]);
                continue;
            }
            let members: Vec<_> = (0..coords.len())
                .filter(|&j| truth.instance_id[j] == id)
                .collect();
            for d in 0..3 {
                let mean =
                    members.iter().map(|&j| coords[j][d]).sum::<f64>() / members.len() as f64;
                assert!((shifted[i][d] - mean).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn hard_label_examples() {
        let field = SemanticField::from_rows(&[[0.7, 0.2, 0.1]]).unwrap();
        assert_eq!(hard_labels(&field), vec![0]);
        let field = SemanticField::from_rows(&[[0.5, 0.5]]).unwrap();
        assert_eq!(hard_labels(&field), vec![0]);
        let labels = [2, 0, 1, 2];
        let field = SemanticField::one_hot(3, &labels).unwrap();
        assert_eq!(hard_labels(&field), vec![2, 0, 1, 2]);
    }

    #[test]
    fn semantic_field_rejects_ragged_rows() {
        assert!(SemanticField::from_rows(&[vec![0.5, 0.5], vec![1.0]]).is_err());
        assert!(SemanticField::new(3, vec![0.0; 4]).is_err());
    }
}
