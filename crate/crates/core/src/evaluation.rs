//! Evaluation: the per-class semantic recall/precision sweep over score
//! thresholds, mask and box average precision, and the coverage /
//! precision / recall family used on S3DIS.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refinement::extract_box;
use crate::scene::{argmax, Aabb, GroundTruth, Point3, RefinedInstance, SemanticField};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn ap_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Ground-truth instances prepared for evaluation. Instances without points
/// are dropped.
#[derive(Debug, Clone)]
pub struct GtInstances {
    pub n_classes: usize,
    pub masks: Vec<Vec<usize>>,
    pub classes: Vec<usize>,
    pub boxes: Vec<Aabb>,
    owner: Vec<Option<usize>>,
}

impl GtInstances {
    pub fn from_truth(truth: &GroundTruth, coords: &[Point3], n_classes: usize) -> Result<Self> {
        let mut masks = Vec::new();
        let mut classes = Vec::new();
        let mut boxes = Vec::new();
        let mut owner = vec![None; truth.instance_id.len()];
        for (g, mask) in truth.instance_masks().into_iter().enumerate() {
            if mask.is_empty() {
                continue;
            }
            let class = truth.instance_class[g];
            if class < 0 || class as usize >= n_classes {
                return Err(Error::OutOfRange {
                    what: "instance class",
                    index: class.max(0) as usize,
                    limit: n_classes,
                });
            }
            for &i in &mask {
                owner[i] = Some(masks.len());
            }
            boxes.push(extract_box(&mask, coords)?);
            classes.push(class as usize);
            masks.push(mask);
        }
        Ok(Self {
            n_classes,
            masks,
            classes,
            boxes,
            owner,
        })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Classes with at least one instance, ascending.
    pub fn present_classes(&self) -> Vec<usize> {
        let mut c = self.classes.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Mask IoU of `mask` with every instance.
    pub fn mask_ious(&self, mask: &[usize]) -> Vec<f64> {
        let mut inter = vec![0usize; self.len()];
        for &i in mask {
            if let Some(Some(g)) = self.owner.get(i) {
                inter[*g] += 1;
            }
        }
        inter
            .iter()
            .zip(&self.masks)
            .map(|(&n, m)| {
                if n == 0 {
                    0.0
                } else {
                    n as f64 / (mask.len() + m.len() - n) as f64
                }
            })
            .collect()
    }
}

/// Prediction as seen by the matcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub class: usize,
    pub confidence: f64,
    /// Secondary sort key for equal confidences (smaller first).
    pub tie_key: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IouCriterion {
    AtLeast(f64),
    Above(f64),
}

impl IouCriterion {
    fn accepts(self, iou: f64) -> bool {
        match self {
            IouCriterion::AtLeast(t) => iou >= t,
            IouCriterion::Above(t) => iou > t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Candidate indices in descending-confidence order.
    pub order: Vec<usize>,
    /// Matched ground-truth index per candidate.
    pub matched: Vec<Option<usize>>,
}

impl Matching {
    pub fn is_tp(&self, candidate: usize) -> bool {
        self.matched[candidate].is_some()
    }
}

pub fn confidence_order(cands: &[Candidate]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[b]
            .confidence
            .partial_cmp(&cands[a].confidence)
            .unwrap_or(Ordering::Equal)
            .then(cands[a].tie_key.cmp(&cands[b].tie_key))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy one-to-one matching in descending confidence. Each candidate takes
/// the unmatched same-class ground truth with the highest overlap (lowest
/// index on ties) if the criterion accepts it.
///
/// `overlaps[p][g]` is the overlap of candidate `p` with ground truth `g`.
pub fn greedy_match(
    cands: &[Candidate],
    gt_classes: &[usize],
    overlaps: &[Vec<f64>],
    criterion: IouCriterion,
) -> Matching {
    let order = confidence_order(cands);
    let mut taken = vec![false; gt_classes.len()];
    let mut matched = vec![None; cands.len()];
    for &p in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, &class) in gt_classes.iter().enumerate() {
            if taken[g] || class != cands[p].class {
                continue;
            }
            let iou = overlaps[p][g];
            if criterion.accepts(iou) && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            matched[p] = Some(g);
        }
    }
    Matching { order, matched }
}

/// Area under the right-envelope precision/recall curve of one class,
/// given its true-positive flags in confidence order.
pub fn average_precision_of_sequence(tp_flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut precision: Vec<f64> = tp_flags
        .iter()
        .enumerate()
        .map(|(k, &hit)| {
            tp += hit as usize;
            tp as f64 / (k + 1) as f64
        })
        .collect();
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    tp_flags
        .iter()
        .zip(&precision)
        .filter(|(&hit, _)| hit)
        .map(|(_, &p)| p)
        .sum::<f64>()
        / n_gt as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    /// AP of every class present in the ground truth.
    pub per_class: BTreeMap<usize, f64>,
    /// Mean over `per_class`; `None` without ground truth.
    pub mean: Option<f64>,
}

/// Per-class AP from a candidate/overlap description of a scene.
pub fn ap_from_overlaps(
    cands: &[Candidate],
    gt_classes: &[usize],
    overlaps: &[Vec<f64>],
    iou_threshold: f64,
) -> ApResult {
    let m = greedy_match(cands, gt_classes, overlaps, IouCriterion::AtLeast(iou_threshold));
    let mut n_gt: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in gt_classes {
        *n_gt.entry(c).or_default() += 1;
    }
    let per_class: BTreeMap<usize, f64> = n_gt
        .iter()
        .map(|(&class, &n)| {
            let flags: Vec<bool> = m
                .order
                .iter()
                .filter(|&&p| cands[p].class == class)
                .map(|&p| m.is_tp(p))
                .collect();
            (class, average_precision_of_sequence(&flags, n))
        })
        .collect();
    let mean = if per_class.is_empty() {
        None
    } else {
        Some(per_class.values().sum::<f64>() / per_class.len() as f64)
    };
    ApResult { per_class, mean }
}

fn foreground<'a>(preds: &'a [RefinedInstance], gt: &GtInstances) -> Vec<&'a RefinedInstance> {
    preds.iter().filter(|p| p.category < gt.n_classes).collect()
}

fn candidates(preds: &[&RefinedInstance]) -> Vec<Candidate> {
    preds
        .iter()
        .map(|p| Candidate {
            class: p.category,
            confidence: p.confidence,
            tie_key: p.mask.first().copied().unwrap_or(usize::MAX),
        })
        .collect()
}

fn mask_overlaps(preds: &[&RefinedInstance], gt: &GtInstances) -> Vec<Vec<f64>> {
    preds.iter().map(|p| gt.mask_ious(&p.mask)).collect()
}

fn box_overlaps(preds: &[&RefinedInstance], gt: &GtInstances) -> Result<Vec<Vec<f64>>> {
    preds
        .iter()
        .map(|p| gt.boxes.iter().map(|b| box_iou(&p.bbox, b)).collect())
        .collect()
}

/// Result of [`match_predictions`], indexed like the input predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatch {
    /// `None` for background predictions, which are not evaluated.
    pub is_tp: Vec<Option<bool>>,
    pub matched_gt: Vec<Option<usize>>,
    pub gt_per_class: BTreeMap<usize, usize>,
}

pub fn match_predictions(
    preds: &[RefinedInstance],
    gt: &GtInstances,
    iou_threshold: f64,
) -> PredictionMatch {
    let kept: Vec<usize> = (0..preds.len())
        .filter(|&i| preds[i].category < gt.n_classes)
        .collect();
    let fg: Vec<&RefinedInstance> = kept.iter().map(|&i| &preds[i]).collect();
    let m = greedy_match(
        &candidates(&fg),
        &gt.classes,
        &mask_overlaps(&fg, gt),
        IouCriterion::AtLeast(iou_threshold),
    );
    let mut is_tp = vec![None; preds.len()];
    let mut matched_gt = vec![None; preds.len()];
    for (k, &i) in kept.iter().enumerate() {
        is_tp[i] = Some(m.matched[k].is_some());
        matched_gt[i] = m.matched[k];
    }
    let mut gt_per_class = BTreeMap::new();
    for &c in &gt.classes {
        *gt_per_class.entry(c).or_default() += 1;
    }
    PredictionMatch {
        is_tp,
        matched_gt,
        gt_per_class,
    }
}

pub fn average_precision(preds: &[RefinedInstance], gt: &GtInstances, iou_threshold: f64) -> ApResult {
    let fg = foreground(preds, gt);
    ap_from_overlaps(&candidates(&fg), &gt.classes, &mask_overlaps(&fg, gt), iou_threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSuite {
    pub ap: f64,
    pub ap50: f64,
    pub ap25: f64,
    /// `[ap, ap50, ap25]` per class present in the ground truth.
    pub per_class: BTreeMap<usize, [f64; 3]>,
}

fn suite_from<F>(gt: &GtInstances, mut at: F) -> Result<ApSuite>
where
    F: FnMut(f64) -> ApResult,
{
    if gt.is_empty() {
        return Err(Error::Empty("ground-truth instances"));
    }
    let sweep: Vec<ApResult> = ap_thresholds().into_iter().map(&mut at).collect();
    let r50 = &sweep[0];
    let r25 = at(0.25);
    let mean_of = |r: &ApResult| r.mean.unwrap_or(0.0);
    let ap = sweep.iter().map(mean_of).sum::<f64>() / sweep.len() as f64;
    let per_class = r50
        .per_class
        .keys()
        .map(|&c| {
            let ap_c = sweep.iter().map(|r| r.per_class[&c]).sum::<f64>() / sweep.len() as f64;
            (c, [ap_c, r50.per_class[&c], r25.per_class[&c]])
        })
        .collect();
    Ok(ApSuite {
        ap,
        ap50: mean_of(r50),
        ap25: mean_of(&r25),
        per_class,
    })
}

/// AP averaged over IoU 0.50:0.95, plus AP at 0.50 and 0.25.
pub fn ap_suite(preds: &[RefinedInstance], gt: &GtInstances) -> Result<ApSuite> {
    let fg = foreground(preds, gt);
    let cands = candidates(&fg);
    let overlaps = mask_overlaps(&fg, gt);
    suite_from(gt, |t| ap_from_overlaps(&cands, &gt.classes, &overlaps, t))
}

/// Axis-aligned box IoU. Zero-volume boxes give 0, except two identical
/// boxes, which give 1.
pub fn box_iou(a: &Aabb, b: &Aabb) -> Result<f64> {
    for bx in [a, b] {
        if !(0..3).all(|d| bx.min[d] <= bx.max[d]) {
            return Err(Error::param("box", format!("min {:?} exceeds max {:?}", bx.min, bx.max)));
        }
    }
    if a == b {
        return Ok(1.0);
    }
    let inter: f64 = (0..3)
        .map(|d| (a.max[d].min(b.max[d]) - a.min[d].max(b.min[d])).max(0.0))
        .product();
    let union = a.volume() + b.volume() - inter;
    Ok(if union > 0.0 { inter / union } else { 0.0 })
}

/// Box AP class-means at each threshold; boxes come from the masks.
pub fn box_ap(preds: &[RefinedInstance], gt: &GtInstances, thresholds: &[f64]) -> Result<Vec<f64>> {
    let fg = foreground(preds, gt);
    let cands = candidates(&fg);
    let overlaps = box_overlaps(&fg, gt)?;
    Ok(thresholds
        .iter()
        .map(|&t| {
            ap_from_overlaps(&cands, &gt.classes, &overlaps, t)
                .mean
                .unwrap_or(0.0)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageMetrics {
    pub mcov: f64,
    pub mwcov: f64,
    pub mprec50: f64,
    pub mrec50: f64,
    pub notes: Vec<String>,
}

/// Mean coverage, weighted coverage, and precision / recall at IoU > 0.5,
/// each averaged over the classes present in the ground truth.
pub fn s3dis_metrics(preds: &[RefinedInstance], gt: &GtInstances) -> Result<CoverageMetrics> {
    if gt.is_empty() {
        return Err(Error::Empty("ground-truth instances"));
    }
    let fg = foreground(preds, gt);
    let overlaps = mask_overlaps(&fg, gt);
    let matching = greedy_match(&candidates(&fg), &gt.classes, &overlaps, IouCriterion::Above(0.5));
    let classes = gt.present_classes();
    let mut notes = Vec::new();
    let (mut cov, mut wcov, mut prec, mut rec) = (0.0, 0.0, 0.0, 0.0);
    for &c in &classes {
        let gts: Vec<usize> = (0..gt.len()).filter(|&g| gt.classes[g] == c).collect();
        let ps: Vec<usize> = (0..fg.len()).filter(|&p| fg[p].category == c).collect();
        let best: Vec<f64> = gts
            .iter()
            .map(|&g| ps.iter().map(|&p| overlaps[p][g]).fold(0.0, f64::max))
            .collect();
        let sizes: Vec<f64> = gts.iter().map(|&g| gt.masks[g].len() as f64).collect();
        let total: f64 = sizes.iter().sum();
        cov += best.iter().sum::<f64>() / gts.len() as f64;
        wcov += best.iter().zip(&sizes).map(|(b, s)| b * s / total).sum::<f64>();
        let tp = ps.iter().filter(|&&p| matching.is_tp(p)).count() as f64;
        if ps.is_empty() {
            notes.push(format!("class {c}: no predictions, precision counted as 0"));
        } else {
            prec += tp / ps.len() as f64;
        }
        rec += tp / gts.len() as f64;
    }
    let n = classes.len() as f64;
    Ok(CoverageMetrics {
        mcov: cov / n,
        mwcov: wcov / n,
        mprec50: prec / n,
        mrec50: rec / n,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap25: f64,
    pub per_class_ap: BTreeMap<usize, [f64; 3]>,
    pub mcov: f64,
    pub mwcov: f64,
    pub mprec50: f64,
    pub mrec50: f64,
    pub box_ap50: f64,
    pub box_ap25: f64,
    pub notes: Vec<String>,
}

pub fn evaluate(preds: &[RefinedInstance], gt: &GtInstances) -> Result<EvalReport> {
    let suite = ap_suite(preds, gt)?;
    let cov = s3dis_metrics(preds, gt)?;
    let boxes = box_ap(preds, gt, &[0.5, 0.25])?;
    Ok(EvalReport {
        ap: suite.ap,
        ap50: suite.ap50,
        ap25: suite.ap25,
        per_class_ap: suite.per_class,
        mcov: cov.mcov,
        mwcov: cov.mwcov,
        mprec50: cov.mprec50,
        mrec50: cov.mrec50,
        box_ap50: boxes[0],
        box_ap25: boxes[1],
        notes: cov.notes,
    })
}

impl EvalReport {
    /// Flat `(key, value)` listing of every field. Notes are numbered.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = [
            ("ap", self.ap),
            ("ap50", self.ap50),
            ("ap25", self.ap25),
            ("mcov", self.mcov),
            ("mwcov", self.mwcov),
            ("mprec50", self.mprec50),
            ("mrec50", self.mrec50),
            ("box_ap50", self.box_ap50),
            ("box_ap25", self.box_ap25),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        for (c, [ap, ap50, ap25]) in &self.per_class_ap {
            kv.push((format!("class.{c}.ap"), ap.to_string()));
            kv.push((format!("class.{c}.ap50"), ap50.to_string()));
            kv.push((format!("class.{c}.ap25"), ap25.to_string()));
        }
        for (i, note) in self.notes.iter().enumerate() {
            kv.push((format!("note.{i}"), note.clone()));
        }
        kv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrPoint {
    /// `None` when the class has no ground-truth points.
    pub recall: Option<f64>,
    /// `None` when no point is assigned to the class.
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrSweep {
    pub taus: Vec<f64>,
    /// `[tau index][class]`.
    pub thresholded: Vec<Vec<PrPoint>>,
    /// Argmax-prediction baseline, per class.
    pub hard: Vec<PrPoint>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl PrSweep {
    /// Class-averaged point, over classes where each quantity is defined.
    pub fn class_mean(points: &[PrPoint]) -> PrPoint {
        PrPoint {
            recall: mean_of(points.iter().map(|p| p.recall)),
            precision: mean_of(points.iter().map(|p| p.precision)),
        }
    }

    /// Tabular form: `(tau or "hard", class or "mean", recall, precision)`,
    /// with absent values as `NA`.
    pub fn table(&self) -> Vec<[String; 4]> {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut rows = Vec::new();
        let mut block = |tau: String, points: &[PrPoint]| {
            for (c, p) in points.iter().enumerate() {
                rows.push([tau.clone(), c.to_string(), fmt(p.recall), fmt(p.precision)]);
            }
            let m = Self::class_mean(points);
            rows.push([tau, "mean".to_string(), fmt(m.recall), fmt(m.precision)]);
        };
        for (t, points) in self.taus.iter().zip(&self.thresholded) {
            block(t.to_string(), points);
        }
        block("hard".to_string(), &self.hard);
        rows
    }
}

fn pr_points(n_classes: usize, labels: &[i32], predicted: impl Fn(usize, usize) -> bool) -> Vec<PrPoint> {
    let mut hits = vec![0usize; n_classes];
    let mut pred = vec![0usize; n_classes];
    let mut truth = vec![0usize; n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l < 0 {
            continue;
        }
        truth[l as usize] += 1;
        for j in 0..n_classes {
            if predicted(i, j) {
                pred[j] += 1;
                if l as usize == j {
                    hits[j] += 1;
                }
            }
        }
    }
    (0..n_classes)
        .map(|j| PrPoint {
            recall: (truth[j] > 0).then(|| hits[j] as f64 / truth[j] as f64),
            precision: (pred[j] > 0).then(|| hits[j] as f64 / pred[j] as f64),
        })
        .collect()
}

/// Per-class recall and precision of the thresholded class membership
/// `score > tau`, for each tau, plus the argmax baseline. Points labeled
/// `-1` are skipped.
pub fn semantic_pr_sweep(field: &SemanticField, labels: &[i32], taus: &[f64]) -> Result<PrSweep> {
    if taus.is_empty() {
        return Err(Error::Empty("tau list"));
    }
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::param("tau", format!("{t} not in (0, 1)")));
    }
    if labels.len() != field.n_points() {
        return Err(Error::LengthMismatch {
            what: "semantic labels",
            expected: field.n_points(),
            actual: labels.len(),
        });
    }
    let c = field.n_classes();
    if let Some(&l) = labels.iter().find(|&&l| l < -1 || l >= c as i32) {
        return Err(Error::param("labels", format!("label {l} not in -1..{c}")));
    }
    let thresholded = taus
        .iter()
        .map(|&t| pr_points(c, labels, |i, j| field.score(i, j) > t))
        .collect();
    let hard_labels: Vec<usize> = field.rows().map(argmax).collect();
    let hard = pr_points(c, labels, |i, j| hard_labels[i] == j);
    Ok(PrSweep {
        taus: taus.to_vec(),
        thresholded,
        hard,
    })
}
