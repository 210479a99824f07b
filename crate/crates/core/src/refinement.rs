//! Top-down stage: learning-target assignment for proposals, a heuristic
//! refiner that stands in for a trained network, score fusion and box
//! extraction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{argmax, Aabb, GroundTruth, Point3, Proposal, RefinedInstance, SemanticField};

pub const DEFAULT_POSITIVE_IOU: f64 = 0.5;
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

/// Size of the intersection of two sorted, duplicate-free id lists.
pub fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// `|a ∩ b| / |a ∪ b|` over sorted, duplicate-free id lists.
pub fn mask_iou(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() && b.is_empty() {
        return Err(Error::Empty("both masks"));
    }
    let inter = intersection_size(a, b);
    Ok(inter as f64 / (a.len() + b.len() - inter) as f64)
}

/// IoU of the predicted mask with its ground-truth mask.
pub fn mask_score_target(predicted: &[usize], gt_mask: &[usize]) -> Result<f64> {
    if gt_mask.is_empty() {
        return Err(Error::Empty("ground-truth mask"));
    }
    mask_iou(predicted, gt_mask)
}

pub fn extract_box(mask: &[usize], coords: &[Point3]) -> Result<Aabb> {
    let (&first, rest) = mask.split_first().ok_or(Error::Empty("mask"))?;
    let get = |i: usize| {
        coords.get(i).ok_or(Error::OutOfRange {
            what: "mask point",
            index: i,
            limit: coords.len(),
        })
    };
    let p = get(first)?;
    let mut bbox = Aabb { min: *p, max: *p };
    for &i in rest {
        let p = get(i)?;
        for d in 0..3 {
            bbox.min[d] = bbox.min[d].min(p[d]);
            bbox.max[d] = bbox.max[d].max(p[d]);
        }
    }
    Ok(bbox)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetAssignment {
    pub is_positive: bool,
    pub gt_index: Option<usize>,
    /// Assigned instance class, or `n_classes` (background) for negatives.
    pub class_target: usize,
    /// Per proposal point: does it belong to the assigned instance.
    pub mask_target: Option<Vec<bool>>,
    /// IoU of the proposal with its assigned instance.
    pub mask_score_target: Option<f64>,
    pub max_iou: f64,
}

/// IoU of `ids` with every ground-truth instance. `gt_sizes[g]` is the
/// point count of instance `g`.
pub fn ious_with_instances(ids: &[usize], truth: &GroundTruth, gt_sizes: &[usize]) -> Vec<f64> {
    let mut inter = vec![0usize; gt_sizes.len()];
    for &i in ids {
        if let Some(&g) = truth.instance_id.get(i) {
            if g >= 0 {
                inter[g as usize] += 1;
            }
        }
    }
    inter
        .iter()
        .zip(gt_sizes)
        .map(|(&n, &size)| {
            if n == 0 {
                0.0
            } else {
                n as f64 / (ids.len() + size - n) as f64
            }
        })
        .collect()
}

/// Marks each proposal positive when its best IoU with a ground-truth
/// instance is strictly above `iou_threshold`, and assigns it to that
/// instance (lowest index on ties).
pub fn assign_targets(
    proposals: &[Proposal],
    truth: &GroundTruth,
    n_classes: usize,
    iou_threshold: f64,
) -> Vec<TargetAssignment> {
    let sizes: Vec<usize> = truth.instance_masks().iter().map(Vec::len).collect();
    proposals
        .iter()
        .map(|p| {
            let ious = ious_with_instances(&p.point_ids, truth, &sizes);
            let best = argmax(&ious);
            let max_iou = ious.get(best).copied().unwrap_or(0.0);
            if max_iou > iou_threshold {
                let mask_target = p
                    .point_ids
                    .iter()
                    .map(|&i| truth.instance_id[i] == best as i32)
                    .collect();
                TargetAssignment {
                    is_positive: true,
                    gt_index: Some(best),
                    class_target: truth.instance_class[best] as usize,
                    mask_target: Some(mask_target),
                    mask_score_target: Some(max_iou),
                    max_iou,
                }
            } else {
                TargetAssignment {
                    is_positive: false,
                    gt_index: None,
                    class_target: n_classes,
                    mask_target: None,
                    mask_score_target: None,
                    max_iou,
                }
            }
        })
        .collect()
}

/// Builds a refined instance from a mask and its two scores. Confidence is
/// the product of the scores; the box is recomputed from the mask.
pub fn fuse(
    mask: Vec<usize>,
    category: usize,
    class_score: f64,
    mask_score: f64,
    coords: &[Point3],
) -> Result<RefinedInstance> {
    let bbox = extract_box(&mask, coords)?;
    Ok(RefinedInstance {
        mask,
        category,
        class_score,
        mask_score,
        confidence: class_score * mask_score,
        bbox,
    })
}

/// Network-free refinement from the member semantic scores.
///
/// Class scores are the mean member rows plus a background entry of
/// `1 - max foreground mean`. The mask keeps members whose per-point score
/// for the chosen category exceeds `mask_threshold` (the whole proposal if
/// none do); for background the per-point score is `1 - max row entry`.
pub fn heuristic_refine(
    proposal: &Proposal,
    field: &SemanticField,
    coords: &[Point3],
    mask_threshold: f64,
) -> Result<RefinedInstance> {
    if proposal.is_empty() {
        return Err(Error::Empty("proposal"));
    }
    let c = field.n_classes();
    let mut means = vec![0.0; c + 1];
    for &i in &proposal.point_ids {
        if i >= field.n_points() {
            return Err(Error::OutOfRange {
                what: "proposal point",
                index: i,
                limit: field.n_points(),
            });
        }
        for (m, s) in means.iter_mut().zip(field.row(i)) {
            *m += s;
        }
    }
    let n = proposal.len() as f64;
    means[..c].iter_mut().for_each(|m| *m /= n);
    means[c] = 1.0 - means[..c].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let category = argmax(&means);
    let class_score = means[category];

    let point_score = |i: usize| {
        let row = field.row(i);
        if category == c {
            1.0 - row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        } else {
            row[category]
        }
    };
    let mut mask: Vec<usize> = proposal
        .point_ids
        .iter()
        .copied()
        .filter(|&i| point_score(i) > mask_threshold)
        .collect();
    if mask.is_empty() {
        mask = proposal.point_ids.clone();
    }
    let mask_score = mask.iter().map(|&i| point_score(i)).sum::<f64>() / mask.len() as f64;
    fuse(mask, category, class_score, mask_score, coords)
}

pub fn heuristic_refine_all(
    proposals: &[Proposal],
    field: &SemanticField,
    coords: &[Point3],
    mask_threshold: f64,
) -> Result<Vec<RefinedInstance>> {
    proposals
        .par_iter()
        .map(|p| heuristic_refine(p, field, coords, mask_threshold))
        .collect()
}

/// Externally predicted refinement of one proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementRecord {
    pub category: usize,
    pub class_score: f64,
    pub mask_score: f64,
    /// One flag per proposal point.
    pub mask: Vec<bool>,
}

impl RefinementRecord {
    /// Record reproducing an already refined instance of `proposal`.
    pub fn from_instance(proposal: &Proposal, instance: &RefinedInstance) -> Self {
        Self {
            category: instance.category,
            class_score: instance.class_score,
            mask_score: instance.mask_score,
            mask: proposal
                .point_ids
                .iter()
                .map(|i| instance.mask.binary_search(i).is_ok())
                .collect(),
        }
    }
}

fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::param(name, format!("{v} outside [0, 1]")))
    }
}

/// Combines proposals with externally predicted refinements, recomputing
/// confidence and box.
pub fn apply_external_refinement(
    proposals: &[Proposal],
    records: &[RefinementRecord],
    coords: &[Point3],
    n_classes: usize,
) -> Result<Vec<RefinedInstance>> {
    if proposals.len() != records.len() {
        return Err(Error::LengthMismatch {
            what: "refinement records",
            expected: proposals.len(),
            actual: records.len(),
        });
    }
    proposals
        .iter()
        .zip(records)
        .map(|(p, r)| {
            check_unit("class_score", r.class_score)?;
            check_unit("mask_score", r.mask_score)?;
            if r.category > n_classes {
                return Err(Error::OutOfRange {
                    what: "category",
                    index: r.category,
                    limit: n_classes + 1,
                });
            }
            if r.mask.len() != p.len() {
                return Err(Error::LengthMismatch {
                    what: "mask flags",
                    expected: p.len(),
                    actual: r.mask.len(),
                });
            }
            let mask = p
                .point_ids
                .iter()
                .zip(&r.mask)
                .filter(|(_, &keep)| keep)
                .map(|(&i, _)| i)
                .collect();
            fuse(mask, r.category, r.class_score, r.mask_score, coords)
        })
        .collect()
}
