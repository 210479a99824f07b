//! Bottom-up grouping. Points are shifted by their offsets, split into
//! per-class subsets, and linked into connected components under a
//! distance bandwidth.
//!
//! Soft grouping builds each class subset from a score threshold, so one
//! point can join the subsets of several classes. Hard grouping uses the
//! argmax label and puts every point in exactly one subset.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{hard_labels, shift_points, Point3, Proposal, Scene, SemanticField};
use crate::spatial::{cell_key, dist2, CellKey, VoxelHashGrid};
use crate::union_find::UnionFind;

pub const DEFAULT_TAU: f64 = 0.2;
pub const DEFAULT_BANDWIDTH: f64 = 0.04;
pub const DEFAULT_MIN_POINTS: usize = 50;
pub const DEFAULT_VOXEL_SIZE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupingConfig {
    /// Score threshold; a point joins class `j` when its score for `j` is
    /// strictly greater.
    pub tau: f64,
    /// Linking distance in meters, strict.
    pub bandwidth: f64,
    /// Components smaller than this are discarded.
    pub min_points: usize,
    pub n_classes: usize,
}

impl GroupingConfig {
    pub fn new(n_classes: usize) -> Self {
        Self {
            tau: DEFAULT_TAU,
            bandwidth: DEFAULT_BANDWIDTH,
            min_points: DEFAULT_MIN_POINTS,
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::param("tau", format!("{} not in (0, 1)", self.tau)));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::param(
                "bandwidth",
                format!("{} must be positive", self.bandwidth),
            ));
        }
        if self.min_points == 0 {
            return Err(Error::param("min_points", "must be at least 1"));
        }
        if self.n_classes == 0 {
            return Err(Error::param("n_classes", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupingMode {
    Soft,
    Hard,
}

impl fmt::Display for GroupingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupingMode::Soft => "soft",
            GroupingMode::Hard => "hard",
        })
    }
}

impl FromStr for GroupingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(GroupingMode::Soft),
            "hard" => Ok(GroupingMode::Hard),
            other => Err(Error::param("mode", format!("unknown grouping mode {other:?}"))),
        }
    }
}

/// Point ids whose score for `class` is strictly greater than `tau`.
pub fn class_subset(field: &SemanticField, class: usize, tau: f64) -> Result<Vec<usize>> {
    if class >= field.n_classes() {
        return Err(Error::OutOfRange {
            what: "class",
            index: class,
            limit: field.n_classes(),
        });
    }
    Ok(field
        .rows()
        .enumerate()
        .filter(|(_, row)| row[class] > tau)
        .map(|(i, _)| i)
        .collect())
}

// Offsets into the 27-neighborhood that are lexicographically after the
// origin; with the origin itself this visits each unordered cell pair once.
const FORWARD_NEIGHBORS: [[i64; 3]; 13] = [
    [0, 0, 1],
    [0, 1, -1],
    [0, 1, 0],
    [0, 1, 1],
    [1, -1, -1],
    [1, -1, 0],
    [1, -1, 1],
    [1, 0, -1],
    [1, 0, 0],
    [1, 0, 1],
    [1, 1, -1],
    [1, 1, 0],
    [1, 1, 1],
];

/// Partitions `ids` into maximal sets linked by distance `< bandwidth`.
///
/// Components are sorted internally and ordered by their smallest member.
pub fn connected_components(
    ids: &[usize],
    coords: &[Point3],
    bandwidth: f64,
) -> Result<Vec<Vec<usize>>> {
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let local: Vec<Point3> = sorted
        .iter()
        .map(|&i| {
            coords.get(i).copied().ok_or(Error::OutOfRange {
                what: "point id",
                index: i,
                limit: coords.len(),
            })
        })
        .collect::<Result<_>>()?;
    let positions: Vec<usize> = (0..local.len()).collect();
    let grid = VoxelHashGrid::build(&local, &positions, bandwidth)?;
    let r2 = bandwidth * bandwidth;
    let mut uf = UnionFind::new(local.len());

    // Collapse each cell into star-shaped clumps: points sharing a half-size
    // sub-cell are joined to the clump leader when the link is verified, so
    // dense cells cost linear time and later pair scans run between clumps.
    let half = bandwidth / 2.0;
    let mut clumps: HashMap<CellKey, Vec<Vec<usize>>> = HashMap::with_capacity(grid.n_cells());
    for (key, members) in grid.cells() {
        let mut by_sub: HashMap<CellKey, usize> = HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for &a in members {
            let sub = cell_key(&local[a], half);
            match by_sub.get(&sub) {
                Some(&g) if dist2(&local[a], &local[groups[g][0]]) < r2 => {
                    uf.union(a, groups[g][0]);
                    groups[g].push(a);
                }
                Some(_) => groups.push(vec![a]),
                None => {
                    by_sub.insert(sub, groups.len());
                    groups.push(vec![a]);
                }
            }
        }
        clumps.insert(*key, groups);
    }

    let link = |uf: &mut UnionFind, ga: &[usize], gb: &[usize]| {
        if uf.find(ga[0]) == uf.find(gb[0]) {
            return;
        }
        for &a in ga {
            if let Some(&b) = gb.iter().find(|&&b| dist2(&local[a], &local[b]) < r2) {
                uf.union(a, b);
                return;
            }
        }
    };
    for (key, groups) in &clumps {
        for (n, ga) in groups.iter().enumerate() {
            for gb in &groups[n + 1..] {
                link(&mut uf, ga, gb);
            }
        }
        for off in FORWARD_NEIGHBORS {
            let other = [key[0] + off[0], key[1] + off[1], key[2] + off[2]];
            let Some(others) = clumps.get(&other) else {
                continue;
            };
            for ga in groups {
                for gb in others {
                    link(&mut uf, ga, gb);
                }
            }
        }
    }

    Ok(uf
        .groups()
        .into_iter()
        .map(|g| g.into_iter().map(|p| sorted[p]).collect())
        .collect())
}

fn check_inputs(scene: &Scene, config: &GroupingConfig) -> Result<Vec<Point3>> {
    config.validate()?;
    if config.n_classes != scene.n_classes() {
        return Err(Error::LengthMismatch {
            what: "grouping classes",
            expected: scene.n_classes(),
            actual: config.n_classes,
        });
    }
    if scene.semantic.n_points() != scene.n_points() {
        return Err(Error::LengthMismatch {
            what: "semantic rows",
            expected: scene.n_points(),
            actual: scene.semantic.n_points(),
        });
    }
    shift_points(&scene.cloud.coords, &scene.offsets.offsets)
}

fn group_subsets(
    subsets: Vec<Vec<usize>>,
    shifted: &[Point3],
    config: &GroupingConfig,
) -> Result<Vec<Proposal>> {
    let per_class: Vec<Vec<Proposal>> = subsets
        .into_par_iter()
        .enumerate()
        .map(|(class, ids)| {
            let comps = connected_components(&ids, shifted, config.bandwidth)?;
            Ok(comps
                .into_iter()
                .filter(|c| c.len() >= config.min_points)
                .map(|point_ids| Proposal {
                    point_ids,
                    source_class: class,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_class.into_iter().flatten().collect())
}

/// Score-threshold grouping. Output is ordered by `(source_class, min id)`.
pub fn soft_group(scene: &Scene, config: &GroupingConfig) -> Result<Vec<Proposal>> {
    let shifted = check_inputs(scene, config)?;
    let subsets = (0..config.n_classes)
        .map(|j| class_subset(&scene.semantic, j, config.tau))
        .collect::<Result<Vec<_>>>()?;
    group_subsets(subsets, &shifted, config)
}

/// Argmax-label grouping; `config.tau` is unused.
pub fn hard_group(scene: &Scene, config: &GroupingConfig) -> Result<Vec<Proposal>> {
    let shifted = check_inputs(scene, config)?;
    let mut subsets = vec![Vec::new(); config.n_classes];
    for (i, label) in hard_labels(&scene.semantic).into_iter().enumerate() {
        subsets[label].push(i);
    }
    group_subsets(subsets, &shifted, config)
}

pub fn group(scene: &Scene, config: &GroupingConfig, mode: GroupingMode) -> Result<Vec<Proposal>> {
    match mode {
        GroupingMode::Soft => soft_group(scene, config),
        GroupingMode::Hard => hard_group(scene, config),
    }
}
