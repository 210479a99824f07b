//! Deterministic synthetic scenes, and a semantic-corruption model in which
//! a contiguous part of an instance is mislabeled while keeping a moderate
//! score for its true class.
//!
//! Every random draw comes from a ChaCha stream keyed by
//! `(seed, instance, purpose)`, so instances can be generated in parallel
//! and the output depends on the seed alone. Generated values are rounded
//! to `f32` so that scenes survive the on-disk format unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{DEFAULT_BANDWIDTH, DEFAULT_TAU};
use crate::scene::{GroundTruth, OffsetField, Point3, PointCloud, Scene, SemanticField};

const LAYOUT_STREAM: u64 = u64::MAX;
const MAX_PLACEMENT_TRIES: usize = 10_000;
const JITTER: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stream {
    Shape = 1,
    Points = 2,
    Corruption = 3,
}

fn stream(seed: u64, instance: u64, purpose: Stream) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&instance.to_le_bytes());
    key[16..24].copy_from_slice(&(purpose as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn q(v: f64) -> f64 {
    v as f32 as f64
}

fn q3(p: Point3) -> Point3 {
    p.map(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_instances: usize,
    pub n_classes: usize,
    /// Target point count per instance, inclusive range.
    pub points_per_instance: [usize; 2],
    /// Side length range of instance boxes, meters. Boxes shrink when
    /// needed to keep sample spacing below the bandwidth.
    pub instance_extent: [f64; 2],
    /// Minimum gap between the bounding spheres of two instances, meters.
    pub min_separation: f64,
    /// Fraction of an instance's points that get corrupted scores.
    pub corruption_fraction: f64,
    /// Fraction of instances selected for corruption.
    pub corrupted_instance_fraction: f64,
    pub corrupted_true_score: f64,
    pub corrupted_wrong_score: f64,
    /// Probability mass moved off the true class in clean score rows.
    pub label_smoothing: f64,
    pub with_colors: bool,
    /// Score threshold the corruption must stay above.
    pub tau: f64,
    /// Grouping bandwidth the sampling density must respect.
    pub bandwidth: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_instances: 5,
            n_classes: 18,
            points_per_instance: [1800, 2200],
            instance_extent: [0.15, 0.35],
            min_separation: 0.5,
            corruption_fraction: 0.0,
            corrupted_instance_fraction: 1.0,
            corrupted_true_score: 0.35,
            corrupted_wrong_score: 0.45,
            label_smoothing: 0.1,
            with_colors: true,
            tau: DEFAULT_TAU,
            bandwidth: DEFAULT_BANDWIDTH,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(Error::param(name, reason));
        if self.n_classes < 1 {
            return bad("n_classes", "must be at least 1".into());
        }
        let [lo, hi] = self.points_per_instance;
        if lo < 1 || lo > hi {
            return bad("points_per_instance", format!("invalid range [{lo}, {hi}]"));
        }
        let [lo, hi] = self.instance_extent;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("instance_extent", format!("invalid range [{lo}, {hi}]"));
        }
        if !(self.bandwidth > 0.0) {
            return bad("bandwidth", format!("{} must be positive", self.bandwidth));
        }
        if !(self.min_separation > 2.0 * self.bandwidth) {
            return bad(
                "min_separation",
                format!("{} must exceed twice the bandwidth {}", self.min_separation, self.bandwidth),
            );
        }
        if !(0.0..1.0).contains(&self.corruption_fraction) {
            return bad("corruption_fraction", format!("{} not in [0, 1)", self.corruption_fraction));
        }
        if !(0.0..=1.0).contains(&self.corrupted_instance_fraction) {
            return bad(
                "corrupted_instance_fraction",
                format!("{} not in [0, 1]", self.corrupted_instance_fraction),
            );
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau", format!("{} not in (0, 1)", self.tau));
        }
        if !(self.corrupted_true_score > self.tau && self.corrupted_true_score < 1.0) {
            return bad(
                "corrupted_true_score",
                format!("{} not in (tau={}, 1)", self.corrupted_true_score, self.tau),
            );
        }
        if !(self.corrupted_wrong_score > 0.0 && self.corrupted_wrong_score < 1.0) {
            return bad("corrupted_wrong_score", format!("{} not in (0, 1)", self.corrupted_wrong_score));
        }
        if self.corrupted_true_score + self.corrupted_wrong_score > 1.0 + 1e-12 {
            return bad("corrupted_wrong_score", "true + wrong score exceeds 1".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing", format!("{} not in [0, 1)", self.label_smoothing));
        }
        Ok(())
    }

    fn clean_row(&self, class: usize) -> Vec<f64> {
        let c = self.n_classes;
        if c == 1 {
            return vec![1.0];
        }
        let mut row = vec![q(self.label_smoothing / (c - 1) as f64); c];
        row[class] = q(1.0 - self.label_smoothing);
        row
    }
}

struct Blob {
    center: Point3,
    dims: Point3,
    radius: f64,
    class: usize,
    color: Point3,
}

/// Sample spacing and per-axis counts for a box holding about `n` points,
/// with nearest neighbors closer than `bandwidth` after jitter.
fn lattice(dims: Point3, n: usize, bandwidth: f64) -> (f64, [usize; 3]) {
    let volume: f64 = dims.iter().product();
    let max_spacing = bandwidth / (1.0 + 2.0 * JITTER) / 1.2;
    let spacing = (volume / n as f64).cbrt().min(max_spacing);
    let scale = (n as f64 * spacing.powi(3) / volume).cbrt();
    let counts = dims.map(|d| ((d * scale / spacing).round() as usize).max(1));
    (spacing, counts)
}

fn layout(config: &SynthConfig) -> Result<Vec<Blob>> {
    let mut rng = stream(config.seed, LAYOUT_STREAM, Stream::Shape);
    let [lo, hi] = config.instance_extent;
    let reach = hi * 3f64.sqrt() + config.min_separation;
    let side = ((config.n_instances as f64).cbrt() * reach * 2.0).max(1.0);
    let mut blobs: Vec<Blob> = Vec::with_capacity(config.n_instances);
    for k in 0..config.n_instances {
        let mut shape = stream(config.seed, k as u64, Stream::Shape);
        let dims = [0; 3].map(|_| shape.random_range(lo..=hi));
        let radius = dims.iter().map(|d| d * d).sum::<f64>().sqrt() / 2.0;
        let class = shape.random_range(0..config.n_classes);
        let color = [0; 3].map(|_| q(shape.random_range(0.2..0.8)));
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let c = [0; 3].map(|_| rng.random_range(0.0..side));
            let clear = blobs.iter().all(|b| {
                let d = ((c[0] - b.center[0]).powi(2)
                    + (c[1] - b.center[1]).powi(2)
                    + (c[2] - b.center[2]).powi(2))
                .sqrt();
                d >= radius + b.radius + config.min_separation
            });
            if clear {
                placed = Some(c);
                break;
            }
        }
        let center = placed.ok_or_else(|| {
            Error::Infeasible(format!("could not place instance {k} after {MAX_PLACEMENT_TRIES} tries"))
        })?;
        blobs.push(Blob {
            center,
            dims,
            radius,
            class,
            color,
        });
    }
    Ok(blobs)
}

fn sample_blob(config: &SynthConfig, k: usize, blob: &Blob) -> Vec<Point3> {
    let mut rng = stream(config.seed, k as u64, Stream::Points);
    let [lo, hi] = config.points_per_instance;
    let n = rng.random_range(lo..=hi);
    let (spacing, [nx, ny, nz]) = lattice(blob.dims, n, config.bandwidth);
    let half = [nx, ny, nz].map(|m| (m - 1) as f64 * spacing / 2.0);
    let mut pts = Vec::with_capacity(nx * ny * nz);
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                let idx = [ix, iy, iz];
                let p: Point3 = std::array::from_fn(|d| {
                    blob.center[d] - half[d]
                        + idx[d] as f64 * spacing
                        + rng.random_range(-JITTER..JITTER) * spacing
                });
                pts.push(q3(p));
            }
        }
    }
    pts
}

/// Generates a clean scene: one lattice-jittered blob per instance with
/// ground-truth offsets and label-smoothed one-hot scores.
pub fn synth_scene(config: &SynthConfig) -> Result<Scene> {
    config.validate()?;
    let blobs = layout(config)?;
    let clouds: Vec<Vec<Point3>> = blobs
        .par_iter()
        .enumerate()
        .map(|(k, b)| sample_blob(config, k, b))
        .collect();

    let n: usize = clouds.iter().map(Vec::len).sum();
    let mut coords = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n * config.n_classes);
    for (k, (blob, pts)) in blobs.iter().zip(&clouds).enumerate() {
        let row = config.clean_row(blob.class);
        for p in pts {
            coords.push(*p);
            colors.push(blob.color);
            labels.push(blob.class as i32);
            ids.push(k as i32);
            scores.extend_from_slice(&row);
        }
    }
    let classes = blobs.iter().map(|b| b.class as i32).collect();
    let truth = GroundTruth::new(&coords, labels, ids, classes)?;
    let offsets = truth.offset_targets(&coords).into_iter().map(q3).collect();
    Ok(Scene {
        cloud: PointCloud {
            coords,
            colors: config.with_colors.then_some(colors),
        },
        semantic: SemanticField::new(config.n_classes, scores)?,
        offsets: OffsetField { offsets },
        truth,
    })
}

/// One corrupted instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    pub instance: usize,
    pub true_class: usize,
    pub wrong_class: usize,
    /// Corrupted point ids, ascending.
    pub points: Vec<usize>,
}

/// Corrupts a half-space cut of each selected instance: the wrong class
/// gets `corrupted_wrong_score`, the true class `corrupted_true_score`, and
/// the rest is spread evenly over the remaining classes.
pub fn corrupt_semantics_detailed(scene: &Scene, config: &SynthConfig) -> Result<(Scene, Vec<Corruption>)> {
    config.validate()?;
    let mut out = scene.clone();
    if config.corruption_fraction == 0.0 {
        return Ok((out, Vec::new()));
    }
    let c = scene.n_classes();
    if c < 2 {
        return Err(Error::param("n_classes", "corruption needs at least 2 classes"));
    }
    let rest = 1.0 - config.corrupted_true_score - config.corrupted_wrong_score;
    if c == 2 && rest.abs() > 1e-9 {
        return Err(Error::param(
            "corrupted_wrong_score",
            "with 2 classes the true and wrong scores must sum to 1",
        ));
    }
    let masks = scene.truth.instance_masks();
    let coords = &scene.cloud.coords;
    let mut corruptions = Vec::new();
    for (k, mask) in masks.iter().enumerate() {
        let mut rng = stream(config.seed, k as u64, Stream::Corruption);
        let selected = rng.random_bool(config.corrupted_instance_fraction);
        let dir: Point3 = {
            let v = [0; 3].map(|_| rng.random_range(-1.0..1.0f64));
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.map(|x| x / norm)
        };
        let true_class = scene.truth.instance_class[k] as usize;
        let mut wrong = rng.random_range(0..c - 1);
        if wrong >= true_class {
            wrong += 1;
        }
        let count = (config.corruption_fraction * mask.len() as f64).round() as usize;
        if !selected || count == 0 {
            continue;
        }
        let mut ranked: Vec<(f64, usize)> = mask
            .iter()
            .map(|&i| (coords[i].iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>(), i))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut points: Vec<usize> = ranked[..count].iter().map(|&(_, i)| i).collect();
        points.sort_unstable();

        let other = if c > 2 { q(rest / (c - 2) as f64) } else { 0.0 };
        let mut row = vec![other; c];
        row[true_class] = q(config.corrupted_true_score);
        row[wrong] = q(config.corrupted_wrong_score);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::param("corruption", format!("corrupted row sums to {sum}")));
        }
        for &i in &points {
            out.semantic.row_mut(i).copy_from_slice(&row);
        }
        corruptions.push(Corruption {
            instance: k,
            true_class,
            wrong_class: wrong,
            points,
        });
    }
    Ok((out, corruptions))
}

pub fn corrupt_semantics(scene: &Scene, config: &SynthConfig) -> Result<Scene> {
    corrupt_semantics_detailed(scene, config).map(|(s, _)| s)
}

/// Clean scene followed by corruption.
pub fn generate(config: &SynthConfig) -> Result<(Scene, Vec<Corruption>)> {
    let clean = synth_scene(config)?;
    corrupt_semantics_detailed(&clean, config)
}
