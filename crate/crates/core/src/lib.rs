//! Bottom-up instance grouping for 3D point clouds.
//!
//! Per-point semantic scores and offset vectors (from a network or from the
//! [`synthesis`] module) are turned into instance proposals by
//! score-threshold grouping, refined into scored instances, and evaluated
//! with the usual AP / coverage metrics. The [`losses`] module holds the
//! training objectives of both stages.

pub mod error;
pub mod evaluation;
pub mod grouping;
pub mod io;
pub mod losses;
pub mod refinement;
pub mod scene;
pub mod spatial;
pub mod synthesis;
pub mod union_find;

pub use error::{Error, Result};
pub use evaluation::{evaluate, EvalReport, GtInstances};
pub use grouping::{group, hard_group, soft_group, GroupingConfig, GroupingMode};
pub use refinement::{assign_targets, heuristic_refine, TargetAssignment};
pub use scene::{
    validate_scene, Aabb, GroundTruth, OffsetField, Point3, PointCloud, Proposal, RefinedInstance,
    Scene, SemanticField,
};
pub use synthesis::{corrupt_semantics, generate, synth_scene, SynthConfig};
