//! File formats.
//!
//! Scene files (`SGSC`) and refinement files (`SGRF`) share one framing: a
//! four-byte magic, a little-endian `u32` version, declared counts, then
//! little-endian arrays in a fixed order. Proposal and instance lists are
//! JSON. All writes go to a temporary file that is renamed into place.
//!
//! Scene layout after the magic:
//!
//! ```text
//! u32 version | u64 N | u32 C | u32 K | u32 flags (bit 0: colors)
//! f32 coords[N*3] | f32 colors[N*3] (if flagged) | f32 scores[N*C]
//! f32 offsets[N*3] | i32 semantic_label[N] | i32 instance_id[N]
//! i32 instance_class[K]
//! ```
//!
//! Refinement layout after the magic:
//!
//! ```text
//! u32 version | u64 K
//! K records: u32 category | f64 class_score | f64 mask_score
//!            u64 M | u8 mask_flag[M]
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::GroupingMode;
use crate::refinement::{apply_external_refinement, RefinementRecord};
use crate::scene::{
    GroundTruth, OffsetField, Point3, PointCloud, Proposal, RefinedInstance, Scene, SemanticField,
};

pub const SCENE_MAGIC: [u8; 4] = *b"SGSC";
pub const REFINEMENT_MAGIC: [u8; 4] = *b"SGRF";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_COLORS: u32 = 1;

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn points(&mut self, pts: &[Point3]) {
        pts.iter().flatten().for_each(|&v| self.f32(v));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(Error::Truncated(section))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn array<const W: usize>(&mut self, section: &'static str) -> Result<[u8; W]> {
        Ok(self.take(W, section)?.try_into().expect("sized slice"))
    }
    fn u32(&mut self, s: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(s)?))
    }
    fn u64(&mut self, s: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(s)?))
    }
    fn f64(&mut self, s: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(s)?))
    }
    fn f32s(&mut self, n: usize, s: &'static str) -> Result<Vec<f64>> {
        let len = n.checked_mul(4).ok_or(Error::Truncated(s))?;
        Ok(self
            .take(len, s)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect())
    }
    fn i32s(&mut self, n: usize, s: &'static str) -> Result<Vec<i32>> {
        let len = n.checked_mul(4).ok_or(Error::Truncated(s))?;
        Ok(self
            .take(len, s)?
            .chunks_exact(4)
            .map(|b| i32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }
    fn points(&mut self, n: usize, s: &'static str) -> Result<Vec<Point3>> {
        let flat = self.f32s(n.checked_mul(3).ok_or(Error::Truncated(s))?, s)?;
        Ok(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
    fn header(&mut self, magic: [u8; 4]) -> Result<()> {
        let found = self.array::<4>("magic")?;
        if found != magic {
            return Err(Error::BadMagic { expected: magic, found });
        }
        let version = self.u32("header")?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        Ok(())
    }
    fn finish(&self) -> Result<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            extra => Err(Error::TrailingBytes(extra)),
        }
    }
}

fn count_u32(what: &'static str, n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::param(what, format!("{n} does not fit in u32")))
}

pub fn encode_scene(scene: &Scene) -> Result<Vec<u8>> {
    let n = scene.n_points();
    let c = scene.n_classes();
    let k = scene.truth.n_instances();
    for (what, len) in [
        ("semantic rows", scene.semantic.n_points()),
        ("offsets", scene.offsets.offsets.len()),
        ("semantic labels", scene.truth.semantic_label.len()),
        ("instance ids", scene.truth.instance_id.len()),
    ] {
        if len != n {
            return Err(Error::LengthMismatch {
                what,
                expected: n,
                actual: len,
            });
        }
    }
    let mut w = Writer(Vec::with_capacity(32 + n * (4 * (c + 11))));
    w.0.extend_from_slice(&SCENE_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u64(n as u64);
    w.u32(count_u32("n_classes", c)?);
    w.u32(count_u32("n_instances", k)?);
    let colors = scene.cloud.colors.as_ref();
    w.u32(if colors.is_some() { FLAG_COLORS } else { 0 });
    w.points(&scene.cloud.coords);
    if let Some(colors) = colors {
        if colors.len() != n {
            return Err(Error::LengthMismatch {
                what: "colors",
                expected: n,
                actual: colors.len(),
            });
        }
        w.points(colors);
    }
    scene.semantic.as_slice().iter().for_each(|&v| w.f32(v));
    w.points(&scene.offsets.offsets);
    scene.truth.semantic_label.iter().for_each(|&v| w.i32(v));
    scene.truth.instance_id.iter().for_each(|&v| w.i32(v));
    scene.truth.instance_class.iter().for_each(|&v| w.i32(v));
    Ok(w.0)
}

pub fn decode_scene(bytes: &[u8]) -> Result<Scene> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(SCENE_MAGIC)?;
    let n = usize::try_from(r.u64("header")?).map_err(|_| Error::Truncated("header"))?;
    let c = r.u32("header")? as usize;
    let k = r.u32("header")? as usize;
    let flags = r.u32("header")?;
    if flags & !FLAG_COLORS != 0 {
        return Err(Error::param("flags", format!("unknown flag bits {flags:#x}")));
    }
    // Oversized payloads are rejected up front; short ones fail in the
    // section that runs out.
    let per_point = 4 * (3 + c + 3 + 2) + if flags & FLAG_COLORS != 0 { 12 } else { 0 };
    let need = n
        .checked_mul(per_point)
        .and_then(|v| v.checked_add(4 * k))
        .ok_or(Error::Truncated("payload"))?;
    let have = bytes.len() - r.pos;
    if need < have {
        return Err(Error::TrailingBytes(have - need));
    }
    let coords = r.points(n, "coords")?;
    let colors = if flags & FLAG_COLORS != 0 {
        Some(r.points(n, "colors")?)
    } else {
        None
    };
    let scores = r.f32s(n * c, "semantic scores")?;
    let offsets = r.points(n, "offsets")?;
    let semantic_label = r.i32s(n, "semantic labels")?;
    let instance_id = r.i32s(n, "instance ids")?;
    let instance_class = r.i32s(k, "instance classes")?;
    r.finish()?;
    let truth = GroundTruth::new(&coords, semantic_label, instance_id, instance_class)?;
    Ok(Scene {
        semantic: SemanticField::new(c, scores)?,
        offsets: OffsetField { offsets },
        cloud: PointCloud { coords, colors },
        truth,
    })
}

pub fn write_scene(scene: &Scene, path: &Path) -> Result<()> {
    write_atomic(path, &encode_scene(scene)?)
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    decode_scene(&fs::read(path)?)
}

pub fn encode_refinement(records: &[RefinementRecord]) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&REFINEMENT_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u64(records.len() as u64);
    for r in records {
        w.u32(count_u32("category", r.category)?);
        w.f64(r.class_score);
        w.f64(r.mask_score);
        w.u64(r.mask.len() as u64);
        r.mask.iter().for_each(|&f| w.u8(f as u8));
    }
    Ok(w.0)
}

pub fn decode_refinement(bytes: &[u8]) -> Result<Vec<RefinementRecord>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(REFINEMENT_MAGIC)?;
    let k = r.u64("header")?;
    let mut out = Vec::new();
    for _ in 0..k {
        let category = r.u32("record")? as usize;
        let class_score = r.f64("record")?;
        let mask_score = r.f64("record")?;
        let m = usize::try_from(r.u64("record")?).map_err(|_| Error::Truncated("mask flags"))?;
        let mask = r
            .take(m, "mask flags")?
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::param("mask flag", format!("byte {other} is not 0 or 1"))),
            })
            .collect::<Result<_>>()?;
        out.push(RefinementRecord {
            category,
            class_score,
            mask_score,
            mask,
        });
    }
    r.finish()?;
    Ok(out)
}

pub fn write_refinement(records: &[RefinementRecord], path: &Path) -> Result<()> {
    write_atomic(path, &encode_refinement(records)?)
}

pub fn read_refinement(path: &Path) -> Result<Vec<RefinementRecord>> {
    decode_refinement(&fs::read(path)?)
}

/// Reads network outputs for `proposals` from a refinement file.
pub fn load_external_refinement(
    proposals: &[Proposal],
    path: &Path,
    coords: &[Point3],
    n_classes: usize,
) -> Result<Vec<RefinedInstance>> {
    apply_external_refinement(proposals, &read_refinement(path)?, coords, n_classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSet {
    pub n_points: usize,
    pub n_classes: usize,
    pub mode: GroupingMode,
    pub tau: f64,
    pub bandwidth: f64,
    pub min_points: usize,
    pub proposals: Vec<Proposal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSet {
    pub n_points: usize,
    pub n_classes: usize,
    pub instances: Vec<RefinedInstance>,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec(value).map_err(|e| Error::param("json", e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::param("json", format!("{}: {e}", path.display())))
}
