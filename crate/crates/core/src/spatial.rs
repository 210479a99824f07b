//! Uniform voxel hash grid for radius-bounded neighbor queries, and voxel
//! downsampling.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scene::Point3;

pub type CellKey = [i64; 3];

pub fn cell_key(p: &Point3, cell_size: f64) -> CellKey {
    [
        (p[0] / cell_size).floor() as i64,
        (p[1] / cell_size).floor() as i64,
        (p[2] / cell_size).floor() as i64,
    ]
}

fn check_size(name: &'static str, size: f64) -> Result<()> {
    if size > 0.0 && size.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive and finite, got {size}")))
    }
}

#[inline]
pub(crate) fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Hash grid keyed by `floor(coord / cell_size)`. Cells hold indices into
/// the coordinate array the grid was built from.
#[derive(Debug, Clone)]
pub struct VoxelHashGrid {
    cell_size: f64,
    cells: HashMap<CellKey, Vec<usize>>,
}

impl VoxelHashGrid {
    pub fn build(coords: &[Point3], point_ids: &[usize], cell_size: f64) -> Result<Self> {
        check_size("cell_size", cell_size)?;
        let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
        for &id in point_ids {
            let p = coords.get(id).ok_or(Error::OutOfRange {
                what: "point id",
                index: id,
                limit: coords.len(),
            })?;
            cells.entry(cell_key(p, cell_size)).or_default().push(id);
        }
        Ok(Self { cell_size, cells })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, key: &CellKey) -> Option<&[usize]> {
        self.cells.get(key).map(Vec::as_slice)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &[usize])> {
        self.cells.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// All indexed point ids, in unspecified order.
    pub fn point_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.values().flatten().copied()
    }

    /// Visits every indexed point in the 27 cells around `key`.
    pub fn for_each_neighbor(&self, key: CellKey, mut f: impl FnMut(usize)) {
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let k = [key[0] + dx, key[1] + dy, key[2] + dz];
                    if let Some(ids) = self.cells.get(&k) {
                        ids.iter().copied().for_each(&mut f);
                    }
                }
            }
        }
    }

    /// Indexed points at Euclidean distance strictly less than `radius`
    /// from `center`, sorted ascending. Requires `radius <= cell_size`.
    pub fn query_radius(
        &self,
        coords: &[Point3],
        center: &Point3,
        radius: f64,
    ) -> Result<Vec<usize>> {
        if !(radius <= self.cell_size) {
            return Err(Error::param(
                "radius",
                format!("{radius} exceeds cell size {}", self.cell_size),
            ));
        }
        let r2 = radius * radius;
        let mut out = Vec::new();
        self.for_each_neighbor(cell_key(center, self.cell_size), |id| {
            if dist2(&coords[id], center) < r2 {
                out.push(id);
            }
        });
        out.sort_unstable();
        Ok(out)
    }
}

pub fn build_grid(coords: &[Point3], point_ids: &[usize], cell_size: f64) -> Result<VoxelHashGrid> {
    VoxelHashGrid::build(coords, point_ids, cell_size)
}

pub fn query_radius(
    grid: &VoxelHashGrid,
    coords: &[Point3],
    center: &Point3,
    radius: f64,
) -> Result<Vec<usize>> {
    grid.query_radius(coords, center, radius)
}

/// Result of [`voxel_downsample`].
#[derive(Debug, Clone, PartialEq)]
pub struct Downsampled {
    /// One representative per occupied voxel, in order of first occupancy.
    pub coords: Vec<Point3>,
    /// Representative index of every input point.
    pub mapping: Vec<usize>,
}

/// Replaces each occupied voxel by the mean of its member points.
pub fn voxel_downsample(coords: &[Point3], voxel_size: f64) -> Result<Downsampled> {
    check_size("voxel_size", voxel_size)?;
    let mut slot: HashMap<CellKey, usize> = HashMap::new();
    let mut sums: Vec<(Point3, usize)> = Vec::new();
    let mut mapping = Vec::with_capacity(coords.len());
    for p in coords {
        let rep = *slot.entry(cell_key(p, voxel_size)).or_insert_with(|| {
            sums.push(([0.0; 3], 0));
            sums.len() - 1
        });
        let (sum, count) = &mut sums[rep];
        for d in 0..3 {
            sum[d] += p[d];
        }
        *count += 1;
        mapping.push(rep);
    }
    let coords = sums
        .into_iter()
        .map(|(s, c)| s.map(|v| v / c as f64))
        .collect();
    Ok(Downsampled { coords, mapping })
}
