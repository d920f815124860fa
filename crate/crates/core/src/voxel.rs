//! Voxel grids: placement, object-centric cropping, fusion of point clouds,
//! and a small debug dump format.
//!
//! Cells are half-open, `[origin + i*size, origin + (i+1)*size)`, so a point
//! on the max face of the grid is out of bounds. Linear indices run
//! x-major: `(x * W + y) * H + z`.

use crate::geometry::Vec3;
use crate::rgbd::PointCloud;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};

#[derive(Debug, thiserror::Error)]
pub enum VoxelError {
    #[error("alpha must be in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("voxel index {0:?} outside grid dims {1:?}")]
    IndexOutOfRange([usize; 3], [usize; 3]),
    #[error("downsample factor {factor} does not divide dims {dims:?}")]
    NonDivisibleFactor { factor: usize, dims: [usize; 3] },
    #[error("grid dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Physical placement of a voxel grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Min corner, world frame.
    pub origin: Vec3,
    /// Extent per axis in meters.
    pub span: Vec3,
    pub dims: [usize; 3],
    /// Fraction of the base workspace span this grid covers.
    pub alpha: f64,
}

impl GridSpec {
    pub fn new(origin: Vec3, span: Vec3, dims: [usize; 3]) -> Result<Self, VoxelError> {
        let s = Self { origin, span, dims, alpha: 1.0 };
        s.validate()?;
        Ok(s)
    }

    /// A cube of `dims^3` voxels spanning `span` meters per side.
    pub fn cube(origin: Vec3, span: f64, dims: usize) -> Result<Self, VoxelError> {
        Self::new(origin, Vec3::repeat(span), [dims; 3])
    }

    pub fn validate(&self) -> Result<(), VoxelError> {
        if !self.span.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(VoxelError::InvalidSpec(format!("span must be positive, got {:?}", self.span)));
        }
        if self.dims.contains(&0) {
            return Err(VoxelError::InvalidSpec("dims must be positive".into()));
        }
        if !self.origin.iter().all(|o| o.is_finite()) {
            return Err(VoxelError::InvalidSpec("origin must be finite".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(VoxelError::InvalidAlpha(self.alpha));
        }
        Ok(())
    }

    pub fn voxel_size(&self) -> Vec3 {
        Vec3::new(
            self.span.x / self.dims[0] as f64,
            self.span.y / self.dims[1] as f64,
            self.span.z / self.dims[2] as f64,
        )
    }

    /// Voxels per meter on each axis.
    pub fn resolution(&self) -> Vec3 {
        Vec3::new(
            self.dims[0] as f64 / self.span.x,
            self.dims[1] as f64 / self.span.y,
            self.dims[2] as f64 / self.span.z,
        )
    }

    pub fn center(&self) -> Vec3 {
        self.origin + self.span / 2.0
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains_index(&self, idx: [i64; 3]) -> bool {
        idx.iter().zip(self.dims).all(|(&i, d)| i >= 0 && (i as usize) < d)
    }

    pub fn linear_index(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    pub fn unravel(&self, linear: usize) -> [usize; 3] {
        let z = linear % self.dims[2];
        let rest = linear / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], z]
    }

    /// Voxel holding `pt`, or `None` when outside the half-open grid.
    pub fn world_to_voxel(&self, pt: &Vec3) -> Option<[usize; 3]> {
        let vs = self.voxel_size();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((pt[a] - self.origin[a]) / vs[a]).floor();
            if !f.is_finite() || f < 0.0 || f >= self.dims[a] as f64 {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(idx)
    }

    /// Unclamped voxel coordinates; may be negative or past the far face.
    pub fn world_to_voxel_unbounded(&self, pt: &Vec3) -> [i64; 3] {
        let vs = self.voxel_size();
        [0, 1, 2].map(|a| ((pt[a] - self.origin[a]) / vs[a]).floor() as i64)
    }

    /// Center of voxel `idx`.
    pub fn voxel_to_world(&self, idx: [usize; 3]) -> Result<Vec3, VoxelError> {
        if idx.iter().zip(self.dims).any(|(&i, d)| i >= d) {
            return Err(VoxelError::IndexOutOfRange(idx, self.dims));
        }
        Ok(self.voxel_center(idx))
    }

    fn voxel_center(&self, idx: [usize; 3]) -> Vec3 {
        let vs = self.voxel_size();
        Vec3::new(
            self.origin.x + (idx[0] as f64 + 0.5) * vs.x,
            self.origin.y + (idx[1] as f64 + 0.5) * vs.y,
            self.origin.z + (idx[2] as f64 + 0.5) * vs.z,
        )
    }

    /// True when both specs describe the same lattice shape.
    pub fn same_shape(&self, other: &GridSpec) -> bool {
        self.dims == other.dims
    }
}

/// Zoom `base` onto `centroid`: same voxel count, `alpha` times the span.
///
/// The crop is centered on the centroid even when that pushes it past the
/// base workspace; voxels outside simply stay empty.
pub fn crop_spec(base: &GridSpec, centroid: &Vec3, alpha: f64) -> Result<GridSpec, VoxelError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(VoxelError::InvalidAlpha(alpha));
    }
    if !centroid.iter().all(|c| c.is_finite()) {
        return Err(VoxelError::InvalidSpec("crop centroid must be finite".into()));
    }
    let span = base.span * alpha;
    Ok(GridSpec { origin: centroid - span / 2.0, span, dims: base.dims, alpha: base.alpha * alpha })
}

/// Occupancy counts plus mean color per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    pub occupancy: Vec<u32>,
    /// Mean RGB of the points in each voxel; zero where empty.
    pub color: Vec<[f32; 3]>,
}

impl VoxelGrid {
    pub fn empty(spec: GridSpec) -> Self {
        let n = spec.len();
        Self { spec, occupancy: vec![0; n], color: vec![[0.0; 3]; n] }
    }

    pub fn total_occupancy(&self) -> u64 {
        self.occupancy.iter().map(|&c| c as u64).sum()
    }

    pub fn occupied_voxels(&self) -> usize {
        self.occupancy.iter().filter(|&&c| c > 0).count()
    }

    pub fn occupancy_at(&self, idx: [usize; 3]) -> u32 {
        self.occupancy[self.spec.linear_index(idx)]
    }

    pub fn color_at(&self, idx: [usize; 3]) -> [f32; 3] {
        self.color[self.spec.linear_index(idx)]
    }

    /// Move every occupied voxel to `map(idx)`, merging counts and
    /// count-weighted colors where several land on one cell. Voxels mapped
    /// to `None` are dropped.
    pub fn forward_map<F>(&self, map: F) -> VoxelGrid
    where
        F: Fn([usize; 3]) -> Option<[usize; 3]>,
    {
        let mut acc = Accumulator::new(self.spec.len());
        for (linear, &count) in self.occupancy.iter().enumerate() {
            if count == 0 {
                continue;
            }
            if let Some(dst) = map(self.spec.unravel(linear)) {
                let c = self.color[linear];
                let w = count as f64;
                acc.add(self.spec.linear_index(dst), count, [c[0] as f64 * w, c[1] as f64 * w, c[2] as f64 * w]);
            }
        }
        acc.finish(self.spec)
    }
}

struct Accumulator {
    counts: Vec<u32>,
    sums: Vec<[f64; 3]>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self { counts: vec![0; n], sums: vec![[0.0; 3]; n] }
    }

    fn add(&mut self, i: usize, count: u32, weighted: [f64; 3]) {
        self.counts[i] += count;
        let s = &mut self.sums[i];
        s[0] += weighted[0];
        s[1] += weighted[1];
        s[2] += weighted[2];
    }

    fn finish(self, spec: GridSpec) -> VoxelGrid {
        let color = self
            .counts
            .iter()
            .zip(&self.sums)
            .map(|(&n, s)| {
                if n == 0 {
                    [0.0; 3]
                } else {
                    let n = n as f64;
                    [(s[0] / n) as f32, (s[1] / n) as f32, (s[2] / n) as f32]
                }
            })
            .collect();
        VoxelGrid { spec, occupancy: self.counts, color }
    }
}

/// Fuse clouds into `spec`. Out-of-bounds points are dropped.
///
/// Voxel lookup runs in parallel; accumulation is a single ordered pass so
/// occupancy is exact and colors only depend on input order through
/// floating-point summation.
pub fn voxelize(clouds: &[PointCloud], spec: &GridSpec) -> VoxelGrid {
    let mut acc = Accumulator::new(spec.len());
    for cloud in clouds {
        let hits: Vec<Option<u32>> = cloud
            .points
            .par_iter()
            .with_min_len(4096)
            .map(|p| spec.world_to_voxel(p).map(|idx| spec.linear_index(idx) as u32))
            .collect();
        for (hit, c) in hits.into_iter().zip(&cloud.colors) {
            if let Some(i) = hit {
                acc.add(i as usize, 1, [c[0] as f64, c[1] as f64, c[2] as f64]);
            }
        }
    }
    acc.finish(*spec)
}

/// Block-sum occupancy over `factor^3` cells; colors are occupancy-weighted.
pub fn downsample(grid: &VoxelGrid, factor: usize) -> Result<VoxelGrid, VoxelError> {
    let dims = grid.spec.dims;
    if factor == 0 || dims.iter().any(|d| d % factor != 0) {
        return Err(VoxelError::NonDivisibleFactor { factor, dims });
    }
    if factor == 1 {
        return Ok(grid.clone());
    }
    let spec = GridSpec { dims: dims.map(|d| d / factor), ..grid.spec };
    let mut acc = Accumulator::new(spec.len());
    for (linear, &count) in grid.occupancy.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let coarse = grid.spec.unravel(linear).map(|i| i / factor);
        let c = grid.color[linear];
        let w = count as f64;
        acc.add(spec.linear_index(coarse), count, [c[0] as f64 * w, c[1] as f64 * w, c[2] as f64 * w]);
    }
    Ok(acc.finish(spec))
}

const DUMP_MAGIC: &str = "voxgrid v1";

/// Text header followed by little-endian `u32` occupancy and `f32` RGB.
pub fn write_dump<W: Write>(grid: &VoxelGrid, mut out: W) -> Result<(), VoxelError> {
    let s = &grid.spec;
    writeln!(out, "{DUMP_MAGIC}")?;
    writeln!(out, "origin {} {} {}", s.origin.x, s.origin.y, s.origin.z)?;
    writeln!(out, "span {} {} {}", s.span.x, s.span.y, s.span.z)?;
    writeln!(out, "dims {} {} {}", s.dims[0], s.dims[1], s.dims[2])?;
    writeln!(out, "alpha {}", s.alpha)?;
    writeln!(out, "end")?;
    for &c in &grid.occupancy {
        out.write_all(&c.to_le_bytes())?;
    }
    for rgb in &grid.color {
        for v in rgb {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_dump<R: BufRead>(mut input: R) -> Result<VoxelGrid, VoxelError> {
    let mut line = String::new();
    let mut next_line = |input: &mut R| -> Result<String, VoxelError> {
        line.clear();
        input.read_line(&mut line)?;
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut input)? != DUMP_MAGIC {
        return Err(VoxelError::Dump("bad magic".into()));
    }
    let mut origin = None;
    let mut span = None;
    let mut dims = None;
    let mut alpha = 1.0;
    loop {
        let l = next_line(&mut input)?;
        if l == "end" {
            break;
        }
        if l.is_empty() {
            return Err(VoxelError::Dump("unterminated header".into()));
        }
        let mut parts = l.split_whitespace();
        let key = parts.next().unwrap_or_default();
        let vals: Vec<f64> = parts
            .map(|p| p.parse().map_err(|_| VoxelError::Dump(format!("bad number in {l:?}"))))
            .collect::<Result<_, _>>()?;
        match (key, vals.as_slice()) {
            ("origin", &[x, y, z]) => origin = Some(Vec3::new(x, y, z)),
            ("span", &[x, y, z]) => span = Some(Vec3::new(x, y, z)),
            ("dims", &[x, y, z]) => dims = Some([x as usize, y as usize, z as usize]),
            ("alpha", &[a]) => alpha = a,
            _ => return Err(VoxelError::Dump(format!("unexpected header line {l:?}"))),
        }
    }
    let missing = || VoxelError::Dump("incomplete header".into());
    let spec = GridSpec { origin: origin.ok_or_else(missing)?, span: span.ok_or_else(missing)?, dims: dims.ok_or_else(missing)?, alpha };
    spec.validate()?;
    let n = spec.len();
    let mut buf = vec![0u8; n * 4];
    input.read_exact(&mut buf)?;
    let occupancy = buf.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect();
    let mut buf = vec![0u8; n * 12];
    input.read_exact(&mut buf)?;
    let color = buf
        .chunks_exact(12)
        .map(|b| {
            let f = |o: usize| f32::from_le_bytes(b[o..o + 4].try_into().unwrap());
            [f(0), f(4), f(8)]
        })
        .collect();
    Ok(VoxelGrid { spec, occupancy, color })
}
