//! Cell-centred Cartesian grids, scalar fields, domain masks and the discrete
//! operators (midpoint quadrature, forward-difference Dirichlet energy,
//! 7-point Laplacian) every other module builds on.
//!
//! Fields are stored x-fastest: `index = i + n*(j + n*k)`. Values outside the
//! box are zero (homogeneous Dirichlet data on the container).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest face fraction used by the boundary-fitted Dirichlet weights.
pub const MIN_FACE_FRACTION: f64 = 0.01;

/// The six face neighbours as (axis, direction).
pub const FACE_DIRS: [(usize, isize); 6] = [(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)];

/// Cubic box `[-R, R]^3` sampled at `n` cell centres per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    half_width: f64,
}

impl Grid {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n < 8 {
            return Err(Error::InvalidGrid(format!("n = {n} < 8")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!("half width {half_width}")));
        }
        Ok(Grid { n, half_width })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(3)
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of the `i`-th cell centre along any axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx % n, (idx / n) % n, idx / (n * n)]
    }

    pub fn center(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.ijk(idx);
        [self.coord(i), self.coord(j), self.coord(k)]
    }

    /// Neighbour of `idx` one cell along `axis` in direction `dir`, if inside the box.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, dir: isize) -> Option<usize> {
        let c = self.ijk(idx);
        let m = c[axis] as isize + dir;
        if m < 0 || m >= self.n as isize {
            return None;
        }
        let stride = [1, self.n, self.n * self.n][axis];
        Some(if dir > 0 { idx + stride } else { idx - stride })
    }

    pub fn on_outer_layer(&self, idx: usize) -> bool {
        self.ijk(idx).iter().any(|&c| c == 0 || c + 1 == self.n)
    }

    /// Continuous (fractional) cell index of a coordinate: cell centres sit at integers.
    pub fn fractional_index(&self, x: f64) -> f64 {
        (x + self.half_width) / self.spacing() - 0.5
    }

    /// Trilinear interpolation of cell-centre samples; values outside the box are zero.
    pub fn trilinear(&self, values: &[f64], p: [f64; 3]) -> f64 {
        self.trilinear_with(values, p, |_| 0.0)
    }

    /// Trilinear interpolation where out-of-box samples are replaced by the nearest in-box sample.
    pub fn trilinear_clamped(&self, values: &[f64], p: [f64; 3]) -> f64 {
        let n = self.n as isize;
        let mut base = [0isize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let f = self.fractional_index(p[a]).clamp(0.0, (n - 1) as f64);
            let b = (f.floor() as isize).min(n - 2);
            base[a] = b;
            frac[a] = f - b as f64;
        }
        self.blend(values, base, frac, |_| unreachable!())
    }

    fn trilinear_with(&self, values: &[f64], p: [f64; 3], outside: impl Fn(usize) -> f64) -> f64 {
        let mut base = [0isize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let f = self.fractional_index(p[a]);
            let b = f.floor();
            base[a] = b as isize;
            frac[a] = f - b;
        }
        self.blend(values, base, frac, outside)
    }

    fn blend(
        &self,
        values: &[f64],
        base: [isize; 3],
        frac: [f64; 3],
        outside: impl Fn(usize) -> f64,
    ) -> f64 {
        let n = self.n as isize;
        let mut acc = 0.0;
        for corner in 0..8 {
            let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            let mut c = [0isize; 3];
            for a in 0..3 {
                c[a] = base[a] + off[a] as isize;
                w *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w == 0.0 {
                continue;
            }
            let v = if c.iter().all(|&x| x >= 0 && x < n) {
                values[self.index(c[0] as usize, c[1] as usize, c[2] as usize)]
            } else {
                outside(corner)
            };
            acc += w * v;
        }
        acc
    }
}

/// Axis-aligned block of cells `[lo, lo + dims)` inside a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Region {
    pub lo: [usize; 3],
    pub dims: [usize; 3],
}

impl Region {
    pub fn full(grid: &Grid) -> Self {
        Region {
            lo: [0; 3],
            dims: [grid.n(); 3],
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bounding box of the cells for which `pred` holds.
    pub fn bounding(grid: &Grid, mut pred: impl FnMut(usize) -> bool) -> Option<Self> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for idx in 0..grid.len() {
            if pred(idx) {
                any = true;
                let c = grid.ijk(idx);
                for a in 0..3 {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a]);
                }
            }
        }
        any.then(|| Region {
            lo,
            dims: [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1],
        })
    }

    /// Grow by `margin` cells on each side, clipped to the grid.
    pub fn expanded(&self, grid: &Grid, margin: usize) -> Self {
        let mut lo = [0; 3];
        let mut dims = [0; 3];
        for a in 0..3 {
            lo[a] = self.lo[a].saturating_sub(margin);
            let hi = (self.lo[a] + self.dims[a] + margin).min(grid.n());
            dims[a] = hi - lo[a];
        }
        Region { lo, dims }
    }

    #[inline]
    pub fn local_index(&self, c: [usize; 3]) -> usize {
        (c[0] - self.lo[0]) + self.dims[0] * ((c[1] - self.lo[1]) + self.dims[1] * (c[2] - self.lo[2]))
    }

    #[inline]
    pub fn contains(&self, c: [usize; 3]) -> bool {
        (0..3).all(|a| c[a] >= self.lo[a] && c[a] < self.lo[a] + self.dims[a])
    }

    /// Global grid indices of the region's cells in local x-fastest order.
    pub fn global_indices(&self, grid: &Grid) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    out.push(grid.index(self.lo[0] + i, self.lo[1] + j, self.lo[2] + k));
                }
            }
        }
        out
    }
}

/// Real samples on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        ScalarField {
            values: vec![c; grid.len()],
            grid,
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ScalarField { grid, values })
    }

    /// Samples `f` at every cell centre.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64 + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| f(grid.center(idx)))
            .collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        ScalarField {
            grid: self.grid,
            values: self.values.par_iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Self> {
        self.check_grid(other)?;
        Ok(ScalarField {
            grid: self.grid,
            values: self
                .values
                .par_iter()
                .zip(other.values.par_iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn check_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    /// L² inner product with midpoint quadrature.
    pub fn dot(&self, other: &ScalarField) -> Result<f64> {
        self.check_grid(other)?;
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        Ok(s * self.grid.cell_volume())
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rescales to unit L² norm. Returns `None` for the zero field.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.l2_norm();
        (n > 0.0).then(|| self.scaled(1.0 / n))
    }

    pub fn vanishes_on_outer_layer(&self) -> bool {
        (0..self.grid.len()).all(|idx| !self.grid.on_outer_layer(idx) || self.values[idx] == 0.0)
    }

    /// Zero outside the mask.
    pub fn restricted(&self, mask: &DomainMask) -> Result<Self> {
        if self.grid != mask.grid {
            return Err(Error::GridMismatch("field and mask".into()));
        }
        Ok(ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&mask.inside)
                .map(|(&v, &m)| if m { v } else { 0.0 })
                .collect(),
        })
    }

    pub fn sample(&self, p: [f64; 3]) -> f64 {
        self.grid.trilinear(&self.values, p)
    }
}

/// Midpoint quadrature `h³ Σ f_i`.
pub fn integrate(f: &ScalarField) -> f64 {
    f.values.iter().sum::<f64>() * f.grid.cell_volume()
}

/// Discrete `∫|∇u|²` from forward differences over every face, with zero data outside the box.
pub fn dirichlet_energy(u: &ScalarField) -> f64 {
    let g = u.grid;
    let n = g.n();
    let h = g.spacing();
    let v = &u.values;
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut s = 0.0;
            for j in 0..n {
                for i in 0..n {
                    let idx = g.index(i, j, k);
                    let c = v[idx];
                    let xp = if i + 1 < n { v[idx + 1] } else { 0.0 };
                    let yp = if j + 1 < n { v[idx + n] } else { 0.0 };
                    let zp = if k + 1 < n { v[idx + n * n] } else { 0.0 };
                    s += (xp - c).powi(2) + (yp - c).powi(2) + (zp - c).powi(2);
                    // Faces on the low side of the box.
                    if i == 0 {
                        s += c * c;
                    }
                    if j == 0 {
                        s += c * c;
                    }
                    if k == 0 {
                        s += c * c;
                    }
                }
            }
            s
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    total * h
}

/// 7-point `Δ_h u` with zero data outside the box.
pub fn apply_laplacian(u: &ScalarField) -> ScalarField {
    let g = u.grid;
    let n = g.n();
    let inv_h2 = 1.0 / (g.spacing() * g.spacing());
    let v = &u.values;
    let mut out = vec![0.0; g.len()];
    out.par_chunks_mut(n * n).enumerate().for_each(|(k, plane)| {
        for j in 0..n {
            for i in 0..n {
                let idx = g.index(i, j, k);
                let mut s = -6.0 * v[idx];
                if i > 0 {
                    s += v[idx - 1];
                }
                if i + 1 < n {
                    s += v[idx + 1];
                }
                if j > 0 {
                    s += v[idx - n];
                }
                if j + 1 < n {
                    s += v[idx + n];
                }
                if k > 0 {
                    s += v[idx - n * n];
                }
                if k + 1 < n {
                    s += v[idx + n * n];
                }
                plane[i + n * j] = s * inv_h2;
            }
        }
    });
    ScalarField {
        grid: g,
        values: out,
    }
}

/// The shape variable: a set of grid cells, optionally carrying a level-set
/// function (negative inside) that places the boundary between cell centres.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainMask {
    grid: Grid,
    inside: Vec<bool>,
    level_set: Option<Vec<f64>>,
}

impl DomainMask {
    /// Plain cell mask; inside cells must avoid the outermost layer.
    pub fn new(grid: Grid, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} flags for a grid of {} cells",
                inside.len(),
                grid.len()
            )));
        }
        if let Some(idx) = (0..grid.len()).find(|&i| inside[i] && grid.on_outer_layer(i)) {
            return Err(Error::arg(
                "mask",
                format!("cell {:?} on the outer layer of the box", grid.ijk(idx)),
            ));
        }
        Ok(DomainMask {
            grid,
            inside,
            level_set: None,
        })
    }

    pub fn empty(grid: Grid) -> Self {
        DomainMask {
            inside: vec![false; grid.len()],
            grid,
            level_set: None,
        }
    }

    /// Cells whose centres satisfy `pred`; the outer layer is always excluded.
    pub fn from_fn(grid: Grid, pred: impl Fn([f64; 3]) -> bool + Sync) -> Self {
        let inside = (0..grid.len())
            .into_par_iter()
            .map(|idx| !grid.on_outer_layer(idx) && pred(grid.center(idx)))
            .collect();
        DomainMask {
            grid,
            inside,
            level_set: None,
        }
    }

    /// Mask `{phi < 0}` keeping the sampled level set for boundary fractions.
    pub fn from_level_set(grid: Grid, phi: impl Fn([f64; 3]) -> f64 + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| phi(grid.center(idx)))
            .collect();
        Self::from_level_set_values(grid, values)
    }

    pub fn from_level_set_values(grid: Grid, mut phi: Vec<f64>) -> Self {
        assert_eq!(phi.len(), grid.len());
        let h = grid.spacing();
        for (idx, p) in phi.iter_mut().enumerate() {
            if grid.on_outer_layer(idx) && *p < h {
                *p = h;
            }
        }
        let inside = phi.iter().map(|&p| p < 0.0).collect();
        DomainMask {
            grid,
            inside,
            level_set: Some(phi),
        }
    }

    /// `{|u| > tau}` as a plain mask.
    pub fn from_support(u: &ScalarField, tau: f64) -> Self {
        let g = u.grid;
        let inside = (0..g.len())
            .map(|idx| !g.on_outer_layer(idx) && u.values[idx].abs() > tau)
            .collect();
        DomainMask {
            grid: g,
            inside,
            level_set: None,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    #[inline]
    pub fn contains(&self, idx: usize) -> bool {
        self.inside[idx]
    }

    pub fn level_set(&self) -> Option<&[f64]> {
        self.level_set.as_deref()
    }

    /// Same cells without boundary fractions.
    pub fn without_level_set(&self) -> Self {
        DomainMask {
            grid: self.grid,
            inside: self.inside.clone(),
            level_set: None,
        }
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.inside.iter().any(|&b| b)
    }

    /// `h³ · #inside`.
    pub fn volume(&self) -> f64 {
        self.count() as f64 * self.grid.cell_volume()
    }

    /// Volume of `{phi < 0}` by 4³ sub-sampling of the interpolated level set in
    /// cells cut by the boundary; equals [`volume`](Self::volume) without a level set.
    pub fn fitted_volume(&self) -> f64 {
        let Some(phi) = &self.level_set else {
            return self.volume();
        };
        let g = self.grid;
        let h = g.spacing();
        let sub = 4;
        let total: f64 = (0..g.len())
            .into_par_iter()
            .map(|idx| {
                let p = phi[idx];
                if p.abs() > 0.9 * h {
                    return if p < 0.0 { 1.0 } else { 0.0 };
                }
                let c = g.center(idx);
                let mut hits = 0usize;
                for a in 0..sub {
                    for b in 0..sub {
                        for d in 0..sub {
                            let off = |t: usize| ((t as f64 + 0.5) / sub as f64 - 0.5) * h;
                            let q = [c[0] + off(a), c[1] + off(b), c[2] + off(d)];
                            if g.trilinear_clamped(phi, q) < 0.0 {
                                hits += 1;
                            }
                        }
                    }
                }
                hits as f64 / (sub * sub * sub) as f64
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        total * g.cell_volume()
    }

    /// Fraction θ ∈ (0,1] of the segment from inside cell `idx` to its outside
    /// neighbour `nb` that lies inside the domain; 1 without a level set.
    #[inline]
    pub fn face_fraction(&self, idx: usize, nb: Option<usize>) -> f64 {
        match (&self.level_set, nb) {
            (Some(phi), Some(nb)) => {
                let a = phi[idx];
                let b = phi[nb];
                if a < 0.0 && b >= 0.0 {
                    (a / (a - b)).clamp(MIN_FACE_FRACTION, 1.0)
                } else {
                    1.0
                }
            }
            _ => 1.0,
        }
    }

    pub fn indicator(&self) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.inside.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn bounding_region(&self) -> Option<Region> {
        Region::bounding(&self.grid, |i| self.inside[i])
    }

    /// Inside cells with at least one face neighbour outside.
    pub fn boundary_cells(&self) -> Vec<usize> {
        (0..self.grid.len())
            .filter(|&idx| {
                self.inside[idx]
                    && FACE_DIRS.iter().any(|&(a, d)| {
                        self.grid
                            .neighbor(idx, a, d)
                            .is_none_or(|nb| !self.inside[nb])
                    })
            })
            .collect()
    }

    pub fn barycenter(&self) -> Option<[f64; 3]> {
        let mut s = [0.0; 3];
        let mut c = 0usize;
        for idx in 0..self.grid.len() {
            if self.inside[idx] {
                let p = self.grid.center(idx);
                for a in 0..3 {
                    s[a] += p[a];
                }
                c += 1;
            }
        }
        (c > 0).then(|| [s[0] / c as f64, s[1] / c as f64, s[2] / c as f64])
    }

    /// Connected components under 6-connectivity, as lists of cell indices.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut label = vec![usize::MAX; self.grid.len()];
        let mut comps = Vec::new();
        for start in 0..self.grid.len() {
            if !self.inside[start] || label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut stack = vec![start];
            let mut cells = Vec::new();
            label[start] = id;
            while let Some(c) = stack.pop() {
                cells.push(c);
                for &(a, d) in &FACE_DIRS {
                    if let Some(nb) = self.grid.neighbor(c, a, d) {
                        if self.inside[nb] && label[nb] == usize::MAX {
                            label[nb] = id;
                            stack.push(nb);
                        }
                    }
                }
            }
            comps.push(cells);
        }
        comps
    }

    /// Adds or removes a single cell (drops the level set).
    pub fn with_cell(&self, idx: usize, value: bool) -> Result<Self> {
        let mut inside = self.inside.clone();
        inside[idx] = value;
        DomainMask::new(self.grid, inside)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    n: usize,
    #[serde(rename = "R")]
    half_width: f64,
    name: String,
}

const MAGIC: &[u8; 4] = b"SCF1";

/// Writes the `SCF1` snapshot: magic line, JSON header line, then n³ little-endian f64.
pub fn write_snapshot(f: &ScalarField, name: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = SnapshotHeader {
        n: f.grid.n(),
        half_width: f.grid.half_width(),
        name: name.to_string(),
    };
    let json = serde_json::to_string(&header).expect("header serializes");
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(b"\n").map_err(io)?;
    w.write_all(json.as_bytes()).map_err(io)?;
    w.write_all(b"\n").map_err(io)?;
    for v in &f.values {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads an `SCF1` snapshot, returning the field and its stored name.
pub fn read_snapshot(path: impl AsRef<Path>) -> Result<(ScalarField, String)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let fmt = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|_| fmt("missing magic"))?;
    if &magic[..4] != MAGIC || magic[4] != b'\n' {
        return Err(fmt("bad magic"));
    }
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    if !line.ends_with('\n') {
        return Err(fmt("unterminated header"));
    }
    let header: SnapshotHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| fmt(&format!("header: {e}")))?;
    let grid = Grid::new(header.n, header.half_width).map_err(|e| fmt(&e.to_string()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 8 * grid.len() {
        return Err(Error::LengthMismatch {
            path: path.to_path_buf(),
            expected: grid.len(),
            found: bytes.len() / 8,
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let field = ScalarField::from_values(grid, values).map_err(|e| fmt(&e.to_string()))?;
    Ok((field, header.name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_interior_field(grid: Grid, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..grid.len())
            .map(|idx| {
                if grid.on_outer_layer(idx) {
                    0.0
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect();
        ScalarField::from_values(grid, values).unwrap()
    }

    #[test]
    fn grid_geometry() {
        let g = Grid::new(8, 1.0).unwrap();
        assert_eq!(g.spacing() * 8.0, 2.0);
        assert!((g.coord(0) + 1.0 - 0.125).abs() < 1e-15);
        assert!((g.coord(7) - 1.0 + 0.125).abs() < 1e-15);
        assert!(Grid::new(7, 1.0).is_err());
        assert!(Grid::new(8, 0.0).is_err());
        let idx = g.index(3, 4, 5);
        assert_eq!(g.ijk(idx), [3, 4, 5]);
        assert_eq!(g.neighbor(idx, 1, 1), Some(g.index(3, 5, 5)));
        assert_eq!(g.neighbor(g.index(0, 0, 0), 0, -1), None);
    }

    #[test]
    fn integrate_constants() {
        let g = Grid::new(8, 1.0).unwrap();
        assert_eq!(integrate(&ScalarField::zeros(g)), 0.0);
        assert!((integrate(&ScalarField::constant(g, 1.0)) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn integrate_ball_indicator() {
        let g = Grid::new(128, 2.0).unwrap();
        let f = ScalarField::from_fn(g, |p| {
            if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] < 1.0 {
                1.0
            } else {
                0.0
            }
        });
        let v = integrate(&f);
        assert!((v / (4.0 * PI / 3.0) - 1.0).abs() < 0.01, "{v}");
    }

    #[test]
    fn dirichlet_energy_zero_field() {
        let g = Grid::new(8, 1.0).unwrap();
        assert_eq!(dirichlet_energy(&ScalarField::zeros(g)), 0.0);
    }

    #[test]
    fn dirichlet_energy_cube_sine_mode() {
        // h = 1/48 with cell centres on the faces x = ±1/2 of the unit cube.
        let g = Grid::new(97, 97.0 / 96.0).unwrap();
        let u = ScalarField::from_fn(g, |p| {
            if p.iter().all(|x| x.abs() < 0.5) {
                p.iter().map(|x| (PI * (x + 0.5)).sin()).product()
            } else {
                0.0
            }
        })
        .normalized()
        .unwrap();
        let e = dirichlet_energy(&u);
        assert!((e / (3.0 * PI * PI) - 1.0).abs() < 0.02, "{e}");
    }

    #[test]
    fn laplacian_exact_on_quadratics() {
        let g = Grid::new(16, 1.0).unwrap();
        let u = ScalarField::from_fn(g, |p| p[0] * p[0]);
        let l = apply_laplacian(&u);
        for idx in 0..g.len() {
            if !g.on_outer_layer(idx) {
                assert!((l.values()[idx] - 2.0).abs() < 1e-9);
            }
        }
        assert!(apply_laplacian(&ScalarField::zeros(g)).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn summation_by_parts() {
        let g = Grid::new(12, 1.3).unwrap();
        for seed in 0..4 {
            let u = random_interior_field(g, seed);
            let lhs = -u.dot(&apply_laplacian(&u)).unwrap();
            let rhs = dirichlet_energy(&u);
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0), "{lhs} {rhs}");
        }
    }

    #[test]
    fn energy_converges_at_second_order() {
        // Smooth compactly supported profile; exact ∫|∇u|² by fine 1D quadrature of the radial form.
        let profile = |r: f64| if r < 1.0 { (1.0 - r * r).powi(3) } else { 0.0 };
        let dprofile = |r: f64| if r < 1.0 { -6.0 * r * (1.0 - r * r).powi(2) } else { 0.0 };
        let m = 200_000;
        let exact: f64 = (0..m)
            .map(|i| {
                let r = (i as f64 + 0.5) / m as f64;
                4.0 * PI * r * r * dprofile(r).powi(2) / m as f64
            })
            .sum();
        let errs: Vec<f64> = [24usize, 48, 96]
            .iter()
            .map(|&n| {
                let g = Grid::new(n, 1.5).unwrap();
                let u = ScalarField::from_fn(g, |p| {
                    profile((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
                });
                (dirichlet_energy(&u) - exact).abs()
            })
            .collect();
        let slope = (errs[1] / errs[2]).log2();
        assert!((1.7..=2.3).contains(&slope), "{errs:?} slope {slope}");
    }

    #[test]
    fn snapshot_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(8, 1.25).unwrap();
        let u = random_interior_field(g, 7);
        let p = dir.path().join("u.scf");
        write_snapshot(&u, "u", &p).unwrap();
        let (back, name) = read_snapshot(&p).unwrap();
        assert_eq!(name, "u");
        assert_eq!(back.grid(), u.grid());
        assert!(back
            .values()
            .iter()
            .zip(u.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));

        let bytes = std::fs::read(&p).unwrap();
        let truncated = dir.path().join("t.scf");
        std::fs::write(&truncated, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            read_snapshot(&truncated),
            Err(Error::LengthMismatch { .. })
        ));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        let badp = dir.path().join("b.scf");
        std::fs::write(&badp, &bad).unwrap();
        assert!(matches!(read_snapshot(&badp), Err(Error::Format { .. })));
    }

    #[test]
    fn mask_rejects_outer_layer() {
        let g = Grid::new(8, 1.0).unwrap();
        let mut inside = vec![false; g.len()];
        inside[g.index(0, 3, 3)] = true;
        assert!(DomainMask::new(g, inside).is_err());
        let m = DomainMask::from_fn(g, |_| true);
        assert_eq!(m.count(), 6 * 6 * 6);
    }

    #[test]
    fn face_fraction_from_level_set() {
        let g = Grid::new(16, 1.0).unwrap();
        let m = DomainMask::from_level_set(g, |p| p[0] - 0.01);
        let idx = g.index(7, 8, 8); // centre at x = -0.0625
        assert!(m.contains(idx));
        let nb = g.neighbor(idx, 0, 1);
        let theta = m.face_fraction(idx, nb);
        assert!((theta - (0.0625 + 0.01) / 0.125).abs() < 1e-12);
        assert_eq!(m.face_fraction(idx, g.neighbor(idx, 1, 1)), 1.0);

        let g = Grid::new(32, 1.5).unwrap();
        let ball = DomainMask::from_level_set(g, |p| {
            (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 1.0
        });
        let exact = 4.0 * PI / 3.0;
        let fitted = ball.fitted_volume();
        assert!((fitted / exact - 1.0).abs() < 0.005, "{fitted}");
        assert!((fitted - exact).abs() < (ball.volume() - exact).abs());
    }
}
