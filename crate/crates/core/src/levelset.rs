//! Level-set helpers: interface sampling, redistancing and normal slopes.
//!
//! Level sets are negative inside and sampled at cell centres.

use rayon::prelude::*;

use crate::field::{DomainMask, Grid, FACE_DIRS};

/// Central-difference gradient of `phi` at cell `idx` (one-sided at the box).
pub(crate) fn gradient(grid: &Grid, phi: &[f64], idx: usize) -> [f64; 3] {
    let h = grid.spacing();
    let mut g = [0.0; 3];
    for (a, ga) in g.iter_mut().enumerate() {
        let lo = grid.neighbor(idx, a, -1);
        let hi = grid.neighbor(idx, a, 1);
        *ga = match (lo, hi) {
            (Some(l), Some(u)) => (phi[u] - phi[l]) / (2.0 * h),
            (None, Some(u)) => (phi[u] - phi[idx]) / h,
            (Some(l), None) => (phi[idx] - phi[l]) / h,
            (None, None) => 0.0,
        };
    }
    g
}

/// Cells with a face neighbour of the opposite sign.
pub(crate) fn near_interface(grid: &Grid, phi: &[f64]) -> Vec<bool> {
    (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let inside = phi[idx] < 0.0;
            FACE_DIRS.iter().any(|&(a, d)| {
                grid.neighbor(idx, a, d)
                    .is_some_and(|nb| (phi[nb] < 0.0) != inside)
            })
        })
        .collect()
}

/// Zero crossings of `phi` along grid edges, by linear interpolation.
pub(crate) fn edge_crossings(grid: &Grid, phi: &[f64]) -> Vec<[f64; 3]> {
    let h = grid.spacing();
    let mut pts = Vec::new();
    for idx in 0..grid.len() {
        for a in 0..3 {
            if let Some(nb) = grid.neighbor(idx, a, 1) {
                let (p0, p1) = (phi[idx], phi[nb]);
                if (p0 < 0.0) != (p1 < 0.0) {
                    let t = p0 / (p0 - p1);
                    let mut x = grid.center(idx);
                    x[a] += t * h;
                    pts.push(x);
                }
            }
        }
    }
    pts
}

/// Replaces `phi` by the signed distance to its zero set out to `width`; values
/// beyond are clamped to `±width`. Each cell finds its nearest point in a cloud of
/// interface samples and measures the distance to the tangent plane there.
/// Cells next to the interface keep their values, so the zero set does not move.
pub(crate) fn redistance(grid: &Grid, phi: &mut [f64], width: f64) {
    let h = grid.spacing();
    let near = near_interface(grid, phi);
    let unit = |g: [f64; 3]| {
        let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        (gn > 1e-12).then(|| g.map(|x| x / gn))
    };
    let mut pts: Vec<([f64; 3], Option<[f64; 3]>)> = Vec::new();
    for idx in 0..grid.len() {
        for a in 0..3 {
            if let Some(nb) = grid.neighbor(idx, a, 1) {
                let (p0, p1) = (phi[idx], phi[nb]);
                if (p0 < 0.0) != (p1 < 0.0) {
                    let t = p0 / (p0 - p1);
                    let mut x = grid.center(idx);
                    x[a] += t * h;
                    let (g0, g1) = (gradient(grid, phi, idx), gradient(grid, phi, nb));
                    let g = [0, 1, 2].map(|b| (1.0 - t) * g0[b] + t * g1[b]);
                    pts.push((x, unit(g)));
                }
            }
        }
    }
    // Foot points of near-interface cells densify the cloud.
    for idx in 0..grid.len() {
        if near[idx] {
            if let Some(n) = unit(gradient(grid, phi, idx)) {
                let g = gradient(grid, phi, idx);
                let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                let c = grid.center(idx);
                let s = phi[idx] / gn;
                pts.push(([c[0] - s * n[0], c[1] - s * n[1], c[2] - s * n[2]], Some(n)));
            }
        }
    }
    let mut best = vec![(width * width, usize::MAX); grid.len()];
    let reach = (width / h).ceil() as isize + 1;
    let n = grid.n() as isize;
    for (pi, (p, _)) in pts.iter().enumerate() {
        let ci = [0, 1, 2].map(|a| grid.fractional_index(p[a]).round() as isize);
        for k in (ci[2] - reach).max(0)..(ci[2] + reach + 1).min(n) {
            for j in (ci[1] - reach).max(0)..(ci[1] + reach + 1).min(n) {
                for i in (ci[0] - reach).max(0)..(ci[0] + reach + 1).min(n) {
                    let idx = grid.index(i as usize, j as usize, k as usize);
                    let c = grid.center(idx);
                    let d2 = (c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2) + (c[2] - p[2]).powi(2);
                    if d2 < best[idx].0 {
                        best[idx] = (d2, pi);
                    }
                }
            }
        }
    }
    for idx in 0..grid.len() {
        if near[idx] {
            continue;
        }
        let (d2, pi) = best[idx];
        let d = if pi == usize::MAX {
            width
        } else {
            let (p, nrm) = pts[pi];
            let c = grid.center(idx);
            match nrm {
                Some(nv) => ((c[0] - p[0]) * nv[0] + (c[1] - p[1]) * nv[1] + (c[2] - p[2]) * nv[2])
                    .abs()
                    .max(0.5 * d2.sqrt()),
                None => d2.sqrt(),
            }
        };
        phi[idx] = if phi[idx] < 0.0 { -d } else { d };
    }
}

/// Signed distance (to `width`) of a plain cell mask, with the interface on the
/// faces between inside and outside cells.
pub(crate) fn from_mask(mask: &DomainMask, width: f64) -> Vec<f64> {
    let grid = *mask.grid();
    let h = grid.spacing();
    let mut phi: Vec<f64> = (0..grid.len())
        .map(|i| if mask.contains(i) { -0.5 * h } else { 0.5 * h })
        .collect();
    // Near cells keep ±h/2, which places the interface on the faces.
    redistance(&grid, &mut phi, width);
    phi
}

/// Normal slope `|∂_n u|` at the interface point closest to cell `idx`, from a
/// quadratic fit through the foot point and two interior samples. Returns the
/// foot point and the slope.
pub(crate) fn normal_slope(
    grid: &Grid,
    phi: &[f64],
    u: &[f64],
    idx: usize,
) -> Option<([f64; 3], f64)> {
    let g = gradient(grid, phi, idx);
    let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
    if gn < 1e-12 {
        return None;
    }
    let n = [g[0] / gn, g[1] / gn, g[2] / gn];
    let c = grid.center(idx);
    let s = phi[idx] / gn;
    let foot = [c[0] - s * n[0], c[1] - s * n[1], c[2] - s * n[2]];
    let d1 = 2.0 * grid.spacing();
    let at = |d: f64| grid.trilinear(u, [foot[0] - d * n[0], foot[1] - d * n[1], foot[2] - d * n[2]]);
    let u1 = at(d1);
    let u2 = at(2.0 * d1);
    Some((foot, ((4.0 * u1 - u2) / (2.0 * d1)).abs()))
}

/// Fibonacci points on the unit sphere.
pub fn fibonacci_sphere(count: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            [r * t.cos(), r * t.sin(), z]
        })
        .collect()
}
