//! Shape metrics for computed domains: Fraenkel asymmetry, Faber–Krahn deficit,
//! radial graph over the sphere, perimeter, sign statistics and boundary slopes.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DomainMask, Grid, ScalarField, FACE_DIRS};
use crate::ground_state::{dirichlet_eigenvalue, GroundState, SolverOptions};
use crate::levelset::{self, fibonacci_sphere};
use crate::UNIT_BALL_VOLUME;

/// Number of directions used by [`extract_radial_graph`].
pub const GRAPH_DIRECTIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub volume: f64,
    pub perimeter: f64,
    pub barycenter: [f64; 3],
    pub asymmetry: f64,
    pub fraenkel_center: [f64; 3],
    pub fk_deficit: f64,
    /// `None` when the boundary is not star-shaped about the barycenter.
    pub phi_sup: Option<f64>,
    pub phi_grad_sup: Option<f64>,
    pub min_u: f64,
    pub neg_mass_fraction: f64,
    pub boundary_grad_mean: f64,
    pub boundary_grad_relstd: f64,
    pub hausdorff_to_ball: f64,
}

/// Full report for a domain and its ground state. `λ₀` is taken from `gs` when
/// `gs.q == 0` and solved for otherwise.
pub fn shape_report(mask: &DomainMask, gs: &GroundState, opts: &SolverOptions) -> Result<ShapeReport> {
    let lambda0 = if gs.q == 0.0 {
        gs.lambda
    } else {
        dirichlet_eigenvalue(mask, opts)?.lambda
    };
    let (asymmetry, center) = fraenkel_asymmetry(mask)?;
    let graph = match extract_radial_graph(GraphSource::Mask(mask)) {
        Ok(g) => Some(g),
        Err(Error::NotStarShaped { .. }) => None,
        Err(e) => return Err(e),
    };
    let (min_u, neg_mass_fraction) = sign_stats(&gs.u);
    let (boundary_grad_mean, boundary_grad_relstd) = boundary_gradient_stats(gs, mask)?;
    Ok(ShapeReport {
        volume: domain_volume(mask),
        perimeter: perimeter_estimate(mask),
        barycenter: mask.barycenter().ok_or_else(|| Error::EmptyDomain("report".into()))?,
        asymmetry,
        fraenkel_center: center,
        fk_deficit: fk_deficit_from(mask, lambda0),
        phi_sup: graph.as_ref().map(|g| g.phi_sup),
        phi_grad_sup: graph.as_ref().map(|g| g.phi_grad_sup),
        min_u,
        neg_mass_fraction,
        boundary_grad_mean,
        boundary_grad_relstd,
        hausdorff_to_ball: hausdorff_to_ball(mask)?,
    })
}

/// Volume of the domain: sub-cell when the mask carries a level set, cell count otherwise.
pub fn domain_volume(mask: &DomainMask) -> f64 {
    if mask.level_set().is_some() {
        mask.fitted_volume()
    } else {
        mask.volume()
    }
}

/// `|E Δ B(x)| / |E|` by cell counting, `B(x)` the ball of volume `|E|`.
fn symmetric_difference(mask: &DomainMask, cells: &[usize], c: [f64; 3], r: f64) -> usize {
    let grid = mask.grid();
    let r2 = r * r;
    cells
        .iter()
        .filter(|&&i| {
            let p = grid.center(i);
            let inside_ball = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2) < r2;
            inside_ball != mask.contains(i)
        })
        .count()
}

/// Fraenkel asymmetry and the best ball centre. Coordinate descent with steps
/// halving from the ball radius to `h/4`, started from the barycenter, the eight
/// points `±h/2` around it and the barycenter of every connected component.
pub fn fraenkel_asymmetry(mask: &DomainMask) -> Result<(f64, [f64; 3])> {
    let grid = *mask.grid();
    let count = mask.count();
    if count == 0 {
        return Err(Error::EmptyDomain("fraenkel_asymmetry".into()));
    }
    let h = grid.spacing();
    let vol = count as f64 * grid.cell_volume();
    let r = (3.0 * vol / (4.0 * PI)).cbrt();
    let bary = mask.barycenter().expect("nonempty");
    let mut starts = Vec::new();
    for s in 0..8 {
        let o = [0, 1, 2].map(|a| if s >> a & 1 == 1 { 0.5 * h } else { -0.5 * h });
        starts.push([bary[0] + o[0], bary[1] + o[1], bary[2] + o[2]]);
    }
    starts.push(bary);
    let components = mask.components();
    if components.len() > 1 {
        for comp in &components {
            let mut c = [0.0; 3];
            for &i in comp {
                let p = grid.center(i);
                (0..3).for_each(|a| c[a] += p[a]);
            }
            starts.push(c.map(|x| x / comp.len() as f64));
        }
    }
    // Cells that can change membership: the mask plus any ball the search can reach.
    let margin = (r / h).ceil() as usize + 2;
    let cells = mask
        .bounding_region()
        .expect("nonempty")
        .expanded(&grid, margin)
        .global_indices(&grid);
    let results: Vec<(usize, [f64; 3])> = starts
        .par_iter()
        .map(|&start| {
            let mut c = start;
            let mut best = symmetric_difference(mask, &cells, c, r);
            let mut step = r;
            while step >= 0.25 * h {
                loop {
                    let mut improved = false;
                    for a in 0..3 {
                        for d in [-1.0, 1.0] {
                            let mut t = c;
                            t[a] += d * step;
                            let v = symmetric_difference(mask, &cells, t, r);
                            if v < best {
                                best = v;
                                c = t;
                                improved = true;
                            }
                        }
                    }
                    if !improved {
                        break;
                    }
                }
                step *= 0.5;
            }
            (best, c)
        })
        .collect();
    let (best, c) = results
        .into_iter()
        .min_by(|a, b| a.0.cmp(&b.0))
        .expect("at least one start");
    Ok((best as f64 / count as f64, c))
}

/// Scale-invariant Faber–Krahn deficit `|Ω|^{2/3} λ₀(Ω) − |B₁|^{2/3} π²`.
pub fn fk_deficit(mask: &DomainMask, opts: &SolverOptions) -> Result<f64> {
    let gs = dirichlet_eigenvalue(mask, opts)?;
    Ok(fk_deficit_from(mask, gs.lambda))
}

/// Deficit for an already computed `λ₀`.
pub fn fk_deficit_from(mask: &DomainMask, lambda0: f64) -> f64 {
    domain_volume(mask).powf(2.0 / 3.0) * lambda0 - UNIT_BALL_VOLUME.powf(2.0 / 3.0) * PI * PI
}

/// What [`extract_radial_graph`] traces along each ray.
#[derive(Debug, Clone, Copy)]
pub enum GraphSource<'a> {
    /// The zero set of the mask's level set, or the 0.5 level of the trilinear
    /// indicator when the mask has none.
    Mask(&'a DomainMask),
    /// The level `tau` of a field.
    Field(&'a ScalarField, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialGraph {
    pub center: [f64; 3],
    /// Radius of the ball with the same volume.
    pub radius: f64,
    pub directions: Vec<[f64; 3]>,
    /// `ρ(x) − radius` per direction.
    pub phi: Vec<f64>,
    pub phi_sup: f64,
    /// Largest difference quotient of `phi` between neighbouring directions.
    pub phi_grad_sup: f64,
}

/// Boundary as a radial graph over the sphere about the barycenter.
pub fn extract_radial_graph(source: GraphSource<'_>) -> Result<RadialGraph> {
    let (grid, values, level, inside_sign, volume, center): (Grid, Vec<f64>, f64, f64, f64, [f64; 3]) =
        match source {
            GraphSource::Mask(mask) => {
                let center = mask
                    .barycenter()
                    .ok_or_else(|| Error::EmptyDomain("extract_radial_graph".into()))?;
                match mask.level_set() {
                    Some(phi) => (*mask.grid(), phi.to_vec(), 0.0, -1.0, mask.fitted_volume(), center),
                    None => (
                        *mask.grid(),
                        mask.indicator().into_values(),
                        0.5,
                        1.0,
                        mask.volume(),
                        center,
                    ),
                }
            }
            GraphSource::Field(u, tau) => {
                let grid = *u.grid();
                let inside: Vec<usize> = (0..grid.len()).filter(|&i| u.values()[i] > tau).collect();
                if inside.is_empty() {
                    return Err(Error::EmptyDomain("extract_radial_graph".into()));
                }
                let mut c = [0.0; 3];
                for &i in &inside {
                    let p = grid.center(i);
                    (0..3).for_each(|a| c[a] += p[a]);
                }
                let c = c.map(|x| x / inside.len() as f64);
                let vol = inside.len() as f64 * grid.cell_volume();
                (grid, u.values().to_vec(), tau, 1.0, vol, c)
            }
        };
    let h = grid.spacing();
    let radius = (3.0 * volume / (4.0 * PI)).cbrt();
    // Positive inside.
    let f = |p: [f64; 3]| inside_sign * (grid.trilinear_clamped(&values, p) - level);
    if f(center) <= 0.0 {
        return Err(Error::NotStarShaped {
            ray: 0,
            direction: [0.0; 3],
            crossings: 0,
        });
    }
    let directions = fibonacci_sphere(GRAPH_DIRECTIONS);
    let step = 0.25 * h;
    let rho: Vec<Result<f64>> = directions
        .par_iter()
        .enumerate()
        .map(|(ray, d)| {
            // March to the box edge.
            let mut s_max = f64::INFINITY;
            for a in 0..3 {
                if d[a].abs() > 1e-12 {
                    let wall = grid.half_width() * d[a].signum();
                    s_max = s_max.min((wall - center[a]) / d[a]);
                }
            }
            let at = |s: f64| f([center[0] + s * d[0], center[1] + s * d[1], center[2] + s * d[2]]);
            let mut crossings = 0;
            let mut root = 0.0;
            let (mut s0, mut f0) = (0.0, at(0.0));
            let mut s = step;
            while s <= s_max {
                let f1 = at(s);
                if (f0 > 0.0) != (f1 > 0.0) {
                    crossings += 1;
                    if crossings == 1 {
                        root = s0 + step * f0 / (f0 - f1);
                    }
                }
                s0 = s;
                f0 = f1;
                s += step;
            }
            if crossings != 1 {
                return Err(Error::NotStarShaped {
                    ray,
                    direction: *d,
                    crossings,
                });
            }
            Ok(root)
        })
        .collect();
    let rho = rho.into_iter().collect::<Result<Vec<f64>>>()?;
    let phi: Vec<f64> = rho.iter().map(|r| r - radius).collect();
    let phi_sup = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let phi_grad_sup = graph_gradient_sup(&directions, &phi);
    Ok(RadialGraph {
        center,
        radius,
        directions,
        phi,
        phi_sup,
        phi_grad_sup,
    })
}

/// Difference quotients over the six nearest directions (angular distance).
fn graph_gradient_sup(dirs: &[[f64; 3]], phi: &[f64]) -> f64 {
    const NEIGHBOURS: usize = 6;
    dirs.par_iter()
        .enumerate()
        .map(|(i, a)| {
            let mut near: Vec<(f64, usize)> = dirs
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, b)| {
                    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
                    (dot.acos(), j)
                })
                .collect();
            near.sort_by(|x, y| x.0.total_cmp(&y.0));
            near.iter()
                .take(NEIGHBOURS)
                .map(|&(ang, j)| (phi[i] - phi[j]).abs() / ang)
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// `h² · #{inside/outside face pairs}`, the ℓ¹ total variation of the indicator.
/// Overestimates smooth surfaces by up to a factor 1.5.
pub fn perimeter_estimate(mask: &DomainMask) -> f64 {
    let grid = mask.grid();
    let h = grid.spacing();
    let faces: usize = (0..grid.len())
        .filter(|&i| mask.contains(i))
        .map(|i| {
            FACE_DIRS
                .iter()
                .filter(|&&(a, d)| grid.neighbor(i, a, d).is_none_or(|nb| !mask.contains(nb)))
                .count()
        })
        .sum();
    faces as f64 * h * h
}

/// Mean and relative standard deviation of `|∇u|` near the boundary.
///
/// `|∇u|` is taken by central differences at boundary cells, using the ghost
/// value `−u_i (1−θ)/θ` across cut faces (`θ` from the level set, clamped to
/// at least 0.1; `θ = 1`, i.e. a zero ghost, for plain masks), then averaged
/// over boundary cells within `1.5h` before the statistics are taken.
pub fn boundary_gradient_stats(gs: &GroundState, mask: &DomainMask) -> Result<(f64, f64)> {
    let grid = *mask.grid();
    if gs.u.grid() != &grid {
        return Err(Error::GridMismatch("ground state and mask".into()));
    }
    let h = grid.spacing();
    let u = gs.u.values();
    // Sign-normalize so a negative eigenvector gives the same statistics.
    let sign = if u.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let cells = mask.boundary_cells();
    if cells.is_empty() {
        return Err(Error::EmptyDomain("no boundary cells".into()));
    }
    let value = |i: usize, nb: Option<usize>| -> f64 {
        match nb {
            Some(j) if mask.contains(j) => sign * u[j],
            _ => {
                let theta = match mask.level_set() {
                    Some(_) => mask.face_fraction(i, nb).max(0.1),
                    None => 1.0,
                };
                -sign * u[i] * (1.0 - theta) / theta
            }
        }
    };
    let raw: Vec<f64> = cells
        .iter()
        .map(|&i| {
            let mut g2 = 0.0;
            for a in 0..3 {
                let lo = value(i, grid.neighbor(i, a, -1));
                let hi = value(i, grid.neighbor(i, a, 1));
                g2 += ((hi - lo) / (2.0 * h)).powi(2);
            }
            g2.sqrt()
        })
        .collect();
    let centers: Vec<[f64; 3]> = cells.iter().map(|&i| grid.center(i)).collect();
    let r2 = (1.5 * h).powi(2);
    let smoothed: Vec<f64> = (0..cells.len())
        .into_par_iter()
        .map(|k| {
            let c = centers[k];
            let (mut acc, mut n) = (0.0, 0usize);
            for (j, p) in centers.iter().enumerate() {
                if (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2) <= r2 {
                    acc += raw[j];
                    n += 1;
                }
            }
            acc / n as f64
        })
        .collect();
    let n = smoothed.len() as f64;
    let mean = smoothed.iter().sum::<f64>() / n;
    let var = smoothed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let relstd = if mean > 0.0 { var.sqrt() / mean } else { f64::INFINITY };
    Ok((mean, relstd))
}

/// `(min u, ∫(u₋)² / ∫u²)`.
pub fn sign_stats(u: &ScalarField) -> (f64, f64) {
    let total: f64 = u.values().iter().map(|v| v * v).sum::<f64>() + 0.0;
    let neg: f64 = u.values().iter().filter(|&&v| v < 0.0).map(|v| v * v).sum::<f64>() + 0.0;
    let frac = if total > 0.0 { neg / total } else { 0.0 };
    (u.min(), frac)
}

/// Interface sample points: level-set crossings along grid edges, or midpoints
/// of inside/outside faces for plain masks.
fn interface_points(mask: &DomainMask) -> Vec<[f64; 3]> {
    let grid = mask.grid();
    if let Some(phi) = mask.level_set() {
        return levelset::edge_crossings(grid, phi);
    }
    let h = grid.spacing();
    let mut pts = Vec::new();
    for i in 0..grid.len() {
        if !mask.contains(i) {
            continue;
        }
        for &(a, d) in FACE_DIRS.iter() {
            if grid.neighbor(i, a, d).is_none_or(|nb| !mask.contains(nb)) {
                let mut p = grid.center(i);
                p[a] += 0.5 * h * d as f64;
                pts.push(p);
            }
        }
    }
    pts
}

/// Two-sided Hausdorff distance between the boundary and the sphere of the
/// volume-matched ball about the Fraenkel centre.
pub fn hausdorff_to_ball(mask: &DomainMask) -> Result<f64> {
    let (_, c) = fraenkel_asymmetry(mask)?;
    let r = (3.0 * domain_volume(mask) / (4.0 * PI)).cbrt();
    let pts = interface_points(mask);
    if pts.is_empty() {
        return Err(Error::EmptyDomain("no boundary".into()));
    }
    let dist = |p: &[f64; 3]| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
    let to_sphere = pts.iter().map(|p| (dist(p) - r).abs()).fold(0.0, f64::max);
    let to_boundary = fibonacci_sphere(2000)
        .par_iter()
        .map(|d| {
            let s = [c[0] + r * d[0], c[1] + r * d[1], c[2] + r * d[2]];
            pts.iter()
                .map(|p| (p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2) + (p[2] - s[2]).powi(2))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .reduce(|| 0.0, f64::max);
    Ok(to_sphere.max(to_boundary))
}
