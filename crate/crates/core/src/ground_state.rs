//! Inner problem: minimize `∫|∇u|² + (q/2) D(u,u)` over `‖u‖₂ = 1`, `u = 0` off a mask.
//!
//! `D` is a positive quadratic form, so the minimizer is the lowest eigenpair of
//! the linear operator `H = −Δ_Ω + (q/2) K` restricted to the mask. It is found
//! with a single-vector locally optimal block preconditioned conjugate gradient
//! (LOBPCG) iteration whose preconditioner is a few Jacobi-CG sweeps on `−Δ_Ω`.

use std::collections::VecDeque;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coulomb::CoulombKernel;
use crate::error::{Error, Result};
use crate::field::{DomainMask, Grid, Region, ScalarField, FACE_DIRS};

const NONE: u32 = u32::MAX;

/// Initial vector for the eigensolver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Start {
    /// Positive distance-to-boundary bump.
    #[default]
    Bump,
    /// Uniform noise in `(−1, 1)` from the given seed.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Converged when the Euler–Lagrange residual drops below `tol_rel · λ`.
    pub tol_rel: f64,
    pub max_iters: usize,
    pub start: Start,
    /// Jacobi-CG sweeps per preconditioner application.
    pub inner_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_rel: 1e-6,
            max_iters: 20_000,
            start: Start::Bump,
            inner_iters: 12,
        }
    }
}

/// Normalized minimizer on a fixed mask with its energy split.
#[derive(Debug, Clone)]
pub struct GroundState {
    pub u: ScalarField,
    pub q: f64,
    /// Multiplier `λ = dirichlet + (q/2) coulomb`, which is also `E_q(Ω)`.
    pub lambda: f64,
    pub dirichlet: f64,
    pub coulomb: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Rayleigh quotient after each iteration.
    pub history: Vec<f64>,
}

impl GroundState {
    pub fn energy(&self) -> f64 {
        self.lambda
    }
}

/// The mask operator in compact storage (one entry per inside cell).
pub(crate) struct MaskOperator {
    grid: Grid,
    pub(crate) cells: Vec<usize>,
    nbr: Vec<[u32; 6]>,
    diag: Vec<f64>,
    region: Region,
    region_slot: Vec<usize>,
    inv_h2: f64,
}

impl MaskOperator {
    pub(crate) fn new(mask: &DomainMask) -> Result<Self> {
        let grid = *mask.grid();
        let cells: Vec<usize> = (0..grid.len()).filter(|&i| mask.contains(i)).collect();
        if cells.is_empty() {
            return Err(Error::EmptyDomain("mask has no inside cells".into()));
        }
        let mut local = vec![NONE; grid.len()];
        for (l, &c) in cells.iter().enumerate() {
            local[c] = l as u32;
        }
        let mut nbr = Vec::with_capacity(cells.len());
        let mut diag = Vec::with_capacity(cells.len());
        for &c in &cells {
            let mut row = [NONE; 6];
            let mut d = 0.0;
            for (f, &(axis, dir)) in FACE_DIRS.iter().enumerate() {
                let nb = grid.neighbor(c, axis, dir);
                match nb {
                    Some(j) if mask.contains(j) => {
                        row[f] = local[j];
                        d += 1.0;
                    }
                    _ => d += 1.0 / mask.face_fraction(c, nb),
                }
            }
            nbr.push(row);
            diag.push(d);
        }
        let region = mask.bounding_region().expect("nonempty mask");
        let region_slot = cells.iter().map(|&c| region.local_index(grid.ijk(c))).collect();
        let h = grid.spacing();
        Ok(MaskOperator {
            grid,
            cells,
            nbr,
            diag,
            region,
            region_slot,
            inv_h2: 1.0 / (h * h),
        })
    }

    pub(crate) fn len(&self) -> usize {
        self.cells.len()
    }

    /// `y = −Δ_Ω x`.
    pub(crate) fn laplacian(&self, x: &[f64], y: &mut [f64]) {
        let s = self.inv_h2;
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut acc = self.diag[i] * x[i];
            for &j in &self.nbr[i] {
                if j != NONE {
                    acc -= x[j as usize];
                }
            }
            *yi = acc * s;
        });
    }

    /// Coulomb potential of the compact vector `x`.
    pub(crate) fn potential(&self, kernel: &CoulombKernel, x: &[f64]) -> Vec<f64> {
        let mut block = vec![0.0; self.region.len()];
        for (l, &slot) in self.region_slot.iter().enumerate() {
            block[slot] = x[l];
        }
        let v = kernel.potential_block(&block, self.region, self.region);
        self.region_slot.iter().map(|&slot| v[slot]).collect()
    }

    fn apply(&self, kernel: &CoulombKernel, q: f64, x: &[f64], y: &mut [f64]) {
        self.laplacian(x, y);
        if q != 0.0 {
            let v = self.potential(kernel, x);
            let c = 0.5 * q;
            y.par_iter_mut().zip(v.par_iter()).for_each(|(a, b)| *a += c * b);
        }
    }

    /// Approximate `(−Δ_Ω)⁻¹ r` by Jacobi-preconditioned CG from zero.
    fn precondition(&self, r: &[f64], iters: usize) -> Vec<f64> {
        let n = r.len();
        let inv_d: Vec<f64> = self.diag.iter().map(|d| 1.0 / (d * self.inv_h2)).collect();
        let mut z = vec![0.0; n];
        let mut res = r.to_vec();
        let mut s: Vec<f64> = res.iter().zip(&inv_d).map(|(a, b)| a * b).collect();
        let mut p = s.clone();
        let mut rs = dot(&res, &s);
        let mut ap = vec![0.0; n];
        for _ in 0..iters {
            if rs == 0.0 {
                break;
            }
            self.laplacian(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rs / pap;
            z.par_iter_mut().zip(p.par_iter()).for_each(|(a, b)| *a += alpha * b);
            res.par_iter_mut().zip(ap.par_iter()).for_each(|(a, b)| *a -= alpha * b);
            s.par_iter_mut()
                .zip(res.par_iter().zip(inv_d.par_iter()))
                .for_each(|(a, (b, c))| *a = b * c);
            let rs_new = dot(&res, &s);
            let beta = rs_new / rs;
            rs = rs_new;
            p.par_iter_mut().zip(s.par_iter()).for_each(|(a, b)| *a = b + beta * *a);
        }
        z
    }

    fn gather(&self, f: &ScalarField) -> Vec<f64> {
        self.cells.iter().map(|&c| f.values()[c]).collect()
    }

    fn scatter(&self, x: &[f64], scale: f64) -> ScalarField {
        let mut v = vec![0.0; self.grid.len()];
        for (l, &c) in self.cells.iter().enumerate() {
            v[c] = x[l] * scale;
        }
        ScalarField::from_values(self.grid, v).expect("finite values")
    }

    /// Number of face steps from each inside cell to the outside.
    fn distance_bump(&self) -> Vec<f64> {
        let n = self.len();
        let mut dist = vec![u32::MAX; n];
        let mut queue = VecDeque::new();
        for i in 0..n {
            if self.nbr[i].contains(&NONE) {
                dist[i] = 1;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            for &j in &self.nbr[i] {
                if j != NONE && dist[j as usize] == u32::MAX {
                    dist[j as usize] = dist[i] + 1;
                    queue.push_back(j as usize);
                }
            }
        }
        dist.iter().map(|&d| d as f64).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.par_iter_mut().zip(x.par_iter()).for_each(|(u, v)| *u += a * v);
}

fn scale(y: &mut [f64], a: f64) {
    y.par_iter_mut().for_each(|u| *u *= a);
}

/// Ground state on `mask` from the configured start.
pub fn solve_ground_state(
    mask: &DomainMask,
    q: f64,
    kernel: &CoulombKernel,
    opts: &SolverOptions,
) -> Result<GroundState> {
    solve_ground_state_from(mask, q, kernel, opts, None)
}

/// Ground state on `mask`, optionally warm-started from `initial` (restricted to the mask).
pub fn solve_ground_state_from(
    mask: &DomainMask,
    q: f64,
    kernel: &CoulombKernel,
    opts: &SolverOptions,
    initial: Option<&ScalarField>,
) -> Result<GroundState> {
    if !(q >= 0.0 && q.is_finite()) {
        return Err(Error::arg("q", format!("{q} must be finite and nonnegative")));
    }
    if kernel.grid() != mask.grid() {
        return Err(Error::GridMismatch("kernel and mask".into()));
    }
    let op = MaskOperator::new(mask)?;
    let n = op.len();
    let mut x = match initial {
        Some(f) if f.grid() == mask.grid() => op.gather(f),
        _ => Vec::new(),
    };
    if x.is_empty() || norm(&x) == 0.0 {
        x = match opts.start {
            Start::Bump => op.distance_bump(),
            Start::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
            }
        };
    }
    let nx = norm(&x);
    scale(&mut x, 1.0 / nx);

    let mut ax = vec![0.0; n];
    op.apply(kernel, q, &x, &mut ax);
    let mut lambda = dot(&x, &ax);
    let mut p: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut history = Vec::new();
    let mut residual;
    let mut r = vec![0.0; n];
    let mut iterations = 0;
    let mut exact_ax = true;
    loop {
        r.par_iter_mut()
            .zip(ax.par_iter().zip(x.par_iter()))
            .for_each(|(ri, (a, b))| *ri = a - lambda * b);
        residual = norm(&r);
        if !residual.is_finite() || !lambda.is_finite() {
            return Err(Error::NanGuard {
                what: "ground-state eigensolver",
                iteration: iterations,
            });
        }
        if residual < opts.tol_rel * lambda.abs() {
            if exact_ax {
                break;
            }
            // Confirm against a fresh operator application.
            op.apply(kernel, q, &x, &mut ax);
            lambda = dot(&x, &ax);
            exact_ax = true;
            continue;
        }
        if iterations >= opts.max_iters {
            return Err(Error::NotConverged {
                what: "ground-state eigensolver",
                iterations,
                residual,
            });
        }
        iterations += 1;

        let mut w = op.precondition(&r, opts.inner_iters);
        let wx = dot(&w, &x);
        axpy(&mut w, -wx, &x);
        let nw = norm(&w);
        if nw == 0.0 || !nw.is_finite() {
            break;
        }
        scale(&mut w, 1.0 / nw);
        let mut aw = vec![0.0; n];
        op.apply(kernel, q, &w, &mut aw);

        let mut basis: Vec<(&[f64], &[f64])> = vec![(&x, &ax), (&w, &aw)];
        if let Some((pv, apv)) = &p {
            basis.push((pv, apv));
        }
        let coeffs = loop {
            match rayleigh_ritz(&basis) {
                Some(c) => break c,
                None if basis.len() == 3 => {
                    basis.pop();
                }
                None => {
                    return Err(Error::NotConverged {
                        what: "ground-state Rayleigh-Ritz step",
                        iterations,
                        residual,
                    })
                }
            }
        };
        let m = basis.len();
        let combine = |which: usize, from: usize| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for (k, b) in basis.iter().enumerate().skip(from) {
                let v = if which == 0 { b.0 } else { b.1 };
                axpy(&mut out, coeffs[k], v);
            }
            out
        };
        let mut new_p = combine(0, 1);
        let mut new_ap = combine(1, 1);
        let mut new_x = combine(0, 0);
        let mut new_ax = combine(1, 0);
        drop(basis);
        let nx = norm(&new_x);
        scale(&mut new_x, 1.0 / nx);
        scale(&mut new_ax, 1.0 / nx);
        let np = norm(&new_p);
        if np > 0.0 && m > 1 {
            scale(&mut new_p, 1.0 / np);
            scale(&mut new_ap, 1.0 / np);
            p = Some((new_p, new_ap));
        } else {
            p = None;
        }
        x = new_x;
        ax = new_ax;
        exact_ax = false;
        if iterations % 25 == 0 {
            op.apply(kernel, q, &x, &mut ax);
            exact_ax = true;
        }
        let new_lambda = dot(&x, &ax);
        if new_lambda > lambda + 1e-12 * lambda.abs() {
            // Rayleigh–Ritz cannot increase the quotient; recurrence drift did. Restart.
            op.apply(kernel, q, &x, &mut ax);
            exact_ax = true;
            p = None;
        }
        lambda = dot(&x, &ax);
        history.push(lambda);
    }

    let h3 = mask.grid().cell_volume();
    let mut lx = vec![0.0; n];
    op.laplacian(&x, &mut lx);
    let dirichlet = dot(&x, &lx);
    let coulomb = if q != 0.0 {
        dot(&x, &op.potential(kernel, &x))
    } else {
        0.0
    };
    let sign = if x.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let u = op.scatter(&x, sign / h3.sqrt());
    Ok(GroundState {
        u,
        q,
        lambda: dirichlet + 0.5 * q * coulomb,
        dirichlet,
        coulomb,
        iterations,
        residual,
        history,
    })
}

/// Lowest Ritz vector of `(S^T A S) y = θ (S^T S) y`; `None` if the Gram matrix is singular.
fn rayleigh_ritz(basis: &[(&[f64], &[f64])]) -> Option<Vec<f64>> {
    let m = basis.len();
    let mut g = Matrix3::<f64>::identity();
    let mut a = Matrix3::<f64>::zeros();
    for i in 0..m {
        for j in 0..m {
            g[(i, j)] = dot(basis[i].0, basis[j].0);
            a[(i, j)] = 0.5 * (dot(basis[i].0, basis[j].1) + dot(basis[j].0, basis[i].1));
        }
    }
    let g = g.view((0, 0), (m, m)).into_owned();
    let a = a.view((0, 0), (m, m)).into_owned();
    let ge = SymmetricEigen::new(g.clone());
    let gmin = ge.eigenvalues.min();
    let gmax = ge.eigenvalues.max();
    if !(gmin > 1e-10 * gmax) {
        return None;
    }
    let chol = g.cholesky()?;
    let l = chol.l();
    let linv = l.clone().try_inverse()?;
    let c = &linv * a * linv.transpose();
    let c = 0.5 * (&c + c.transpose());
    let eig = SymmetricEigen::new(c);
    let k = eig.eigenvalues.imin();
    let z = eig.eigenvectors.column(k).into_owned();
    let y = linv.transpose() * z;
    Some(y.iter().copied().collect())
}

/// `∫|∇u|²` with the mask's boundary-fitted face weights; `u` must vanish off the mask.
pub fn masked_dirichlet(u: &ScalarField, mask: &DomainMask) -> Result<f64> {
    let op = MaskOperator::new(mask)?;
    let x = op.gather(u);
    let mut lx = vec![0.0; x.len()];
    op.laplacian(&x, &mut lx);
    Ok(dot(&x, &lx) * mask.grid().cell_volume())
}

/// `−Δ_Ω u` on the mask (zero elsewhere).
pub fn apply_masked_laplacian(u: &ScalarField, mask: &DomainMask) -> Result<ScalarField> {
    let op = MaskOperator::new(mask)?;
    let x = op.gather(u);
    let mut lx = vec![0.0; x.len()];
    op.laplacian(&x, &mut lx);
    Ok(op.scatter(&lx, 1.0))
}

/// `‖−Δu + (q/2) v_u − λ u‖₂` over mask cells whose six neighbours are inside.
pub fn el_residual(
    gs: &GroundState,
    mask: &DomainMask,
    q: f64,
    kernel: &CoulombKernel,
) -> Result<f64> {
    if gs.u.grid() != mask.grid() {
        return Err(Error::GridMismatch("state and mask".into()));
    }
    let op = MaskOperator::new(mask)?;
    let x = op.gather(&gs.u);
    let mut y = vec![0.0; x.len()];
    op.laplacian(&x, &mut y);
    if q != 0.0 {
        let v = op.potential(kernel, &x);
        axpy(&mut y, 0.5 * q, &v);
    }
    let mut s = 0.0;
    for i in 0..x.len() {
        if op.nbr[i].iter().all(|&j| j != NONE) {
            let r = y[i] - gs.lambda * x[i];
            s += r * r;
        }
    }
    Ok((s * mask.grid().cell_volume()).sqrt())
}

/// First Dirichlet eigenvalue `λ₀(Ω)` of the mask.
pub fn dirichlet_eigenvalue(mask: &DomainMask, opts: &SolverOptions) -> Result<GroundState> {
    let kernel = CoulombKernel::tabulated(*mask.grid());
    solve_ground_state(mask, 0.0, &kernel, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial_oracle::ball_ground_state;
    use crate::shapes::Shape;
    use std::f64::consts::PI;

    fn ball(n: usize, r: f64) -> DomainMask {
        Shape::unit_ball().mask(Grid::new(n, r).unwrap())
    }

    #[test]
    fn ball_eigenvalue_q0() {
        let mask = ball(48, 1.5);
        let gs = dirichlet_eigenvalue(&mask, &SolverOptions::default()).unwrap();
        assert!((gs.lambda / (PI * PI) - 1.0).abs() < 0.02, "{}", gs.lambda);
        assert!(gs.residual <= 1e-6 * gs.lambda);
        assert!((gs.u.l2_norm() - 1.0).abs() < 1e-10);
        assert!(gs.u.min() >= 0.0);
        for (i, &v) in gs.u.values().iter().enumerate() {
            if !mask.contains(i) {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn cube_eigenvalue_q0() {
        let g = Grid::new(48, 1.0).unwrap();
        let mask = Shape::Cube { side: 1.0 }.mask(g);
        let gs = dirichlet_eigenvalue(&mask, &SolverOptions::default()).unwrap();
        assert!((gs.lambda / (3.0 * PI * PI) - 1.0).abs() < 0.02, "{}", gs.lambda);
    }

    #[test]
    fn ball_matches_radial_oracle_with_coupling() {
        let mask = ball(40, 1.3);
        let k = CoulombKernel::tabulated(*mask.grid());
        let gs = solve_ground_state(&mask, 0.05, &k, &SolverOptions::default()).unwrap();
        let oracle = ball_ground_state(0.05).unwrap();
        assert!((gs.lambda / oracle.energy - 1.0).abs() < 0.02);
        assert!((gs.lambda - (gs.dirichlet + 0.025 * gs.coulomb)).abs() <= 1e-8 * gs.lambda);
        let res = el_residual(&gs, &mask, 0.05, &k).unwrap();
        assert!(res <= 1e-6 * gs.lambda, "{res}");
        for w in gs.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0]);
        }
    }

    #[test]
    fn perturbation_increases_residual() {
        let mask = ball(32, 1.3);
        let k = CoulombKernel::tabulated(*mask.grid());
        let gs = solve_ground_state(&mask, 0.1, &k, &SolverOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noisy = ScalarField::from_values(
            *mask.grid(),
            gs.u.values()
                .iter()
                .enumerate()
                .map(|(i, &v)| if mask.contains(i) { v + 0.1 * rng.gen_range(-1.0..1.0) } else { 0.0 })
                .collect(),
        )
        .unwrap();
        let perturbed = GroundState { u: noisy, ..gs.clone() };
        let base = el_residual(&gs, &mask, 0.1, &k).unwrap();
        assert!(el_residual(&perturbed, &mask, 0.1, &k).unwrap() > base);
    }

    #[test]
    fn residual_of_exact_eigenfunction_decreases_under_refinement() {
        let mut last = f64::INFINITY;
        for n in [24, 48, 96] {
            let mask = ball(n, 1.5);
            let g = *mask.grid();
            let u = ScalarField::from_fn(g, |p| {
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                if r < 1e-12 {
                    PI / (2.0 * PI).sqrt()
                } else {
                    (PI * r).sin() / ((2.0 * PI).sqrt() * r)
                }
            })
            .restricted(&mask)
            .unwrap();
            let gs = GroundState {
                u,
                q: 0.0,
                lambda: PI * PI,
                dirichlet: PI * PI,
                coulomb: 0.0,
                iterations: 0,
                residual: 0.0,
                history: vec![],
            };
            let k = CoulombKernel::tabulated(g);
            let r = el_residual(&gs, &mask, 0.0, &k).unwrap();
            assert!(r < last, "n={n} residual {r} not below {last}");
            last = r;
        }
    }

    #[test]
    fn nested_masks_are_monotone() {
        let g = Grid::new(32, 1.5).unwrap();
        let k = CoulombKernel::tabulated(g);
        let opts = SolverOptions::default();
        let small = Shape::Ball { radius: 0.8, center: [0.0; 3] }.mask(g);
        let large = Shape::unit_ball().mask(g);
        let es = solve_ground_state(&small, 0.2, &k, &opts).unwrap().lambda;
        let el = solve_ground_state(&large, 0.2, &k, &opts).unwrap().lambda;
        assert!(el <= es * (1.0 + 1e-3));
    }

    #[test]
    fn random_start_is_deterministic() {
        let mask = ball(24, 1.5);
        let k = CoulombKernel::tabulated(*mask.grid());
        let opts = SolverOptions {
            start: Start::Random { seed: 9 },
            ..Default::default()
        };
        let a = solve_ground_state(&mask, 0.1, &k, &opts).unwrap();
        let b = solve_ground_state(&mask, 0.1, &k, &opts).unwrap();
        assert_eq!(a.lambda.to_bits(), b.lambda.to_bits());
        assert_eq!(a.u, b.u);
    }

    #[test]
    fn errors() {
        let g = Grid::new(16, 1.0).unwrap();
        let k = CoulombKernel::tabulated(g);
        let opts = SolverOptions::default();
        assert!(matches!(
            solve_ground_state(&DomainMask::empty(g), 0.0, &k, &opts),
            Err(Error::EmptyDomain(_))
        ));
        let mask = Shape::Ball { radius: 0.5, center: [0.0; 3] }.mask(g);
        assert!(solve_ground_state(&mask, -1.0, &k, &opts).is_err());
        let tight = SolverOptions { max_iters: 1, tol_rel: 1e-14, ..Default::default() };
        assert!(matches!(
            solve_ground_state(&mask, 0.0, &k, &tight),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn masked_dirichlet_matches_plain_energy_on_staircase() {
        let g = Grid::new(20, 1.0).unwrap();
        let mask = Shape::unit_ball().scaled(0.7).mask(g).without_level_set();
        let gs = dirichlet_eigenvalue(&mask, &SolverOptions::default()).unwrap();
        let a = masked_dirichlet(&gs.u, &mask).unwrap();
        let b = crate::field::dirichlet_energy(&gs.u);
        assert!((a - b).abs() < 1e-10 * b);
        assert!((a - gs.dirichlet).abs() < 1e-8 * b);
    }
}
