//! One-dimensional reference solutions for radially symmetric configurations
//! on the unit ball. These are the ground truth the 3D code is checked against.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// Samples `u(r_j)` at `r_j = (j + 1/2) r_max / m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub r_max: f64,
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl RadialProfile {
    pub fn from_fn(r_max: f64, m: usize, f: impl Fn(f64) -> f64) -> Self {
        assert!(m >= 4, "radial profiles need at least 4 samples");
        let dr = r_max / m as f64;
        RadialProfile {
            r_max,
            values: (0..m).map(|j| f((j as f64 + 0.5) * dr)).collect(),
            normalized: false,
        }
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn dr(&self) -> f64 {
        self.r_max / self.m() as f64
    }

    pub fn r(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dr()
    }

    /// Local cubic interpolation of the samples; zero beyond `r_max`.
    pub fn eval(&self, r: f64) -> f64 {
        if r < 0.0 || r > self.r_max {
            return 0.0;
        }
        let m = self.m();
        let c = ((r / self.dr()) as usize).min(m - 1);
        self.eval_in_cell(c, r)
    }

    fn eval_in_cell(&self, c: usize, r: f64) -> f64 {
        let m = self.m();
        let start = c.saturating_sub(1).min(m - 4);
        let t = r / self.dr() - 0.5 - start as f64;
        let y = &self.values[start..start + 4];
        // Lagrange basis on nodes 0, 1, 2, 3.
        let l0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
        let l1 = t * (t - 2.0) * (t - 3.0) / 2.0;
        let l2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
        let l3 = t * (t - 1.0) * (t - 2.0) / 6.0;
        l0 * y[0] + l1 * y[1] + l2 * y[2] + l3 * y[3]
    }

    /// `4π ∫ u² r² dr`.
    pub fn norm_sq(&self) -> f64 {
        let (x, w) = gauss_legendre(6);
        let dr = self.dr();
        let mut s = 0.0;
        for c in 0..self.m() {
            for (t, wt) in x.iter().zip(&w) {
                let r = (c as f64 + 0.5 + 0.5 * t) * dr;
                let u = self.eval_in_cell(c, r);
                s += wt * u * u * r * r;
            }
        }
        4.0 * PI * 0.5 * dr * s
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sq().sqrt();
        if n > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= n);
        }
        self.normalized = true;
    }
}

/// First Dirichlet eigenpair of the unit ball.
#[derive(Debug, Clone)]
pub struct BallEigen {
    pub lambda: f64,
    pub profile: RadialProfile,
    /// `u'(1)` of the normalized eigenfunction (negative).
    pub boundary_slope: f64,
}

/// Shooting on `w'' = −λ w` (`w = r u`, `w(0) = 0`) with bisection on `w(1) = 0`.
pub fn dirichlet_eigen_ball() -> BallEigen {
    dirichlet_eigen_ball_with(4096)
}

pub fn dirichlet_eigen_ball_with(m: usize) -> BallEigen {
    let steps = 2 * m;
    let dt = 1.0 / steps as f64;
    let shoot = |lambda: f64, mut record: Option<&mut Vec<f64>>| -> (f64, f64) {
        let (mut w, mut p) = (0.0f64, 1.0f64);
        for s in 0..steps {
            // RK4 for (w, p)' = (p, −λ w).
            let k1 = (p, -lambda * w);
            let k2 = (p + 0.5 * dt * k1.1, -lambda * (w + 0.5 * dt * k1.0));
            let k3 = (p + 0.5 * dt * k2.1, -lambda * (w + 0.5 * dt * k2.0));
            let k4 = (p + dt * k3.1, -lambda * (w + dt * k3.0));
            w += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            p += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            if s % 2 == 0 {
                if let Some(rec) = record.as_deref_mut() {
                    rec.push(w);
                }
            }
        }
        (w, p)
    };
    let mut lo = 1.0;
    while shoot(lo + 1.0, None).0 > 0.0 {
        lo += 1.0;
    }
    let mut hi = lo + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if shoot(mid, None).0 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let mut ws = Vec::with_capacity(m);
    let (w1, p1) = shoot(lambda, Some(&mut ws));
    let mut profile = RadialProfile {
        r_max: 1.0,
        values: ws
            .iter()
            .enumerate()
            .map(|(j, w)| w / ((j as f64 + 0.5) / m as f64))
            .collect(),
        normalized: false,
    };
    let norm = profile.norm_sq().sqrt();
    profile.normalize();
    BallEigen {
        lambda,
        profile,
        boundary_slope: (p1 - w1) / norm,
    }
}

/// `D(u, u)` by Newton's theorem, `D = 2 (4π)² ∫ r u(r) M(r) dr` with
/// `M(r) = ∫_0^r s² u(s) ds`, using piecewise-cubic quadrature.
pub fn coulomb_energy_radial(p: &RadialProfile) -> f64 {
    let (x, w) = gauss_legendre(6);
    let dr = p.dr();
    let mut cumulative = 0.0;
    let mut total = 0.0;
    for c in 0..p.m() {
        let a = c as f64 * dr;
        let mut cell = 0.0;
        for (t, wt) in x.iter().zip(&w) {
            let r = a + 0.5 * (1.0 + t) * dr;
            // M(r) = M(a) + ∫_a^r s² u.
            let half = 0.5 * (r - a);
            let mut partial = 0.0;
            for (t2, w2) in x.iter().zip(&w) {
                let s = a + half * (1.0 + t2);
                partial += w2 * s * s * p.eval_in_cell(c, s);
            }
            let m_r = cumulative + half * partial;
            cell += wt * r * p.eval_in_cell(c, r) * m_r;
        }
        total += 0.5 * dr * cell;
        let mut full = 0.0;
        for (t, wt) in x.iter().zip(&w) {
            let s = a + 0.5 * (1.0 + t) * dr;
            full += wt * s * s * p.eval_in_cell(c, s);
        }
        cumulative += 0.5 * dr * full;
    }
    2.0 * (4.0 * PI).powi(2) * total
}

/// Ground state of `E_q` on the unit ball.
#[derive(Debug, Clone)]
pub struct BallState {
    pub q: f64,
    pub energy: f64,
    pub lambda: f64,
    pub dirichlet: f64,
    pub coulomb: f64,
    pub profile: RadialProfile,
    /// Euler–Lagrange residual in the coefficient norm.
    pub residual: f64,
    /// Coefficients in the basis `sin(kπr) / (√(2π) r)`, `k = 1, 2, ...`.
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BallOptions {
    pub modes: usize,
    pub samples: usize,
}

impl Default for BallOptions {
    fn default() -> Self {
        BallOptions {
            modes: 256,
            samples: 4096,
        }
    }
}

/// Coulomb matrix `K_ab = D(φ_a, φ_b)` of the normalized radial sine modes
/// `φ_k = sin(kπr) / (√(2π) r)` on `B₁`.
///
/// The potential of `φ_k` inside the ball is
/// `√(8π) [sin(kπr) / ((kπ)² r) − (−1)^k / (kπ)]`, which integrates against
/// `φ_a` in closed form.
pub fn sine_mode_coulomb_matrix(modes: usize) -> DMatrix<f64> {
    DMatrix::from_fn(modes, modes, |i, j| {
        let (a, b) = ((i + 1) as f64, (j + 1) as f64);
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        let diag = if i == j { 4.0 / (PI * b * b) } else { 0.0 };
        diag + 8.0 * sign / (PI * a * b)
    })
}

/// Minimizes `∫|∇u|² + (q/2) D(u,u)` over normalized radial `u` on `B₁`.
///
/// `D` is a quadratic form, so the minimizer is the lowest eigenvector of
/// `−Δ + (q/2) K`, computed by Galerkin projection onto the Dirichlet sine modes.
pub fn ball_ground_state(q: f64) -> Result<BallState> {
    ball_ground_state_with(q, &BallOptions::default())
}

pub fn ball_ground_state_with(q: f64, opts: &BallOptions) -> Result<BallState> {
    if !(q >= 0.0 && q.is_finite()) {
        return Err(Error::arg("q", format!("{q} must be finite and nonnegative")));
    }
    let k = opts.modes;
    let kinetic = DVector::from_fn(k, |i, _| ((i + 1) as f64 * PI).powi(2));
    let coulomb_mat = sine_mode_coulomb_matrix(k);
    let h = DMatrix::from_diagonal(&kinetic) + &coulomb_mat * (0.5 * q);
    let eig = SymmetricEigen::new(h.clone());
    let lowest = eig.eigenvalues.imin();
    let mut c = eig.eigenvectors.column(lowest).into_owned().normalize();
    if c[0] < 0.0 {
        c = -c;
    }
    let hc = &h * &c;
    let lambda = c.dot(&hc);
    let residual = (&hc - &c * lambda).norm();
    if !(residual < 1e-8 * lambda) {
        return Err(Error::NotConverged {
            what: "radial Galerkin eigenproblem",
            iterations: 1,
            residual,
        });
    }
    let dirichlet: f64 = c.iter().zip(kinetic.iter()).map(|(a, b)| a * a * b).sum();
    let coulomb = c.dot(&(&coulomb_mat * &c));
    let coefficients: Vec<f64> = c.iter().copied().collect();
    let norm = (2.0 * PI).sqrt();
    let mut profile = RadialProfile::from_fn(1.0, opts.samples, |r| {
        coefficients
            .iter()
            .enumerate()
            .map(|(i, ci)| ci * ((i + 1) as f64 * PI * r).sin())
            .sum::<f64>()
            / (norm * r)
    });
    profile.normalized = true;
    Ok(BallState {
        q,
        energy: dirichlet + 0.5 * q * coulomb,
        lambda,
        dirichlet,
        coulomb,
        profile,
        residual,
        coefficients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_eigenvalue_and_profile() {
        let e = dirichlet_eigen_ball();
        assert!((e.lambda - PI * PI).abs() < 1e-8, "{}", e.lambda);
        assert!((e.profile.norm_sq() - 1.0).abs() < 1e-10);
        assert!((e.boundary_slope.abs() - (PI / 2.0).sqrt()).abs() < 1e-8);
        // Closed form sin(πr) / (√(2π) r).
        for j in (0..e.profile.m()).step_by(97) {
            let r = e.profile.r(j);
            let exact = (PI * r).sin() / ((2.0 * PI).sqrt() * r);
            assert!((e.profile.values[j] - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn coulomb_radial_zero_and_uniform() {
        let zero = RadialProfile::from_fn(1.0, 256, |_| 0.0);
        assert_eq!(coulomb_energy_radial(&zero), 0.0);
        let one = RadialProfile::from_fn(1.0, 4096, |_| 1.0);
        let exact = 32.0 * PI * PI / 15.0;
        assert!((coulomb_energy_radial(&one) - exact).abs() < 1e-6);
    }

    #[test]
    fn coulomb_radial_gaussian_oracle() {
        // Two Gaussians e^{-a|x|²}, e^{-b|y|²} pair to (π²/ab)^{3/2} (2/√π) √(ab/(a+b)).
        let p = RadialProfile::from_fn(8.0, 8192, |r| (-r * r).exp());
        let exact = PI.powf(2.5) * 2.0f64.sqrt();
        assert!((coulomb_energy_radial(&p) / exact - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ball_state_q0_reduces_to_eigenvalue() {
        let s = ball_ground_state(0.0).unwrap();
        assert!((s.energy - PI * PI).abs() < 1e-10);
        assert!((s.lambda - PI * PI).abs() < 1e-10);
        assert!((s.profile.norm_sq() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn ball_state_first_order_and_bounds() {
        let d_star = coulomb_energy_radial(&dirichlet_eigen_ball().profile);
        for q in [0.01, 0.02, 0.05] {
            let s = ball_ground_state(q).unwrap();
            let slope = (s.energy - PI * PI) / q;
            assert!((slope / (0.5 * d_star) - 1.0).abs() < 0.01, "q={q} slope={slope}");
            assert!(s.residual <= 1e-8);
            assert!((s.lambda - (s.dirichlet + 0.5 * q * s.coulomb)).abs() <= 1e-10 * s.lambda);
        }
        let s = ball_ground_state(0.1).unwrap();
        assert!(s.energy <= PI * PI + 0.05 * d_star);
        assert!(s.energy >= PI * PI);
    }

    #[test]
    fn ball_state_monotone_in_q() {
        let mut last = 0.0;
        for q in [0.0, 0.1, 0.2, 0.5, 1.0] {
            let e = ball_ground_state(q).unwrap().energy;
            assert!(e >= last);
            last = e;
        }
    }

    #[test]
    fn coulomb_of_galerkin_state_matches_profile_quadrature() {
        let s = ball_ground_state(0.5).unwrap();
        let d = coulomb_energy_radial(&s.profile);
        assert!((d / s.coulomb - 1.0).abs() < 1e-8, "{d} {}", s.coulomb);
    }

    #[test]
    fn reference_coulomb_constant_two_routes() {
        let quadrature = coulomb_energy_radial(&dirichlet_eigen_ball().profile);
        let closed = sine_mode_coulomb_matrix(1)[(0, 0)];
        assert!((quadrature - closed).abs() < 1e-8, "{quadrature} {closed}");
        assert!((closed - 12.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn negative_q_rejected() {
        assert!(ball_ground_state(-0.1).is_err());
    }
}
