//! The unconstrained functional
//! `𝓔(u) = ∫|∇u|² + (q/2) D(u,u) + M |∫u² − 1| + f_η(|{u ≠ 0}|)`
//! and its minimization over shapes.
//!
//! For a fixed support the optimal `u` is the ground state, so the minimizer
//! moves the support itself: a level-set function is advected with the normal
//! speed `V = |∂_n u|² − s`, the negative shape gradient of `λ_q(Ω) + f_η(|Ω|)`,
//! where `s` is a subgradient of `f_η` chosen by a volume controller.

use serde::{Deserialize, Serialize};

use crate::coulomb::{coulomb_energy, CoulombKernel};
use crate::error::{Error, Result};
use crate::field::{dirichlet_energy, DomainMask, Grid, ScalarField};
use crate::ground_state::{solve_ground_state_from, GroundState, SolverOptions};
use crate::levelset;
use crate::radial_oracle::ball_ground_state;
use crate::UNIT_BALL_VOLUME;

pub const DEFAULT_ETA: f64 = 0.5;

/// Width of the Huber smoothing of `|∫u² − 1|` in penalize mode.
pub const HUBER_WIDTH: f64 = 1e-6;

/// Piecewise-linear volume penalty with its kink at `|B₁|`.
pub fn f_eta(s: f64, eta: f64) -> f64 {
    let d = s - UNIT_BALL_VOLUME;
    if d <= 0.0 {
        eta * d
    } else {
        d / eta
    }
}

/// Coupling for a charge `m` on the unit-volume scale: `q = 2 (m/|B₁|)^{4/3}`.
pub fn mass_to_q(m: f64) -> f64 {
    2.0 * (m / UNIT_BALL_VOLUME).powf(4.0 / 3.0)
}

pub fn q_to_mass(q: f64) -> f64 {
    UNIT_BALL_VOLUME * (q / 2.0).powf(0.75)
}

/// Penalty weight rule `M = 10 (E₁(B₁) + |B₁|) + 1`.
pub fn auto_m() -> Result<f64> {
    let e1 = ball_ground_state(1.0)?.energy;
    Ok(10.0 * (e1 + UNIT_BALL_VOLUME) + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// `u` is renormalized exactly, so the `L²` penalty vanishes.
    #[default]
    Project,
    /// The amplitude of `u` minimizes the Huber-smoothed `L²` penalty.
    Penalize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub m: f64,
    pub eta: f64,
    pub tau_supp: f64,
    pub mode: PenaltyMode,
}

impl PenaltySpec {
    pub fn new(m: f64, eta: f64, tau_supp: f64, mode: PenaltyMode) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::arg("M", format!("{m} must be positive")));
        }
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::arg("eta", format!("{eta} must lie in (0, 1)")));
        }
        if !(tau_supp >= 0.0 && tau_supp.is_finite()) {
            return Err(Error::arg("tau_supp", format!("{tau_supp} must be nonnegative")));
        }
        Ok(PenaltySpec {
            m,
            eta,
            tau_supp,
            mode,
        })
    }

    /// Spec with `M` from [`auto_m`].
    pub fn auto(eta: f64, tau_supp: f64, mode: PenaltyMode) -> Result<Self> {
        Self::new(auto_m()?, eta, tau_supp, mode)
    }
}

/// Terms of `𝓔`; `coulomb` is `D(u,u)` before the `q/2` factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParts {
    pub dirichlet: f64,
    pub coulomb: f64,
    pub l2penalty: f64,
    pub volpenalty: f64,
}

impl EnergyParts {
    pub fn total(&self, q: f64) -> f64 {
        self.dirichlet + 0.5 * q * self.coulomb + self.l2penalty + self.volpenalty
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub energy: f64,
    pub parts: EnergyParts,
    pub support_volume: f64,
}

/// `h³ · #{|u| > tau}`.
pub fn support_volume(u: &ScalarField, tau: f64) -> f64 {
    u.values().iter().filter(|v| v.abs() > tau).count() as f64 * u.grid().cell_volume()
}

/// Direct evaluation of `𝓔` on a grid field (forward-difference Dirichlet energy,
/// support counted as `h³ · #{|u| > tau_supp}`).
pub fn evaluate(
    u: &ScalarField,
    q: f64,
    spec: &PenaltySpec,
    kernel: &CoulombKernel,
) -> Result<Evaluation> {
    let l2: f64 = crate::field::integrate(&u.map(|v| v * v));
    let supp = support_volume(u, spec.tau_supp);
    let parts = EnergyParts {
        dirichlet: dirichlet_energy(u),
        coulomb: if q != 0.0 { coulomb_energy(u, kernel)? } else { 0.0 },
        l2penalty: spec.m * (l2 - 1.0).abs(),
        volpenalty: f_eta(supp, spec.eta),
    };
    Ok(Evaluation {
        energy: parts.total(q),
        parts,
        support_volume: supp,
    })
}

/// `(u − ε)₊ − (u + ε)₋`, the truncation competitor.
pub fn truncate(u: &ScalarField, eps: f64) -> ScalarField {
    u.map(|v| {
        if v > eps {
            v - eps
        } else if v < -eps {
            v + eps
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub energy: f64,
    pub dirichlet: f64,
    pub coulomb: f64,
    pub l2penalty: f64,
    pub volpenalty: f64,
    pub volume: f64,
    pub support_volume: f64,
    pub dt: f64,
}

#[derive(Debug, Clone)]
pub struct MinimizerResult {
    pub q: f64,
    pub u: ScalarField,
    pub energy: f64,
    pub parts: EnergyParts,
    /// `h³ · #{|u| > tau_supp}`.
    pub support_volume: f64,
    /// Volume of the level-set domain.
    pub volume: f64,
    pub mask: DomainMask,
    pub history: Vec<TraceRow>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimizeOptions {
    pub max_iters: usize,
    /// Stop when the relative energy decrease over `window` steps is below `tol`.
    pub tol: f64,
    pub window: usize,
    /// Interface displacement per step, in cells.
    pub cfl: f64,
    /// Radius (in cells) over which boundary slopes are averaged.
    pub smoothing: f64,
    /// Eigensolver tolerance during the flow; the final solve uses `solver.tol_rel`.
    pub inner_tol_rel: f64,
    pub solver: SolverOptions,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            max_iters: 400,
            tol: 1e-6,
            window: 10,
            cfl: 0.5,
            smoothing: 1.5,
            inner_tol_rel: 1e-6,
            solver: SolverOptions::default(),
        }
    }
}

struct ShapeState {
    phi: Vec<f64>,
    mask: DomainMask,
    gs: GroundState,
    volume: f64,
    energy: f64,
}

fn shape_state(
    grid: Grid,
    phi: Vec<f64>,
    q: f64,
    spec: &PenaltySpec,
    kernel: &CoulombKernel,
    solver: &SolverOptions,
    warm: Option<&ScalarField>,
) -> Result<ShapeState> {
    let mask = DomainMask::from_level_set_values(grid, phi.clone());
    let gs = solve_ground_state_from(&mask, q, kernel, solver, warm)?;
    let volume = mask.fitted_volume();
    let energy = gs.lambda + f_eta(volume, spec.eta);
    Ok(ShapeState {
        phi,
        mask,
        gs,
        volume,
        energy,
    })
}

/// Minimizes `𝓔` starting from the support of `u0` (`|u0| > tau_supp`).
pub fn minimize(
    u0: &ScalarField,
    q: f64,
    spec: &PenaltySpec,
    opts: &MinimizeOptions,
    kernel: &CoulombKernel,
) -> Result<MinimizerResult> {
    let mask = DomainMask::from_support(u0, spec.tau_supp);
    if mask.count() == 0 {
        return Err(Error::EmptyDomain("initial field has empty support".into()));
    }
    minimize_from_mask(&mask, q, spec, opts, kernel)
}

/// Minimizes `𝓔` starting from a domain (its level set is used when present).
pub fn minimize_from_mask(
    mask0: &DomainMask,
    q: f64,
    spec: &PenaltySpec,
    opts: &MinimizeOptions,
    kernel: &CoulombKernel,
) -> Result<MinimizerResult> {
    if !(q >= 0.0 && q.is_finite()) {
        return Err(Error::arg("q", format!("{q} must be finite and nonnegative")));
    }
    let grid = *mask0.grid();
    if kernel.grid() != &grid {
        return Err(Error::GridMismatch("kernel and mask".into()));
    }
    let h = grid.spacing();
    let width = 6.0 * h;
    let mut phi = match mask0.level_set() {
        Some(p) => p.to_vec(),
        None => levelset::from_mask(mask0, width),
    };
    levelset::redistance(&grid, &mut phi, width);
    let loose = SolverOptions {
        tol_rel: opts.inner_tol_rel,
        ..opts.solver.clone()
    };
    let mut state = shape_state(grid, phi, q, spec, kernel, &loose, None)?;
    let mut history = vec![trace_row(0, &state, spec, 0.0)];
    let mut cfl = opts.cfl;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let Some((speed, dt)) = normal_speed(&state, spec, opts, cfl) else {
            converged = true;
            break;
        };
        let mut trial_phi = state.phi.clone();
        for (p, v) in trial_phi.iter_mut().zip(&speed) {
            *p -= dt * v;
        }
        levelset::redistance(&grid, &mut trial_phi, width);
        let trial = if trial_phi.iter().any(|&p| p < 0.0) {
            shape_state(grid, trial_phi, q, spec, kernel, &loose, Some(&state.gs.u)).ok()
        } else {
            None
        };
        match trial {
            Some(t) if t.energy <= state.energy + 1e-10 * state.energy.abs() => {
                state = t;
                cfl = (cfl * 1.25).min(opts.cfl);
                history.push(trace_row(iterations, &state, spec, dt));
                if !state.energy.is_finite() {
                    return Err(Error::NanGuard {
                        what: "shape flow",
                        iteration: iterations,
                    });
                }
            }
            _ => {
                cfl *= 0.5;
                if cfl < opts.cfl / 256.0 {
                    converged = true;
                    break;
                }
                continue;
            }
        }
        let k = history.len();
        if k > opts.window {
            let old = history[k - 1 - opts.window].energy;
            if (old - state.energy) <= opts.tol * state.energy.abs() {
                converged = true;
                break;
            }
        }
    }

    let gs = solve_ground_state_from(&state.mask, q, kernel, &opts.solver, Some(&state.gs.u))?;
    let amplitude2 = match spec.mode {
        PenaltyMode::Project => 1.0,
        // Minimizer of a²λ + M·huber(a² − 1) lies in the quadratic zone of the Huber term.
        PenaltyMode::Penalize => 1.0 - HUBER_WIDTH * gs.lambda / spec.m,
    };
    let u = gs.u.scaled(amplitude2.sqrt());
    let l2 = amplitude2 - 1.0;
    let l2penalty = spec.m
        * if l2.abs() > HUBER_WIDTH {
            l2.abs()
        } else {
            l2 * l2 / (2.0 * HUBER_WIDTH) + HUBER_WIDTH / 2.0
        };
    let l2penalty = if spec.mode == PenaltyMode::Project { 0.0 } else { l2penalty };
    let parts = EnergyParts {
        dirichlet: gs.dirichlet * amplitude2,
        coulomb: gs.coulomb * amplitude2,
        l2penalty,
        volpenalty: f_eta(state.volume, spec.eta),
    };
    Ok(MinimizerResult {
        q,
        support_volume: support_volume(&u, spec.tau_supp),
        u,
        energy: parts.total(q),
        parts,
        volume: state.volume,
        mask: state.mask,
        history,
        iterations,
        converged,
    })
}

fn trace_row(iteration: usize, s: &ShapeState, spec: &PenaltySpec, dt: f64) -> TraceRow {
    TraceRow {
        iteration,
        energy: s.energy,
        dirichlet: s.gs.dirichlet,
        coulomb: s.gs.coulomb,
        l2penalty: 0.0,
        volpenalty: f_eta(s.volume, spec.eta),
        volume: s.volume,
        support_volume: support_volume(&s.gs.u, spec.tau_supp),
        dt,
    }
}

/// Normal speed on the band `|φ| < 3h` and the time step, or `None` once the
/// interface no longer moves.
fn normal_speed(
    state: &ShapeState,
    spec: &PenaltySpec,
    opts: &MinimizeOptions,
    cfl: f64,
) -> Option<(Vec<f64>, f64)> {
    let grid = *state.mask.grid();
    let h = grid.spacing();
    let phi = &state.phi;
    let u = state.gs.u.values();
    let band: Vec<usize> = (0..grid.len()).filter(|&i| phi[i].abs() < 3.0 * h).collect();
    let near = levelset::near_interface(&grid, phi);
    let samples: Vec<Option<([f64; 3], f64)>> = band
        .iter()
        .map(|&i| levelset::normal_slope(&grid, phi, u, i).map(|(f, g)| (f, g * g)))
        .collect();
    let smoothed = smooth_over_feet(&samples, opts.smoothing * h);

    // Mean squared slope over interface cells and a smoothed-delta perimeter.
    let (mut sum, mut count) = (0.0, 0usize);
    let mut perimeter = 0.0;
    let eps = 1.5 * h;
    for (k, &i) in band.iter().enumerate() {
        if near[i] {
            if let Some(g2) = smoothed[k] {
                sum += g2;
                count += 1;
            }
        }
        if phi[i].abs() < eps {
            perimeter += (1.0 + (std::f64::consts::PI * phi[i] / eps).cos()) / (2.0 * eps);
        }
    }
    perimeter *= grid.cell_volume();
    if count == 0 || perimeter <= 0.0 {
        return None;
    }
    let mean = sum / count as f64;
    let spread = band
        .iter()
        .enumerate()
        .filter_map(|(k, _)| smoothed[k].map(|g| (g - mean).abs()))
        .fold(0.0, f64::max)
        .max(1e-3 * mean);
    // Relax the volume error over about five steps of the unconstrained flow.
    let dt0 = cfl * h / spread;
    let kappa = 1.0 / (perimeter * 5.0 * dt0);
    let s = (mean + kappa * (state.volume - UNIT_BALL_VOLUME)).clamp(spec.eta, 1.0 / spec.eta);
    let mut speed = vec![0.0; grid.len()];
    let mut vmax: f64 = 0.0;
    for (k, &i) in band.iter().enumerate() {
        let v = smoothed[k].unwrap_or(mean) - s;
        speed[i] = v;
        vmax = vmax.max(v.abs());
    }
    if !(vmax > 0.0) {
        return None;
    }
    Some((speed, cfl * h / vmax))
}

/// Averages each sample over all samples whose foot points lie within `radius`.
fn smooth_over_feet(samples: &[Option<([f64; 3], f64)>], radius: f64) -> Vec<Option<f64>> {
    use std::collections::HashMap;
    let key = |p: [f64; 3]| p.map(|x| (x / radius).floor() as i64);
    let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (k, s) in samples.iter().enumerate() {
        if let Some((f, _)) = s {
            buckets.entry(key(*f)).or_default().push(k);
        }
    }
    let r2 = radius * radius;
    samples
        .iter()
        .map(|s| {
            let (f, _) = s.as_ref()?;
            let c = key(*f);
            let (mut acc, mut n) = (0.0, 0usize);
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        if let Some(list) = buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            for &j in list {
                                let (fj, gj) = samples[j].expect("bucketed samples exist");
                                let d2 = (fj[0] - f[0]).powi(2)
                                    + (fj[1] - f[1]).powi(2)
                                    + (fj[2] - f[2]).powi(2);
                                if d2 <= r2 {
                                    acc += gj;
                                    n += 1;
                                }
                            }
                        }
                    }
                }
            }
            Some(acc / n as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{preset, Shape};
    use std::f64::consts::PI;

    fn spec() -> PenaltySpec {
        PenaltySpec::new(100.0, 0.5, 0.0, PenaltyMode::Project).unwrap()
    }

    #[test]
    fn f_eta_values_and_slopes() {
        assert_eq!(f_eta(UNIT_BALL_VOLUME, 0.5), 0.0);
        assert!((f_eta(UNIT_BALL_VOLUME + 1.0, 0.5) - 2.0).abs() < 1e-12);
        assert!((f_eta(UNIT_BALL_VOLUME - 1.0, 0.5) + 0.5).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn f_eta_slope_bounds(a in 0.0f64..10.0, b in 0.0f64..10.0, eta in 0.05f64..0.95) {
            let (s1, s2) = if a >= b { (a, b) } else { (b, a) };
            let d = f_eta(s1, eta) - f_eta(s2, eta);
            proptest::prop_assert!(eta * (s1 - s2) <= d + 1e-12);
            proptest::prop_assert!(d <= (s1 - s2) / eta + 1e-12);
        }

        #[test]
        fn mass_q_inverse(m in 0.0f64..10.0) {
            proptest::prop_assert!((q_to_mass(mass_to_q(m)) - m).abs() <= 1e-12 * (1.0 + m));
        }
    }

    #[test]
    fn mass_q_examples() {
        assert!((mass_to_q(UNIT_BALL_VOLUME) - 2.0).abs() < 1e-14);
        assert_eq!(mass_to_q(0.0), 0.0);
        assert!((q_to_mass(mass_to_q(0.37)) - 0.37).abs() < 1e-12);
    }

    #[test]
    fn spec_validation_and_auto_rule() {
        assert!(PenaltySpec::new(0.0, 0.5, 0.0, PenaltyMode::Project).is_err());
        assert!(PenaltySpec::new(1.0, 1.0, 0.0, PenaltyMode::Project).is_err());
        assert!(PenaltySpec::new(1.0, 0.5, -1.0, PenaltyMode::Project).is_err());
        let m = auto_m().unwrap();
        let e1 = ball_ground_state(1.0).unwrap().energy;
        assert!((m - (10.0 * (e1 + UNIT_BALL_VOLUME) + 1.0)).abs() < 1e-12);
        assert!(e1 > PI * PI);
    }

    #[test]
    fn evaluate_examples() {
        let g = Grid::new(48, 1.5).unwrap();
        let k = CoulombKernel::tabulated(g);
        let s = spec();
        let zero = evaluate(&ScalarField::zeros(g), 0.0, &s, &k).unwrap();
        assert!((zero.energy - (s.m - s.eta * UNIT_BALL_VOLUME)).abs() < 1e-12);

        let u = ScalarField::from_fn(g, |p| {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if r < 1.0 {
                (PI * r).sin() / r
            } else {
                0.0
            }
        })
        .normalized()
        .unwrap();
        let e = evaluate(&u, 0.0, &s, &k).unwrap();
        assert!(e.parts.l2penalty < 1e-9);
        assert!((e.support_volume / UNIT_BALL_VOLUME - 1.0).abs() < 0.02);
        assert!((e.energy / (PI * PI) - 1.0).abs() < 0.03, "{}", e.energy);

        let big = u.scaled(1.1);
        let e = evaluate(&big, 0.0, &s, &k).unwrap();
        assert!((e.parts.l2penalty - 0.21 * s.m).abs() < 1e-9 * s.m);
        assert!((e.energy - e.parts.total(0.0)).abs() < 1e-12);
    }

    #[test]
    fn truncation_shrinks_values() {
        let g = Grid::new(8, 1.0).unwrap();
        let u = ScalarField::from_fn(g, |p| p[0]);
        let t = truncate(&u, 0.3);
        for (a, b) in u.values().iter().zip(t.values()) {
            assert!(b.abs() <= a.abs());
            assert!((a.abs() <= 0.3) == (*b == 0.0));
        }
    }

    #[test]
    fn flow_rounds_an_ellipsoid_on_a_coarse_grid() {
        let g = Grid::new(40, 2.0).unwrap();
        let k = CoulombKernel::tabulated(g);
        let shape = preset("ellipsoid").unwrap();
        let mask = shape.normalized_to(g, UNIT_BALL_VOLUME).unwrap().mask(g);
        let opts = MinimizeOptions {
            max_iters: 60,
            ..Default::default()
        };
        let r = minimize_from_mask(&mask, 0.0, &spec(), &opts, &k).unwrap();
        let first = r.history.first().unwrap().energy;
        let last = r.history.last().unwrap().energy;
        assert!(last < first);
        for w in r.history.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-9 * w[0].energy);
        }
        assert!((r.volume / UNIT_BALL_VOLUME - 1.0).abs() < 0.03, "{}", r.volume);
        assert!((r.energy - r.parts.total(0.0)).abs() < 1e-8 * r.energy);
        let _ = Shape::unit_ball();
    }
}
