//! Concentrating and sign-alternating bump sequences along which `D(u,u) → 0`
//! at fixed `L²` norm, so the Coulomb term alone has no minimizer.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::coulomb::{coulomb_energy, CoulombKernel};
use crate::error::{Error, Result};
use crate::field::{Grid, ScalarField};
use crate::quadrature;

/// Smallest bump radius, in cells, accepted by the constructions.
pub const MIN_CELLS_PER_RADIUS: f64 = 4.0;

/// `∫_{B₁} (1 − |x|⁶)⁶ dx`.
fn raw_norm_sq() -> f64 {
    static V: OnceLock<f64> = OnceLock::new();
    *V.get_or_init(|| 4.0 * PI * quadrature::integrate(|r| (1.0 - r.powi(6)).powi(6) * r * r, 0.0, 1.0, 8, 16))
}

/// Base profile `c (1 − |x|⁶)³` on `B₁`, normalized in `L²(ℝ³)`.
pub fn base_bump(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        (1.0 - r.powi(6)).powi(3) / raw_norm_sq().sqrt()
    }
}

/// `sup φ = φ(0)`.
pub fn base_bump_sup() -> f64 {
    base_bump(0.0)
}

/// `∫ φ dx`.
pub fn base_bump_mass() -> f64 {
    4.0 * PI * quadrature::integrate(|r| base_bump(r) * r * r, 0.0, 1.0, 8, 16)
}

/// Signed copies `Σ s_i ε^{-3/2} φ((x − x_i)/ε)`, times `amplitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpSpec {
    pub centers: Vec<[f64; 3]>,
    pub scale: f64,
    pub signs: Vec<f64>,
    pub amplitude: f64,
}

impl BumpSpec {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let eps = self.scale;
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::arg("eps", format!("{eps} must lie in (0, 1]")));
        }
        if self.centers.len() != self.signs.len() || self.centers.is_empty() {
            return Err(Error::arg("signs", "one sign per center"));
        }
        let h = grid.spacing();
        if eps / h < MIN_CELLS_PER_RADIUS {
            return Err(Error::Resolution(format!(
                "bump radius {eps} spans {:.2} cells, need {MIN_CELLS_PER_RADIUS}",
                eps / h
            )));
        }
        let limit = grid.half_width() - h;
        for (i, c) in self.centers.iter().enumerate() {
            if c.iter().any(|x| x.abs() + eps > limit) {
                return Err(Error::Placement(format!("bump {i} at {c:?} leaves the box")));
            }
            for (j, d) in self.centers.iter().enumerate().skip(i + 1) {
                let dist = ((c[0] - d[0]).powi(2) + (c[1] - d[1]).powi(2) + (c[2] - d[2]).powi(2)).sqrt();
                if dist <= 2.0 * eps {
                    return Err(Error::Placement(format!("bumps {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }

    /// Samples the bumps on `grid` and rescales to unit discrete `L²` norm.
    pub fn assemble(&self, grid: Grid) -> Result<ScalarField> {
        self.validate(&grid)?;
        let eps = self.scale;
        let amp = self.amplitude * eps.powf(-1.5);
        let f = ScalarField::from_fn(grid, |p| {
            let mut v = 0.0;
            for (c, s) in self.centers.iter().zip(&self.signs) {
                let r = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt() / eps;
                if r < 1.0 {
                    v += s * amp * base_bump(r);
                }
            }
            v
        });
        f.normalized()
            .ok_or_else(|| Error::EmptyDomain("bumps fall between grid points".into()))
    }
}

/// `φ_ε(x) = ε^{-3/2} φ((x − x₀)/ε)`.
pub fn scaling_sequence(grid: Grid, eps: f64, center: [f64; 3]) -> Result<ScalarField> {
    BumpSpec {
        centers: vec![center],
        scale: eps,
        signs: vec![1.0],
        amplitude: 1.0,
    }
    .assemble(grid)
}

/// Layout of `2n` bumps with `ε = (2n)^{-1/3}` on a cubic lattice of spacing
/// `separation · ε`, centred at the origin, signs alternating in a checkerboard.
pub fn multibump_spec(n: usize, separation: f64) -> Result<BumpSpec> {
    if n == 0 {
        return Err(Error::arg("n", "must be positive"));
    }
    let count = 2 * n;
    let eps = (count as f64).powf(-1.0 / 3.0);
    let k = (1..).find(|k| k * k * k >= count).expect("some k");
    let spacing = separation * eps;
    let mut pts: Vec<([usize; 3], [f64; 3])> = (0..count)
        .map(|i| {
            let c = [i % k, (i / k) % k, i / (k * k)];
            (c, c.map(|x| x as f64 * spacing))
        })
        .collect();
    let mut mean = [0.0; 3];
    for (_, p) in &pts {
        (0..3).for_each(|a| mean[a] += p[a] / count as f64);
    }
    for (_, p) in pts.iter_mut() {
        (0..3).for_each(|a| p[a] -= mean[a]);
    }
    let mut signs: Vec<f64> = pts
        .iter()
        .map(|(c, _)| if (c[0] + c[1] + c[2]) % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    // Balance the signs if the partial lattice is not.
    let mut excess = signs.iter().sum::<f64>();
    for s in signs.iter_mut().rev() {
        if excess == 0.0 {
            break;
        }
        if *s == excess.signum() {
            *s = -*s;
            excess -= 2.0 * excess.signum();
        }
    }
    Ok(BumpSpec {
        centers: pts.into_iter().map(|(_, p)| p).collect(),
        scale: eps,
        signs,
        amplitude: (count as f64).powf(-0.5),
    })
}

/// `φ_{ε,n}`: `n` positive and `n` negative bumps of scale `(2n)^{-1/3}`.
pub fn multibump_sequence(grid: Grid, n: usize, separation: f64) -> Result<ScalarField> {
    multibump_spec(n, separation)?.assemble(grid)
}

/// Continuum value of `D(φ_{ε,n}, φ_{ε,n})` from Newton's theorem: disjoint
/// radial bumps interact exactly as point charges of their masses.
pub fn newton_prediction(spec: &BumpSpec, d_base: f64) -> f64 {
    let eps = spec.scale;
    let a2 = spec.amplitude * spec.amplitude;
    let q = eps.powf(1.5) * base_bump_mass();
    let mut cross = 0.0;
    for (i, c) in spec.centers.iter().enumerate() {
        for (j, d) in spec.centers.iter().enumerate() {
            if i != j {
                let dist = ((c[0] - d[0]).powi(2) + (c[1] - d[1]).powi(2) + (c[2] - d[2]).powi(2)).sqrt();
                cross += spec.signs[i] * spec.signs[j] * q * q / dist;
            }
        }
    }
    a2 * (spec.centers.len() as f64 * eps * eps * d_base + cross)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub n: usize,
    /// Centre spacing in units of `ε`.
    pub separation: f64,
    pub d: f64,
    /// Disjoint self-terms alone, `(2n)^{-2/3} D(φ,φ)`.
    pub self_term: f64,
    /// `n^{1/2} (2n)^{-2/3} D(φ,φ)`.
    pub bound: f64,
    pub newton: f64,
    /// `(D − self_term) / D`.
    pub cross_share: f64,
}

/// `D(φ,φ)` of the base bump on `grid`.
pub fn base_energy(kernel: &CoulombKernel) -> Result<f64> {
    coulomb_energy(&scaling_sequence(*kernel.grid(), 1.0, [0.0; 3])?, kernel)
}

/// Measured `D(φ_{ε,n})` against the self-term and the stated bound for every
/// `(n, separation)` pair.
pub fn decay_report(kernel: &CoulombKernel, n_list: &[usize], separations: &[f64]) -> Result<Vec<DecayRow>> {
    if n_list.is_empty() || separations.is_empty() {
        return Err(Error::arg("n_list", "empty list"));
    }
    let grid = *kernel.grid();
    let d_base = base_energy(kernel)?;
    let mut rows = Vec::new();
    for &n in n_list {
        for &sep in separations {
            let spec = multibump_spec(n, sep)?;
            let f = spec.assemble(grid)?;
            let d = coulomb_energy(&f, kernel)?;
            let self_term = (2.0 * n as f64).powf(-2.0 / 3.0) * d_base;
            rows.push(DecayRow {
                n,
                separation: sep,
                d,
                self_term,
                bound: (n as f64).sqrt() * self_term,
                newton: newton_prediction(&spec, d_base),
                cross_share: (d - self_term) / d,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_bump_is_normalized_and_bounded() {
        let n2 = 4.0 * PI * quadrature::integrate(|r| base_bump(r).powi(2) * r * r, 0.0, 1.0, 8, 16);
        assert!((n2 - 1.0).abs() < 1e-12);
        assert!(base_bump_sup() <= 1.0);
        assert_eq!(base_bump(1.0), 0.0);
    }

    #[test]
    fn scaling_sequence_unit_norm_and_identity() {
        let g = Grid::new(48, 1.5).unwrap();
        let f = scaling_sequence(g, 1.0, [0.0; 3]).unwrap();
        assert!((f.l2_norm() - 1.0).abs() < 1e-10);
        // At ε = 1 the field is φ itself up to grid normalization.
        let idx = g.index(30, 20, 26);
        let c = g.center(idx);
        let rc = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        assert!((f.values()[idx] / base_bump(rc) - 1.0).abs() < 1e-3);
        for eps in [0.5, 0.25] {
            let f = scaling_sequence(g, eps, [0.1, 0.0, 0.0]).unwrap();
            assert!((f.l2_norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn resolution_and_placement_errors() {
        let g = Grid::new(32, 1.5).unwrap();
        assert!(matches!(scaling_sequence(g, 0.2, [0.0; 3]), Err(Error::Resolution(_))));
        assert!(matches!(scaling_sequence(g, 0.5, [1.2, 0.0, 0.0]), Err(Error::Placement(_))));
        assert!(scaling_sequence(g, 0.0, [0.0; 3]).is_err());
        assert!(multibump_spec(0, 4.0).is_err());
        let s = multibump_spec(2, 1.5).unwrap();
        assert!(matches!(s.validate(&Grid::new(64, 3.0).unwrap()), Err(Error::Placement(_))));
    }

    #[test]
    fn multibump_layout() {
        for n in [1, 2, 3, 4] {
            let s = multibump_spec(n, 8.0).unwrap();
            assert_eq!(s.centers.len(), 2 * n);
            assert_eq!(s.signs.iter().sum::<f64>(), 0.0);
            assert!((s.scale - (2.0 * n as f64).powf(-1.0 / 3.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn multibump_norms_and_support() {
        let g = Grid::new(64, 3.0).unwrap();
        for n in [1, 2, 4] {
            let f = multibump_sequence(g, n, 3.0).unwrap();
            assert!((f.l2_norm() - 1.0).abs() < 1e-10);
            assert!(f.max_abs() <= base_bump_sup() * (1.0 + 1e-2));
            let supp = f.values().iter().filter(|v| **v != 0.0).count() as f64 * g.cell_volume();
            assert!((supp / crate::UNIT_BALL_VOLUME - 1.0).abs() < 0.05, "{n} {supp}");
        }
    }

    #[test]
    fn newton_prediction_matches_fft() {
        let g = Grid::new(48, 3.0).unwrap();
        let k = CoulombKernel::tabulated(g);
        let d_base = base_energy(&k).unwrap();
        let s = multibump_spec(1, 3.0).unwrap();
        let d = coulomb_energy(&s.assemble(g).unwrap(), &k).unwrap();
        let pred = newton_prediction(&s, d_base);
        assert!((d / pred - 1.0).abs() < 0.02, "{d} {pred}");
    }
}
