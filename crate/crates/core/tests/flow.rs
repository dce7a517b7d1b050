//! End-to-end runs of the shape flow on coarse grids.

use std::f64::consts::PI;

use coulomb_lab::coulomb::CoulombKernel;
use coulomb_lab::diagnostics::{fraenkel_asymmetry, sign_stats};
use coulomb_lab::penalized::{minimize, minimize_from_mask, MinimizeOptions, PenaltyMode, PenaltySpec, DEFAULT_ETA};
use coulomb_lab::shapes::{preset, two_balls, Shape};
use coulomb_lab::{Grid, UNIT_BALL_VOLUME};

fn spec(mode: PenaltyMode) -> PenaltySpec {
    PenaltySpec::auto(DEFAULT_ETA, 0.0, mode).unwrap()
}

#[test]
fn ball_bump_at_zero_coupling_stays_optimal() {
    let g = Grid::new(48, 2.0).unwrap();
    let k = CoulombKernel::tabulated(g);
    let u0 = Shape::unit_ball().bump(g);
    let r = minimize(&u0, 0.0, &spec(PenaltyMode::Project), &MinimizeOptions::default(), &k).unwrap();
    let lam = PI * PI;
    assert!((r.energy - lam).abs() / lam < 0.03, "energy {}", r.energy);
    assert!((r.support_volume - UNIT_BALL_VOLUME).abs() / UNIT_BALL_VOLUME < 0.02, "support {}", r.support_volume);
    assert!(r.history.windows(2).all(|w| w[1].energy <= w[0].energy));
}

#[test]
fn ellipsoid_becomes_rounder() {
    let g = Grid::new(48, 2.0).unwrap();
    let k = CoulombKernel::tabulated(g);
    let mask = preset("ellipsoid").unwrap().normalized_to(g, UNIT_BALL_VOLUME).unwrap().mask(g);
    let (a0, _) = fraenkel_asymmetry(&mask).unwrap();
    let r = minimize_from_mask(&mask, 0.02, &spec(PenaltyMode::Project), &MinimizeOptions::default(), &k).unwrap();
    let (a1, _) = fraenkel_asymmetry(&r.mask).unwrap();
    assert!(a1 < a0, "{a1} vs {a0}");
    assert!(r.u.min() >= -1e-3 * r.u.max_abs());
    let (_, neg) = sign_stats(&r.u);
    assert!(neg <= 1e-4);
}

#[test]
fn two_bumps_end_connected() {
    let g = Grid::new(48, 2.0).unwrap();
    let k = CoulombKernel::tabulated(g);
    let u0 = two_balls(0.5, 0.55).normalized_to(g, UNIT_BALL_VOLUME).unwrap().bump(g);
    assert_eq!(coulomb_lab::DomainMask::from_support(&u0, 0.0).components().len(), 2);
    let r = minimize(&u0, 0.02, &spec(PenaltyMode::Project), &MinimizeOptions::default(), &k).unwrap();
    assert_eq!(r.mask.components().len(), 1);
}

#[test]
fn penalize_mode_keeps_unit_mass() {
    let g = Grid::new(40, 2.0).unwrap();
    let k = CoulombKernel::tabulated(g);
    let u0 = Shape::unit_ball().bump(g);
    let r = minimize(&u0, 0.05, &spec(PenaltyMode::Penalize), &MinimizeOptions::default(), &k).unwrap();
    let mass = r.u.dot(&r.u).unwrap();
    assert!((mass - 1.0).abs() < 0.01, "mass {mass}");
}
