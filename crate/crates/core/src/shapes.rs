//! Analytic test domains as level-set functions (negative inside).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DomainMask, Grid, ScalarField};

/// Shape family used for initial domains and synthetic test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Ball {
        radius: f64,
        center: [f64; 3],
    },
    /// Semi-axes along x, y, z, centred at the origin.
    Ellipsoid { axes: [f64; 3] },
    /// Two bulbs on the x axis joined by a cylindrical neck; `length` is the
    /// gap between the bulb surfaces.
    Dumbbell {
        bulbs: [f64; 2],
        neck: f64,
        length: f64,
    },
    /// Two disjoint balls on the x axis with gap `sep` between them.
    TwoBalls { radii: [f64; 2], sep: f64 },
    /// Axis-aligned cube of the given side, centred at the origin.
    Cube { side: f64 },
}

impl Shape {
    pub fn unit_ball() -> Self {
        Shape::Ball {
            radius: 1.0,
            center: [0.0; 3],
        }
    }

    /// Level-set value at `p`, negative inside; distance-like near the boundary.
    pub fn level_set(&self, p: [f64; 3]) -> f64 {
        match self {
            Shape::Ball { radius, center } => norm(sub(p, *center)) - radius,
            Shape::Ellipsoid { axes } => {
                let s = (0..3).map(|a| (p[a] / axes[a]).powi(2)).sum::<f64>().sqrt();
                let amin = axes.iter().cloned().fold(f64::INFINITY, f64::min);
                (s - 1.0) * amin
            }
            Shape::Dumbbell {
                bulbs,
                neck,
                length,
            } => {
                let (c1, c2) = self.dumbbell_centers(*bulbs, *length);
                let d1 = norm(sub(p, [c1, 0.0, 0.0])) - bulbs[0];
                let d2 = norm(sub(p, [c2, 0.0, 0.0])) - bulbs[1];
                let x = p[0].clamp(c1, c2);
                let dn = norm(sub(p, [x, 0.0, 0.0])) - neck;
                d1.min(d2).min(dn)
            }
            Shape::TwoBalls { radii, sep } => {
                let (c1, c2) = self.dumbbell_centers(*radii, *sep);
                let d1 = norm(sub(p, [c1, 0.0, 0.0])) - radii[0];
                let d2 = norm(sub(p, [c2, 0.0, 0.0])) - radii[1];
                d1.min(d2)
            }
            Shape::Cube { side } => {
                let q = p.map(|x| x.abs() - side / 2.0);
                let outside = norm(q.map(|x| x.max(0.0)));
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
        }
    }

    fn dumbbell_centers(&self, bulbs: [f64; 2], length: f64) -> (f64, f64) {
        let total = 2.0 * bulbs[0] + length + 2.0 * bulbs[1];
        (-total / 2.0 + bulbs[0], total / 2.0 - bulbs[1])
    }

    /// Uniform dilation about the origin (the ball also moves its centre).
    pub fn scaled(&self, s: f64) -> Shape {
        match self {
            Shape::Ball { radius, center } => Shape::Ball {
                radius: radius * s,
                center: center.map(|c| c * s),
            },
            Shape::Ellipsoid { axes } => Shape::Ellipsoid {
                axes: axes.map(|a| a * s),
            },
            Shape::Dumbbell {
                bulbs,
                neck,
                length,
            } => Shape::Dumbbell {
                bulbs: bulbs.map(|b| b * s),
                neck: neck * s,
                length: length * s,
            },
            Shape::TwoBalls { radii, sep } => Shape::TwoBalls {
                radii: radii.map(|r| r * s),
                sep: sep * s,
            },
            Shape::Cube { side } => Shape::Cube { side: side * s },
        }
    }

    /// Boundary-fitted mask of the shape.
    pub fn mask(&self, grid: Grid) -> DomainMask {
        DomainMask::from_level_set(grid, |p| self.level_set(p))
    }

    /// Same shape dilated so that its fitted volume on `grid` equals `volume`.
    pub fn normalized_to(&self, grid: Grid, volume: f64) -> Result<Shape> {
        let mut shape = self.clone();
        for _ in 0..4 {
            let v = shape.mask(grid).fitted_volume();
            if v <= 0.0 {
                return Err(Error::EmptyDomain(format!("{self:?} on {grid:?}")));
            }
            let s = (volume / v).cbrt();
            if (s - 1.0).abs() < 1e-6 {
                break;
            }
            shape = shape.scaled(s);
        }
        Ok(shape)
    }

    /// Positive bump `(−φ)₊` over the shape, normalized in L².
    pub fn bump(&self, grid: Grid) -> ScalarField {
        let mask = self.mask(grid);
        let f = ScalarField::from_fn(grid, |p| (-self.level_set(p)).max(0.0));
        f.restricted(&mask)
            .expect("same grid")
            .normalized()
            .unwrap_or_else(|| ScalarField::zeros(grid))
    }
}

/// Two balls of total volume `|B₁|`, the first holding `split` of it, with gap `sep`.
pub fn two_balls(sep: f64, split: f64) -> Shape {
    Shape::TwoBalls {
        radii: [split.cbrt(), (1.0 - split).cbrt()],
        sep,
    }
}

/// Default initial shapes for the optimizer, all with volume `|B₁|` in the continuum.
pub fn preset(name: &str) -> Option<Shape> {
    Some(match name {
        "ball" => Shape::unit_ball(),
        "ellipsoid" => Shape::Ellipsoid {
            axes: [1.2, 1.0, 1.0 / 1.2],
        },
        "dumbbell" => Shape::Dumbbell {
            bulbs: [0.7, 0.6],
            neck: 0.25,
            length: 0.8,
        },
        // Unequal volumes, so the optimizer is not started at a symmetric saddle.
        "two_balls" => two_balls(0.5, 0.55),
        "cube" => Shape::Cube { side: 1.0 },
        _ => return None,
    })
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::UNIT_BALL_VOLUME;

    #[test]
    fn level_sets_have_expected_signs() {
        let ball = Shape::unit_ball();
        assert!(ball.level_set([0.0; 3]) < 0.0);
        assert!((ball.level_set([2.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
        let cube = Shape::Cube { side: 1.0 };
        assert!((cube.level_set([0.0; 3]) + 0.5).abs() < 1e-15);
        assert!((cube.level_set([1.0, 0.0, 0.0]) - 0.5).abs() < 1e-15);
        let db = preset("dumbbell").unwrap();
        assert!(db.level_set([0.0; 3]) < 0.0);
        assert!(db.level_set([0.0, 0.3, 0.0]) > 0.0);
        let tb = preset("two_balls").unwrap();
        assert!(tb.level_set([0.0; 3]) > 0.0);
    }

    #[test]
    fn normalization_hits_volume() {
        let g = Grid::new(48, 2.5).unwrap();
        for name in ["ellipsoid", "dumbbell", "two_balls"] {
            let s = preset(name).unwrap().normalized_to(g, UNIT_BALL_VOLUME).unwrap();
            let v = s.mask(g).fitted_volume();
            assert!((v / UNIT_BALL_VOLUME - 1.0).abs() < 1e-3, "{name} {v}");
        }
    }

    #[test]
    fn scaling_scales_level_sets() {
        for name in ["ellipsoid", "dumbbell", "two_balls", "cube", "ball"] {
            let sh = preset(name).unwrap();
            let sc = sh.scaled(2.0);
            for p in [[0.3, 0.1, 0.0], [-1.0, 0.2, 0.1], [1.2, 0.0, 0.3]] {
                let a = sh.level_set(p);
                let b = sc.level_set(p.map(|x| 2.0 * x));
                assert_eq!(a < 0.0, b < 0.0, "{name}");
            }
        }
    }
}
