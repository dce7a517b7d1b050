//! Run configuration: a line-based `section.key = value` file plus overrides.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use coulomb_lab::coulomb::KernelMode;
use coulomb_lab::field::Grid;
use coulomb_lab::ground_state::{SolverOptions, Start};
use coulomb_lab::penalized::{auto_m, mass_to_q, MinimizeOptions, PenaltyMode, PenaltySpec, DEFAULT_ETA};
use coulomb_lab::shapes::{self, Shape};
use serde::Serialize;

/// A configuration problem, tied to the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

impl std::error::Error for ConfigError {}

/// Penalty weight: a number or the automatic rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    Auto,
    Value(f64),
}

/// Initial domain. Named presets carry volume `|B₁|`; explicit shapes are used as given.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitShape {
    Ball,
    Ellipsoid { axes: [f64; 3] },
    Dumbbell { bulb: f64, neck: f64, len: f64 },
    TwoBalls { sep: f64 },
    Preset { name: String },
}

/// Volume share of the first ball in `two_balls(sep)`.
pub const TWO_BALLS_SPLIT: f64 = 0.55;

impl InitShape {
    pub fn shape(&self) -> Shape {
        match self {
            InitShape::Ball => Shape::unit_ball(),
            InitShape::Ellipsoid { axes } => Shape::Ellipsoid { axes: *axes },
            InitShape::Dumbbell { bulb, neck, len } => Shape::Dumbbell {
                bulbs: [*bulb, *bulb],
                neck: *neck,
                length: *len,
            },
            InitShape::TwoBalls { sep } => shapes::two_balls(*sep, TWO_BALLS_SPLIT),
            InitShape::Preset { name } => shapes::preset(name).expect("validated preset"),
        }
    }
}

impl fmt::Display for InitShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitShape::Ball => write!(f, "ball"),
            InitShape::Ellipsoid { axes } => write!(f, "ellipsoid({},{},{})", axes[0], axes[1], axes[2]),
            InitShape::Dumbbell { bulb, neck, len } => write!(f, "dumbbell({bulb},{neck},{len})"),
            InitShape::TwoBalls { sep } => write!(f, "two_balls({sep})"),
            InitShape::Preset { name } => write!(f, "{name}"),
        }
    }
}

impl FromStr for InitShape {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let bad = |why: &str| ConfigError::new("init.shape", format!("`{s}`: {why}"));
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) => {
                let inner = s[open + 1..].strip_suffix(')').ok_or_else(|| bad("missing `)`"))?;
                let vals = inner
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| bad("arguments must be numbers"))?;
                if vals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(bad("arguments must be positive"));
                }
                (s[..open].trim(), Some(vals))
            }
            None => (s, None),
        };
        let arity = |k: usize, v: &Vec<f64>| {
            if v.len() == k {
                Ok(())
            } else {
                Err(bad(&format!("expected {k} arguments")))
            }
        };
        match (name, args) {
            ("ball", None) => Ok(InitShape::Ball),
            ("ellipsoid", Some(v)) => {
                arity(3, &v)?;
                Ok(InitShape::Ellipsoid { axes: [v[0], v[1], v[2]] })
            }
            ("dumbbell", Some(v)) => {
                arity(3, &v)?;
                Ok(InitShape::Dumbbell {
                    bulb: v[0],
                    neck: v[1],
                    len: v[2],
                })
            }
            ("two_balls", Some(v)) => {
                arity(1, &v)?;
                Ok(InitShape::TwoBalls { sep: v[0] })
            }
            (name, None) if shapes::preset(name).is_some() => Ok(InitShape::Preset { name: name.to_string() }),
            _ => Err(bad("unknown shape")),
        }
    }
}

/// Every setting a run can take. Field names follow the `section.key` spelling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub grid_n: usize,
    pub grid_r: f64,
    pub q: Option<f64>,
    pub mass: Option<f64>,
    pub penalty_m: Weight,
    pub eta: f64,
    pub tau_supp: f64,
    /// Eigensolver tolerance (relative residual).
    pub tol: f64,
    /// Outer tolerance of the shape flow.
    pub flow_tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Random initial vector for the eigensolver instead of the bump.
    pub random_start: bool,
    pub mode: PenaltyMode,
    pub kernel: KernelMode,
    pub shape: InitShape,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid_n: 96,
            grid_r: 2.5,
            q: None,
            mass: None,
            penalty_m: Weight::Auto,
            eta: DEFAULT_ETA,
            tau_supp: 0.0,
            tol: 1e-6,
            flow_tol: 1e-6,
            max_iters: 400,
            seed: 0,
            random_start: false,
            mode: PenaltyMode::Project,
            kernel: KernelMode::Tabulated,
            shape: InitShape::Preset {
                name: "ellipsoid".into(),
            },
            out_dir: PathBuf::from("out"),
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError::new(key, format!("cannot parse `{value}`")))
}

fn finite(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = num(key, value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::new(key, "must be finite"))
    }
}

impl RunConfig {
    /// Sets one key. Later settings win.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "grid.n" => self.grid_n = num(key, value)?,
            "grid.R" => self.grid_r = finite(key, value)?,
            "coupling.q" => {
                self.q = Some(finite(key, value)?);
                self.mass = None;
            }
            "coupling.mass" => {
                self.mass = Some(finite(key, value)?);
                self.q = None;
            }
            "penalty.M" => {
                self.penalty_m = if value == "auto" {
                    Weight::Auto
                } else {
                    Weight::Value(finite(key, value)?)
                }
            }
            "penalty.eta" => self.eta = finite(key, value)?,
            "penalty.tau_supp" => self.tau_supp = finite(key, value)?,
            "solver.tol" => self.tol = finite(key, value)?,
            "solver.flow_tol" => self.flow_tol = finite(key, value)?,
            "solver.max_iters" => self.max_iters = num(key, value)?,
            "solver.seed" => self.seed = num(key, value)?,
            "solver.start" => {
                self.random_start = match value {
                    "bump" => false,
                    "random" => true,
                    _ => return Err(ConfigError::new(key, "expected `bump` or `random`")),
                }
            }
            "solver.mode" => {
                self.mode = match value {
                    "project" => PenaltyMode::Project,
                    "penalize" => PenaltyMode::Penalize,
                    _ => return Err(ConfigError::new(key, "expected `project` or `penalize`")),
                }
            }
            "solver.kernel" => {
                self.kernel = match value {
                    "tabulated" => KernelMode::Tabulated,
                    "spectral" => KernelMode::Spectral,
                    _ => return Err(ConfigError::new(key, "expected `tabulated` or `spectral`")),
                }
            }
            "init.shape" => self.shape = value.parse()?,
            "output.dir" => {
                if value.is_empty() {
                    return Err(ConfigError::new(key, "empty path"));
                }
                self.out_dir = PathBuf::from(value)
            }
            _ => return Err(ConfigError::new(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies `section.key = value` lines. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        // Both coupling keys in one file are an error, not an override.
        let mut coupling: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(format!("line {}", lineno + 1), "expected `section.key = value`"))?;
            let key = key.trim();
            if key == "coupling.q" || key == "coupling.mass" {
                if let Some(prev) = &coupling {
                    if prev != key {
                        return Err(ConfigError::new("coupling", "give exactly one of q or mass"));
                    }
                }
                coupling = Some(key.to_string());
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Writes the config back in file form; parsing it gives the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        line("grid.n", self.grid_n.to_string());
        line("grid.R", self.grid_r.to_string());
        if let Some(q) = self.q {
            line("coupling.q", q.to_string());
        }
        if let Some(m) = self.mass {
            line("coupling.mass", m.to_string());
        }
        line(
            "penalty.M",
            match self.penalty_m {
                Weight::Auto => "auto".into(),
                Weight::Value(m) => m.to_string(),
            },
        );
        line("penalty.eta", self.eta.to_string());
        line("penalty.tau_supp", self.tau_supp.to_string());
        line("solver.tol", self.tol.to_string());
        line("solver.flow_tol", self.flow_tol.to_string());
        line("solver.max_iters", self.max_iters.to_string());
        line("solver.seed", self.seed.to_string());
        line("solver.start", if self.random_start { "random" } else { "bump" }.into());
        line(
            "solver.mode",
            match self.mode {
                PenaltyMode::Project => "project",
                PenaltyMode::Penalize => "penalize",
            }
            .into(),
        );
        line(
            "solver.kernel",
            match self.kernel {
                KernelMode::Tabulated => "tabulated",
                KernelMode::Spectral => "spectral",
            }
            .into(),
        );
        line("init.shape", self.shape.to_string());
        line("output.dir", self.out_dir.display().to_string());
        s
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        Grid::new(self.grid_n, self.grid_r).map_err(|e| ConfigError::new("grid", e.to_string()))
    }

    /// The coupling, from `q` or converted from `mass`.
    pub fn coupling(&self) -> Result<f64, ConfigError> {
        let q = match (self.q, self.mass) {
            (Some(q), None) => q,
            (None, Some(m)) => {
                if m < 0.0 {
                    return Err(ConfigError::new("coupling.mass", "must be nonnegative"));
                }
                mass_to_q(m)
            }
            (None, None) => return Err(ConfigError::new("coupling", "missing: give q or mass")),
            (Some(_), Some(_)) => return Err(ConfigError::new("coupling", "give exactly one of q or mass")),
        };
        if q < 0.0 {
            return Err(ConfigError::new("coupling.q", "must be nonnegative"));
        }
        Ok(q)
    }

    pub fn solver_options(&self) -> Result<SolverOptions, ConfigError> {
        if !(self.tol > 0.0) {
            return Err(ConfigError::new("solver.tol", "must be positive"));
        }
        Ok(SolverOptions {
            tol_rel: self.tol,
            start: if self.random_start {
                Start::Random { seed: self.seed }
            } else {
                Start::Bump
            },
            ..SolverOptions::default()
        })
    }

    pub fn minimize_options(&self) -> Result<MinimizeOptions, ConfigError> {
        if !(self.flow_tol > 0.0) {
            return Err(ConfigError::new("solver.flow_tol", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(ConfigError::new("solver.max_iters", "must be positive"));
        }
        Ok(MinimizeOptions {
            max_iters: self.max_iters,
            tol: self.flow_tol,
            solver: self.solver_options()?,
            ..MinimizeOptions::default()
        })
    }

    /// Penalty parameters with `M` resolved.
    pub fn penalty(&self) -> Result<PenaltySpec, ConfigError> {
        let m = match self.penalty_m {
            Weight::Auto => auto_m().map_err(|e| ConfigError::new("penalty.M", e.to_string()))?,
            Weight::Value(m) => m,
        };
        PenaltySpec::new(m, self.eta, self.tau_supp, self.mode).map_err(|e| ConfigError::new("penalty", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_with_comments() {
        let c = RunConfig::parse(
            "# run\n grid.n = 48\ngrid.R=2.0\ncoupling.q = 0.05 # small\ninit.shape = ellipsoid(1.2, 1, 0.8)\n",
        )
        .unwrap();
        assert_eq!(c.grid_n, 48);
        assert_eq!(c.grid_r, 2.0);
        assert_eq!(c.coupling().unwrap(), 0.05);
        assert_eq!(c.shape, InitShape::Ellipsoid { axes: [1.2, 1.0, 0.8] });
    }

    #[test]
    fn coupling_needs_exactly_one() {
        let c = RunConfig::default();
        assert_eq!(c.coupling().unwrap_err().field, "coupling");
        let e = RunConfig::parse("coupling.q = 0.1\ncoupling.mass = 1\n").unwrap_err();
        assert_eq!(e.field, "coupling");
    }

    #[test]
    fn mass_converts_to_q() {
        let c = RunConfig::parse("coupling.mass = 4.1887902047863905").unwrap();
        assert!((c.coupling().unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bad_values_name_their_key() {
        assert_eq!(RunConfig::parse("grid.n = many").unwrap_err().field, "grid.n");
        assert_eq!(RunConfig::parse("grid.x = 1").unwrap_err().field, "grid.x");
        assert_eq!(RunConfig::parse("init.shape = torus").unwrap_err().field, "init.shape");
        assert_eq!(RunConfig::parse("init.shape = dumbbell(1,2)").unwrap_err().field, "init.shape");
        assert_eq!(RunConfig::parse("solver.mode = fast").unwrap_err().field, "solver.mode");
        assert!(RunConfig::parse("grid.n 4").unwrap_err().field.starts_with("line"));
        assert_eq!(RunConfig::default().penalty_m, Weight::Auto);
    }

    #[test]
    fn text_round_trips() {
        let mut c = RunConfig::default();
        c.set("coupling.mass", "0.3").unwrap();
        c.set("init.shape", "two_balls(0.4)").unwrap();
        c.set("penalty.M", "120.5").unwrap();
        c.set("solver.start", "random").unwrap();
        c.set("solver.seed", "7").unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn shapes_parse() {
        assert_eq!("ball".parse::<InitShape>().unwrap(), InitShape::Ball);
        assert_eq!(
            "dumbbell(0.6,0.2,0.8)".parse::<InitShape>().unwrap(),
            InitShape::Dumbbell {
                bulb: 0.6,
                neck: 0.2,
                len: 0.8
            }
        );
        assert_eq!("two_balls(0.5)".parse::<InitShape>().unwrap(), InitShape::TwoBalls { sep: 0.5 });
        assert!(matches!("dumbbell".parse::<InitShape>().unwrap(), InitShape::Preset { .. }));
        assert!("ellipsoid(1,-1,1)".parse::<InitShape>().is_err());
    }
}
