//! Bookkeeping for the acceptance run: one pass/fail line per criterion.

use std::time::Instant;

/// Outcome of one criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "{} {} ({:.1}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            self.detail
        )
    }
}

/// Comma-separated name fragments; when set, only matching criteria run.
pub const ONLY_ENV: &str = "ACCEPTANCE_ONLY";

/// Collects criteria in order and prints each line as soon as it is known.
#[derive(Debug, Default)]
pub struct Checklist {
    outcomes: Vec<Outcome>,
    only: Option<Vec<String>>,
}

impl Checklist {
    pub fn new() -> Self {
        Checklist {
            outcomes: Vec::new(),
            only: std::env::var(ONLY_ENV)
                .ok()
                .map(|v| v.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()),
        }
    }

    fn selected(&self, name: &str) -> bool {
        self.only.as_ref().is_none_or(|f| f.iter().any(|t| name.contains(t.as_str())))
    }

    /// Runs `f`, which returns `(passed, detail)`; a panic or error counts as a failure.
    pub fn check(&mut self, name: &str, f: impl FnOnce() -> Result<(bool, String), String>) {
        if !self.selected(name) {
            println!("SKIP {name}");
            return;
        }
        let t = Instant::now();
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f));
        let (passed, detail) = match r {
            Ok(Ok(pd)) => pd,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".into()),
        };
        let o = Outcome {
            name: name.into(),
            passed,
            detail,
            seconds: t.elapsed().as_secs_f64(),
        };
        println!("{}", o.line());
        self.outcomes.push(o);
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.passed).count()
    }
}

/// Least-squares slope of `log err` against `log h`.
pub fn convergence_order(h: &[f64], err: &[f64]) -> f64 {
    assert_eq!(h.len(), err.len());
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = err.iter().map(|v| v.abs().ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn is_nonincreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

pub fn is_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_of_exact_power_law() {
        let h = [0.1, 0.05, 0.025];
        let e: Vec<f64> = h.iter().map(|x| 3.0 * x * x).collect();
        assert!((convergence_order(&h, &e) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn monotonicity() {
        assert!(is_nonincreasing(&[3.0, 3.0, 1.0]));
        assert!(!is_decreasing(&[3.0, 3.0, 1.0]));
        assert!(is_decreasing(&[3.0, 2.0, 1.0]));
    }

    #[test]
    fn failures_are_counted() {
        let mut c = Checklist::default();
        c.check("ok", || Ok((true, String::new())));
        c.check("bad", || Ok((false, String::new())));
        c.check("err", || Err("x".into()));
        assert_eq!(c.failures(), 2);
        assert!(c.outcomes()[0].line().starts_with("PASS ok"));
    }
}
