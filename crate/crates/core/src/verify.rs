//! Acceptance battery: eight numerical criteria on two reference measures,
//! the binary split `δ_{(1/2,1/2)}` and the lossy split `δ_{(1/2,1/4)}`.
//!
//! A criterion that hits an error is reported as failed with the error text;
//! the remaining criteria still run.

use std::fmt;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::dislocation::DislocationMeasure;
use crate::error::Result;
use crate::fkpp::{cross_validate, solve_wave, McBudget, SolveOptions, WaveGrid};
use crate::levy::{
    laplace_spot_check, largest_root_psi, mc_first_passage, scale_function, DEFAULT_SCALE_DX,
};
use crate::simulator::{
    estimate_extinction, martingale_check, KillingParams, DEFAULT_BLOCK_CAP, DEFAULT_HORIZON,
};
use crate::stream::derive_seed;

/// Allowance for discretisation error in the wave/Monte Carlo comparison.
pub const GRID_TOLERANCE: f64 = 0.02;

/// Trials for the `f ≡ 0` control of criterion 7. For the binary split at
/// `x = c = 1`, extinction in `(2, 4]` has probability about `4e-4`.
pub const CONTROL_TRIALS: u64 = 100_000;

pub fn binary_half() -> DislocationMeasure {
    DislocationMeasure::single(1.0, &[0.5, 0.5]).expect("valid reference measure")
}

pub fn lossy_quarter() -> DislocationMeasure {
    DislocationMeasure::single(1.0, &[0.5, 0.25]).expect("valid reference measure")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Trial counts divided by ten; the event floor of criterion 6 likewise.
    Quick,
    Full,
}

impl Budget {
    fn trials(self, full: u64) -> u64 {
        match self {
            Budget::Quick => full / 10,
            Budget::Full => full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub time_limit: Duration,
}

impl fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: {} ({:.2} s, limit {} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64(),
            self.time_limit.as_secs()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub budget: Budget,
    pub seed: u64,
    pub outcomes: Vec<CriterionOutcome>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }
}

/// Simulator work done by one criterion, pooled for criterion 6.
#[derive(Debug, Default, Clone, Copy)]
struct Work {
    events: u64,
    violations: u64,
    failed: bool,
}

struct Check {
    passed: bool,
    detail: String,
    work: Work,
}

fn timed(
    id: u8,
    name: &'static str,
    limit_secs: u64,
    body: impl FnOnce() -> Result<Check>,
) -> (CriterionOutcome, Work) {
    let start = Instant::now();
    let result = body();
    let elapsed = start.elapsed();
    let time_limit = Duration::from_secs(limit_secs);
    let (passed, detail, work) = match result {
        Ok(c) => (c.passed, c.detail, c.work),
        Err(e) => (
            false,
            format!("error: {e}"),
            Work {
                failed: true,
                ..Work::default()
            },
        ),
    };
    let in_time = elapsed <= time_limit;
    let detail = if in_time {
        detail
    } else {
        format!("{detail}; over time limit")
    };
    let outcome = CriterionOutcome {
        id,
        name,
        passed: passed && in_time,
        detail,
        elapsed,
        time_limit,
    };
    (outcome, work)
}

/// Runs criteria 1 to 8 in order.
pub fn run_all(budget: Budget, seed: u64) -> Report {
    let mut outcomes = Vec::with_capacity(8);
    let mut pooled = Work::default();
    let mut pool = |w: Work| {
        pooled.events += w.events;
        pooled.violations += w.violations;
        pooled.failed |= w.failed;
    };

    outcomes.push(timed(1, "critical-speed calculus", 1, critical_calculus).0);
    let (o, w) = timed(2, "wave vs extinction Monte Carlo", 180, || {
        wave_extinction(budget, derive_seed(seed, 2))
    });
    outcomes.push(o);
    pool(w);
    outcomes.push(timed(3, "wave residual", 30, wave_residual).0);
    let (o, w) = timed(4, "phase transition", 120, || {
        phase_transition(budget, derive_seed(seed, 4))
    });
    outcomes.push(o);
    pool(w);
    let (o, w) = timed(5, "truncation robustness", 180, || {
        truncation(budget, derive_seed(seed, 5))
    });
    outcomes.push(o);
    pool(w);
    outcomes.push(
        timed(6, "block-count bound", 1, || {
            Ok(block_bound(budget, pooled))
        })
        .0,
    );
    outcomes.push(
        timed(7, "martingale flatness", 120, || {
            martingale(budget, derive_seed(seed, 7))
        })
        .0,
    );
    outcomes.push(
        timed(8, "scale function and exit", 60, || {
            scale_exit(budget, derive_seed(seed, 8))
        })
        .0,
    );

    Report {
        budget,
        seed,
        outcomes,
    }
}

fn critical_calculus() -> Result<Check> {
    let nu = binary_half();
    let p = nu.critical_exponent()?;
    let c = nu.critical_speed()?;
    let gap = ((1.0 + p) * nu.phi_prime(p)? - nu.phi(p)?).abs();
    let mut passed = gap < 1e-10 && (p - 1.421).abs() <= 0.005 && (c - 0.2589).abs() <= 0.001;
    let mut worst: f64 = 0.0;
    for m in [0.5, 2.0, 10.0] {
        let scaled = nu.scaled(m)?;
        let dp = (scaled.critical_exponent()? - p).abs();
        let dc = (scaled.critical_speed()? - m * c).abs();
        worst = worst.max(dp).max(dc);
    }
    passed &= worst < 1e-8;
    Ok(Check {
        passed,
        detail: format!(
            "p̄ = {p:.10}, c_p̄ = {c:.10}, |g(p̄)| = {gap:.1e}, scaling error {worst:.1e}"
        ),
        work: Work::default(),
    })
}

/// The two reference settings: binary at `c = 1`, lossy at `c = 2c_p̄`.
fn reference_settings() -> Result<[(&'static str, DislocationMeasure, f64); 2]> {
    let lossy = lossy_quarter();
    let c = 2.0 * lossy.critical_speed()?;
    Ok([("binary", binary_half(), 1.0), ("lossy", lossy, c)])
}

fn wave_extinction(budget: Budget, seed: u64) -> Result<Check> {
    let mut passed = true;
    let mut work = Work::default();
    let mut parts = Vec::new();
    for (k, (label, nu, c)) in reference_settings()?.into_iter().enumerate() {
        let mc = McBudget {
            trials: budget.trials(4000),
            horizon: DEFAULT_HORIZON,
            block_cap: DEFAULT_BLOCK_CAP,
            seed: derive_seed(seed, k as u64),
        };
        let cv = cross_validate(
            &nu,
            c,
            &[0.5, 1.0, 2.0],
            &mc,
            &SolveOptions::for_measure(&nu),
            GRID_TOLERANCE,
        )?;
        passed &= cv.all_pass();
        work.events += cv.events();
        work.violations += cv.bound_violations();
        let worst = cv
            .rows
            .iter()
            .map(|r| r.abs_diff / r.allowance)
            .fold(0.0, f64::max);
        parts.push(format!("{label} max |Δ|/allowance = {worst:.2}"));
    }
    Ok(Check {
        passed,
        detail: parts.join(", "),
        work,
    })
}

fn wave_residual() -> Result<Check> {
    let mut passed = true;
    let mut parts = Vec::new();
    for (label, nu, c) in reference_settings()? {
        let opts = SolveOptions::for_measure(&nu);
        let coarse = solve_wave(&nu, c, &opts)?.residual.max_abs_residual;
        let fine = solve_wave(&nu, c, &opts.with_dx(opts.dx / 2.0))?
            .residual
            .max_abs_residual;
        let ratio = coarse / fine;
        passed &= coarse <= 1e-3 && fine <= 1e-3 && ratio >= 2.0;
        parts.push(format!("{label} {coarse:.2e} → {fine:.2e} (×{ratio:.2})"));
    }
    Ok(Check {
        passed,
        detail: parts.join(", "),
        work: Work::default(),
    })
}

fn phase_transition(budget: Budget, seed: u64) -> Result<Check> {
    let nu = binary_half();
    let critical = nu.critical_speed()?;
    let n = budget.trials(2000);
    let slow = KillingParams::new(1.0, 0.5 * critical, 100.0, DEFAULT_BLOCK_CAP)?;
    let fast = KillingParams::new(1.0, 3.0 * critical, DEFAULT_HORIZON, DEFAULT_BLOCK_CAP)?;
    let low = estimate_extinction(&nu, &slow, n, derive_seed(seed, 0))?;
    let high = estimate_extinction(&nu, &fast, n, derive_seed(seed, 1))?;
    let (a, b) = (low.estimate.point, high.estimate.point);
    Ok(Check {
        passed: a >= 0.99 && b <= 0.95,
        detail: format!("φ̂(0.5c_p̄) = {a:.4}, φ̂(3c_p̄) = {b:.4}"),
        work: Work {
            events: low.events + high.events,
            violations: low.bound_violations + high.bound_violations,
            failed: false,
        },
    })
}

fn truncation(budget: Budget, seed: u64) -> Result<Check> {
    let nu = binary_half();
    let n = budget.trials(4000);
    let base = KillingParams::new(1.0, 1.0, DEFAULT_HORIZON, DEFAULT_BLOCK_CAP)?;
    let doubled = KillingParams::new(1.0, 1.0, 2.0 * DEFAULT_HORIZON, 2 * DEFAULT_BLOCK_CAP)?;
    let a = estimate_extinction(&nu, &base, n, seed)?;
    let b = estimate_extinction(&nu, &doubled, n, seed)?;
    let diff = (a.estimate.point - b.estimate.point).abs();
    let pooled = a.estimate.std_error.hypot(b.estimate.std_error);
    Ok(Check {
        passed: diff < 3.0 * pooled,
        detail: format!(
            "φ̂ = {:.4} → {:.4}, |Δ| = {diff:.4}, 3·pooled SE = {:.4}",
            a.estimate.point,
            b.estimate.point,
            3.0 * pooled
        ),
        work: Work {
            events: a.events + b.events,
            violations: a.bound_violations + b.bound_violations,
            failed: false,
        },
    })
}

fn block_bound(budget: Budget, pooled: Work) -> Check {
    let floor = budget.trials(1_000_000);
    Check {
        passed: !pooled.failed && pooled.violations == 0 && pooled.events >= floor,
        detail: format!(
            "{} events, {} violations (floor {floor}){}",
            pooled.events,
            pooled.violations,
            if pooled.failed {
                "; a contributing criterion errored"
            } else {
                ""
            }
        ),
        work: Work::default(),
    }
}

fn martingale(budget: Budget, seed: u64) -> Result<Check> {
    let nu = binary_half();
    let (x, c) = (1.0, 1.0);
    let times = [0.0, 1.0, 2.0, 4.0];
    let n = budget.trials(4000);
    let wave = solve_wave(&nu, c, &SolveOptions::for_measure(&nu))?.wave;
    let target = wave.eval(x);
    let report = martingale_check(&nu, x, c, &wave, &times, n, seed, DEFAULT_BLOCK_CAP)?;
    // round-off slack for the t = 0 row, whose standard error is zero
    let flat = report
        .rows
        .iter()
        .all(|r| (r.estimate.point - target).abs() <= 3.0 * r.estimate.std_error + 1e-12);

    let zero = WaveGrid::new(1.0, vec![0.0, 0.0])?;
    let control = martingale_check(
        &nu,
        x,
        c,
        &zero,
        &times,
        CONTROL_TRIALS,
        seed,
        DEFAULT_BLOCK_CAP,
    )?;
    let means: Vec<f64> = control.rows.iter().map(|r| r.estimate.point).collect();
    let rising = means.windows(2).all(|w| w[1] > w[0]);

    let shown: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{:.4}", r.estimate.point))
        .collect();
    let ctrl: Vec<String> = means.iter().map(|m| format!("{m:.4}")).collect();
    Ok(Check {
        passed: flat && rising,
        detail: format!(
            "f(1) = {target:.4}, E[Z_t] = [{}], control = [{}]",
            shown.join(", "),
            ctrl.join(", ")
        ),
        work: Work::default(),
    })
}

fn scale_exit(budget: Budget, seed: u64) -> Result<Check> {
    let mut passed = true;
    let mut parts = Vec::new();
    let n = budget.trials(100_000);
    for (k, (label, nu, c)) in reference_settings()?.into_iter().enumerate() {
        let coarse = scale_function(&nu, c, 2.0, DEFAULT_SCALE_DX)?;
        let fine = scale_function(&nu, c, 2.0, DEFAULT_SCALE_DX / 2.0)?;
        let w0 = (coarse.values[0] - 1.0 / c)
            .abs()
            .max((fine.values[0] - 1.0 / c).abs());

        let exact = fine.two_sided_exit(1.0, 1.0)?;
        let mc = mc_first_passage(&nu, c, 1.0, 1.0, n, derive_seed(seed, k as u64))?;
        let exit_ok = (exact - mc.point).abs() <= 3.0 * mc.std_error;

        let table = scale_function(&nu, c, 20.0, 0.01)?;
        let growth = largest_root_psi(&nu, c)?;
        let mut laplace: f64 = 0.0;
        for beta in [growth + 1.0, growth + 3.0] {
            laplace = laplace.max(laplace_spot_check(&nu, &table, beta)?.rel_err);
        }
        passed &= w0 <= 1e-6 && exit_ok && laplace <= 0.01;
        parts.push(format!(
            "{label}: |W(0) − 1/c| = {w0:.1e}, exit {exact:.4} vs MC {:.4} ± {:.4}, Laplace rel err {laplace:.1e}",
            mc.point, mc.std_error
        ));
    }
    Ok(Check {
        passed,
        detail: parts.join("; "),
        work: Work::default(),
    })
}
