//! One-sided FKPP travelling waves for killed fragmentations.
//!
//! A wave is a nonincreasing `f: ℝ → [0, 1]` with `f ≡ 1` on `(−∞, 0)`,
//! `f(∞) = 0`, solving
//!
//! ```text
//! c f'(x) + Lf(x) = 0,   Lf(x) = Σ_i w_i ( Π_n f(x + ln s_{i,n}) − f(x) ).
//! ```
//!
//! Every argument `x + ln s_{i,n}` lies strictly to the left of `x`, so the
//! equation is an explicit delay equation `f' = −Lf / c`. The solver marches
//! it forward from a guessed value `θ = f(0+)` and bisects on `θ`: too small a
//! guess makes the trajectory cross zero, too large a guess makes it stop
//! decreasing. The wave is the separatrix between the two.

use rayon::prelude::*;
use serde::Serialize;

use crate::dislocation::DislocationMeasure;
use crate::error::{Error, Result};
use crate::roots::bisect_predicate;
use crate::simulator::{estimate_extinction, ExtinctionEstimate, KillingParams};
use crate::stream::derive_seed;

/// Relative distance to a grid node below which a position is snapped to it.
const SNAP: f64 = 1e-9;

pub const DEFAULT_PLATEAU_TOL: f64 = 1e-4;
pub const DEFAULT_TAIL_TOL: f64 = 1e-4;
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-3;
pub const DEFAULT_X_MAX: f64 = 32.0;
/// Steps per `ln 2` on grids aligned with dyadic fragment sizes.
pub const ALIGNED_STEPS_PER_LN2: f64 = 64.0;
/// Steps on `[0, x_max]` when no alignment is possible.
pub const UNALIGNED_STEPS: f64 = 4096.0;

/// Gridded nonincreasing function on `[0, x_max]`, extended by 1 to the left
/// of 0 and by 0 to the right of `x_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveGrid {
    dx: f64,
    values: Vec<f64>,
}

impl WaveGrid {
    pub fn new(dx: f64, values: Vec<f64>) -> Result<Self> {
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::param("dx", format!("must be > 0 (got {dx})")));
        }
        if values.is_empty() {
            return Err(Error::param("values", "wave grid needs at least one node"));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param("values", format!("{v} lies outside [0, 1]")));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::param(
                "values",
                "wave grid values must be nonincreasing",
            ));
        }
        Ok(Self { dx, values })
    }

    /// Samples `g` at the nodes `0, dx, …, x_max`.
    pub fn from_fn(dx: f64, x_max: f64, g: impl Fn(f64) -> f64) -> Result<Self> {
        let n = (x_max / dx).round() as usize;
        Self::new(dx, (0..=n).map(|i| g(i as f64 * dx)).collect())
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x_max(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dx
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    /// 1 left of 0, linear interpolation on `[0, x_max]`, 0 beyond.
    pub fn eval(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        let u = x / self.dx;
        let last = self.values.len() - 1;
        let j = u.floor() as usize;
        if j >= last {
            return if u <= last as f64 * (1.0 + f64::EPSILON) + SNAP {
                self.values[last]
            } else {
                0.0
            };
        }
        let t = u - j as f64;
        self.values[j] * (1.0 - t) + self.values[j + 1] * t
    }

    /// Index of `x` if it is (up to round-off) a grid node.
    fn node_index(&self, x: f64) -> Option<usize> {
        let u = x / self.dx;
        let i = u.round();
        ((u - i).abs() <= SNAP && i >= 0.0).then_some(i as usize)
    }
}

/// Evaluates a wave grid with the conventions `f = 1` on `(−∞, 0)` and
/// `f = 0` beyond `x_max`.
pub fn eval_wave(f: &WaveGrid, x: f64) -> f64 {
    f.eval(x)
}

/// `Lf(x) = Σ_i w_i (Π_n f(x + ln s_{i,n}) − f(x))`.
pub fn apply_l(nu: &DislocationMeasure, f: &WaveGrid, x: f64) -> f64 {
    let fx = f.eval(x);
    nu.atoms()
        .iter()
        .map(|a| {
            let prod: f64 = a
                .fragments
                .sizes()
                .iter()
                .map(|s| f.eval(x + s.ln()))
                .product();
            a.weight * (prod - fx)
        })
        .sum()
}

/// `c·(f(x+dx) − f(x−dx))/(2dx) + Lf(x)` at an interior node `x`.
pub fn residual(nu: &DislocationMeasure, c: f64, f: &WaveGrid, x: f64) -> Result<f64> {
    let i = f
        .node_index(x)
        .filter(|&i| i >= 1 && i + 1 < f.len())
        .ok_or_else(|| Error::param("x", format!("{x} is not an interior grid node")))?;
    Ok(residual_at(nu, c, f, i))
}

fn residual_at(nu: &DislocationMeasure, c: f64, f: &WaveGrid, i: usize) -> f64 {
    let v = f.values();
    let derivative = (v[i + 1] - v[i - 1]) / (2.0 * f.dx());
    c * derivative + apply_l(nu, f, f.node(i))
}

/// Jump sizes `−ln s_{i,n}` of all fragments, sorted and deduplicated.
fn jump_offsets(nu: &DislocationMeasure) -> Vec<f64> {
    let mut ys: Vec<f64> = nu
        .atoms()
        .iter()
        .flat_map(|a| a.fragments.sizes().iter().map(|s| -s.ln()))
        .collect();
    ys.sort_by(f64::total_cmp);
    ys.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    ys
}

/// Residual of a candidate wave at every interior node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub xs: Vec<f64>,
    pub residuals: Vec<f64>,
    pub max_abs_residual: f64,
    pub argmax: f64,
    /// Interior nodes whose stencil straddles a point `x = −ln s_{i,n}`, where
    /// `f(x + ln s)` jumps from 1 to `f(0+)` and `f'` does not exist.
    pub excluded: Vec<f64>,
    pub dx: f64,
}

/// Residuals at interior nodes; nodes at which the derivative of the wave
/// does not exist are listed in `excluded` instead.
pub fn residual_report(nu: &DislocationMeasure, c: f64, f: &WaveGrid) -> ResidualReport {
    let kinks = jump_offsets(nu);
    let dx = f.dx();
    let mut report = ResidualReport {
        xs: Vec::new(),
        residuals: Vec::new(),
        max_abs_residual: 0.0,
        argmax: f64::NAN,
        excluded: Vec::new(),
        dx,
    };
    for i in 1..f.len().saturating_sub(1) {
        let x = f.node(i);
        if kinks.iter().any(|&y| (x - y).abs() < dx * (1.0 - SNAP)) {
            report.excluded.push(x);
            continue;
        }
        let r = residual_at(nu, c, f, i);
        if r.abs() > report.max_abs_residual || report.argmax.is_nan() {
            report.max_abs_residual = r.abs();
            report.argmax = x;
        }
        report.xs.push(x);
        report.residuals.push(r);
    }
    report
}

/// Tolerances that classify a shooting trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShootOptions {
    pub plateau_tol: f64,
    pub tail_tol: f64,
}

impl Default for ShootOptions {
    fn default() -> Self {
        Self {
            plateau_tol: DEFAULT_PLATEAU_TOL,
            tail_tol: DEFAULT_TAIL_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum ShotClass {
    /// The trajectory became negative at `x`.
    BelowZero { x: f64 },
    /// The trajectory stopped decreasing at `x` while still above the plateau
    /// tolerance, or reached `x_max` above the tail tolerance.
    Plateau { x: f64 },
    /// The trajectory fell below the tail tolerance.
    Decayed,
}

/// Which side of the wave a trajectory lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Fate {
    /// Crossed zero: the initial value was too small.
    Dived,
    /// Stopped decreasing: the initial value was too large.
    TurnedUp,
    /// Reached `x_max` with neither event.
    Undecided,
}

/// One forward march from `f(0) = θ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Shot {
    pub theta: f64,
    pub dx: f64,
    /// Values at `0, dx, …` up to the last node before the terminating event.
    pub values: Vec<f64>,
    pub class: ShotClass,
    pub fate: Fate,
}

impl Shot {
    /// Index of the first node below `tail_tol`, if any.
    fn first_below(&self, tail_tol: f64) -> Option<usize> {
        self.values.iter().position(|&v| v < tail_tol)
    }
}

/// Rate `f'(x) = −Lf(x)/c` given the marched history.
struct DelayRhs {
    /// `(w_i / c, jump offsets y_{i,n} = −ln s_{i,n})`
    atoms: Vec<(f64, Vec<f64>)>,
    dx: f64,
}

impl DelayRhs {
    fn new(nu: &DislocationMeasure, c: f64, dx: f64) -> Self {
        let atoms = nu
            .atoms()
            .iter()
            .map(|a| {
                (
                    a.weight / c,
                    a.fragments.sizes().iter().map(|s| -s.ln()).collect(),
                )
            })
            .collect();
        Self { atoms, dx }
    }

    /// Value of the marched trajectory at `pos`. At `pos = 0` the left limit
    /// is 1 and the right limit is `f(0)`.
    fn lookup(&self, history: &[f64], pos: f64, left_limit: bool) -> f64 {
        let u = pos / self.dx;
        if u < -SNAP {
            return 1.0;
        }
        if u <= SNAP {
            return if left_limit { 1.0 } else { history[0] };
        }
        let mut j = u.floor() as usize;
        let mut t = u - j as f64;
        if t > 1.0 - SNAP {
            j += 1;
            t = 0.0;
        }
        let last = history.len() - 1;
        if j >= last {
            return history[last];
        }
        if t < SNAP {
            return history[j];
        }
        history[j] * (1.0 - t) + history[j + 1] * t
    }

    fn eval(&self, history: &[f64], x: f64, fx: f64, left_limit: bool) -> f64 {
        self.atoms
            .iter()
            .map(|(rate, ys)| {
                let prod: f64 = ys
                    .iter()
                    .map(|y| self.lookup(history, x - y, left_limit))
                    .product();
                rate * (fx - prod)
            })
            .sum()
    }
}

fn validate_grid(dx: f64, x_max: f64) -> Result<usize> {
    if !(dx.is_finite() && dx > 0.0) {
        return Err(Error::param("dx", format!("must be > 0 (got {dx})")));
    }
    if !(x_max.is_finite() && x_max > dx) {
        return Err(Error::param(
            "x_max",
            format!("must exceed dx (got {x_max})"),
        ));
    }
    Ok((x_max / dx).round() as usize)
}

/// Marches `c f' = −Lf` from `f(0) = θ` with Heun's predictor-corrector.
///
/// The explicit step evaluates history lookups as right limits and the
/// corrector as left limits, so the jump of `f` at 0 is integrated exactly on
/// grids that contain the offsets `−ln s_{i,n}`.
pub fn shoot(
    nu: &DislocationMeasure,
    c: f64,
    theta: f64,
    dx: f64,
    x_max: f64,
    opts: &ShootOptions,
) -> Result<Shot> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::param(
            "theta",
            format!("must lie in (0, 1) (got {theta})"),
        ));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::param("c", format!("must be > 0 (got {c})")));
    }
    let steps = validate_grid(dx, x_max)?;
    let rhs = DelayRhs::new(nu, c, dx);
    let mut values = Vec::with_capacity(steps + 1);
    values.push(theta);

    for i in 0..steps {
        let x = i as f64 * dx;
        let fi = values[i];
        let k1 = rhs.eval(&values, x, fi, false);
        values.push(fi + dx * k1);
        let k2 = rhs.eval(&values, x + dx, values[i + 1], true);
        let next = fi + 0.5 * dx * (k1 + k2);
        values[i + 1] = next;

        if next < 0.0 {
            values.pop();
            return Ok(Shot {
                theta,
                dx,
                values,
                class: ShotClass::BelowZero { x: x + dx },
                fate: Fate::Dived,
            });
        }
        if next >= fi {
            values.pop();
            let class = if fi > opts.plateau_tol {
                ShotClass::Plateau { x }
            } else {
                ShotClass::Decayed
            };
            return Ok(Shot {
                theta,
                dx,
                values,
                class,
                fate: Fate::TurnedUp,
            });
        }
    }
    let class = if *values.last().unwrap() < opts.tail_tol {
        ShotClass::Decayed
    } else {
        ShotClass::Plateau { x: x_max }
    };
    Ok(Shot {
        theta,
        dx,
        values,
        class,
        fate: Fate::Undecided,
    })
}

/// Default step: `ln 2 / 64` when every jump size is a multiple of `ln 2`,
/// otherwise `x_max / 4096`.
pub fn default_dx(nu: &DislocationMeasure, x_max: f64) -> f64 {
    let ln2 = std::f64::consts::LN_2;
    let aligned = jump_offsets(nu).iter().all(|y| {
        let k = y / ln2;
        (k - k.round()).abs() < 1e-9
    });
    if aligned {
        ln2 / ALIGNED_STEPS_PER_LN2
    } else {
        x_max / UNALIGNED_STEPS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveOptions {
    pub dx: f64,
    pub x_max: f64,
    /// Bound on the maximum interior residual.
    pub tol: f64,
    pub shoot: ShootOptions,
}

impl SolveOptions {
    pub fn for_measure(nu: &DislocationMeasure) -> Self {
        Self {
            dx: default_dx(nu, DEFAULT_X_MAX),
            x_max: DEFAULT_X_MAX,
            tol: DEFAULT_RESIDUAL_TOL,
            shoot: ShootOptions::default(),
        }
    }

    pub fn with_dx(mut self, dx: f64) -> Self {
        self.dx = dx;
        self
    }
}

/// Classification of one probe used to orient the bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Probe {
    pub theta: f64,
    pub class: ShotClass,
    pub fate: Fate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveSolution {
    pub wave: WaveGrid,
    pub residual: ResidualReport,
    pub theta: f64,
    pub c: f64,
    pub probes: Vec<Probe>,
    pub bisection_steps: usize,
}

const PROBES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
const EXTRA_PROBES: [f64; 2] = [1e-6, 1.0 - 1e-6];
const THETA_WIDTH: f64 = 1e-15;

/// Solves for the travelling wave of speed `c > c_p̄`.
pub fn solve_wave(nu: &DislocationMeasure, c: f64, opts: &SolveOptions) -> Result<WaveSolution> {
    let critical = nu.critical_speed()?;
    if !(c > critical) {
        return Err(Error::SubcriticalSpeed { c, critical });
    }
    validate_grid(opts.dx, opts.x_max)?;
    let fire = |theta: f64| shoot(nu, c, theta, opts.dx, opts.x_max, &opts.shoot);

    let mut probes: Vec<Probe> = PROBES
        .par_iter()
        .map(|&t| {
            fire(t).map(|s| Probe {
                theta: t,
                class: s.class,
                fate: s.fate,
            })
        })
        .collect::<Result<_>>()?;
    let mut bracket = find_bracket(&probes);
    if bracket.is_none() {
        for &t in &EXTRA_PROBES {
            let s = fire(t)?;
            probes.push(Probe {
                theta: t,
                class: s.class,
                fate: s.fate,
            });
        }
        probes.sort_by(|a, b| a.theta.total_cmp(&b.theta));
        bracket = find_bracket(&probes);
    }
    let (lo, hi, dived_low) = bracket.ok_or_else(|| {
        Error::BisectionFailed(format!(
            "no change of trajectory fate among probes θ ∈ {:?}",
            probes.iter().map(|p| p.theta).collect::<Vec<_>>()
        ))
    })?;

    let mut steps = 0;
    let mut failure: Option<Error> = None;
    let (lo, hi) = bisect_predicate(
        |theta| {
            steps += 1;
            if failure.is_some() {
                return true;
            }
            match fire(theta) {
                // "right" of the separatrix in bisection coordinates
                Ok(s) => (s.fate == Fate::Dived) != dived_low,
                Err(e) => {
                    failure = Some(e);
                    true
                }
            }
        },
        lo,
        hi,
        THETA_WIDTH,
        200,
    );
    if let Some(e) = failure {
        return Err(e);
    }

    // Both brackets follow the wave to within the bisection width; keep the
    // one that reached the tail before leaving it.
    let tail = opts.shoot.tail_tol;
    let candidates = [fire(lo)?, fire(hi)?];
    let best = candidates
        .into_iter()
        .filter_map(|s| s.first_below(tail).map(|k| (k, s)))
        .min_by_key(|(k, _)| *k)
        .map(|(_, s)| s)
        .ok_or_else(|| {
            Error::BisectionFailed(format!(
                "bracket [{lo}, {hi}] never decays below {tail} before leaving the wave; \
                 increase x_max or refine dx"
            ))
        })?;
    finish(nu, c, opts, best, probes, steps)
}

/// `(lo, hi, dived_low)` for the first adjacent pair of probes with opposite
/// fates.
fn find_bracket(probes: &[Probe]) -> Option<(f64, f64, bool)> {
    probes.windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        let opposite = matches!(
            (a.fate, b.fate),
            (Fate::Dived, Fate::TurnedUp) | (Fate::TurnedUp, Fate::Dived)
        ) || matches!(
            (a.fate, b.fate),
            (Fate::Dived, Fate::Undecided) | (Fate::Undecided, Fate::Dived)
        );
        opposite.then_some((a.theta, b.theta, a.fate == Fate::Dived))
    })
}

fn finish(
    nu: &DislocationMeasure,
    c: f64,
    opts: &SolveOptions,
    shot: Shot,
    probes: Vec<Probe>,
    steps: usize,
) -> Result<WaveSolution> {
    let cut = shot
        .first_below(opts.shoot.tail_tol)
        .ok_or_else(|| Error::BisectionFailed("selected trajectory does not decay".into()))?;
    let mut values = shot.values;
    values.truncate(cut + 1);
    let wave = WaveGrid::new(shot.dx, values)?;
    let residual = residual_report(nu, c, &wave);
    if residual.max_abs_residual > opts.tol {
        return Err(Error::ResidualExceeded {
            max_abs: residual.max_abs_residual,
            tol: opts.tol,
        });
    }
    Ok(WaveSolution {
        wave,
        residual,
        theta: shot.theta,
        c,
        probes,
        bisection_steps: steps,
    })
}

/// Monte Carlo settings shared by cross-validation and scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McBudget {
    pub trials: u64,
    pub horizon: f64,
    pub block_cap: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossRow {
    pub x: f64,
    pub f_solver: f64,
    pub phi_mc: ExtinctionEstimate,
    pub abs_diff: f64,
    /// `3·SE + grid_tol`
    pub allowance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValidation {
    pub solution: WaveSolution,
    pub rows: Vec<CrossRow>,
}

impl CrossValidation {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn events(&self) -> u64 {
        self.rows.iter().map(|r| r.phi_mc.events).sum()
    }

    pub fn bound_violations(&self) -> u64 {
        self.rows.iter().map(|r| r.phi_mc.bound_violations).sum()
    }
}

/// Compares the solved wave with Monte Carlo extinction probabilities.
pub fn cross_validate(
    nu: &DislocationMeasure,
    c: f64,
    points: &[f64],
    budget: &McBudget,
    opts: &SolveOptions,
    grid_tol: f64,
) -> Result<CrossValidation> {
    let solution = solve_wave(nu, c, opts)?;
    let rows = points
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let params = KillingParams::new(x, c, budget.horizon, budget.block_cap)?;
            let mc = estimate_extinction(
                nu,
                &params,
                budget.trials,
                derive_seed(budget.seed, k as u64),
            )?;
            let f_solver = solution.wave.eval(x);
            let abs_diff = (f_solver - mc.estimate.point).abs();
            let allowance = 3.0 * mc.estimate.std_error + grid_tol;
            Ok(CrossRow {
                x,
                f_solver,
                phi_mc: mc,
                abs_diff,
                allowance,
                pass: abs_diff <= allowance,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CrossValidation { solution, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseRow {
    pub c: f64,
    pub estimate: ExtinctionEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseScan {
    pub x: f64,
    pub rows: Vec<PhaseRow>,
}

impl PhaseScan {
    /// Whether the estimates are nonincreasing in `c` up to
    /// `3·(SE₁ + SE₂)` between consecutive rows. Reported, not enforced.
    pub fn nonincreasing_within_error(&self) -> bool {
        self.rows.windows(2).all(|w| {
            let (a, b) = (&w[0].estimate.estimate, &w[1].estimate.estimate);
            b.point <= a.point + 3.0 * (a.std_error + b.std_error)
        })
    }
}

/// Extinction estimates at headroom `x` across barrier slopes. All slopes use
/// the same trial streams.
pub fn phase_scan(
    nu: &DislocationMeasure,
    x: f64,
    c_values: &[f64],
    budget: &McBudget,
) -> Result<PhaseScan> {
    let rows = c_values
        .iter()
        .map(|&c| {
            let params = KillingParams::new(x, c, budget.horizon, budget.block_cap)?;
            Ok(PhaseRow {
                c,
                estimate: estimate_extinction(nu, &params, budget.trials, budget.seed)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PhaseScan { x, rows })
}
