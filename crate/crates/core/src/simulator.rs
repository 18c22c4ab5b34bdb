//! Event-driven Monte Carlo of a homogeneous fragmentation killed below the
//! moving barrier `e^{−(x+ct)}`.
//!
//! Blocks are tracked by the logarithm of their mass. Every alive block
//! fragments at rate `ν(𝒮)`, so the process is driven by one exponential clock
//! of rate `ν(𝒮)·N` and a uniformly chosen block. A child created at time `t`
//! is kept iff `log_size ≥ −(x + ct)`; since the barrier only moves down,
//! blocks are never killed after creation.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::dislocation::DislocationMeasure;
use crate::error::{Error, Result};
use crate::estimate::EstimateCI;
use crate::fkpp::WaveGrid;
use crate::stream::trial_rng;

/// Default block count above which a trial is declared surviving.
pub const DEFAULT_BLOCK_CAP: usize = 500;
/// Default time horizon.
pub const DEFAULT_HORIZON: f64 = 50.0;
/// Slack in the check `ln N ≤ x + ct`.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub log_size: f64,
    pub created_at: f64,
}

/// Parameters of a killed fragmentation trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KillingParams {
    /// Initial headroom `x ≥ 0`.
    pub x: f64,
    /// Barrier slope `c > 0`.
    pub c: f64,
    pub horizon: f64,
    pub block_cap: usize,
}

impl KillingParams {
    pub fn new(x: f64, c: f64, horizon: f64, block_cap: usize) -> Result<Self> {
        let p = Self {
            x,
            c,
            horizon,
            block_cap,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        validate_headroom(self.x, self.c)?;
        if !(self.horizon > 0.0) {
            return Err(Error::param(
                "horizon",
                format!("must be > 0 (got {})", self.horizon),
            ));
        }
        if self.block_cap < 1 {
            return Err(Error::param("block_cap", "must be at least 1"));
        }
        Ok(())
    }
}

fn validate_headroom(x: f64, c: f64) -> Result<()> {
    if !(x.is_finite() && x >= 0.0) {
        return Err(Error::param(
            "x",
            format!("must be finite and ≥ 0 (got {x}); for x < 0 extinction is immediate"),
        ));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::param(
            "c",
            format!("must be finite and > 0 (got {c})"),
        ));
    }
    Ok(())
}

/// What one fragmentation event did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub time: f64,
    pub created: usize,
    pub killed: usize,
}

/// State of the killed process.
#[derive(Debug, Clone)]
pub struct Population {
    time: f64,
    alive: Vec<Block>,
    x: f64,
    c: f64,
    events: u64,
    bound_violations: u64,
}

impl Population {
    /// A single unit block at time 0.
    pub fn new(x: f64, c: f64) -> Result<Self> {
        validate_headroom(x, c)?;
        Ok(Self {
            time: 0.0,
            alive: vec![Block {
                log_size: 0.0,
                created_at: 0.0,
            }],
            x,
            c,
            events: 0,
            bound_violations: 0,
        })
    }

    /// Population with explicit blocks, e.g. for evaluating functionals.
    pub fn from_blocks(x: f64, c: f64, time: f64, alive: Vec<Block>) -> Result<Self> {
        validate_headroom(x, c)?;
        Ok(Self {
            time,
            alive,
            x,
            c,
            events: 0,
            bound_violations: 0,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn alive(&self) -> &[Block] {
        &self.alive
    }

    pub fn len(&self) -> usize {
        self.alive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alive.is_empty()
    }

    pub fn headroom(&self) -> f64 {
        self.x
    }

    pub fn slope(&self) -> f64 {
        self.c
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    /// Number of events after which `N > e^{x+ct}` was observed.
    pub fn bound_violations(&self) -> u64 {
        self.bound_violations
    }

    /// Log-size of the barrier at time `t`.
    pub fn barrier(&self, t: f64) -> f64 {
        -(self.x + self.c * t)
    }

    /// `Σ |B|` over alive blocks.
    pub fn total_mass(&self) -> f64 {
        self.alive.iter().map(|b| b.log_size.exp()).sum()
    }

    /// Whether `N ≤ e^{x+ct}` holds at the current time.
    pub fn within_block_bound(&self) -> bool {
        self.alive.is_empty()
            || (self.alive.len() as f64).ln() <= self.x + self.c * self.time + BOUND_SLACK
    }

    /// Time of the next fragmentation event, drawn from `Exp(ν(𝒮)·N)`.
    pub fn next_event_time<R: Rng + ?Sized>(&self, nu: &DislocationMeasure, rng: &mut R) -> f64 {
        let rate = nu.total_rate() * self.alive.len() as f64;
        let wait: f64 = rng.sample(Exp1);
        self.time + wait / rate
    }

    /// Moves the clock to `t` without an event. Valid only for `t` earlier
    /// than the pending event time.
    pub fn advance_clock(&mut self, t: f64) {
        debug_assert!(t >= self.time);
        self.time = t;
    }

    /// Fragments a uniformly chosen block at time `t` and applies the killing
    /// rule to its children.
    pub fn fragment_at<R: Rng + ?Sized>(
        &mut self,
        t: f64,
        nu: &DislocationMeasure,
        rng: &mut R,
    ) -> Result<StepRecord> {
        if self.alive.is_empty() {
            return Err(Error::PopulationExtinct);
        }
        self.time = t;
        let idx = rng.random_range(0..self.alive.len());
        let parent = self.alive.swap_remove(idx);
        let barrier = self.barrier(t);
        let (mut created, mut killed) = (0, 0);
        for s in nu.sample_fragments(rng).sizes() {
            let log_size = parent.log_size + s.ln();
            // strict "<" kills; a child exactly on the barrier survives
            if log_size >= barrier {
                self.alive.push(Block {
                    log_size,
                    created_at: t,
                });
                created += 1;
            } else {
                killed += 1;
            }
        }
        self.events += 1;
        if !self.within_block_bound() {
            self.bound_violations += 1;
        }
        Ok(StepRecord {
            time: t,
            created,
            killed,
        })
    }

    /// One event: advance by an exponential waiting time, then fragment.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        nu: &DislocationMeasure,
        rng: &mut R,
    ) -> Result<StepRecord> {
        if self.alive.is_empty() {
            return Err(Error::PopulationExtinct);
        }
        let t = self.next_event_time(nu, rng);
        self.fragment_at(t, nu, rng)
    }

    /// `Z = Π f(x + ct + log_size)` over alive blocks at the current time.
    pub fn product_value(&self, f: &WaveGrid) -> f64 {
        let shift = self.x + self.c * self.time;
        self.alive
            .iter()
            .map(|b| f.eval(shift + b.log_size))
            .product()
    }
}

/// `Z^{x,f}` of the population at its current time; the empty product is 1.
pub fn empirical_product_value(pop: &Population, f: &WaveGrid) -> f64 {
    pop.product_value(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "time", rename_all = "snake_case")]
pub enum Outcome {
    ExtinctAt(f64),
    SurvivedToHorizon,
    SurvivedAtCap,
}

impl Outcome {
    pub fn is_extinct(&self) -> bool {
        matches!(self, Outcome::ExtinctAt(_))
    }

    /// Label used in per-trial CSV output.
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::ExtinctAt(_) => "extinct",
            Outcome::SurvivedToHorizon => "survived_horizon",
            Outcome::SurvivedAtCap => "survived_cap",
        }
    }

    pub fn extinction_time(&self) -> Option<f64> {
        match self {
            Outcome::ExtinctAt(t) => Some(*t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialResult {
    pub outcome: Outcome,
    pub peak_blocks: usize,
    pub final_blocks: usize,
    pub events: u64,
    pub bound_violations: u64,
}

/// Runs one trial until extinction, the horizon, or more than `block_cap`
/// alive blocks.
pub fn run_trial<R: Rng + ?Sized>(
    nu: &DislocationMeasure,
    params: &KillingParams,
    rng: &mut R,
) -> Result<TrialResult> {
    params.validate()?;
    let mut pop = Population::new(params.x, params.c)?;
    let mut peak = pop.len();
    let outcome = loop {
        if pop.is_empty() {
            break Outcome::ExtinctAt(pop.time());
        }
        if pop.len() > params.block_cap {
            break Outcome::SurvivedAtCap;
        }
        let t = pop.next_event_time(nu, rng);
        if t >= params.horizon {
            pop.advance_clock(params.horizon);
            break Outcome::SurvivedToHorizon;
        }
        pop.fragment_at(t, nu, rng)?;
        peak = peak.max(pop.len());
    };
    Ok(TrialResult {
        outcome,
        peak_blocks: peak,
        final_blocks: pop.len(),
        events: pop.events(),
        bound_violations: pop.bound_violations(),
    })
}

/// Runs `n_trials` trials in parallel; trial `i` uses stream `i` of
/// `master_seed`. The returned vector is in trial order.
pub fn simulate_trials(
    nu: &DislocationMeasure,
    params: &KillingParams,
    n_trials: u64,
    master_seed: u64,
) -> Result<Vec<TrialResult>> {
    params.validate()?;
    if n_trials == 0 {
        return Err(Error::param("n_trials", "must be at least 1"));
    }
    (0..n_trials)
        .into_par_iter()
        .map(|i| run_trial(nu, params, &mut trial_rng(master_seed, i)))
        .collect()
}

/// Extinction estimate together with run diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtinctionEstimate {
    pub estimate: EstimateCI,
    pub extinct: u64,
    pub survived_horizon: u64,
    pub survived_cap: u64,
    /// Trials that reached the horizon with fewer than `max(1, cap/10)`
    /// blocks; the only source of downward bias in the point estimate.
    pub ambiguous: u64,
    pub events: u64,
    pub bound_violations: u64,
}

impl ExtinctionEstimate {
    pub fn from_trials(trials: &[TrialResult], block_cap: usize) -> Self {
        let small = (block_cap / 10).max(1);
        let mut out = Self {
            estimate: EstimateCI::from_proportion(0, trials.len().max(1) as u64),
            extinct: 0,
            survived_horizon: 0,
            survived_cap: 0,
            ambiguous: 0,
            events: 0,
            bound_violations: 0,
        };
        for t in trials {
            match t.outcome {
                Outcome::ExtinctAt(_) => out.extinct += 1,
                Outcome::SurvivedToHorizon => {
                    out.survived_horizon += 1;
                    if t.final_blocks < small {
                        out.ambiguous += 1;
                    }
                }
                Outcome::SurvivedAtCap => out.survived_cap += 1,
            }
            out.events += t.events;
            out.bound_violations += t.bound_violations;
        }
        out.estimate = EstimateCI::from_proportion(out.extinct, trials.len() as u64);
        out
    }
}

/// Monte Carlo estimate of the extinction probability `φ(x)`.
pub fn estimate_extinction(
    nu: &DislocationMeasure,
    params: &KillingParams,
    n_trials: u64,
    master_seed: u64,
) -> Result<ExtinctionEstimate> {
    let trials = simulate_trials(nu, params, n_trials, master_seed)?;
    Ok(ExtinctionEstimate::from_trials(&trials, params.block_cap))
}

/// Mean of `Z^{x,f}_t` at one observation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleRow {
    pub time: f64,
    pub estimate: EstimateCI,
    /// Trials that hit the block cap before `time` and contribute the value
    /// observed at the cap time.
    pub capped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub rows: Vec<MartingaleRow>,
    pub events: u64,
    pub bound_violations: u64,
}

struct ProductPath {
    values: Vec<f64>,
    capped_from: Option<usize>,
    events: u64,
    bound_violations: u64,
}

fn product_path<R: Rng + ?Sized>(
    nu: &DislocationMeasure,
    x: f64,
    c: f64,
    f: &WaveGrid,
    times: &[f64],
    block_cap: usize,
    rng: &mut R,
) -> Result<ProductPath> {
    let mut pop = Population::new(x, c)?;
    let mut values = Vec::with_capacity(times.len());
    let mut capped_from = None;
    let mut pending = pop.next_event_time(nu, rng);
    for (k, &t) in times.iter().enumerate() {
        while !pop.is_empty() && pop.len() <= block_cap && pending <= t {
            pop.fragment_at(pending, nu, rng)?;
            if !pop.is_empty() {
                pending = pop.next_event_time(nu, rng);
            }
        }
        if pop.len() > block_cap {
            capped_from.get_or_insert(k);
            // value frozen at the cap time
            values.push(pop.product_value(f));
            continue;
        }
        pop.advance_clock(t);
        values.push(pop.product_value(f));
    }
    Ok(ProductPath {
        values,
        capped_from,
        events: pop.events(),
        bound_violations: pop.bound_violations(),
    })
}

/// Monte Carlo means of `Z^{x,f}_t` at each of `times`.
#[allow(clippy::too_many_arguments)]
pub fn martingale_check(
    nu: &DislocationMeasure,
    x: f64,
    c: f64,
    f: &WaveGrid,
    times: &[f64],
    n_trials: u64,
    master_seed: u64,
    block_cap: usize,
) -> Result<MartingaleReport> {
    validate_headroom(x, c)?;
    if times.is_empty() {
        return Err(Error::param("times", "must be nonempty"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) || times[0] < 0.0 {
        return Err(Error::param(
            "times",
            "must be nonnegative and strictly increasing",
        ));
    }
    if n_trials == 0 {
        return Err(Error::param("n_trials", "must be at least 1"));
    }
    let paths: Vec<ProductPath> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            product_path(
                nu,
                x,
                c,
                f,
                times,
                block_cap,
                &mut trial_rng(master_seed, i),
            )
        })
        .collect::<Result<_>>()?;

    let rows = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let samples: Vec<f64> = paths.iter().map(|p| p.values[k]).collect();
            MartingaleRow {
                time: t,
                estimate: EstimateCI::from_samples(&samples),
                capped: paths
                    .iter()
                    .filter(|p| p.capped_from.is_some_and(|c| c <= k))
                    .count() as u64,
            }
        })
        .collect();
    Ok(MartingaleReport {
        rows,
        events: paths.iter().map(|p| p.events).sum(),
        bound_violations: paths.iter().map(|p| p.bound_violations).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary() -> DislocationMeasure {
        DislocationMeasure::single(1.0, &[0.5, 0.5]).unwrap()
    }

    #[test]
    fn zero_headroom_kills_both_halves() {
        let nu = binary();
        let mut pop = Population::new(0.0, 1e-300).unwrap();
        let mut rng = trial_rng(3, 0);
        let rec = pop.step(&nu, &mut rng).unwrap();
        assert_eq!((rec.created, rec.killed), (0, 2));
        assert!(pop.is_empty());
        assert_eq!(
            pop.step(&nu, &mut rng).unwrap_err(),
            Error::PopulationExtinct
        );
    }

    #[test]
    fn large_headroom_grows() {
        let nu = binary();
        let mut pop = Population::new(10.0, 1.0).unwrap();
        let mut rng = trial_rng(4, 0);
        for _ in 0..20 {
            pop.step(&nu, &mut rng).unwrap();
            assert!(pop.within_block_bound());
        }
        assert_eq!(pop.len(), 21);
    }

    #[test]
    fn child_on_barrier_is_kept() {
        let nu = binary();
        let ln2 = std::f64::consts::LN_2;
        let mut pop = Population::new(ln2, 1.0).unwrap();
        let mut rng = trial_rng(0, 0);
        // at t = 0 both children sit exactly on the barrier −ln 2
        pop.fragment_at(0.0, &nu, &mut rng).unwrap();
        assert_eq!(pop.len(), 2);
    }

    #[test]
    fn negative_headroom_is_rejected() {
        assert!(Population::new(-0.1, 1.0).is_err());
        assert!(KillingParams::new(1.0, 0.0, 10.0, 10).is_err());
        assert!(KillingParams::new(1.0, 1.0, 0.0, 10).is_err());
        assert!(KillingParams::new(1.0, 1.0, 10.0, 0).is_err());
    }

    #[test]
    fn zero_headroom_trials_always_die_at_first_event() {
        let nu = binary();
        let params = KillingParams::new(0.0, 1e-9, 100.0, 500).unwrap();
        let trials = simulate_trials(&nu, &params, 200, 1).unwrap();
        assert!(trials
            .iter()
            .all(|t| t.events == 1 && t.outcome.is_extinct()));
        // first event times are Exp(1)
        let mean = trials
            .iter()
            .map(|t| t.outcome.extinction_time().unwrap())
            .sum::<f64>()
            / 200.0;
        assert!((mean - 1.0).abs() < 4.0 / 200f64.sqrt(), "mean = {mean}");
    }

    #[test]
    fn unit_cap_stops_at_first_event() {
        let nu = binary();
        let params = KillingParams::new(3.0, 1.0, 100.0, 1).unwrap();
        for t in simulate_trials(&nu, &params, 100, 2).unwrap() {
            assert_eq!(t.events, 1);
            assert!(matches!(
                t.outcome,
                Outcome::SurvivedAtCap | Outcome::ExtinctAt(_)
            ));
            if t.outcome == Outcome::SurvivedAtCap {
                assert!(t.peak_blocks >= 1);
            }
        }
    }

    #[test]
    fn extinction_times_respect_horizon() {
        let nu = binary();
        let params = KillingParams::new(1.0, 1.0, 3.0, 500).unwrap();
        for t in simulate_trials(&nu, &params, 300, 9).unwrap() {
            if let Some(z) = t.outcome.extinction_time() {
                assert!(z <= params.horizon);
            }
            assert_eq!(t.bound_violations, 0);
        }
    }

    #[test]
    fn survival_is_possible_above_critical_speed() {
        let nu = binary();
        let params = KillingParams::new(5.0, 1.0, 50.0, 500).unwrap();
        let est = estimate_extinction(&nu, &params, 400, 5).unwrap();
        assert!(est.estimate.point < 1.0);
        assert!(est.survived_cap > 0);
    }

    #[test]
    fn empty_product_is_one() {
        let f = WaveGrid::new(0.1, vec![0.3, 0.2, 0.1]).unwrap();
        let pop = Population::from_blocks(1.0, 1.0, 2.0, vec![]).unwrap();
        assert_eq!(empirical_product_value(&pop, &f), 1.0);
        let root = Population::new(0.15, 1.0).unwrap();
        assert!((empirical_product_value(&root, &f) - 0.15).abs() < 1e-15);
        let ones = WaveGrid::new(0.5, vec![1.0; 5]).unwrap();
        let pop = Population::from_blocks(
            1.0,
            1.0,
            0.5,
            vec![
                Block {
                    log_size: -0.5,
                    created_at: 0.2,
                },
                Block {
                    log_size: -1.0,
                    created_at: 0.4,
                },
            ],
        )
        .unwrap();
        assert_eq!(empirical_product_value(&pop, &ones), 1.0);
    }

    #[test]
    fn martingale_check_validates_times() {
        let nu = binary();
        let f = WaveGrid::new(0.1, vec![0.5, 0.4]).unwrap();
        assert!(martingale_check(&nu, 1.0, 1.0, &f, &[], 10, 0, 500).is_err());
        assert!(martingale_check(&nu, 1.0, 1.0, &f, &[1.0, 1.0], 10, 0, 500).is_err());
    }
}
