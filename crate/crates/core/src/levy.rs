//! The tagged fragment and its spectrally negative Lévy process.
//!
//! Following the block that contains a size-biased point, `ξ(t) = −ln|B(t)|`
//! is a killed compound Poisson subordinator: an atom `w_i δ_{s_i}` produces
//! jumps of size `−ln s_{i,n}` at rate `w_i s_{i,n}`, and the lost mass
//! `1 − Σ_n s_{i,n}` is a killing rate. The process `X(t) = ct − ξ(t)` has
//! Laplace exponent `ψ(β) = cβ − Φ(β)`.
//!
//! Its scale function `W` (with `∫ e^{−βx} W(x) dx = 1/ψ(β)`) solves the
//! renewal equation
//!
//! ```text
//! c W(x) = 1 + ∫_0^x H(x − y) W(y) dy,   H(z) = k + Σ_{jumps y > z} rate
//! ```
//!
//! which is integrated here by product integration: `W` piecewise linear on
//! the grid and the step function `H` integrated exactly against it.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::dislocation::DislocationMeasure;
use crate::error::{Error, Result};
use crate::estimate::EstimateCI;
use crate::stream::trial_rng;

/// Default grid step of scale tables.
pub const DEFAULT_SCALE_DX: f64 = 1.0 / 512.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpAtom {
    /// Jump size `y = −ln s > 0`.
    pub size: f64,
    pub rate: f64,
}

/// Law of the killed subordinator `ξ = −ln|B_tagged|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubordinatorLaw {
    /// Jump atoms sorted by size, equal sizes merged.
    pub jumps: Vec<JumpAtom>,
    pub killing_rate: f64,
}

impl SubordinatorLaw {
    pub fn total_jump_rate(&self) -> f64 {
        self.jumps.iter().map(|j| j.rate).sum()
    }

    /// Total rate of jumps and killing.
    pub fn event_rate(&self) -> f64 {
        self.total_jump_rate() + self.killing_rate
    }

    /// `k + Σ rate·(1 − e^{−p·size})`; equals Φ(p).
    pub fn laplace_exponent(&self, p: f64) -> f64 {
        self.killing_rate
            + self
                .jumps
                .iter()
                .map(|j| j.rate * -(-p * j.size).exp_m1())
                .sum::<f64>()
    }

    /// `H(z) = k + Σ_{size > z} rate`, right-continuous in `z`.
    pub fn tail_rate(&self, z: f64) -> f64 {
        self.killing_rate
            + self
                .jumps
                .iter()
                .filter(|j| j.size > z)
                .map(|j| j.rate)
                .sum::<f64>()
    }
}

/// Size-biased tagged-fragment law of `ν`.
pub fn tagged_law(nu: &DislocationMeasure) -> SubordinatorLaw {
    let mut jumps: Vec<JumpAtom> = nu
        .atoms()
        .iter()
        .flat_map(|a| {
            a.fragments.sizes().iter().map(move |&s| JumpAtom {
                size: -s.ln(),
                rate: a.weight * s,
            })
        })
        .collect();
    jumps.sort_by(|a, b| a.size.total_cmp(&b.size));
    let mut merged: Vec<JumpAtom> = Vec::with_capacity(jumps.len());
    for j in jumps {
        match merged.last_mut() {
            Some(last) if (last.size - j.size).abs() <= 1e-12 * j.size => last.rate += j.rate,
            _ => merged.push(j),
        }
    }
    SubordinatorLaw {
        jumps: merged,
        killing_rate: nu.killing_rate(),
    }
}

/// `ψ(β) = cβ − Φ(β)` for `β ≥ 0`.
pub fn laplace_exponent_psi(nu: &DislocationMeasure, c: f64, beta: f64) -> Result<f64> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::param(
            "beta",
            format!("must be finite and ≥ 0 (got {beta})"),
        ));
    }
    Ok(c * beta - nu.phi(beta)?)
}

/// Largest root `Ψ(0)` of the convex function `ψ` on `[0, ∞)`.
pub fn largest_root_psi(nu: &DislocationMeasure, c: f64) -> Result<f64> {
    check_drift(c)?;
    let psi = |b: f64| c * b - nu.phi_unchecked(b);
    let mut hi = 1.0;
    while psi(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::NotBracketed("ψ stays nonpositive".into()));
        }
    }
    let (lo, _) = crate::roots::bisect_predicate(|b| psi(b) > 0.0, 0.0, hi, 1e-14, 200);
    Ok(lo)
}

fn check_drift(c: f64) -> Result<()> {
    if c.is_finite() && c > 0.0 {
        Ok(())
    } else {
        Err(Error::param(
            "c",
            format!("must be finite and > 0 (got {c})"),
        ))
    }
}

/// Scale function `W` on the grid `0, dx, 2dx, …`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleTable {
    pub c: f64,
    pub dx: f64,
    pub values: Vec<f64>,
}

impl ScaleTable {
    pub fn x_max(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dx
    }

    /// `W(x)` by linear interpolation; `x` must lie in `[0, x_max]`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let x_max = self.x_max();
        if !(x >= 0.0 && x <= x_max * (1.0 + 1e-12)) {
            return Err(Error::OutsideTable { x, x_max });
        }
        let u = x / self.dx;
        let j = (u.floor() as usize).min(self.values.len() - 2);
        let t = u - j as f64;
        Ok(self.values[j] * (1.0 - t) + self.values[j + 1] * t)
    }

    /// `P_x(τ⁺_{x+h} < τ⁻_0) = W(x) / W(x+h)`, killing counted as failure.
    pub fn two_sided_exit(&self, x: f64, h: f64) -> Result<f64> {
        if !(h >= 0.0) {
            return Err(Error::param("h", format!("must be ≥ 0 (got {h})")));
        }
        if h == 0.0 {
            self.eval(x)?;
            return Ok(1.0);
        }
        Ok(self.eval(x)? / self.eval(x + h)?)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(i, &w)| (i as f64 * self.dx, w))
    }
}

/// Solves the renewal equation for `W` on `[0, x_max]`.
pub fn scale_function(nu: &DislocationMeasure, c: f64, x_max: f64, dx: f64) -> Result<ScaleTable> {
    check_drift(c)?;
    if !(dx.is_finite() && dx > 0.0) {
        return Err(Error::param("dx", format!("must be > 0 (got {dx})")));
    }
    if !(x_max.is_finite() && x_max >= 0.0) {
        return Err(Error::param(
            "x_max",
            format!("must be finite and ≥ 0 (got {x_max})"),
        ));
    }
    let law = tagged_law(nu);
    let n = ((x_max / dx) * (1.0 - 1e-12)).ceil().max(1.0) as usize;

    // Weights of W_j and W_{j+1} over the cell whose lag is ℓ = i − j.
    let k = law.killing_rate;
    let (mut a, mut b) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    for lag in 1..=n {
        let (mut wa, mut wb) = (0.5 * k, 0.5 * k);
        for j in &law.jumps {
            let u0 = (lag as f64 - j.size / dx).clamp(0.0, 1.0);
            wa += j.rate * 0.5 * (1.0 - u0) * (1.0 - u0);
            wb += j.rate * 0.5 * (1.0 - u0 * u0);
        }
        a[lag] = dx * wa;
        b[lag] = dx * wb;
    }
    let diag = c - b[1];
    if diag <= 0.0 {
        return Err(Error::param(
            "dx",
            format!("step {dx} too coarse for drift {c}"),
        ));
    }

    let mut w = Vec::with_capacity(n + 1);
    w.push(1.0 / c);
    for i in 1..=n {
        let mut acc = 1.0 + a[i] * w[0];
        for (m, wm) in w.iter().enumerate().skip(1) {
            acc += (a[i - m] + b[i - m + 1]) * wm;
        }
        w.push(acc / diag);
    }
    Ok(ScaleTable { c, dx, values: w })
}

/// `W(x)/W(x+h)` from a table with the default step.
pub fn two_sided_exit(nu: &DislocationMeasure, c: f64, x: f64, h: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::param("x", format!("must be ≥ 0 (got {x})")));
    }
    let table = scale_function(nu, c, x + h.max(0.0), DEFAULT_SCALE_DX)?;
    table.two_sided_exit(x, h)
}

/// Whether one tagged path started at `x` reaches `x + h` before going
/// strictly below 0 or being killed.
fn tagged_path_reaches<R: Rng + ?Sized>(
    law: &SubordinatorLaw,
    cumulative: &[f64],
    c: f64,
    x: f64,
    h: f64,
    rng: &mut R,
) -> bool {
    let target = x + h;
    let total = law.event_rate();
    let mut pos = x;
    loop {
        if pos >= target {
            return true;
        }
        let wait: f64 = rng.sample(Exp1);
        let wait = wait / total;
        if pos + c * wait >= target {
            return true;
        }
        pos += c * wait;
        let u = rng.random::<f64>() * total;
        let idx = cumulative.partition_point(|&s| s <= u);
        if idx >= law.jumps.len() {
            return false;
        }
        pos -= law.jumps[idx].size;
        if pos < 0.0 {
            return false;
        }
    }
}

/// Monte Carlo estimate of `P_x(τ⁺_{x+h} < τ⁻_0)` for the tagged process.
pub fn mc_first_passage(
    nu: &DislocationMeasure,
    c: f64,
    x: f64,
    h: f64,
    n_trials: u64,
    master_seed: u64,
) -> Result<EstimateCI> {
    check_drift(c)?;
    if !(x >= 0.0 && h >= 0.0) {
        return Err(Error::param("x, h", "must both be ≥ 0"));
    }
    if n_trials == 0 {
        return Err(Error::param("n_trials", "must be at least 1"));
    }
    let law = tagged_law(nu);
    let cumulative: Vec<f64> = law
        .jumps
        .iter()
        .scan(0.0, |acc, j| {
            *acc += j.rate;
            Some(*acc)
        })
        .collect();
    let hits: u64 = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(master_seed, i);
            u64::from(tagged_path_reaches(&law, &cumulative, c, x, h, &mut rng))
        })
        .sum();
    Ok(EstimateCI::from_proportion(hits, n_trials))
}

/// Comparison of `∫ e^{−βx} W(x) dx` with `1/ψ(β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaplaceCheck {
    pub beta: f64,
    pub numeric: f64,
    pub exact: f64,
    pub rel_err: f64,
}

/// Trapezoid transform of the table plus the tail `W(X)e^{−βX}/(β − Ψ(0))`.
pub fn laplace_spot_check(
    nu: &DislocationMeasure,
    table: &ScaleTable,
    beta: f64,
) -> Result<LaplaceCheck> {
    let growth = largest_root_psi(nu, table.c)?;
    if !(beta > growth) {
        return Err(Error::param("beta", format!("must exceed Ψ(0) = {growth}")));
    }
    let n = table.values.len();
    let integrand = |i: usize| (-beta * i as f64 * table.dx).exp() * table.values[i];
    let mut integral = 0.5 * (integrand(0) + integrand(n - 1));
    integral += (1..n - 1).map(integrand).sum::<f64>();
    integral *= table.dx;
    integral += integrand(n - 1) / (beta - growth);
    let exact = 1.0 / laplace_exponent_psi(nu, table.c, beta)?;
    Ok(LaplaceCheck {
        beta,
        numeric: integral,
        exact,
        rel_err: (integral - exact).abs() / exact.abs(),
    })
}
