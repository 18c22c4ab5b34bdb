use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fragwave::fkpp::{
    cross_validate, phase_scan, solve_wave, McBudget, SolveOptions, DEFAULT_RESIDUAL_TOL,
};
use fragwave::levy::{scale_function, DEFAULT_SCALE_DX};
use fragwave::simulator::{
    simulate_trials, ExtinctionEstimate, KillingParams, DEFAULT_BLOCK_CAP, DEFAULT_HORIZON,
};
use fragwave::verify::{run_all, Budget};
use serde::Serialize;
use serde_json::json;

use crate::manifest::{EmbeddedSpec, RunManifest, MANIFEST_NAME};
use crate::output::OutputDir;
use crate::spec_file::{self, LoadedSpec};

const DEFAULT_TRIALS: u64 = 1000;
const GRID_TOLERANCE: f64 = fragwave::verify::GRID_TOLERANCE;

#[derive(Debug, Parser)]
#[command(
    name = "fragwave",
    version,
    about = "Killed fragmentation processes and their travelling waves"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON model file.
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// Master seed, decimal or 0x-prefixed hex.
    #[arg(long, global = true, value_parser = parse_seed, default_value = "0xF4A6")]
    pub seed: u64,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for CSV files and the manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Critical exponent and speed, plus a table of Φ, Φ′ and c_p.
    Critical(CriticalArgs),
    /// Monte Carlo extinction trials at one (x, c).
    Simulate(SimulateArgs),
    /// Travelling wave, its residual and the tagged scale function at speed c.
    Wave(WaveArgs),
    /// Extinction estimates over a range of barrier slopes.
    Scan(ScanArgs),
    /// Acceptance battery on the built-in reference measures.
    Verify(VerifyArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CriticalArgs {
    #[arg(long, default_value_t = -0.9, allow_negative_numbers = true)]
    pub p_min: f64,
    /// Defaults to three times the critical exponent.
    #[arg(long)]
    pub p_max: Option<f64>,
    #[arg(long, default_value_t = 121)]
    pub points: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct McArgs {
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub block_cap: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub x: f64,
    #[arg(long)]
    pub c: f64,
    #[command(flatten)]
    pub mc: McArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WaveArgs {
    #[arg(long)]
    pub c: f64,
    #[arg(long)]
    pub dx: Option<f64>,
    #[arg(long)]
    pub x_max: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_RESIDUAL_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = 5.0)]
    pub scale_x_max: f64,
    #[arg(long, default_value_t = DEFAULT_SCALE_DX)]
    pub scale_dx: f64,
    /// Comma-separated points at which to compare with Monte Carlo.
    #[arg(long, value_delimiter = ',')]
    pub validate: Vec<f64>,
    #[command(flatten)]
    pub mc: McArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScanArgs {
    #[arg(long)]
    pub x: f64,
    #[arg(long)]
    pub c_min: f64,
    #[arg(long)]
    pub c_max: f64,
    #[arg(long, default_value_t = 16)]
    pub steps: usize,
    #[command(flatten)]
    pub mc: McArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetArg {
    Quick,
    Full,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = BudgetArg::Full)]
    pub budget: BudgetArg,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    AcceptanceFailed,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::AcceptanceFailed => 3,
        }
    }
}

/// 2 for bracketing, bisection and residual failures, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<fragwave::Error>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

fn parse_seed(s: &str) -> Result<u64, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|e| format!("invalid seed {s:?}: {e}"))
}

pub fn run(cli: Cli, argv: Vec<String>) -> anyhow::Result<Status> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure worker pool")?;
    }
    if let Command::Replay(r) = &cli.command {
        return replay(&r.manifest, &cli.common);
    }
    let spec = match &cli.common.spec {
        Some(path) => Some(spec_file::load(path)?),
        None => None,
    };
    execute(&cli.common, &cli.command, spec, argv)
}

fn replay(path: &std::path::Path, common: &Common) -> anyhow::Result<Status> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a run manifest", path.display()))?;
    let recorded = Cli::try_parse_from(&manifest.argv).context("manifest argv no longer parses")?;
    let spec = manifest
        .spec
        .as_ref()
        .map(|s| spec_file::parse(&s.origin, &s.text))
        .transpose()?;
    let mut replayed = recorded.common.clone();
    replayed.out = common.out.clone();
    execute(&replayed, &recorded.command, spec, manifest.argv)
}

fn execute(
    common: &Common,
    command: &Command,
    spec: Option<LoadedSpec>,
    argv: Vec<String>,
) -> anyhow::Result<Status> {
    let start = Instant::now();
    let mut out = OutputDir::create(&common.out)?;
    let result = dispatch(common, command, spec.as_ref(), &mut out);
    match result {
        Ok((params, status)) => {
            let manifest = RunManifest {
                subcommand: subcommand_name(command).to_string(),
                params,
                argv,
                seed: common.seed,
                threads: rayon::current_num_threads(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                wall_time_s: start.elapsed().as_secs_f64(),
                status: match status {
                    Status::Success => "ok",
                    Status::AcceptanceFailed => "acceptance_failed",
                }
                .to_string(),
                outputs: out.names(),
                spec: spec.map(|s| EmbeddedSpec {
                    origin: s.origin,
                    text: s.text,
                }),
            };
            if let Err(e) = out.json(MANIFEST_NAME, &manifest) {
                out.discard();
                return Err(e);
            }
            eprintln!(
                "wrote {} files to {}",
                out.names().len(),
                out.dir().display()
            );
            Ok(status)
        }
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

fn subcommand_name(command: &Command) -> &'static str {
    match command {
        Command::Critical(_) => "critical",
        Command::Simulate(_) => "simulate",
        Command::Wave(_) => "wave",
        Command::Scan(_) => "scan",
        Command::Verify(_) => "verify",
        Command::Replay(_) => "replay",
    }
}

fn require_spec(spec: Option<&LoadedSpec>) -> anyhow::Result<&LoadedSpec> {
    spec.ok_or_else(|| anyhow::anyhow!("--spec is required for this subcommand"))
}

fn dispatch(
    common: &Common,
    command: &Command,
    spec: Option<&LoadedSpec>,
    out: &mut OutputDir,
) -> anyhow::Result<(serde_json::Value, Status)> {
    match command {
        Command::Critical(a) => critical(require_spec(spec)?, a, out),
        Command::Simulate(a) => simulate(require_spec(spec)?, common.seed, a, out),
        Command::Wave(a) => wave(require_spec(spec)?, common.seed, a, out),
        Command::Scan(a) => scan(require_spec(spec)?, common.seed, a, out),
        Command::Verify(a) => verify(common.seed, a, out),
        Command::Replay(_) => bail!("nested replay is not supported"),
    }
}

struct Mc {
    trials: u64,
    horizon: f64,
    block_cap: usize,
}

fn resolve_mc(spec: &LoadedSpec, a: &McArgs) -> Mc {
    let d = &spec.file.defaults;
    Mc {
        trials: a.trials.or(d.trials).unwrap_or(DEFAULT_TRIALS),
        horizon: a.horizon.or(d.horizon).unwrap_or(DEFAULT_HORIZON),
        block_cap: a.block_cap.or(d.block_cap).unwrap_or(DEFAULT_BLOCK_CAP),
    }
}

fn critical(
    spec: &LoadedSpec,
    a: &CriticalArgs,
    out: &mut OutputDir,
) -> anyhow::Result<(serde_json::Value, Status)> {
    let nu = &spec.measure;
    let p_bar = nu.critical_exponent()?;
    let c_bar = nu.critical_speed()?;
    let p_max = a.p_max.unwrap_or(3.0 * p_bar);
    if !(a.p_min > -1.0 && p_max > a.p_min && a.points >= 2) {
        bail!("need -1 < p_min < p_max and at least two points");
    }
    let rows = (0..a.points)
        .map(|k| {
            let p = a.p_min + (p_max - a.p_min) * k as f64 / (a.points - 1) as f64;
            Ok((p, nu.phi(p)?, nu.phi_prime(p)?, nu.c_of_p(p)?))
        })
        .collect::<fragwave::Result<Vec<_>>>()?;
    out.csv("critical.csv", &["p", "phi", "phi_prime", "c_p"], rows)?;

    println!("model            {}", spec.file.name);
    println!("critical p̄       {p_bar:.12}");
    println!("critical c_p̄     {c_bar:.12}");
    println!("killing rate     {}", nu.killing_rate());
    let params = json!({
        "p_min": a.p_min,
        "p_max": p_max,
        "points": a.points,
        "critical_exponent": p_bar,
        "critical_speed": c_bar,
        "killing_rate": nu.killing_rate(),
    });
    Ok((params, Status::Success))
}

#[derive(Serialize)]
struct TrialRow {
    trial_id: u64,
    outcome: &'static str,
    extinction_time: Option<f64>,
    peak_blocks: usize,
    events: u64,
}

#[derive(Serialize)]
struct EstimateRow {
    phi_hat: f64,
    se: f64,
    ci_low: f64,
    ci_high: f64,
    n_trials: u64,
    extinct: u64,
    survived_horizon: u64,
    survived_cap: u64,
    ambiguous: u64,
    events: u64,
    bound_violations: u64,
}

const ESTIMATE_HEADER: [&str; 11] = [
    "phi_hat",
    "se",
    "ci_low",
    "ci_high",
    "n_trials",
    "extinct",
    "survived_horizon",
    "survived_cap",
    "ambiguous",
    "events",
    "bound_violations",
];

impl From<&ExtinctionEstimate> for EstimateRow {
    fn from(e: &ExtinctionEstimate) -> Self {
        Self {
            phi_hat: e.estimate.point,
            se: e.estimate.std_error,
            ci_low: e.estimate.ci_low,
            ci_high: e.estimate.ci_high,
            n_trials: e.estimate.n_trials,
            extinct: e.extinct,
            survived_horizon: e.survived_horizon,
            survived_cap: e.survived_cap,
            ambiguous: e.ambiguous,
            events: e.events,
            bound_violations: e.bound_violations,
        }
    }
}

fn simulate(
    spec: &LoadedSpec,
    seed: u64,
    a: &SimulateArgs,
    out: &mut OutputDir,
) -> anyhow::Result<(serde_json::Value, Status)> {
    let mc = resolve_mc(spec, &a.mc);
    let params = KillingParams::new(a.x, a.c, mc.horizon, mc.block_cap)?;
    let trials = simulate_trials(&spec.measure, &params, mc.trials, seed)?;
    let estimate = ExtinctionEstimate::from_trials(&trials, mc.block_cap);
    out.csv(
        "trials.csv",
        &[
            "trial_id",
            "outcome",
            "extinction_time",
            "peak_blocks",
            "events",
        ],
        trials.iter().enumerate().map(|(i, t)| TrialRow {
            trial_id: i as u64,
            outcome: t.outcome.label(),
            extinction_time: t.outcome.extinction_time(),
            peak_blocks: t.peak_blocks,
            events: t.events,
        }),
    )?;
    out.csv(
        "estimate.csv",
        &ESTIMATE_HEADER,
        [EstimateRow::from(&estimate)],
    )?;

    let e = &estimate.estimate;
    println!(
        "φ̂({}) = {:.5} ± {:.5} (99% CI [{:.5}, {:.5}], {} trials, {} capped, {} at horizon)",
        a.x,
        e.point,
        e.std_error,
        e.ci_low,
        e.ci_high,
        e.n_trials,
        estimate.survived_cap,
        estimate.survived_horizon
    );
    if estimate.bound_violations > 0 {
        bail!(
            "block-count bound violated {} times",
            estimate.bound_violations
        );
    }
    let params = json!({
        "x": a.x,
        "c": a.c,
        "trials": mc.trials,
        "horizon": mc.horizon,
        "block_cap": mc.block_cap,
    });
    Ok((params, Status::Success))
}

#[derive(Serialize)]
struct CrossCsvRow {
    x: f64,
    f_solver: f64,
    phi_mc: f64,
    se: f64,
    pass: bool,
}

fn wave(
    spec: &LoadedSpec,
    seed: u64,
    a: &WaveArgs,
    out: &mut OutputDir,
) -> anyhow::Result<(serde_json::Value, Status)> {
    let nu = &spec.measure;
    let d = &spec.file.defaults;
    let mut opts = SolveOptions::for_measure(nu);
    if let Some(x_max) = a.x_max.or(d.x_max) {
        opts.x_max = x_max;
        opts.dx = fragwave::fkpp::default_dx(nu, x_max);
    }
    if let Some(dx) = a.dx.or(d.dx) {
        opts.dx = dx;
    }
    opts.tol = a.tol;

    let mc = resolve_mc(spec, &a.mc);
    let (solution, cross) = if a.validate.is_empty() {
        (solve_wave(nu, a.c, &opts)?, None)
    } else {
        let budget = McBudget {
            trials: mc.trials,
            horizon: mc.horizon,
            block_cap: mc.block_cap,
            seed,
        };
        let cv = cross_validate(nu, a.c, &a.validate, &budget, &opts, GRID_TOLERANCE)?;
        (cv.solution.clone(), Some(cv))
    };
    let wave = &solution.wave;
    out.csv(
        "wave.csv",
        &["x", "f"],
        (0..wave.len()).map(|i| (wave.node(i), wave.values()[i])),
    )?;
    let res = &solution.residual;
    out.csv(
        "residual.csv",
        &["x", "residual"],
        res.xs.iter().zip(&res.residuals),
    )?;
    let table = scale_function(nu, a.c, a.scale_x_max, a.scale_dx)?;
    out.csv("scale.csv", &["x", "W"], table.nodes())?;

    println!("model            {}", spec.file.name);
    println!("speed c          {}", a.c);
    println!("f(0+)            {:.8}", solution.theta);
    println!("tail reached at  x = {:.6}", wave.x_max());
    println!(
        "max |residual|   {:.3e} at x = {:.6} ({} kink nodes excluded)",
        res.max_abs_residual,
        res.argmax,
        res.excluded.len()
    );
    let mut all_pass = true;
    if let Some(cv) = &cross {
        out.csv(
            "crossval.csv",
            &["x", "f_solver", "phi_mc", "se", "pass"],
            cv.rows.iter().map(|r| CrossCsvRow {
                x: r.x,
                f_solver: r.f_solver,
                phi_mc: r.phi_mc.estimate.point,
                se: r.phi_mc.estimate.std_error,
                pass: r.pass,
            }),
        )?;
        for r in &cv.rows {
            println!(
                "x = {:<6} f = {:.5}  φ̂ = {:.5} ± {:.5}  {}",
                r.x,
                r.f_solver,
                r.phi_mc.estimate.point,
                r.phi_mc.estimate.std_error,
                if r.pass { "pass" } else { "FAIL" }
            );
        }
        all_pass = cv.all_pass();
    }
    let params = json!({
        "c": a.c,
        "dx": opts.dx,
        "x_max": opts.x_max,
        "tol": opts.tol,
        "plateau_tol": opts.shoot.plateau_tol,
        "tail_tol": opts.shoot.tail_tol,
        "scale_x_max": a.scale_x_max,
        "scale_dx": a.scale_dx,
        "validate": a.validate,
        "trials": mc.trials,
        "horizon": mc.horizon,
        "block_cap": mc.block_cap,
        "theta": solution.theta,
        "max_abs_residual": res.max_abs_residual,
        "cross_validation_pass": all_pass,
    });
    Ok((params, Status::Success))
}

fn scan(
    spec: &LoadedSpec,
    seed: u64,
    a: &ScanArgs,
    out: &mut OutputDir,
) -> anyhow::Result<(serde_json::Value, Status)> {
    if !(a.c_max > a.c_min && a.c_min > 0.0 && a.steps >= 2) {
        bail!("need 0 < c_min < c_max and at least two steps");
    }
    let mc = resolve_mc(spec, &a.mc);
    let cs: Vec<f64> = (0..a.steps)
        .map(|k| a.c_min + (a.c_max - a.c_min) * k as f64 / (a.steps - 1) as f64)
        .collect();
    let budget = McBudget {
        trials: mc.trials,
        horizon: mc.horizon,
        block_cap: mc.block_cap,
        seed,
    };
    let result = phase_scan(&spec.measure, a.x, &cs, &budget)?;
    let mut header = vec!["c"];
    header.extend(ESTIMATE_HEADER);
    out.csv(
        "scan.csv",
        &header,
        result.rows.iter().map(|r| {
            let e = EstimateRow::from(&r.estimate);
            (
                r.c,
                e.phi_hat,
                e.se,
                e.ci_low,
                e.ci_high,
                e.n_trials,
                e.extinct,
                e.survived_horizon,
                e.survived_cap,
                e.ambiguous,
                e.events,
                e.bound_violations,
            )
        }),
    )?;
    let critical = spec.measure.critical_speed()?;
    for r in &result.rows {
        let e = &r.estimate.estimate;
        let marker = if r.c > critical {
            ""
        } else {
            "  (c ≤ c_p̄)"
        };
        println!(
            "c = {:.5}  φ̂ = {:.4} ± {:.4}{marker}",
            r.c, e.point, e.std_error
        );
    }
    println!("critical c_p̄ = {critical:.6}");
    println!(
        "nonincreasing in c within 3·SE: {}",
        result.nonincreasing_within_error()
    );
    let params = json!({
        "x": a.x,
        "c_min": a.c_min,
        "c_max": a.c_max,
        "steps": a.steps,
        "trials": mc.trials,
        "horizon": mc.horizon,
        "block_cap": mc.block_cap,
        "critical_speed": critical,
    });
    Ok((params, Status::Success))
}

#[derive(Serialize)]
struct VerifyRow<'a> {
    id: u8,
    name: &'a str,
    passed: bool,
    elapsed_s: f64,
    time_limit_s: u64,
    detail: &'a str,
}

fn verify(
    seed: u64,
    a: &VerifyArgs,
    out: &mut OutputDir,
) -> anyhow::Result<(serde_json::Value, Status)> {
    let budget = match a.budget {
        BudgetArg::Quick => Budget::Quick,
        BudgetArg::Full => Budget::Full,
    };
    let report = run_all(budget, seed);
    for o in &report.outcomes {
        println!("{o}");
    }
    out.csv(
        "verify.csv",
        &[
            "id",
            "name",
            "passed",
            "elapsed_s",
            "time_limit_s",
            "detail",
        ],
        report.outcomes.iter().map(|o| VerifyRow {
            id: o.id,
            name: o.name,
            passed: o.passed,
            elapsed_s: o.elapsed.as_secs_f64(),
            time_limit_s: o.time_limit.as_secs(),
            detail: &o.detail,
        }),
    )?;
    let status = if report.all_pass() {
        Status::Success
    } else {
        Status::AcceptanceFailed
    };
    Ok((json!({ "budget": a.budget }), status))
}
