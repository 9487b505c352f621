//! The `fracgs` command line. Each subcommand builds a [`RunConfig`] from the
//! defaults, an optional `--config` file and the flags (flags win), runs one
//! experiment and writes its files atomically with the effective config in
//! their metadata.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 non-convergence,
//! 4 model-regime violation.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use fracgs::continuation::{linear_s_path, s_homotopy, solve_normalized, Continuation, MassCurve};
use fracgs::evolution::{evolve, smooth_unit_noise, EvolveOptions};
use fracgs::groundstate::{uniqueness_probe, GroundState, GroundStateSolver};
use fracgs::io::{branch_csv, read_state, trajectory_csv, write_atomic, write_state, RunConfig};
use fracgs::linear_spectrum::{dense_eigenvalues, dense_operator_matrix, ground_eigenpair};
use fracgs::model::{action, identity_residuals, observables, residual_field, Model};
use fracgs::{Error, Field, FieldKind, ModelParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_REGIME: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Regime(_) | Error::LambdaAboveThreshold { .. } => EXIT_REGIME,
        Error::NoConvergence { .. }
        | Error::Positivity { .. }
        | Error::NondegeneracyLoss { .. }
        | Error::MaxAtEndpoint { .. }
        | Error::RootOutOfRange(_) => EXIT_NO_CONVERGENCE,
        Error::Io(_) => EXIT_FAILURE,
        _ => EXIT_USAGE,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "fracgs",
    version,
    about = "Ground states of (-Δ)^s u + |x|²u = λu + |u|^{q-2}u on a periodic Fourier grid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Spatial dimension (1 or 2).
    #[arg(long = "N")]
    dim: Option<usize>,
    /// Fractional order in (0, 1].
    #[arg(long)]
    s: Option<f64>,
    /// Nonlinearity exponent.
    #[arg(long)]
    q: Option<f64>,
    /// Frequency λ.
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// Half-width of the box [-L, L)^N.
    #[arg(long = "L")]
    half_width: Option<f64>,
    /// Grid points per axis (even).
    #[arg(long = "M")]
    points: Option<usize>,
    /// Newton tolerance on ‖F(u)‖₂.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Flat dotted-key TOML file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the summary as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug, Clone)]
struct RangeArgs {
    /// Most negative λ of the branch.
    #[arg(long, allow_hyphen_values = true)]
    lambda_min: Option<f64>,
    /// Number of branch samples.
    #[arg(long = "points")]
    samples: Option<usize>,
    /// Bracket width at which the fold search stops.
    #[arg(long)]
    fold_tol: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Lowest eigenpair of (-Δ)^s + |x|².
    Eig {
        #[command(flatten)]
        common: Common,
        /// Also report the five lowest eigenvalues of the dense matrix.
        #[arg(long)]
        dense: bool,
    },
    /// Positive ground state at one λ.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Multi-start uniqueness probe.
    ProbeUnique {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        starts: Option<usize>,
    },
    /// Mass curve λ ↦ ∫u_λ² as CSV.
    Branch {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        range: RangeArgs,
    },
    /// Maximum (λ*, c₀) of the mass curve.
    Fold {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        range: RangeArgs,
    },
    /// Ground states with prescribed mass.
    Normalized {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        range: RangeArgs,
        /// Target mass.
        #[arg(long)]
        c: f64,
    },
    /// Continuation in s from 1 down to the target.
    Homotopy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        s_target: Option<f64>,
        /// Number of s values including both ends.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Split-step evolution of a perturbed ground state, as CSV.
    Evolve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "T")]
        t_end: Option<f64>,
        /// Relative perturbation size.
        #[arg(long)]
        eps: Option<f64>,
        /// Drop the nonlinearity.
        #[arg(long)]
        linear: bool,
        /// Start from this state file instead of solving.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Identity residuals of a stored state.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        state: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Eig { common, .. }
            | Command::Solve { common }
            | Command::ProbeUnique { common, .. }
            | Command::Branch { common, .. }
            | Command::Fold { common, .. }
            | Command::Normalized { common, .. }
            | Command::Homotopy { common, .. }
            | Command::Evolve { common, .. }
            | Command::Check { common, .. } => common,
        }
    }
}

impl Common {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.dim {
            c.model.dim = v;
        }
        if let Some(v) = self.s {
            c.model.s = v;
        }
        if let Some(v) = self.q {
            c.model.q = v;
        }
        if let Some(v) = self.lambda {
            c.model.lambda = v;
        }
        if let Some(v) = self.half_width {
            c.grid.half_width = v;
        }
        if let Some(v) = self.points {
            c.grid.points = v;
        }
        if let Some(v) = self.tol {
            c.solver.tol = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.out {
            c.output.out = Some(v.clone());
        }
        Ok(c)
    }
}

impl RangeArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = self.lambda_min {
            c.branch.lambda_min = v;
        }
        if let Some(v) = self.samples {
            c.branch.points = v;
        }
        if let Some(v) = self.fold_tol {
            c.branch.fold_tol = v;
        }
    }
}

struct Outcome {
    summary: Value,
    code: i32,
    /// Primary output for stdout when no `--out` was given.
    raw: Option<Vec<u8>>,
    note: Option<String>,
}

impl Outcome {
    fn ok(summary: Value) -> Self {
        Self {
            summary,
            code: EXIT_OK,
            raw: None,
            note: None,
        }
    }

    fn failed(summary: Value, note: String) -> Self {
        Self {
            summary,
            code: EXIT_NO_CONVERGENCE,
            raw: None,
            note: Some(note),
        }
    }
}

fn metadata(command: &str, cfg: &RunConfig) -> Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg.to_json_value(),
    })
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_json(path: &Path, v: &Value) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn state_summary(gs: &GroundState) -> Value {
    json!({
        "lambda": gs.params.lambda,
        "lambda1": gs.lambda1,
        "mass": gs.mass(),
        "action": gs.action,
        "residual_norm": gs.residual_norm,
        "converged": gs.converged(),
        "observables": gs.observables,
        "identities": gs.identities,
        "spectrum": gs.spectrum,
        "log": gs.log,
    })
}

fn not_converged(gs: &GroundState) -> String {
    format!(
        "ground state did not converge: ‖F‖ = {:e} after {} Newton steps",
        gs.residual_norm, gs.log.newton_steps
    )
}

fn cmd_eig(cfg: &RunConfig, dense: bool) -> Result<Outcome, Error> {
    let grid = cfg.grid()?;
    let m = &cfg.model;
    let pair = ground_eigenpair(m.s, m.dim, &grid)?;
    let mut summary = json!({
        "command": "eig",
        "N": m.dim,
        "s": m.s,
        "L": grid.half_width(),
        "M": grid.points(),
        "lambda1": pair.value,
        "residual": pair.residual,
        "iterations": pair.iterations,
    });
    if dense {
        let op = dense_operator_matrix(&grid, m.s)?;
        let ev = dense_eigenvalues(&op.matrix);
        summary["dense_eigenvalues"] = json!(ev.iter().take(5).collect::<Vec<_>>());
        summary["dense_asymmetry"] = json!(op.asymmetry);
    }
    if let Some(out) = &cfg.output.out {
        let p = ModelParams {
            dim: m.dim,
            s: m.s,
            q: m.q,
            lambda: pair.value,
        };
        write_state(out, &pair.vector, &p, Some(metadata("eig", cfg)))?;
    }
    Ok(Outcome::ok(summary))
}

fn cmd_solve(cfg: &RunConfig) -> Result<Outcome, Error> {
    let grid = cfg.grid()?;
    let solver = GroundStateSolver::new(Model::new(cfg.params()?, &grid)?, cfg.solver_options())?;
    let gs = solver.solve()?;
    let mut summary = state_summary(&gs);
    summary["command"] = json!("solve");
    if !gs.converged() {
        return Ok(Outcome::failed(summary, not_converged(&gs)));
    }
    if let Some(out) = &cfg.output.out {
        let mut meta = metadata("solve", cfg);
        meta["summary"] = summary.clone();
        write_state(out, &gs.u, &gs.params, Some(meta))?;
    }
    Ok(Outcome::ok(summary))
}

fn cmd_probe(cfg: &RunConfig) -> Result<Outcome, Error> {
    let grid = cfg.grid()?;
    let report = uniqueness_probe(cfg.params()?, &grid, cfg.probe.starts, cfg.seed, &cfg.solver_options())?;
    let starts: Vec<Value> = report
        .starts
        .iter()
        .map(|s| {
            json!({
                "index": s.index,
                "width": s.width,
                "center": s.center,
                "converged": s.converged,
                "mass": s.mass,
                "action": s.action,
                "residual_norm": s.residual_norm,
                "peak": s.peak,
                "error": s.error,
            })
        })
        .collect();
    let summary = json!({
        "command": "probe-unique",
        "seed": report.seed,
        "n_starts": report.n_starts,
        "converged_starts": report.converged_starts,
        "max_distance": report.max_distance,
        "near_sobolev_critical": report.near_sobolev_critical,
        "starts": starts,
    });
    if let Some(out) = &cfg.output.out {
        write_json(out, &json!({"metadata": metadata("probe-unique", cfg), "report": report}))?;
    }
    if report.converged_starts == 0 {
        return Ok(Outcome::failed(summary, "no start converged".into()));
    }
    Ok(Outcome::ok(summary))
}

fn trace(cfg: &RunConfig) -> Result<(Continuation, MassCurve), Error> {
    let grid = cfg.grid()?;
    let m = &cfg.model;
    let ctx = Continuation::new(m.dim, m.s, m.q, &grid, cfg.solver_options())?;
    let curve = ctx.trace(&cfg.branch_options())?;
    Ok((ctx, curve))
}

fn curve_summary(curve: &MassCurve) -> Value {
    json!({
        "lambda1": curve.lambda1,
        "points": curve.points.len(),
        "complete": curve.complete,
        "failure": curve.failure,
        "max_mass": curve.max_mass(),
        "slope_tol": curve.slope_tol,
        "substeps": curve.substeps,
    })
}

fn cmd_branch(cfg: &RunConfig) -> Result<Outcome, Error> {
    let (_, curve) = trace(cfg)?;
    let csv = branch_csv(&curve)?;
    let mut summary = curve_summary(&curve);
    summary["command"] = json!("branch");
    let mut outcome = Outcome::ok(summary.clone());
    match &cfg.output.out {
        Some(out) => {
            write_atomic(out, &csv)?;
            let mut meta = metadata("branch", cfg);
            meta["curve"] = summary;
            write_json(&sidecar(out), &meta)?;
        }
        None => outcome.raw = Some(csv),
    }
    if !curve.complete {
        outcome.code = EXIT_NO_CONVERGENCE;
        outcome.note = Some(format!(
            "branch stopped early: {}",
            curve.failure.as_deref().unwrap_or("unknown failure")
        ));
    }
    Ok(outcome)
}

fn cmd_fold(cfg: &RunConfig) -> Result<Outcome, Error> {
    let (ctx, curve) = trace(cfg)?;
    let fold = ctx.find_fold(&curve, cfg.branch.fold_tol)?;
    let summary = json!({
        "command": "fold",
        "lambda1": curve.lambda1,
        "curve_complete": curve.complete,
        "lambda_star": fold.lambda_star,
        "c0": fold.c0,
        "bracket": fold.bracket,
        "unimodal": fold.unimodal,
        "local_maxima": fold.local_maxima,
        "solves": fold.solves,
    });
    if let Some(out) = &cfg.output.out {
        write_json(out, &json!({"metadata": metadata("fold", cfg), "fold": fold, "lambda1": curve.lambda1}))?;
    }
    Ok(Outcome::ok(summary))
}

fn cmd_normalized(cfg: &RunConfig, c: f64) -> Result<Outcome, Error> {
    let (ctx, curve) = trace(cfg)?;
    let fold = ctx.find_fold(&curve, cfg.branch.fold_tol)?;
    let sols = solve_normalized(c, &curve, &fold, &ctx)?;
    let solutions: Vec<Value> = sols
        .iter()
        .map(|gs| {
            json!({
                "lambda": gs.params.lambda,
                "mass": gs.mass(),
                "mass_rel_error": (gs.mass() - c).abs() / c,
                "action": gs.action,
                "residual_norm": gs.residual_norm,
            })
        })
        .collect();
    let summary = json!({
        "command": "normalized",
        "c": c,
        "c0": fold.c0,
        "lambda_star": fold.lambda_star,
        "solutions": solutions,
    });
    if let Some(out) = &cfg.output.out {
        let meta = metadata("normalized", cfg);
        write_json(out, &json!({"metadata": meta, "result": summary}))?;
        for (i, gs) in sols.iter().enumerate() {
            write_state(&out.with_extension(format!("sol{i}.json")), &gs.u, &gs.params, Some(meta.clone()))?;
        }
    }
    Ok(Outcome::ok(summary))
}

fn cmd_homotopy(cfg: &RunConfig) -> Result<Outcome, Error> {
    let grid = cfg.grid()?;
    let m = &cfg.model;
    let path = linear_s_path(cfg.homotopy.s_target, cfg.homotopy.steps);
    let report = s_homotopy(m.lambda, m.q, m.dim, &path, &grid, &cfg.solver_options())?;
    let summary = json!({
        "command": "homotopy",
        "lambda": report.lambda,
        "q": report.q,
        "steps": report.steps,
        "min_abs_eig": report.min_abs_eig(),
        "endpoint_distance": report.endpoint_distance,
        "halted": report.halted,
    });
    if let Some(out) = &cfg.output.out {
        write_json(out, &json!({"metadata": metadata("homotopy", cfg), "report": report}))?;
    }
    if let Err(e) = report.check() {
        return Ok(Outcome::failed(summary, e.to_string()));
    }
    Ok(Outcome::ok(summary))
}

fn cmd_evolve(cfg: &RunConfig, state: Option<&Path>) -> Result<Outcome, Error> {
    let (start, params, reference) = match state {
        Some(path) => {
            let (f, p, _) = read_state(path)?;
            let r = (f.kind() == FieldKind::Real).then(|| f.clone());
            (f, p, r)
        }
        None => {
            let grid = cfg.grid()?;
            let solver = GroundStateSolver::new(Model::new(cfg.params()?, &grid)?, cfg.solver_options())?;
            let gs = solver.solve()?;
            if !gs.converged() {
                return Ok(Outcome::failed(json!({"command": "evolve"}), not_converged(&gs)));
            }
            (gs.u.clone(), gs.params, Some(gs.u))
        }
    };
    let eps = cfg.evolve.eps;
    let psi0 = match start.as_real() {
        Ok(u) if eps > 0.0 => {
            let eta = smooth_unit_noise(start.grid(), cfg.seed);
            Field::real(
                start.grid().clone(),
                u.iter().zip(&eta).map(|(a, e)| a * (1.0 + eps * e)).collect(),
            )?
        }
        _ => start.clone(),
    };
    let opts = EvolveOptions {
        dt: cfg.evolve.dt,
        t_end: cfg.evolve.t_end,
        sample_every: cfg.evolve.sample_every,
        nonlinear: cfg.evolve.nonlinear,
        snapshot_every: None,
    };
    let traj = evolve(&psi0, &params, &opts, reference.as_ref())?;
    let u_norm = reference.as_ref().map_or(f64::NAN, Field::l2_norm);
    let crossing = |thr: f64| traj.samples.iter().find(|s| s.deviation > thr).map(|s| s.t);
    let (small, large) = (10.0 * eps * u_norm, 0.1 * u_norm);
    let summary = json!({
        "command": "evolve",
        "lambda": params.lambda,
        "eps": eps,
        "steps": traj.steps,
        "dt": traj.dt,
        "blow_up_time": traj.blow_up_time,
        "mass_drift": traj.max_mass_drift(),
        "hamiltonian_drift": traj.max_hamiltonian_drift(),
        "max_deviation": traj.max_deviation(),
        "u_norm": u_norm,
        "small_threshold": small,
        "large_threshold": large,
        "first_small_crossing": crossing(small),
        "first_large_crossing": crossing(large),
    });
    let csv = trajectory_csv(&traj.samples)?;
    let mut outcome = Outcome::ok(summary.clone());
    match &cfg.output.out {
        Some(out) => {
            write_atomic(out, &csv)?;
            let mut meta = metadata("evolve", cfg);
            meta["trajectory"] = summary;
            write_json(&sidecar(out), &meta)?;
        }
        None => outcome.raw = Some(csv),
    }
    Ok(outcome)
}

fn cmd_check(cfg: &RunConfig, state: &Path) -> Result<Outcome, Error> {
    let (u, p, _) = read_state(state)?;
    let ids = identity_residuals(&u, &p)?;
    let (_, residual_norm) = residual_field(&u, &p)?;
    let summary = json!({
        "command": "check",
        "state": state,
        "N": p.dim,
        "s": p.s,
        "q": p.q,
        "lambda": p.lambda,
        "L": u.grid().half_width(),
        "M": u.grid().points(),
        "residual_norm": residual_norm,
        "observables": observables(&u, &p)?,
        "action": action(&u, &p)?,
        "identities": ids,
    });
    if let Some(out) = &cfg.output.out {
        write_json(out, &json!({"metadata": metadata("check", cfg), "check": summary}))?;
    }
    Ok(Outcome::ok(summary))
}

fn execute(command: &Command) -> Result<Outcome, Error> {
    let mut cfg = command.common().config()?;
    match command {
        Command::Eig { dense, .. } => cmd_eig(&cfg, *dense),
        Command::Solve { .. } => cmd_solve(&cfg),
        Command::ProbeUnique { starts, .. } => {
            if let Some(n) = starts {
                cfg.probe.starts = *n;
            }
            cmd_probe(&cfg)
        }
        Command::Branch { range, .. } => {
            range.apply(&mut cfg);
            cmd_branch(&cfg)
        }
        Command::Fold { range, .. } => {
            range.apply(&mut cfg);
            cmd_fold(&cfg)
        }
        Command::Normalized { range, c, .. } => {
            range.apply(&mut cfg);
            cmd_normalized(&cfg, *c)
        }
        Command::Homotopy { s_target, steps, .. } => {
            if let Some(v) = s_target {
                cfg.homotopy.s_target = *v;
            }
            if let Some(v) = steps {
                cfg.homotopy.steps = *v;
            }
            cmd_homotopy(&cfg)
        }
        Command::Evolve {
            dt,
            t_end,
            eps,
            linear,
            state,
            ..
        } => {
            if let Some(v) = dt {
                cfg.evolve.dt = *v;
            }
            if let Some(v) = t_end {
                cfg.evolve.t_end = *v;
            }
            if let Some(v) = eps {
                cfg.evolve.eps = *v;
            }
            if *linear {
                cfg.evolve.nonlinear = false;
            }
            cmd_evolve(&cfg, state.as_deref())
        }
        Command::Check { state, .. } => cmd_check(&cfg, state),
    }
}

fn render_human(v: &Value, prefix: &str, out: &mut String) {
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                render_human(x, &key, out);
            }
        }
        Value::String(s) => out.push_str(&format!("{prefix}: {s}\n")),
        other => out.push_str(&format!("{prefix}: {other}\n")),
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, String> {
    let threads = match std::env::var("FRACGS_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| format!("FRACGS_THREADS must be a non-negative integer, got {v:?}"))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| e.to_string())
}

/// Parses `argv` (program name first), runs the subcommand and returns its
/// exit code. Summaries go to `out`, diagnostics to `err`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{text}");
            return EXIT_OK;
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return EXIT_USAGE;
        }
    };
    let json_mode = cli.command.common().json;
    match pool.install(|| execute(&cli.command)) {
        Ok(o) => {
            let mut text = String::new();
            if json_mode {
                text = serde_json::to_string_pretty(&o.summary).expect("summary serializes");
                text.push('\n');
            } else {
                render_human(&o.summary, "", &mut text);
            }
            let written = match &o.raw {
                Some(raw) => out.write_all(raw).and_then(|_| err.write_all(text.as_bytes())),
                None => out.write_all(text.as_bytes()),
            };
            if let Some(note) = &o.note {
                let _ = writeln!(err, "error: {note}");
            }
            if written.is_err() {
                return EXIT_FAILURE;
            }
            o.code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(argv, &mut stdout.lock(), &mut stderr.lock())
}
