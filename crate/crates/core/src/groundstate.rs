//! Positive ground states at fixed `λ < λ₁`.
//!
//! A solve has three stages. Preconditioned descent on the Nehari quotient
//! `(K + P - λ·mass) / Q^{2/q}` finds the shape, a scalar rescale puts the
//! profile on the Nehari manifold, and damped Newton drives `‖F‖₂` to the
//! requested tolerance. Newton is the accuracy authority; the first two
//! stages only have to land it in the basin of the positive solution.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, minres};
use crate::linear_spectrum::{jacobian_edges, SpectrumEdges};
use crate::model::{IdentityReport, Model, ModelParams, Observables};
use crate::spectral::{Field, Grid};

/// Margin below `λ₁` required of every solve.
pub const THRESHOLD_MARGIN: f64 = 1e-6;
const POSITIVITY_FLOOR: f64 = 1e-10;
const DENSE_NEWTON_CAP: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearSolver {
    /// Dense LU when `N = 1` and `M <= 512`, MINRES otherwise.
    Auto,
    Dense,
    Krylov,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Newton stops once `‖F(u)‖₂ <= tol`.
    pub tol: f64,
    pub max_newton: usize,
    pub quotient_max_iter: usize,
    /// Stage 1 stops once the relative quotient decrease falls below this.
    pub quotient_rel_decrease: f64,
    pub linear_solver: LinearSolver,
    /// Compute the Jacobian spectrum edges at the solution.
    pub spectrum: bool,
    /// Restarts from tighter Gaussians after a sign-changing result.
    pub max_restarts: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_newton: 50,
            quotient_max_iter: 2000,
            quotient_rel_decrease: 1e-12,
            linear_solver: LinearSolver::Auto,
            spectrum: true,
            max_restarts: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverLog {
    pub quotient_iterations: usize,
    pub quotient_value: f64,
    pub newton_steps: usize,
    /// `‖F‖₂` before each Newton step and after the last one.
    pub residual_history: Vec<f64>,
    /// Largest `‖F‖_{k+1} / ‖F‖_k²` over the last three Newton steps taken
    /// above tolerance.
    pub quadratic_constant: Option<f64>,
    pub restarts: usize,
    pub converged: bool,
    pub spectral_tail: f64,
    pub boundary_ratio: f64,
    pub near_sobolev_critical: bool,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub u: Field,
    pub params: ModelParams,
    pub lambda1: f64,
    pub observables: Observables,
    pub action: f64,
    pub identities: IdentityReport,
    pub residual_norm: f64,
    pub spectrum: Option<SpectrumEdges>,
    pub log: SolverLog,
}

impl SolverLog {
    /// Newton steps taken before `‖F‖₂` first met `tol`.
    pub fn steps_to_tolerance(&self, tol: f64) -> Option<usize> {
        self.residual_history.iter().position(|&r| r <= tol)
    }
}

impl GroundState {
    pub fn mass(&self) -> f64 {
        self.observables.mass
    }

    pub fn converged(&self) -> bool {
        self.log.converged
    }

    pub fn values(&self) -> &[f64] {
        self.u.as_real().expect("ground states are real")
    }
}

/// A model with its threshold checked, ready to solve.
#[derive(Clone, Debug)]
pub struct GroundStateSolver {
    model: Model,
    opts: SolverOptions,
    lambda1: f64,
}

impl GroundStateSolver {
    pub fn new(model: Model, opts: SolverOptions) -> Result<Self> {
        let p = *model.params();
        if !p.sobolev_subcritical() {
            return Err(Error::Regime(format!(
                "q = {} is not below the Sobolev exponent {}",
                p.q,
                p.critical_exponents().1
            )));
        }
        if !(opts.tol > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        let lambda1 = model.operator().lambda1()?;
        if p.lambda >= lambda1 - THRESHOLD_MARGIN {
            return Err(Error::LambdaAboveThreshold {
                lambda: p.lambda,
                lambda1,
            });
        }
        Ok(Self {
            model,
            opts,
            lambda1,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    /// Cold solve from the default Gaussian `e^{-|x|²/2}`.
    pub fn solve(&self) -> Result<GroundState> {
        let mut restarts = 0;
        let mut width = 1.0;
        loop {
            let start = gaussian(self.model.grid(), width, &[]);
            match self.solve_staged(&start, true) {
                Err(Error::Positivity { .. }) if restarts < self.opts.max_restarts => {
                    restarts += 1;
                    width *= 0.5;
                    log::info!("sign-changing result, restart {restarts} with width {width}");
                }
                Err(Error::Positivity { .. }) => return Err(Error::Positivity { restarts }),
                other => {
                    return other.map(|mut gs| {
                        gs.log.restarts = restarts;
                        gs
                    })
                }
            }
        }
    }

    /// Full three-stage solve from an arbitrary nonzero start.
    pub fn solve_from(&self, start: &[f64]) -> Result<GroundState> {
        self.solve_staged(start, true)
    }

    /// Rescale and Newton only; for warm starts from a nearby solution.
    pub fn continue_from(&self, warm: &[f64]) -> Result<GroundState> {
        self.solve_staged(warm, false)
    }

    fn solve_staged(&self, start: &[f64], descend: bool) -> Result<GroundState> {
        let grid = self.model.grid();
        if start.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                found: start.len(),
            });
        }
        let n0 = grid.norm(start);
        if !(n0 > 0.0) || !n0.is_finite() {
            return Err(Error::InvalidParameter("start must be nonzero and finite".into()));
        }
        let mut w: Vec<f64> = start.iter().map(|x| x / n0).collect();
        let mut log = SolverLog::default();
        if descend {
            let (iters, value) = self.minimize_quotient(&mut w)?;
            log.quotient_iterations = iters;
            log.quotient_value = value;
        }
        let u = self.nehari_rescale(&w);
        let u = self.newton(u, &mut log)?;
        self.finish(u, log)
    }

    fn quotient_parts(&self, w: &[f64]) -> (Vec<f64>, f64, f64) {
        let lambda = self.model.params().lambda;
        let aw = self.model.operator().apply_shifted(w, -lambda);
        let grid = self.model.grid();
        let e = grid.inner(&aw, w);
        let q = grid.integrate(w.iter().map(|x| x.abs().powf(self.model.params().q)));
        (aw, e, q)
    }

    fn quotient(&self, e: f64, q: f64) -> f64 {
        e / q.powf(2.0 / self.model.params().q)
    }

    /// Preconditioned projected descent on the unit sphere. Returns the
    /// iteration count and the final quotient.
    fn minimize_quotient(&self, w: &mut Vec<f64>) -> Result<(usize, f64)> {
        let grid = self.model.grid().clone();
        let params = *self.model.params();
        let op = self.model.operator();
        let precond_shift = 1.0 - params.lambda;
        let cap = (20 * w.len()).max(2000);
        let (mut aw, mut e, mut qw) = self.quotient_parts(w);
        let mut r = self.quotient(e, qw);
        let mut step = 1.0_f64;
        for it in 1..=self.opts.quotient_max_iter {
            // gradient of R on the h-weighted inner product, up to a positive factor
            let nl = self.model.nonlinearity(w);
            let ratio = e / qw;
            let g: Vec<f64> = aw.iter().zip(&nl).map(|(a, n)| a - ratio * n).collect();
            let solve = conjugate_gradient(
                |v| op.apply_shifted(v, precond_shift),
                &g,
                None,
                1e-8,
                cap,
            )?;
            let mut d: Vec<f64> = solve.x.iter().map(|x| -x).collect();
            let along = grid.inner(&d, w);
            d.iter_mut().zip(w.iter()).for_each(|(d, x)| *d -= along * x);
            let slope = grid.inner(&g, &d) * 2.0 / qw.powf(2.0 / params.q);
            if !(slope < 0.0) {
                return Ok((it - 1, r));
            }
            let mut t = (2.0 * step).min(4.0);
            let accepted = loop {
                let mut trial: Vec<f64> = w.iter().zip(&d).map(|(x, d)| x + t * d).collect();
                let nt = grid.norm(&trial);
                trial.iter_mut().for_each(|x| *x /= nt);
                let (at, et, qt) = self.quotient_parts(&trial);
                let rt = self.quotient(et, qt);
                if rt <= r + 1e-4 * t * slope / nt {
                    break Some((trial, at, et, qt, rt));
                }
                t *= 0.5;
                if t < 1e-12 {
                    break None;
                }
            };
            let Some((trial, at, et, qt, rt)) = accepted else {
                return Ok((it - 1, r));
            };
            step = t;
            let decrease = r - rt;
            *w = trial;
            aw = at;
            e = et;
            qw = qt;
            r = rt;
            if decrease < self.opts.quotient_rel_decrease * r.abs() {
                return Ok((it, r));
            }
        }
        Ok((self.opts.quotient_max_iter, r))
    }

    /// `c·w` with `c^{q-2} = (K_w + P_w - λ·mass_w) / Q_w`, computed from the
    /// normalized profile so the amplitude never under- or overflows.
    fn nehari_rescale(&self, w: &[f64]) -> Vec<f64> {
        let n = self.model.grid().norm(w);
        let unit: Vec<f64> = w.iter().map(|x| x / n).collect();
        let (_, e, q) = self.quotient_parts(&unit);
        let c = (e / q).powf(1.0 / (self.model.params().q - 2.0));
        unit.iter().map(|x| c * x).collect()
    }

    fn use_dense(&self) -> bool {
        let g = self.model.grid();
        let fits = g.dim() == 1 && g.points() <= DENSE_NEWTON_CAP;
        match self.opts.linear_solver {
            LinearSolver::Auto => fits,
            LinearSolver::Dense => fits,
            LinearSolver::Krylov => false,
        }
    }

    fn newton_direction(&self, u: &[f64], f: &[f64]) -> Result<Vec<f64>> {
        let lambda = self.model.params().lambda;
        let weight = self.model.jacobian_weight(u);
        if self.use_dense() {
            let mut j: DMatrix<f64> = self.model.operator().dense()?.clone();
            for (i, w) in weight.iter().enumerate() {
                j[(i, i)] -= lambda + w;
            }
            let rhs = DVector::from_iterator(f.len(), f.iter().map(|x| -x));
            return j
                .lu()
                .solve(&rhs)
                .map(|x| x.as_slice().to_vec())
                .ok_or(Error::NoConvergence {
                    what: "Newton (singular Jacobian)",
                    iterations: 0,
                    residual: f64::NAN,
                });
        }
        let rhs: Vec<f64> = f.iter().map(|x| -x).collect();
        let out = minres(
            |v| self.model.jacobian_apply(u, v),
            &rhs,
            1e-12,
            (10 * u.len()).max(5000),
        )
        .or_else(|e| match e {
            // an inexact direction is still usable; the line search decides
            Error::NoConvergence { residual, .. } if residual < 1e-6 => {
                minres(|v| self.model.jacobian_apply(u, v), &rhs, 1e-6, 5 * u.len())
            }
            other => Err(other),
        })?;
        Ok(out.x)
    }

    fn newton(&self, mut u: Vec<f64>, log: &mut SolverLog) -> Result<Vec<f64>> {
        let (_, mut fnorm) = self.model.residual(&u);
        log.residual_history.push(fnorm);
        for _ in 0..self.opts.max_newton {
            let polishing = fnorm <= self.opts.tol;
            let (f, _) = self.model.residual(&u);
            let delta = match self.newton_direction(&u, &f) {
                Ok(d) => d,
                Err(e) => {
                    if !polishing {
                        log.warnings.push(format!("Newton linear solve failed: {e}"));
                    }
                    break;
                }
            };
            // one undamped polish step past tolerance, kept only if it helps
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let trial: Vec<f64> = u.iter().zip(&delta).map(|(x, d)| x + alpha * d).collect();
                let (_, tn) = self.model.residual(&trial);
                let good = if polishing {
                    tn < fnorm
                } else {
                    tn <= (1.0 - 1e-4 * alpha) * fnorm
                };
                if tn.is_finite() && good {
                    accepted = Some((trial, tn));
                    break;
                }
                if polishing {
                    break;
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((trial, tn)) => {
                    u = trial;
                    fnorm = tn;
                    log.newton_steps += 1;
                    log.residual_history.push(fnorm);
                }
                None => {
                    if !polishing {
                        log.warnings.push(format!("Newton stagnated at ‖F‖ = {fnorm:e}"));
                    }
                    break;
                }
            }
            if polishing {
                break;
            }
        }
        log.converged = fnorm <= self.opts.tol;
        log.quadratic_constant = quadratic_constant(&log.residual_history, self.opts.tol);
        Ok(u)
    }

    fn finish(&self, mut u: Vec<f64>, mut log: SolverLog) -> Result<GroundState> {
        let grid = self.model.grid().clone();
        let (imax, _) = u
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("grid is nonempty");
        if u[imax] < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
        }
        let umax = u[imax].abs();
        if !(umax > 0.0) {
            return Err(Error::NoConvergence {
                what: "ground state (collapsed to zero)",
                iterations: log.newton_steps,
                residual: log.residual_history.last().copied().unwrap_or(f64::NAN),
            });
        }
        if u.iter().any(|&x| x.abs() > POSITIVITY_FLOOR * umax && x <= 0.0) {
            return Err(Error::Positivity {
                restarts: log.restarts,
            });
        }
        let params = *self.model.params();
        let (_, residual_norm) = self.model.residual(&u);
        let observables = self.model.observables(&u);
        let identities = self.model.identities_from(&observables);
        let spectrum = if self.opts.spectrum {
            match jacobian_edges(&self.model, &u) {
                Ok(e) => Some(e),
                Err(e) => {
                    log.warnings.push(format!("spectrum edges unavailable: {e}"));
                    None
                }
            }
        } else {
            None
        };
        log.spectral_tail = self.model.operator().ops().tail_fraction(&u);
        let field = Field::real(grid, u)?;
        log.boundary_ratio = field.boundary_ratio();
        log.near_sobolev_critical = params.near_sobolev_critical();
        if !log.converged {
            log.warnings.push(format!(
                "not converged: ‖F‖ = {residual_norm:e} > tol = {:e}",
                self.opts.tol
            ));
        }
        if identities.pohozaev_rel > 1e-6 {
            log.warnings.push(format!(
                "Pohozaev residual {:e} exceeds 1e-6 (discretization error)",
                identities.pohozaev_rel
            ));
        }
        if log.spectral_tail > 1e-8 {
            log.warnings
                .push(format!("spectral tail {:e}: grid under-resolved", log.spectral_tail));
        }
        if log.boundary_ratio > 1e-8 {
            log.warnings
                .push(format!("boundary ratio {:e}: box too small", log.boundary_ratio));
        }
        if log.near_sobolev_critical {
            log.warnings
                .push("q within 0.2 of the Sobolev exponent".into());
        }
        if let Some(edges) = spectrum {
            if edges.min_eig >= 0.0 {
                log.warnings
                    .push("Jacobian has no negative eigenvalue".into());
            }
        }
        Ok(GroundState {
            u: field,
            params,
            lambda1: self.lambda1,
            action: self.model.action_from(&observables),
            observables,
            identities,
            residual_norm,
            spectrum,
            log,
        })
    }
}

fn quadratic_constant(history: &[f64], tol: f64) -> Option<f64> {
    let pairs: Vec<f64> = history
        .windows(2)
        .filter(|w| w[0] > tol)
        .map(|w| w[1] / (w[0] * w[0]))
        .collect();
    let tail = &pairs[pairs.len().saturating_sub(3)..];
    tail.iter().cloned().reduce(f64::max)
}

/// `exp(-|x - center|² / (2 width²))`; an empty center means the origin.
pub fn gaussian(grid: &Grid, width: f64, center: &[f64]) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            let x = grid.coords(i);
            let r2: f64 = x
                .iter()
                .enumerate()
                .map(|(k, xk)| {
                    let c = center.get(k).copied().unwrap_or(0.0);
                    (xk - c) * (xk - c)
                })
                .sum();
            (-r2 / (2.0 * width * width)).exp()
        })
        .collect()
}

pub fn solve_ground_state(
    params: ModelParams,
    grid: &Grid,
    opts: &SolverOptions,
) -> Result<GroundState> {
    GroundStateSolver::new(Model::new(params, grid)?, opts.clone())?.solve()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeStart {
    pub index: usize,
    pub width: f64,
    pub center: Vec<f64>,
    pub converged: bool,
    pub residual_norm: f64,
    pub mass: f64,
    pub action: f64,
    /// Node coordinates of the maximum.
    pub peak: Vec<f64>,
    pub log: Option<SolverLog>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub seed: u64,
    pub n_starts: usize,
    pub converged_starts: usize,
    /// Largest `min(‖u_i - u_j‖, ‖u_i + u_j‖)` over converged pairs.
    pub max_distance: f64,
    pub near_sobolev_critical: bool,
    pub starts: Vec<ProbeStart>,
}

fn argmax(u: &[f64]) -> usize {
    u.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i)
}

/// `min(‖a - b‖₂, ‖a + b‖₂)`.
pub fn aligned_distance(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let minus: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let plus: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
    grid.norm(&minus).min(grid.norm(&plus))
}

/// Solves from `n_starts` seeded Gaussian bumps and compares the results.
pub fn uniqueness_probe(
    params: ModelParams,
    grid: &Grid,
    n_starts: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<UniquenessReport> {
    if n_starts == 0 {
        return Err(Error::InvalidParameter("n_starts must be at least 1".into()));
    }
    let opts = SolverOptions {
        spectrum: false,
        ..opts.clone()
    };
    let solver = GroundStateSolver::new(Model::new(params, grid)?, opts)?;
    // prime the cached dense operator before fanning out
    if solver.use_dense() {
        solver.model.operator().dense()?;
    }
    let quarter = grid.half_width() / 4.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(f64, Vec<f64>)> = (0..n_starts)
        .map(|_| {
            let width = rng.random_range(0.3..=3.0);
            let center = (0..grid.dim())
                .map(|_| rng.random_range(-quarter..=quarter))
                .collect();
            (width, center)
        })
        .collect();
    let results: Vec<(ProbeStart, Option<Vec<f64>>)> = draws
        .into_par_iter()
        .enumerate()
        .map(|(index, (width, center))| {
            let start = gaussian(grid, width, &center);
            match solver.solve_from(&start) {
                Ok(gs) => {
                    let ok = gs.converged();
                    let values = gs.values().to_vec();
                    let peak = grid.coords(argmax(&values));
                    (
                        ProbeStart {
                            index,
                            width,
                            center,
                            converged: ok,
                            residual_norm: gs.residual_norm,
                            mass: gs.mass(),
                            action: gs.action,
                            peak,
                            log: Some(gs.log),
                            error: None,
                        },
                        ok.then_some(values),
                    )
                }
                Err(e) => (
                    ProbeStart {
                        index,
                        width,
                        center,
                        converged: false,
                        residual_norm: f64::NAN,
                        mass: f64::NAN,
                        action: f64::NAN,
                        peak: Vec::new(),
                        log: None,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();
    let solutions: Vec<&Vec<f64>> = results.iter().filter_map(|(_, u)| u.as_ref()).collect();
    let mut max_distance = 0.0_f64;
    for i in 0..solutions.len() {
        for j in i + 1..solutions.len() {
            max_distance = max_distance.max(aligned_distance(grid, solutions[i], solutions[j]));
        }
    }
    Ok(UniquenessReport {
        seed,
        n_starts,
        converged_starts: solutions.len(),
        max_distance,
        near_sobolev_critical: params.near_sobolev_critical(),
        starts: results.into_iter().map(|(s, _)| s).collect(),
    })
}
