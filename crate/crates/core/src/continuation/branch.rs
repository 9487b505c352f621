use serde::{Deserialize, Serialize};

use super::{BranchPoint, Continuation, MassCurve};
use crate::error::{Error, Result};
use crate::groundstate::SolverOptions;
use crate::spectral::Grid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchOptions {
    pub lambda_min: f64,
    pub points: usize,
    /// Distance below `λ₁` of the first point.
    pub delta0: f64,
    /// Share of points in the decade `λ₁ - λ ∈ [δ₀, 10δ₀)`.
    pub near_fraction: f64,
    /// `slope_tol = slope_tol_rel · max mass`.
    pub slope_tol_rel: f64,
    pub solver: SolverOptions,
}

impl Default for BranchOptions {
    fn default() -> Self {
        Self {
            lambda_min: -40.0,
            points: 200,
            delta0: 1e-2,
            near_fraction: 0.4,
            slope_tol_rel: 1e-3,
            solver: SolverOptions::default(),
        }
    }
}

/// Decreasing `λ` values: geometric in `λ₁ - λ` over the first decade below
/// `λ₁ - δ₀`, then geometric out to `λ_min`.
pub fn graded_mesh(
    lambda1: f64,
    lambda_min: f64,
    points: usize,
    delta0: f64,
    near_fraction: f64,
) -> Result<Vec<f64>> {
    if points < 20 {
        return Err(Error::InvalidParameter(format!(
            "a branch needs at least 20 points, got {points}"
        )));
    }
    if !(delta0 > 0.0) || !(near_fraction > 0.0 && near_fraction < 1.0) {
        return Err(Error::InvalidParameter("bad mesh grading".into()));
    }
    let far_end = lambda1 - lambda_min;
    if !(far_end > 10.0 * delta0) || !(lambda_min < lambda1 - 0.1) {
        return Err(Error::InvalidParameter(format!(
            "lambda_min = {lambda_min} must lie below lambda_1 - max(0.1, 10 delta0) = {}",
            lambda1 - (10.0 * delta0).max(0.1)
        )));
    }
    let near = ((points as f64 * near_fraction).round() as usize).clamp(1, points - 2);
    let far = points - near;
    let mut deltas: Vec<f64> = (0..near)
        .map(|k| delta0 * 10f64.powf(k as f64 / near as f64))
        .collect();
    let d1 = 10.0 * delta0;
    deltas.extend((0..far).map(|j| d1 * (far_end / d1).powf(j as f64 / (far - 1) as f64)));
    let mut mesh: Vec<f64> = deltas.iter().map(|d| lambda1 - d).collect();
    *mesh.last_mut().expect("nonempty mesh") = lambda_min;
    Ok(mesh)
}

/// Sweeps the branch from `λ₁ - δ₀` down to `λ_min` with warm starts.
pub fn trace_branch(
    dim: usize,
    s: f64,
    q: f64,
    grid: &Grid,
    opts: &BranchOptions,
) -> Result<MassCurve> {
    let ctx = Continuation::new(dim, s, q, grid, opts.solver.clone())?;
    ctx.trace(opts)
}

impl Continuation {
    pub fn trace(&self, opts: &BranchOptions) -> Result<MassCurve> {
        let mesh = graded_mesh(
            self.lambda1(),
            opts.lambda_min,
            opts.points,
            opts.delta0,
            opts.near_fraction,
        )?;
        let params = self.model().params();
        let tol = self.options().tol;
        let mut curve = MassCurve {
            dim: params.dim,
            s: params.s,
            q: params.q,
            grid: self.grid().clone(),
            lambda1: self.lambda1(),
            points: Vec::with_capacity(mesh.len()),
            complete: true,
            failure: None,
            slope_tol: f64::NAN,
            substeps: 0,
            states: Vec::with_capacity(mesh.len()),
        };
        for (i, &lambda) in mesh.iter().enumerate() {
            let result = if i == 0 {
                // Newton from ε·φ₁: the rescale of φ₁ lands exactly on the
                // bifurcation amplitude
                let phi = self.model().operator().ground_pair()?.vector.as_real()?.to_vec();
                self.solve_at(lambda, Some(&phi)).map(|gs| (gs, 0))
            } else {
                self.advance(&curve.states[i - 1], mesh[i - 1], lambda)
            };
            match result {
                Ok((gs, inserted)) if gs.converged() => {
                    curve.substeps += inserted;
                    curve.points.push(BranchPoint::from_state(&gs, tol));
                    curve.states.push(gs.values().to_vec());
                }
                Ok((gs, _)) => {
                    curve.complete = false;
                    curve.failure = Some(format!(
                        "no convergence at lambda = {lambda}: residual {:e}",
                        gs.residual_norm
                    ));
                    break;
                }
                Err(e) => {
                    curve.complete = false;
                    curve.failure = Some(format!("lambda = {lambda}: {e}"));
                    break;
                }
            }
            log::debug!("branch point {i}: lambda = {lambda}");
        }
        curve.slope_tol = opts.slope_tol_rel * curve.max_mass();
        curve.update_slopes();
        Ok(curve)
    }
}
