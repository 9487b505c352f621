use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groundstate::{aligned_distance, GroundState, GroundStateSolver, SolverOptions};
use crate::model::{Model, ModelParams};
use crate::spectral::Grid;

/// Below this the Jacobian counts as degenerate.
pub const NONDEGENERACY_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomotopyStep {
    pub s: f64,
    pub lambda1: f64,
    pub mass: f64,
    pub residual_norm: f64,
    pub newton_steps: usize,
    pub min_eig: f64,
    pub min_abs_eig: f64,
    pub morse_index: u8,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HomotopyReport {
    pub lambda: f64,
    pub q: f64,
    pub dim: usize,
    pub steps: Vec<HomotopyStep>,
    /// Aligned L² distance between the path endpoint and a cold solve at the
    /// last `s`; NaN if the path halted.
    pub endpoint_distance: f64,
    /// `(s, min |eig|)` where the monitor tripped.
    pub halted: Option<(f64, f64)>,
    #[serde(skip)]
    pub endpoint: Option<GroundState>,
}

impl HomotopyReport {
    pub fn min_abs_eig(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.min_abs_eig)
            .fold(f64::INFINITY, f64::min)
    }

    /// `Err` with the offending `s` when the monitor tripped.
    pub fn check(&self) -> Result<()> {
        match self.halted {
            Some((s, min_abs_eig)) => Err(Error::NondegeneracyLoss { s, min_abs_eig }),
            None => Ok(()),
        }
    }
}

/// Continues the ground state from `s = 1` along `s_path` with warm starts,
/// watching the Jacobian for loss of nondegeneracy.
pub fn s_homotopy(
    lambda: f64,
    q: f64,
    dim: usize,
    s_path: &[f64],
    grid: &Grid,
    opts: &SolverOptions,
) -> Result<HomotopyReport> {
    if s_path.is_empty() || s_path[0] != 1.0 {
        return Err(Error::InvalidParameter("the s path must start at 1".into()));
    }
    if s_path.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter("the s path must decrease strictly".into()));
    }
    let opts = SolverOptions {
        spectrum: true,
        ..opts.clone()
    };
    let mut solvers = Vec::with_capacity(s_path.len());
    for &s in s_path {
        let params = ModelParams::new(dim, s, q, lambda)?;
        solvers.push(GroundStateSolver::new(Model::new(params, grid)?, opts.clone())?);
    }
    let mut steps = Vec::with_capacity(s_path.len());
    let mut current: Option<GroundState> = None;
    let mut halted = None;
    for (solver, &s) in solvers.iter().zip(s_path) {
        let gs = match &current {
            None => solver.solve()?,
            Some(prev) => {
                let warm = solver.continue_from(prev.values())?;
                if warm.converged() {
                    warm
                } else {
                    return Err(Error::NoConvergence {
                        what: "s-homotopy step",
                        iterations: warm.log.newton_steps,
                        residual: warm.residual_norm,
                    });
                }
            }
        };
        let edges = gs.spectrum.ok_or(Error::NoConvergence {
            what: "Jacobian spectrum along the s path",
            iterations: 0,
            residual: f64::NAN,
        })?;
        steps.push(HomotopyStep {
            s,
            lambda1: solver.lambda1(),
            mass: gs.mass(),
            residual_norm: gs.residual_norm,
            newton_steps: gs.log.newton_steps,
            min_eig: edges.min_eig,
            min_abs_eig: edges.min_abs_eig,
            morse_index: edges.morse_index,
        });
        current = Some(gs);
        if edges.min_abs_eig < NONDEGENERACY_FLOOR {
            halted = Some((s, edges.min_abs_eig));
            break;
        }
    }
    let endpoint_distance = match (&current, halted) {
        (Some(end), None) => {
            let direct = solvers.last().expect("nonempty path").solve()?;
            aligned_distance(grid, end.values(), direct.values())
        }
        _ => f64::NAN,
    };
    Ok(HomotopyReport {
        lambda,
        q,
        dim,
        steps,
        endpoint_distance,
        halted,
        endpoint: current,
    })
}

/// `n` evenly spaced values from 1 down to `s_target`.
pub fn linear_s_path(s_target: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 1.0 + (s_target - 1.0) * i as f64 / (n - 1) as f64)
        .collect()
}
