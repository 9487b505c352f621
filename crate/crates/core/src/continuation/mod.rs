//! The ground-state branch `λ ↦ u_λ` and what is built on it: the mass
//! curve, its fold, normalized solutions, stability labels, the homotopy in
//! `s`, and the asymptotic checks at both ends of the branch.

mod asymptotics;
mod branch;
mod fold;
mod homotopy;
mod normalized;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groundstate::{GroundState, GroundStateSolver, SolverOptions};
use crate::model::Model;
use crate::spectral::Grid;

pub use asymptotics::{asymptotics_checks, bifurcation_mass, AsymptoticsReport, BifurcationSample};
pub use branch::{graded_mesh, trace_branch, BranchOptions};
pub use fold::{find_fold, CurveOracle, FoldResult, MassOracle};
pub use homotopy::{linear_s_path, s_homotopy, HomotopyReport, HomotopyStep, NONDEGENERACY_FLOOR};
pub use normalized::{solve_normalized, NORMALIZED_MASS_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
    Unknown,
}

impl Stability {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
            Stability::Marginal => "marginal",
            Stability::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Stability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stability {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stable" => Ok(Stability::Stable),
            "unstable" => Ok(Stability::Unstable),
            "marginal" => Ok(Stability::Marginal),
            "unknown" => Ok(Stability::Unknown),
            other => Err(Error::InvalidParameter(format!("unknown stability label {other:?}"))),
        }
    }
}

/// Slope rule: the branch segment next to `λ₁`, where mass falls as `λ`
/// grows, is the stable one.
pub fn classify_stability(point: &BranchPoint, slope_tol: f64) -> Stability {
    if point.slope.is_nan() {
        Stability::Unknown
    } else if point.slope < -slope_tol {
        Stability::Stable
    } else if point.slope > slope_tol {
        Stability::Unstable
    } else {
        Stability::Marginal
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub lambda: f64,
    pub mass: f64,
    pub action: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub power: f64,
    pub pohozaev_rel: f64,
    pub energy_lb_gap: f64,
    /// `dM/dλ`; NaN until the curve is complete enough to difference.
    pub slope: f64,
    pub stability: Stability,
    /// NaN when the spectrum was not computed.
    pub min_abs_eig: f64,
    pub newton_steps: usize,
    pub converged: bool,
}

impl BranchPoint {
    pub fn from_state(gs: &GroundState, tol: f64) -> Self {
        let o = gs.observables;
        Self {
            lambda: gs.params.lambda,
            mass: o.mass,
            action: gs.action,
            kinetic: o.kinetic,
            potential: o.potential,
            power: o.power,
            pohozaev_rel: gs.identities.pohozaev_rel,
            energy_lb_gap: gs.identities.energy_lb_gap,
            slope: f64::NAN,
            stability: Stability::Unknown,
            min_abs_eig: gs.spectrum.map_or(f64::NAN, |e| e.min_abs_eig),
            newton_steps: gs
                .log
                .steps_to_tolerance(tol)
                .unwrap_or(gs.log.newton_steps),
            converged: gs.converged(),
        }
    }

    /// A point carrying only `(λ, mass)`, for synthetic curves.
    pub fn synthetic(lambda: f64, mass: f64) -> Self {
        Self {
            lambda,
            mass,
            action: f64::NAN,
            kinetic: f64::NAN,
            potential: f64::NAN,
            power: f64::NAN,
            pohozaev_rel: f64::NAN,
            energy_lb_gap: f64::NAN,
            slope: f64::NAN,
            stability: Stability::Unknown,
            min_abs_eig: f64::NAN,
            newton_steps: 0,
            converged: true,
        }
    }
}

/// Branch samples ordered by decreasing `λ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MassCurve {
    pub dim: usize,
    pub s: f64,
    pub q: f64,
    pub grid: Grid,
    pub lambda1: f64,
    pub points: Vec<BranchPoint>,
    /// False when a point failed and the sweep stopped early.
    pub complete: bool,
    pub failure: Option<String>,
    pub slope_tol: f64,
    /// Intermediate solves inserted when a warm start failed.
    pub substeps: usize,
    /// Solutions at each point, kept for warm starts.
    #[serde(skip)]
    pub states: Vec<Vec<f64>>,
}

impl MassCurve {
    /// A curve of bare `(λ, mass)` samples, sorted into decreasing `λ`.
    pub fn synthetic(samples: &[(f64, f64)]) -> Self {
        let mut points: Vec<BranchPoint> = samples
            .iter()
            .map(|&(l, m)| BranchPoint::synthetic(l, m))
            .collect();
        points.sort_by(|a, b| b.lambda.total_cmp(&a.lambda));
        let max_mass = points.iter().map(|p| p.mass).fold(0.0, f64::max);
        let mut curve = Self {
            dim: 1,
            s: 1.0,
            q: 4.0,
            grid: Grid::new(1, 1.0, 8).expect("valid placeholder grid"),
            lambda1: f64::NAN,
            points,
            complete: true,
            failure: None,
            slope_tol: 1e-3 * max_mass,
            substeps: 0,
            states: Vec::new(),
        };
        curve.update_slopes();
        curve
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lambda).collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mass).collect()
    }

    pub fn max_mass(&self) -> f64 {
        self.points.iter().map(|p| p.mass).fold(0.0, f64::max)
    }

    /// State at the sample closest to `lambda`, if states were kept.
    pub fn nearest_state(&self, lambda: f64) -> Option<&[f64]> {
        self.points
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1.lambda - lambda)
                    .abs()
                    .total_cmp(&(b.1.lambda - lambda).abs())
            })
            .and_then(|(i, _)| self.states.get(i))
            .map(Vec::as_slice)
    }

    /// Three-point slopes on the nonuniform mesh, then labels.
    pub fn update_slopes(&mut self) {
        let n = self.points.len();
        let x = self.lambdas();
        let f = self.masses();
        for i in 0..n {
            let slope = if n < 3 {
                f64::NAN
            } else {
                let c = i.clamp(1, n - 2);
                lagrange_slope(
                    [x[c - 1], x[c], x[c + 1]],
                    [f[c - 1], f[c], f[c + 1]],
                    x[i],
                )
            };
            self.points[i].slope = slope;
            self.points[i].stability = classify_stability(&self.points[i], self.slope_tol);
        }
    }
}

/// Derivative at `at` of the quadratic through three points.
pub fn lagrange_slope(x: [f64; 3], f: [f64; 3], at: f64) -> f64 {
    let [x0, x1, x2] = x;
    let [f0, f1, f2] = f;
    f0 * ((at - x1) + (at - x2)) / ((x0 - x1) * (x0 - x2))
        + f1 * ((at - x0) + (at - x2)) / ((x1 - x0) * (x1 - x2))
        + f2 * ((at - x0) + (at - x1)) / ((x2 - x0) * (x2 - x1))
}

/// Solver context for one `(N, s, q, grid)` family with `λ` free.
#[derive(Clone, Debug)]
pub struct Continuation {
    model: Model,
    opts: SolverOptions,
    lambda1: f64,
}

const MAX_BISECT_DEPTH: usize = 6;

impl Continuation {
    pub fn new(dim: usize, s: f64, q: f64, grid: &Grid, opts: SolverOptions) -> Result<Self> {
        let params = crate::model::ModelParams::new(dim, s, q, 0.0)?;
        let model = Model::new(params, grid)?;
        if !params.sobolev_subcritical() {
            return Err(Error::Regime(format!(
                "q = {q} is not below the Sobolev exponent {}",
                params.critical_exponents().1
            )));
        }
        let lambda1 = model.operator().lambda1()?;
        Ok(Self {
            model,
            opts,
            lambda1,
        })
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn grid(&self) -> &Grid {
        self.model.grid()
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn solver(&self, lambda: f64) -> Result<GroundStateSolver> {
        GroundStateSolver::new(self.model.at_lambda(lambda), self.opts.clone())
    }

    /// Warm solve at `lambda` from `warm`, falling back to a cold solve when
    /// Newton does not converge from the warm start.
    pub fn solve_at(&self, lambda: f64, warm: Option<&[f64]>) -> Result<GroundState> {
        let solver = self.solver(lambda)?;
        if let Some(w) = warm {
            match solver.continue_from(w) {
                Ok(gs) if gs.converged() => return Ok(gs),
                Ok(_) | Err(Error::Positivity { .. }) | Err(Error::NoConvergence { .. }) => {
                    log::debug!("warm start failed at lambda = {lambda}; cold solve")
                }
                Err(e) => return Err(e),
            }
        }
        solver.solve()
    }

    /// Moves a converged state at `from` to `to`, bisecting the step when a
    /// warm start fails. Returns the state and the number of inserted solves.
    pub fn advance(&self, state: &[f64], from: f64, to: f64) -> Result<(GroundState, usize)> {
        self.advance_depth(state, from, to, 0)
    }

    fn advance_depth(
        &self,
        state: &[f64],
        from: f64,
        to: f64,
        depth: usize,
    ) -> Result<(GroundState, usize)> {
        let solver = self.solver(to)?;
        let attempt = solver.continue_from(state);
        match attempt {
            Ok(gs) if gs.converged() => return Ok((gs, 0)),
            Ok(_) | Err(Error::Positivity { .. }) | Err(Error::NoConvergence { .. })
                if depth < MAX_BISECT_DEPTH =>
            {
                let mid = 0.5 * (from + to);
                let (gm, a) = self.advance_depth(state, from, mid, depth + 1)?;
                let (gt, b) = self.advance_depth(gm.values(), mid, to, depth + 1)?;
                Ok((gt, a + b + 1))
            }
            Ok(gs) => Ok((gs, 0)),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_rule_examples() {
        let mut p = BranchPoint::synthetic(0.0, 1.0);
        p.slope = -0.5;
        assert_eq!(classify_stability(&p, 1e-3), Stability::Stable);
        p.slope = 0.5;
        assert_eq!(classify_stability(&p, 1e-3), Stability::Unstable);
        p.slope = 1e-5;
        assert_eq!(classify_stability(&p, 1e-3), Stability::Marginal);
        p.slope = f64::NAN;
        assert_eq!(classify_stability(&p, 1e-3), Stability::Unknown);
    }

    #[test]
    fn labels_round_trip_through_strings() {
        for s in [
            Stability::Stable,
            Stability::Unstable,
            Stability::Marginal,
            Stability::Unknown,
        ] {
            assert_eq!(s.as_str().parse::<Stability>().unwrap(), s);
        }
        assert!("wobbly".parse::<Stability>().is_err());
    }

    #[test]
    fn lagrange_slope_is_exact_for_quadratics() {
        let f = |x: f64| 3.0 - (x + 2.0) * (x + 2.0);
        let xs = [-0.3, -1.1, -2.9];
        let fs = xs.map(f);
        for at in xs {
            assert!((lagrange_slope(xs, fs, at) - (-2.0 * (at + 2.0))).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_curve_slopes_and_labels() {
        let samples: Vec<(f64, f64)> = (0..21)
            .map(|i| {
                let l = -4.0 + 3.5 * i as f64 / 20.0;
                (l, 3.0 - (l + 2.0) * (l + 2.0))
            })
            .collect();
        let curve = MassCurve::synthetic(&samples);
        assert!(curve.points.windows(2).all(|w| w[0].lambda > w[1].lambda));
        for p in &curve.points {
            assert!((p.slope + 2.0 * (p.lambda + 2.0)).abs() < 1e-10);
            let expect = if p.lambda > -2.0 + 1e-9 {
                Stability::Stable
            } else if p.lambda < -2.0 - 1e-9 {
                Stability::Unstable
            } else {
                Stability::Marginal
            };
            assert_eq!(p.stability, expect, "{}", p.lambda);
        }
    }
}
