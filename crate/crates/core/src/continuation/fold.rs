use serde::{Deserialize, Serialize};

use super::{Continuation, MassCurve};
use crate::error::{Error, Result};

/// Mass of the ground state at a given `λ`.
pub trait MassOracle {
    fn mass_at(&self, lambda: f64) -> Result<f64>;
}

impl<F> MassOracle for F
where
    F: Fn(f64) -> Result<f64>,
{
    fn mass_at(&self, lambda: f64) -> Result<f64> {
        self(lambda)
    }
}

/// Fresh solves warm-started from the nearest curve sample.
pub struct CurveOracle<'a> {
    pub ctx: &'a Continuation,
    pub curve: &'a MassCurve,
}

impl MassOracle for CurveOracle<'_> {
    fn mass_at(&self, lambda: f64) -> Result<f64> {
        let gs = self.ctx.solve_at(lambda, self.curve.nearest_state(lambda))?;
        if !gs.converged() {
            return Err(Error::NoConvergence {
                what: "fold refinement solve",
                iterations: gs.log.newton_steps,
                residual: gs.residual_norm,
            });
        }
        Ok(gs.mass())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub lambda_star: f64,
    pub c0: f64,
    pub bracket: f64,
    /// False when the sampled masses do not rise then fall once.
    pub unimodal: bool,
    /// Interior local maxima among the samples, by `λ`.
    pub local_maxima: Vec<f64>,
    /// Bracket width after each golden-section solve.
    pub bracket_history: Vec<f64>,
    pub solves: usize,
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

struct Refined {
    lambda: f64,
    mass: f64,
    bracket: f64,
    history: Vec<f64>,
    solves: usize,
}

fn golden_max(oracle: &dyn MassOracle, mut a: f64, mut b: f64, tol: f64) -> Result<Refined> {
    let mut history = vec![b - a];
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = oracle.mass_at(c)?;
    let mut fd = oracle.mass_at(d)?;
    let mut solves = 2;
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = oracle.mass_at(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = oracle.mass_at(d)?;
        }
        solves += 1;
        history.push(b - a);
    }
    let (lambda, mass) = if fc >= fd { (c, fc) } else { (d, fd) };
    Ok(Refined {
        lambda,
        mass,
        bracket: b - a,
        history,
        solves,
    })
}

/// Sign changes of the sampled mass differences, in increasing `λ`.
fn is_unimodal(masses_increasing_lambda: &[f64]) -> bool {
    let signs: Vec<bool> = masses_increasing_lambda
        .windows(2)
        .filter(|w| w[1] != w[0])
        .map(|w| w[1] > w[0])
        .collect();
    let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
    changes == 1 && signs.first() == Some(&true)
}

/// Locates the maximum of the mass curve by golden-section search around
/// every sampled interior maximum.
pub fn find_fold(curve: &MassCurve, oracle: &dyn MassOracle, tol_lambda: f64) -> Result<FoldResult> {
    let n = curve.points.len();
    if n < 3 {
        return Err(Error::InvalidParameter(format!(
            "fold search needs at least 3 samples, got {n}"
        )));
    }
    // samples in increasing λ
    let lam: Vec<f64> = curve.points.iter().rev().map(|p| p.lambda).collect();
    let mass: Vec<f64> = curve.points.iter().rev().map(|p| p.mass).collect();
    let imax = (0..n)
        .max_by(|&i, &j| mass[i].total_cmp(&mass[j]))
        .expect("nonempty");
    if imax == 0 || imax == n - 1 {
        return Err(Error::MaxAtEndpoint { lambda: lam[imax] });
    }
    let peaks: Vec<usize> = (1..n - 1)
        .filter(|&i| mass[i] >= mass[i - 1] && mass[i] >= mass[i + 1])
        .collect();
    let unimodal = peaks.len() == 1 && is_unimodal(&mass);
    let mut best: Option<Refined> = None;
    let mut solves = 0;
    for &i in &peaks {
        let r = golden_max(oracle, lam[i - 1], lam[i + 1], tol_lambda)?;
        solves += r.solves;
        if best.as_ref().map_or(true, |b| r.mass > b.mass) {
            best = Some(r);
        }
    }
    let best = best.expect("the global sample maximum is an interior peak");
    // the refined value can only improve on the samples
    let (lambda_star, c0) = if best.mass >= mass[imax] {
        (best.lambda, best.mass)
    } else {
        (lam[imax], mass[imax])
    };
    Ok(FoldResult {
        lambda_star,
        c0,
        bracket: best.bracket,
        unimodal,
        local_maxima: peaks.iter().map(|&i| lam[i]).collect(),
        bracket_history: best.history,
        solves,
    })
}

impl Continuation {
    pub fn find_fold(&self, curve: &MassCurve, tol_lambda: f64) -> Result<FoldResult> {
        find_fold(curve, &CurveOracle { ctx: self, curve }, tol_lambda)
    }
}
