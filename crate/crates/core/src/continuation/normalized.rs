use super::{Continuation, FoldResult, MassCurve};
use crate::error::{Error, Result};
use crate::groundstate::GroundState;

/// Relative mass tolerance for normalized solutions and for `c ≈ c₀`.
pub const NORMALIZED_MASS_TOL: f64 = 1e-6;
const MAX_BISECTIONS: usize = 80;

/// Ground states with `∫u² = c`: two below the fold mass, the fold state
/// at it, none above it. Solutions are ordered by increasing `λ`.
pub fn solve_normalized(
    c: f64,
    curve: &MassCurve,
    fold: &FoldResult,
    ctx: &Continuation,
) -> Result<Vec<GroundState>> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("target mass must be positive, got {c}")));
    }
    if (c - fold.c0).abs() <= NORMALIZED_MASS_TOL * fold.c0 {
        let warm = curve.nearest_state(fold.lambda_star);
        return Ok(vec![ctx.solve_at(fold.lambda_star, warm)?]);
    }
    if c > fold.c0 {
        return Ok(Vec::new());
    }
    let (lower, upper) = rayon::join(
        || side_root(c, curve, fold, ctx, Side::Below),
        || side_root(c, curve, fold, ctx, Side::Above),
    );
    Ok(vec![lower?, upper?])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Below,
    Above,
}

/// Bisection on the side of `λ*` given by `side`, starting from the sampled
/// crossing nearest the fold.
fn side_root(
    c: f64,
    curve: &MassCurve,
    fold: &FoldResult,
    ctx: &Continuation,
    side: Side,
) -> Result<GroundState> {
    // samples on this side, ordered moving away from λ*
    let mut samples: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter(|p| match side {
            Side::Below => p.lambda < fold.lambda_star,
            Side::Above => p.lambda > fold.lambda_star,
        })
        .map(|p| (p.lambda, p.mass))
        .collect();
    if side == Side::Below {
        samples.reverse();
    } else {
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let mut inner = (fold.lambda_star, fold.c0);
    let mut bracket = None;
    for &(l, m) in &samples {
        if m <= c {
            bracket = Some((inner, (l, m)));
            break;
        }
        inner = (l, m);
    }
    let Some(((mut a, _), (mut b, _))) = bracket else {
        let hint = match side {
            Side::Below => "lower lambda_min",
            Side::Above => "reduce delta0",
        };
        return Err(Error::RootOutOfRange(format!(
            "mass stays above {c} on the {} side of lambda* = {}; {hint}",
            if side == Side::Below { "lower" } else { "upper" },
            fold.lambda_star
        )));
    };
    // invariant: mass(a) > c >= mass(b)
    let mut best: Option<GroundState> = None;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (a + b);
        let gs = ctx.solve_at(mid, curve.nearest_state(mid))?;
        if !gs.converged() {
            return Err(Error::NoConvergence {
                what: "normalized-solution bisection",
                iterations: gs.log.newton_steps,
                residual: gs.residual_norm,
            });
        }
        let m = gs.mass();
        let done = (m - c).abs() <= NORMALIZED_MASS_TOL * c;
        if m > c {
            a = mid;
        } else {
            b = mid;
        }
        best = Some(gs);
        if done {
            break;
        }
    }
    let gs = best.expect("at least one bisection step");
    if (gs.mass() - c).abs() > NORMALIZED_MASS_TOL * c {
        return Err(Error::NoConvergence {
            what: "normalized-solution bisection",
            iterations: MAX_BISECTIONS,
            residual: (gs.mass() - c).abs() / c,
        });
    }
    Ok(gs)
}
