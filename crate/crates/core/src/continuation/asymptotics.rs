use serde::{Deserialize, Serialize};

use super::MassCurve;
use crate::error::Result;
use crate::linear_spectrum::EigenPair;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BifurcationSample {
    pub lambda: f64,
    pub delta: f64,
    pub mass: f64,
    pub predicted: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    /// `∫ |φ₁|^q`.
    pub phi1_power: f64,
    /// The three samples nearest `λ₁`.
    pub bifurcation: Vec<BifurcationSample>,
    /// Mass strictly decreasing in `λ ↓` over the most negative quarter.
    pub decay_strict: bool,
    /// `λ` of the first sample where the decay fails.
    pub decay_violation: Option<f64>,
    pub min_mass: f64,
    pub max_mass: f64,
    /// Smallest `Φ + (1+k)(λ/2)·mass` over samples with `λ < 0`; NaN when
    /// there are none or `k` is undefined.
    pub min_energy_gap: f64,
    pub energy_ok: bool,
}

/// `((λ₁ - λ) / ∫|φ₁|^q)^{2/(q-2)}` for an L²-normalized `φ₁`.
pub fn bifurcation_mass(lambda1: f64, lambda: f64, phi1_power: f64, q: f64) -> f64 {
    ((lambda1 - lambda) / phi1_power).powf(2.0 / (q - 2.0))
}

pub fn asymptotics_checks(curve: &MassCurve, phi1: &EigenPair) -> Result<AsymptoticsReport> {
    let grid = phi1.vector.grid();
    let phi = phi1.vector.as_real()?;
    let phi1_power = grid.integrate(phi.iter().map(|x| x.abs().powf(curve.q)));
    let bifurcation = curve
        .points
        .iter()
        .take(3)
        .map(|p| {
            let predicted = bifurcation_mass(phi1.value, p.lambda, phi1_power, curve.q);
            BifurcationSample {
                lambda: p.lambda,
                delta: phi1.value - p.lambda,
                mass: p.mass,
                predicted,
                rel_error: (p.mass - predicted).abs() / predicted,
            }
        })
        .collect();
    let n = curve.points.len();
    let tail_len = n.div_ceil(4);
    let tail = &curve.points[n - tail_len..];
    let decay_violation = tail
        .windows(2)
        .find(|w| !(w[1].mass < w[0].mass))
        .map(|w| w[1].lambda);
    let min_energy_gap = curve
        .points
        .iter()
        .filter(|p| p.lambda < 0.0 && !p.energy_lb_gap.is_nan())
        .map(|p| p.energy_lb_gap)
        .fold(f64::NAN, f64::min);
    Ok(AsymptoticsReport {
        phi1_power,
        bifurcation,
        decay_strict: decay_violation.is_none(),
        decay_violation,
        min_mass: curve
            .points
            .iter()
            .map(|p| p.mass)
            .fold(f64::INFINITY, f64::min),
        max_mass: curve.max_mass(),
        min_energy_gap,
        energy_ok: min_energy_gap.is_nan() || min_energy_gap >= -1e-8,
    })
}
