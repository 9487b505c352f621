//! Split-step integration of `i∂ₜψ = (-Δ)^s ψ + |x|²ψ - |ψ|^{q-2}ψ`, whose
//! standing waves `e^{-iλt}u` are exactly the stationary solutions.
//!
//! Each Strang step is a pointwise phase rotation by half the potential and
//! nonlinearity, a spectral phase rotation by `|ξ|^{2s}`, and the first half
//! again. `|ψ|` is invariant under the pointwise rotation, so both substeps
//! are exact and unitary.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groundstate::GroundState;
use crate::model::ModelParams;
use crate::spectral::{Field, Grid, SpectralOps};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Diagnostics every this many steps (and at the final step).
    pub sample_every: usize,
    /// False drops `|ψ|^{q-2}ψ` (linear oscillator flow).
    pub nonlinear: bool,
    /// Store `ψ` every this many steps.
    pub snapshot_every: Option<usize>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 20.0,
            sample_every: 100,
            nonlinear: true,
            snapshot_every: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub mass: f64,
    /// `½K + ½P - Q/q` (no `Q` term for the linear flow).
    pub hamiltonian: f64,
    /// `min_θ ‖ψ - e^{iθ}u_ref‖₂`; NaN without a reference.
    pub deviation: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub steps: usize,
    pub dt: f64,
    /// Set when a non-finite value appeared; the trajectory stops there.
    pub blow_up_time: Option<f64>,
    pub final_state: Field,
    pub snapshots: Vec<(f64, Vec<Complex64>)>,
}

impl Trajectory {
    pub fn blew_up(&self) -> bool {
        self.blow_up_time.is_some()
    }

    pub fn max_mass_drift(&self) -> f64 {
        let m0 = self.samples[0].mass;
        self.samples
            .iter()
            .map(|s| (s.mass - m0).abs() / m0)
            .fold(0.0, f64::max)
    }

    pub fn max_hamiltonian_drift(&self) -> f64 {
        let h0 = self.samples[0].hamiltonian;
        self.samples
            .iter()
            .map(|s| (s.hamiltonian - h0).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_deviation(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.deviation)
            .fold(0.0, f64::max)
    }
}

/// One Strang step for fixed `(grid, s, q, dt)`.
#[derive(Clone, Debug)]
pub struct Propagator {
    ops: SpectralOps,
    kinetic_phase: Vec<Complex64>,
    potential: Vec<f64>,
    kinetic: Vec<f64>,
    q: f64,
    dt: f64,
    nonlinear: bool,
}

impl Propagator {
    pub fn new(grid: &Grid, params: &ModelParams, dt: f64, nonlinear: bool) -> Result<Self> {
        params.validate()?;
        if !dt.is_finite() || dt == 0.0 {
            return Err(Error::InvalidParameter(format!("time step must be finite and nonzero, got {dt}")));
        }
        let ops = SpectralOps::new(grid);
        let kinetic = ops.multiplier(params.s);
        let kinetic_phase = kinetic
            .iter()
            .map(|m| Complex64::from_polar(1.0, -m * dt))
            .collect();
        Ok(Self {
            potential: grid.radius_squared(),
            kinetic_phase,
            kinetic,
            ops,
            q: params.q,
            dt,
            nonlinear,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn half_phase(&self, psi: &mut [Complex64]) {
        let half = 0.5 * self.dt;
        let e = 0.5 * (self.q - 2.0);
        for (z, v) in psi.iter_mut().zip(&self.potential) {
            let nl = if self.nonlinear {
                z.norm_sqr().powf(e)
            } else {
                0.0
            };
            *z *= Complex64::from_polar(1.0, -(v - nl) * half);
        }
    }

    pub fn step(&self, psi: &mut [Complex64]) {
        self.half_phase(psi);
        self.ops.forward(psi);
        psi.iter_mut()
            .zip(&self.kinetic_phase)
            .for_each(|(z, p)| *z *= p);
        self.ops.inverse(psi);
        self.half_phase(psi);
    }

    pub fn mass(&self, psi: &[Complex64]) -> f64 {
        let g = self.ops.grid();
        g.integrate(psi.iter().map(|z| z.norm_sqr()))
    }

    pub fn hamiltonian(&self, psi: &[Complex64]) -> f64 {
        let g = self.ops.grid();
        let mut spec = psi.to_vec();
        self.ops.forward(&mut spec);
        let k: f64 = spec
            .iter()
            .zip(&self.kinetic)
            .map(|(z, m)| m * z.norm_sqr())
            .sum::<f64>()
            * g.weight()
            / psi.len() as f64;
        let p = g.integrate(psi.iter().zip(&self.potential).map(|(z, v)| v * z.norm_sqr()));
        let q = if self.nonlinear {
            g.integrate(psi.iter().map(|z| z.norm().powf(self.q)))
        } else {
            0.0
        };
        0.5 * k + 0.5 * p - q / self.q
    }
}

/// `min_θ ‖ψ - e^{iθ}u‖₂` with `θ = arg⟨u, ψ⟩`.
pub fn phase_deviation(grid: &Grid, psi: &[Complex64], u: &[Complex64]) -> f64 {
    let overlap: Complex64 = u.iter().zip(psi).map(|(a, b)| a.conj() * b).sum();
    let rot = if overlap.norm() > 0.0 {
        overlap / overlap.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    let diff: Vec<Complex64> = psi.iter().zip(u).map(|(p, a)| p - rot * a).collect();
    grid.complex_norm(&diff)
}

fn complex_values(f: &Field) -> Vec<Complex64> {
    f.to_complex()
        .as_complex()
        .expect("converted to complex")
        .to_vec()
}

pub fn evolve(
    psi0: &Field,
    params: &ModelParams,
    opts: &EvolveOptions,
    u_ref: Option<&Field>,
) -> Result<Trajectory> {
    if !(opts.dt > 0.0) || !(opts.t_end >= opts.dt) {
        return Err(Error::InvalidParameter(format!(
            "need dt > 0 and T >= dt, got dt = {}, T = {}",
            opts.dt, opts.t_end
        )));
    }
    if opts.sample_every == 0 {
        return Err(Error::InvalidParameter("sample cadence must be positive".into()));
    }
    let grid = psi0.grid().clone();
    if params.dim != grid.dim() {
        return Err(Error::InvalidParameter("parameter and grid dimensions differ".into()));
    }
    let reference = match u_ref {
        Some(r) if r.grid() != &grid => return Err(Error::GridMismatch),
        Some(r) => Some(complex_values(r)),
        None => None,
    };
    let prop = Propagator::new(&grid, params, opts.dt, opts.nonlinear)?;
    let mut psi = complex_values(psi0);
    let steps = (opts.t_end / opts.dt).round() as usize;
    let sample = |t: f64, psi: &[Complex64]| Sample {
        t,
        mass: prop.mass(psi),
        hamiltonian: prop.hamiltonian(psi),
        deviation: reference
            .as_ref()
            .map_or(f64::NAN, |r| phase_deviation(&grid, psi, r)),
    };
    let mut samples = vec![sample(0.0, &psi)];
    let mut snapshots = Vec::new();
    if opts.snapshot_every.is_some() {
        snapshots.push((0.0, psi.clone()));
    }
    let mut blow_up_time = None;
    let mut last_good = psi.clone();
    let mut taken = 0;
    for k in 1..=steps {
        prop.step(&mut psi);
        taken = k;
        let t = k as f64 * opts.dt;
        let at_sample = k % opts.sample_every == 0 || k == steps;
        if at_sample {
            if psi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                blow_up_time = Some(t);
                psi = last_good;
                break;
            }
            samples.push(sample(t, &psi));
            last_good.clone_from(&psi);
        }
        if let Some(every) = opts.snapshot_every {
            if every > 0 && k % every == 0 {
                snapshots.push((t, psi.clone()));
            }
        }
    }
    Ok(Trajectory {
        samples,
        steps: taken,
        dt: opts.dt,
        blow_up_time,
        final_state: Field::complex(grid, psi)?,
        snapshots,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityReport {
    pub lambda: f64,
    pub eps: f64,
    pub seed: u64,
    pub u_norm: f64,
    pub max_deviation: f64,
    /// `10·ε·‖u‖₂`
    pub small_threshold: f64,
    /// `0.1·‖u‖₂`
    pub large_threshold: f64,
    pub first_small_crossing: Option<f64>,
    pub first_large_crossing: Option<f64>,
    pub blow_up_time: Option<f64>,
    pub samples: Vec<Sample>,
}

impl StabilityReport {
    /// Stayed inside the small tube for the whole run.
    pub fn looks_stable(&self) -> bool {
        self.first_small_crossing.is_none() && self.blow_up_time.is_none()
    }

    /// Left the large tube or blew up.
    pub fn looks_unstable(&self) -> bool {
        self.first_large_crossing.is_some() || self.blow_up_time.is_some()
    }
}

/// Seeded smooth real field of unit L² norm: a few random low Fourier modes
/// on each axis.
pub fn smooth_unit_noise(grid: &Grid, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = grid.half_width();
    let modes = 6;
    let axis_terms = |rng: &mut ChaCha8Rng| -> Vec<(f64, f64, f64)> {
        (0..modes)
            .map(|k| {
                let amp = rng.random_range(-1.0..1.0) / (1.0 + k as f64);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let freq = std::f64::consts::PI * (k + 1) as f64 / l;
                (amp, freq, phase)
            })
            .collect()
    };
    let axes: Vec<Vec<(f64, f64, f64)>> = (0..grid.dim()).map(|_| axis_terms(&mut rng)).collect();
    let mut eta: Vec<f64> = (0..grid.len())
        .map(|i| {
            let x = grid.coords(i);
            x.iter()
                .zip(&axes)
                .map(|(xk, terms)| {
                    terms
                        .iter()
                        .map(|(a, f, p)| a * (f * xk + p).cos())
                        .sum::<f64>()
                })
                .product()
        })
        .collect();
    let n = grid.norm(&eta);
    eta.iter_mut().for_each(|v| *v /= n);
    eta
}

/// Evolves `u(1 + εη)` and watches the orbital distance to `u`.
pub fn stability_probe(
    gs: &GroundState,
    eps: f64,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<StabilityReport> {
    if !(0.0..=0.1).contains(&eps) {
        return Err(Error::InvalidParameter(format!("eps must lie in [0, 0.1], got {eps}")));
    }
    if !gs.converged() {
        return Err(Error::InvalidParameter("stability probe needs a converged state".into()));
    }
    let grid = gs.u.grid();
    let u = gs.values();
    let eta = smooth_unit_noise(grid, seed);
    let start: Vec<f64> = u.iter().zip(&eta).map(|(a, e)| a * (1.0 + eps * e)).collect();
    let psi0 = Field::real(grid.clone(), start)?;
    let opts = EvolveOptions {
        dt,
        t_end,
        sample_every: ((0.01 / dt).round() as usize).max(1),
        nonlinear: true,
        snapshot_every: None,
    };
    let traj = evolve(&psi0, &gs.params, &opts, Some(&gs.u))?;
    let u_norm = gs.u.l2_norm();
    let small = 10.0 * eps * u_norm;
    let large = 0.1 * u_norm;
    let first = |thr: f64| traj.samples.iter().find(|s| s.deviation > thr).map(|s| s.t);
    Ok(StabilityReport {
        lambda: gs.params.lambda,
        eps,
        seed,
        u_norm,
        max_deviation: traj.max_deviation(),
        small_threshold: small,
        large_threshold: large,
        first_small_crossing: first(small),
        first_large_crossing: first(large),
        blow_up_time: traj.blow_up_time,
        samples: traj.samples,
    })
}
