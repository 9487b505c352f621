//! The stationary problem `(-Δ)^s u + |x|^2 u = λu + |u|^{q-2}u`, its action
//! functional, residual, linearization, and the integral identities that
//! every finite-action solution satisfies.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear_spectrum::EigenPair;
use crate::spectral::{Field, Grid, SpectralOps};

/// `(q_lower, q_upper) = (2 + 4s/N, 2N/(N - 2s))`; the upper exponent is
/// `+∞` when `N <= 2s`.
pub fn critical_exponents(dim: usize, s: f64) -> (f64, f64) {
    let n = dim as f64;
    let lower = 2.0 + 4.0 * s / n;
    let upper = if n > 2.0 * s {
        2.0 * n / (n - 2.0 * s)
    } else {
        f64::INFINITY
    };
    (lower, upper)
}

/// `k = ((q-2)N - 4s) / (2N - (N-2s)q)`, or `None` when the denominator
/// vanishes.
pub fn k_constant(dim: usize, s: f64, q: f64) -> Option<f64> {
    let n = dim as f64;
    let den = 2.0 * n - (n - 2.0 * s) * q;
    if den == 0.0 {
        None
    } else {
        Some(((q - 2.0) * n - 4.0 * s) / den)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dim: usize,
    pub s: f64,
    pub q: f64,
    pub lambda: f64,
}

impl ModelParams {
    pub fn new(dim: usize, s: f64, q: f64, lambda: f64) -> Result<Self> {
        let p = Self { dim, s, q, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if !(self.s > 0.0 && self.s <= 1.0) {
            return Err(Error::Regime(format!("s = {} outside (0, 1]", self.s)));
        }
        if !(self.q > 2.0) || !self.q.is_finite() {
            return Err(Error::Regime(format!("q = {} must exceed 2", self.q)));
        }
        if !self.lambda.is_finite() {
            return Err(Error::InvalidParameter("lambda must be finite".into()));
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..*self }
    }

    pub fn critical_exponents(&self) -> (f64, f64) {
        critical_exponents(self.dim, self.s)
    }

    /// `q > 2 + 4s/N`.
    pub fn mass_supercritical(&self) -> bool {
        self.q > self.critical_exponents().0
    }

    /// `q < 2_s^*`.
    pub fn sobolev_subcritical(&self) -> bool {
        self.q < self.critical_exponents().1
    }

    pub fn k(&self) -> Option<f64> {
        k_constant(self.dim, self.s, self.q)
    }

    /// True when `q` sits within 0.2 of the Sobolev exponent, where the
    /// numerical minimizer may not match the analytic ground state.
    pub fn near_sobolev_critical(&self) -> bool {
        let upper = self.critical_exponents().1;
        upper.is_finite() && upper - self.q < 0.2
    }
}

/// The four integrals that enter the action and the identities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    /// `∫ u^2`
    pub mass: f64,
    /// `∫ |(-Δ)^{s/2} u|^2`
    pub kinetic: f64,
    /// `∫ |x|^2 u^2`
    pub potential: f64,
    /// `∫ |u|^q`
    pub power: f64,
}

/// Relative residuals of the integral identities at a field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// `(N-2s)K + (N+2)P = Nλ·mass + (2N/q)Q`
    pub pohozaev_rel: f64,
    /// `sK = P + ((q-2)/(2q))N·Q`
    pub id1_rel: f64,
    /// `2(1+s)P - 2sλ·mass = [2N/q - (N-2s)]Q`
    pub id2_rel: f64,
    /// `Φ_λ(u) = ((q-2)/(2q))Q`
    pub action_simple_rel: f64,
    /// `Φ_λ(u) + (1+k)(λ/2)·mass`; NaN when `k` is undefined.
    pub energy_lb_gap: f64,
    /// `Φ_λ(u) = ((1+s)/(2s))(1+k)P - (1+k)(λ/2)·mass`; NaN when `k` is undefined.
    pub energy_form_rel: f64,
    /// NaN when `2N = (N-2s)q`.
    pub k: f64,
}

impl IdentityReport {
    pub fn k_defined(&self) -> bool {
        !self.k.is_nan()
    }
}

fn relative(terms: &[f64]) -> f64 {
    let scale = terms.iter().map(|t| t.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        terms.iter().sum::<f64>().abs() / scale
    }
}

/// `(-Δ)^s + |x|^2` on one grid, with lazily computed spectral data.
#[derive(Debug)]
pub struct LinearOperator {
    s: f64,
    ops: SpectralOps,
    kinetic: Vec<f64>,
    half_kinetic: Vec<f64>,
    potential: Vec<f64>,
    ground: OnceLock<EigenPair>,
    dense: OnceLock<DMatrix<f64>>,
}

impl LinearOperator {
    pub fn new(grid: &Grid, s: f64) -> Result<Self> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::Regime(format!("s = {s} outside (0, 1]")));
        }
        let ops = SpectralOps::new(grid);
        Ok(Self {
            s,
            kinetic: ops.multiplier(s),
            half_kinetic: ops.multiplier(s / 2.0),
            potential: grid.radius_squared(),
            ops,
            ground: OnceLock::new(),
            dense: OnceLock::new(),
        })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn grid(&self) -> &Grid {
        self.ops.grid()
    }

    pub fn ops(&self) -> &SpectralOps {
        &self.ops
    }

    /// `|ξ|^{2s}` table.
    pub fn kinetic_symbol(&self) -> &[f64] {
        &self.kinetic
    }

    /// `|x|^2` table.
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    /// `(-Δ)^s v`.
    pub fn kinetic_apply(&self, v: &[f64]) -> Vec<f64> {
        self.ops.apply_real(v, &self.kinetic)
    }

    /// `((-Δ)^s + |x|^2 + shift) v`.
    pub fn apply_shifted(&self, v: &[f64], shift: f64) -> Vec<f64> {
        let mut out = self.kinetic_apply(v);
        for ((o, x), p) in out.iter_mut().zip(v).zip(&self.potential) {
            *o += (p + shift) * x;
        }
        out
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.apply_shifted(v, 0.0)
    }

    /// `∫ |(-Δ)^{s/2} v|^2`, computed on the spectrum.
    pub fn kinetic_energy(&self, v: &[f64]) -> f64 {
        self.ops.quadratic_form(v, &self.kinetic)
    }

    /// `(-Δ)^{s/2} v` in physical space.
    pub fn half_power(&self, v: &[f64]) -> Vec<f64> {
        self.ops.apply_real(v, &self.half_kinetic)
    }

    /// Ground eigenpair, computed once.
    pub fn ground_pair(&self) -> Result<&EigenPair> {
        if let Some(p) = self.ground.get() {
            return Ok(p);
        }
        let pair = crate::linear_spectrum::inverse_iteration(self)?;
        Ok(self.ground.get_or_init(|| pair))
    }

    pub fn lambda1(&self) -> Result<f64> {
        Ok(self.ground_pair()?.value)
    }

    /// Dense nodal matrix (one-dimensional grids with `M <= 512`).
    pub fn dense(&self) -> Result<&DMatrix<f64>> {
        if let Some(m) = self.dense.get() {
            return Ok(m);
        }
        let d = crate::linear_spectrum::assemble_dense(self)?;
        Ok(self.dense.get_or_init(|| d.matrix))
    }
}

/// A parameter set bound to a discretized operator.
#[derive(Clone, Debug)]
pub struct Model {
    params: ModelParams,
    op: Arc<LinearOperator>,
}

impl Model {
    pub fn new(params: ModelParams, grid: &Grid) -> Result<Self> {
        params.validate()?;
        if params.dim != grid.dim() {
            return Err(Error::InvalidParameter(format!(
                "model dimension {} does not match grid dimension {}",
                params.dim,
                grid.dim()
            )));
        }
        Ok(Self {
            op: Arc::new(LinearOperator::new(grid, params.s)?),
            params,
        })
    }

    /// Reuses an existing operator; `params.s` must match it.
    pub fn with_operator(params: ModelParams, op: Arc<LinearOperator>) -> Result<Self> {
        params.validate()?;
        if (params.s - op.s()).abs() > 0.0 || params.dim != op.grid().dim() {
            return Err(Error::InvalidParameter(
                "parameters do not match the supplied operator".into(),
            ));
        }
        Ok(Self { params, op })
    }

    pub fn at_lambda(&self, lambda: f64) -> Self {
        Self {
            params: self.params.with_lambda(lambda),
            op: Arc::clone(&self.op),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn operator(&self) -> &Arc<LinearOperator> {
        &self.op
    }

    pub fn grid(&self) -> &Grid {
        self.op.grid()
    }

    /// `|u|^{q-2} u`, evaluated as `sign(u)|u|^{q-1}`.
    pub fn nonlinearity(&self, u: &[f64]) -> Vec<f64> {
        let e = self.params.q - 1.0;
        u.iter().map(|&x| x.signum() * x.abs().powf(e)).collect()
    }

    pub fn observables(&self, u: &[f64]) -> Observables {
        let g = self.grid();
        Observables {
            mass: g.integrate(u.iter().map(|x| x * x)),
            kinetic: self.op.kinetic_energy(u),
            potential: g.integrate(u.iter().zip(self.op.potential()).map(|(x, p)| p * x * x)),
            power: g.integrate(u.iter().map(|x| x.abs().powf(self.params.q))),
        }
    }

    pub fn action_from(&self, o: &Observables) -> f64 {
        0.5 * (o.kinetic + o.potential - self.params.lambda * o.mass) - o.power / self.params.q
    }

    /// `Φ_λ(u) = ½(K + P - λ·mass) - Q/q`.
    pub fn action(&self, u: &[f64]) -> f64 {
        self.action_from(&self.observables(u))
    }

    /// `F(u)` and `‖F(u)‖₂`.
    pub fn residual(&self, u: &[f64]) -> (Vec<f64>, f64) {
        let mut f = self.op.apply_shifted(u, -self.params.lambda);
        for (r, n) in f.iter_mut().zip(self.nonlinearity(u)) {
            *r -= n;
        }
        let norm = self.grid().norm(&f);
        (f, norm)
    }

    /// `(q-1)|u|^{q-2}`, the pointwise part of the linearization.
    pub fn jacobian_weight(&self, u: &[f64]) -> Vec<f64> {
        let e = self.params.q - 2.0;
        u.iter()
            .map(|&x| (self.params.q - 1.0) * x.abs().powf(e))
            .collect()
    }

    /// `(-Δ)^s v + |x|^2 v - λv - (q-1)|u|^{q-2} v`.
    pub fn jacobian_apply(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = self.op.apply_shifted(v, -self.params.lambda);
        for ((o, w), x) in out.iter_mut().zip(self.jacobian_weight(u)).zip(v) {
            *o -= w * x;
        }
        out
    }

    pub fn identities_from(&self, o: &Observables) -> IdentityReport {
        let ModelParams { dim, s, q, lambda } = self.params;
        let n = dim as f64;
        let action = self.action_from(o);
        let pohozaev_rel = relative(&[
            (n - 2.0 * s) * o.kinetic,
            (n + 2.0) * o.potential,
            -n * lambda * o.mass,
            -(2.0 * n / q) * o.power,
        ]);
        let id1_rel = relative(&[
            s * o.kinetic,
            -o.potential,
            -((q - 2.0) / (2.0 * q)) * n * o.power,
        ]);
        let id2_rel = relative(&[
            2.0 * (1.0 + s) * o.potential,
            -2.0 * s * lambda * o.mass,
            -(2.0 * n / q - (n - 2.0 * s)) * o.power,
        ]);
        let action_simple_rel = relative(&[action, -((q - 2.0) / (2.0 * q)) * o.power]);
        let (k, energy_lb_gap, energy_form_rel) = match self.params.k() {
            Some(k) => (
                k,
                action + (1.0 + k) * (lambda / 2.0) * o.mass,
                relative(&[
                    action,
                    -((1.0 + s) / (2.0 * s)) * (1.0 + k) * o.potential,
                    (1.0 + k) * (lambda / 2.0) * o.mass,
                ]),
            ),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        IdentityReport {
            pohozaev_rel,
            id1_rel,
            id2_rel,
            action_simple_rel,
            energy_lb_gap,
            energy_form_rel,
            k,
        }
    }

    pub fn identity_residuals(&self, u: &[f64]) -> IdentityReport {
        self.identities_from(&self.observables(u))
    }
}

fn real_values<'a>(u: &'a Field, model: &Model) -> Result<&'a [f64]> {
    if u.grid() != model.grid() {
        return Err(Error::GridMismatch);
    }
    u.as_real()
}

/// Integrals of a real field under `params`.
pub fn observables(u: &Field, params: &ModelParams) -> Result<Observables> {
    let model = Model::new(*params, u.grid())?;
    Ok(model.observables(real_values(u, &model)?))
}

pub fn action(u: &Field, params: &ModelParams) -> Result<f64> {
    let model = Model::new(*params, u.grid())?;
    Ok(model.action(real_values(u, &model)?))
}

pub fn residual_field(u: &Field, params: &ModelParams) -> Result<(Field, f64)> {
    let model = Model::new(*params, u.grid())?;
    let (f, norm) = model.residual(real_values(u, &model)?);
    Ok((Field::real(u.grid().clone(), f)?, norm))
}

pub fn jacobian_apply(u: &Field, v: &Field, params: &ModelParams) -> Result<Field> {
    if u.grid() != v.grid() {
        return Err(Error::GridMismatch);
    }
    let model = Model::new(*params, u.grid())?;
    let out = model.jacobian_apply(real_values(u, &model)?, v.as_real()?);
    Field::real(u.grid().clone(), out)
}

pub fn identity_residuals(u: &Field, params: &ModelParams) -> Result<IdentityReport> {
    let model = Model::new(*params, u.grid())?;
    Ok(model.identity_residuals(real_values(u, &model)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn gaussian(grid: &Grid) -> Field {
        Field::from_fn(grid, |x| PI.powf(-0.25) * (-x[0] * x[0] / 2.0).exp())
    }

    #[test]
    fn gaussian_moments() {
        let g = Grid::new(1, 12.0, 512).unwrap();
        let u = gaussian(&g);
        let p = ModelParams::new(1, 1.0, 4.0, 0.0).unwrap();
        let o = observables(&u, &p).unwrap();
        assert!((o.mass - 1.0).abs() < 1e-13);
        assert!((o.potential - 0.5).abs() < 1e-13);
        assert!((o.kinetic - 0.5).abs() < 1e-13);
        assert!((o.power - (2.0 * PI).powf(-0.5)).abs() < 1e-13);
        let phi = action(&u, &p).unwrap();
        assert!((phi - (0.5 - 0.25 * (2.0 * PI).powf(-0.5))).abs() < 1e-13);
        assert!((phi - 0.400264).abs() < 1e-6);
    }

    #[test]
    fn zero_field() {
        let g = Grid::new(1, 12.0, 64).unwrap();
        let z = Field::zeros(&g);
        let p = ModelParams::new(1, 0.5, 6.0, -1.0).unwrap();
        assert_eq!(observables(&z, &p).unwrap(), Observables::default());
        assert_eq!(action(&z, &p).unwrap(), 0.0);
        let (f, n) = residual_field(&z, &p).unwrap();
        assert_eq!(n, 0.0);
        assert!(f.as_real().unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn kinetic_matches_physical_space() {
        let g = Grid::new(1, 12.0, 256).unwrap();
        let op = LinearOperator::new(&g, 0.37).unwrap();
        let u: Vec<f64> = g
            .axis_nodes()
            .iter()
            .map(|x| (-(x - 0.7) * (x - 0.7)).exp() * (1.0 + 0.3 * x.sin()))
            .collect();
        let spectral = op.kinetic_energy(&u);
        let half = op.half_power(&u);
        let physical = g.inner(&half, &half);
        assert!((spectral - physical).abs() <= 1e-12 * physical);
    }

    #[test]
    fn critical_exponent_examples() {
        assert_eq!(critical_exponents(1, 0.5), (4.0, f64::INFINITY));
        let (lo, hi) = critical_exponents(3, 0.75);
        assert!((lo - 3.0).abs() < 1e-15 && (hi - 4.0).abs() < 1e-15);
        assert_eq!(critical_exponents(2, 1.0), (4.0, f64::INFINITY));
    }

    #[test]
    fn k_example_and_undefined_case() {
        assert_eq!(k_constant(1, 0.5, 6.0), Some(1.0));
        // 2N = (N - 2s) q with N = 3, s = 0.5, q = 3
        assert_eq!(k_constant(3, 0.5, 3.0), None);
        let g = Grid::new(1, 8.0, 64).unwrap();
        let u = Field::from_fn(&g, |x| (-x[0] * x[0]).exp());
        // N = 1, s = 0.25: 2 = 0.5 q at q = 4
        let rep = identity_residuals(&u, &ModelParams::new(1, 0.25, 4.0, 0.0).unwrap()).unwrap();
        assert!(!rep.k_defined());
        assert!(rep.energy_lb_gap.is_nan());
        assert!(rep.pohozaev_rel.is_finite());
    }

    #[test]
    fn regime_flags() {
        let p = ModelParams::new(1, 0.5, 6.0, 0.0).unwrap();
        assert!(p.mass_supercritical() && p.sobolev_subcritical());
        let p = ModelParams::new(3, 0.75, 4.5, 0.0).unwrap();
        assert!(!p.sobolev_subcritical());
        assert!(ModelParams::new(1, 0.0, 3.0, 0.0).is_err());
        assert!(ModelParams::new(1, 0.5, 2.0, 0.0).is_err());
    }

    #[test]
    fn residual_at_linear_ground_state() {
        let g = Grid::new(1, 12.0, 256).unwrap();
        let op = LinearOperator::new(&g, 1.0).unwrap();
        let pair = op.ground_pair().unwrap().clone();
        let params = ModelParams::new(1, 1.0, 5.0, pair.value).unwrap();
        let (f, norm) = residual_field(&pair.vector, &params).unwrap();
        let phi = pair.vector.as_real().unwrap();
        let expected: f64 = g
            .integrate(phi.iter().map(|x| x.abs().powf(2.0 * 4.0)))
            .sqrt();
        assert!((norm - expected).abs() < 1e-9 * expected);
        for (r, x) in f.as_real().unwrap().iter().zip(phi) {
            assert!((r + x.signum() * x.abs().powf(4.0)).abs() < 1e-9);
        }
    }

    fn smooth_random(g: &Grid, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<(f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(0.5..2.0),
                )
            })
            .collect();
        g.axis_nodes()
            .iter()
            .map(|x| {
                c.iter()
                    .map(|(a, m, w)| a * (-(x - m) * (x - m) / (w * w)).exp())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn jacobian_zero_state_is_shifted_linear_operator() {
        let g = Grid::new(1, 12.0, 128).unwrap();
        let params = ModelParams::new(1, 0.6, 5.0, 0.3).unwrap();
        let model = Model::new(params, &g).unwrap();
        let v = smooth_random(&g, 3);
        let jv = model.jacobian_apply(&vec![0.0; g.len()], &v);
        let lv = model.operator().apply(&v);
        for ((a, b), x) in jv.iter().zip(&lv).zip(&v) {
            assert!((a - (b - 0.3 * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_symmetry_and_finite_differences() {
        let g = Grid::new(1, 12.0, 256).unwrap();
        let params = ModelParams::new(1, 0.5, 6.0, -0.5).unwrap();
        let model = Model::new(params, &g).unwrap();
        let u = smooth_random(&g, 1);
        let v = smooth_random(&g, 2);
        let w = smooth_random(&g, 7);
        let jv = model.jacobian_apply(&u, &v);
        let jw = model.jacobian_apply(&u, &w);
        let (a, b) = (g.inner(&jv, &w), g.inner(&v, &jw));
        assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()));

        let (f0, _) = model.residual(&u);
        let mut errs = Vec::new();
        for h in [1e-3, 1e-4, 1e-5] {
            let up: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let (f1, _) = model.residual(&up);
            let diff: Vec<f64> = f1
                .iter()
                .zip(&f0)
                .zip(&jv)
                .map(|((a, b), j)| (a - b) / h - j)
                .collect();
            errs.push(g.norm(&diff));
        }
        // first-order truncation: error shrinks ~10x per decade of h
        assert!(errs[1] < 0.2 * errs[0] && errs[2] < 0.2 * errs[1], "{errs:?}");
        assert!(errs[2] < 1e-3);
    }

    #[test]
    fn composition_and_self_adjointness() {
        let g = Grid::new(1, 12.0, 256).unwrap();
        let ops = SpectralOps::new(&g);
        let u = smooth_random(&g, 11);
        let v = smooth_random(&g, 12);
        for sigma in [0.3, 0.5, 1.0] {
            let half = ops.multiplier(sigma / 2.0);
            let full = ops.multiplier(sigma);
            let twice = ops.apply_real(&ops.apply_real(&u, &half), &half);
            let once = ops.apply_real(&u, &full);
            let diff: Vec<f64> = twice.iter().zip(&once).map(|(a, b)| a - b).collect();
            assert!(g.norm(&diff) <= 1e-12 * g.norm(&once));
            let a = g.inner(&once, &v);
            let b = g.inner(&u, &ops.apply_real(&v, &full));
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()));
        }
        let mult = ops.multiplier(1.0);
        for (m, xi) in mult.iter().zip(ops.abs_xi()) {
            assert!((m - xi * xi).abs() <= 1e-12 * xi * xi);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn k_positive_between_critical_exponents(
            dim in 1usize..=6,
            s in 0.01f64..=1.0,
            t in 0.001f64..0.999,
        ) {
            let (lo, hi) = critical_exponents(dim, s);
            let hi = if hi.is_finite() { hi } else { lo + 50.0 };
            let q = lo + t * (hi - lo);
            prop_assume!(q > lo && q < hi);
            let k = k_constant(dim, s, q).unwrap();
            prop_assert!(k > 0.0, "k = {} at N={} s={} q={}", k, dim, s, q);
        }

        #[test]
        fn parseval(seed in 0u64..10_000) {
            let g = Grid::new(1, 12.0, 128).unwrap();
            let ops = SpectralOps::new(&g);
            let u = smooth_random(&g, seed);
            let phys = g.inner(&u, &u);
            let ones = vec![1.0; g.len()];
            let spec = ops.quadratic_form(&u, &ones);
            prop_assert!((phys - spec).abs() <= 1e-12 * phys);
        }
    }
}
