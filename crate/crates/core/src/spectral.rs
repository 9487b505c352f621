//! Periodic collocation grids, fractional Fourier multipliers and quadrature.
//!
//! The unbounded domain is replaced by the box `[-L, L)^N` with `M` nodes per
//! axis. Fractional powers of `-Δ` act as the multiplier `|ξ|^{2σ}` on the
//! discrete Fourier transform, with the zero mode sent to zero. All integrals
//! use the rectangle rule with weight `h^N`, which is spectrally accurate for
//! smooth samples that are negligible at the box edge.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_POINTS_1D: usize = 4096;
const MAX_POINTS_2D: usize = 512;

/// Uniform periodic grid on `[-L, L)^N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    points: usize,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, points: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::InvalidDimension(dim));
        }
        if points % 2 != 0 {
            return Err(Error::OddPoints(points));
        }
        let cap = if dim == 1 { MAX_POINTS_1D } else { MAX_POINTS_2D };
        if points < 8 || points > cap {
            return Err(Error::SizeLimit(format!(
                "points per axis must lie in [8, {cap}] for N = {dim}, got {points}"
            )));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "half-width must be positive, got {half_width}"
            )));
        }
        Ok(Self {
            dim,
            half_width,
            points,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Points per axis.
    pub fn points(&self) -> usize {
        self.points
    }

    /// Total number of nodes, `M^N`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    /// Quadrature weight `h^N`.
    pub fn weight(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn axis_nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.points)
            .map(|j| -self.half_width + j as f64 * h)
            .collect()
    }

    /// Angular frequencies `πk/L` in standard DFT order.
    pub fn axis_frequencies(&self) -> Vec<f64> {
        let m = self.points as i64;
        let scale = std::f64::consts::PI / self.half_width;
        (0..m)
            .map(|j| {
                let k = if j < m / 2 { j } else { j - m };
                scale * k as f64
            })
            .collect()
    }

    /// Coordinates of node `index` (row-major).
    pub fn coords(&self, index: usize) -> Vec<f64> {
        let h = self.spacing();
        match self.dim {
            1 => vec![-self.half_width + index as f64 * h],
            _ => {
                let (i, j) = (index / self.points, index % self.points);
                vec![
                    -self.half_width + i as f64 * h,
                    -self.half_width + j as f64 * h,
                ]
            }
        }
    }

    /// `|x|^2` at every node.
    pub fn radius_squared(&self) -> Vec<f64> {
        let nodes = self.axis_nodes();
        match self.dim {
            1 => nodes.iter().map(|x| x * x).collect(),
            _ => nodes
                .iter()
                .flat_map(|x| nodes.iter().map(move |y| x * x + y * y))
                .collect(),
        }
    }

    /// `|ξ|` at every spectral index, same layout as the node values.
    pub fn frequency_magnitude(&self) -> Vec<f64> {
        let xi = self.axis_frequencies();
        match self.dim {
            1 => xi.iter().map(|k| k.abs()).collect(),
            _ => xi
                .iter()
                .flat_map(|a| xi.iter().map(move |b| (a * a + b * b).sqrt()))
                .collect(),
        }
    }

    /// Index of the node at the origin (`j = M/2` on every axis).
    pub fn origin_index(&self) -> usize {
        let c = self.points / 2;
        match self.dim {
            1 => c,
            _ => c * self.points + c,
        }
    }

    /// Whether node `index` lies on the outermost layer of the box.
    pub fn is_boundary(&self, index: usize) -> bool {
        let edge = |j: usize| j == 0 || j + 1 == self.points;
        match self.dim {
            1 => edge(index),
            _ => edge(index / self.points) || edge(index % self.points),
        }
    }

    /// Rectangle-rule inner product.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weight() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }

    pub fn complex_norm(&self, a: &[Complex64]) -> f64 {
        (self.weight() * a.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// Rectangle-rule integral of node values.
    pub fn integrate<I: IntoIterator<Item = f64>>(&self, values: I) -> f64 {
        self.weight() * values.into_iter().sum::<f64>()
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "N={} L={} M={} h={}",
            self.dim,
            self.half_width,
            self.points,
            self.spacing()
        )
    }
}

/// Storage kind of a [`Field`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Real,
    Complex,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Values {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

/// Grid-sampled function values, row-major over axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Values,
}

impl Field {
    pub fn real(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            grid,
            values: Values::Real(values),
        })
    }

    pub fn complex(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            grid,
            values: Values::Complex(values),
        })
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.coords(i))).collect();
        Self {
            grid: grid.clone(),
            values: Values::Real(values),
        }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            values: Values::Real(vec![0.0; grid.len()]),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> FieldKind {
        match self.values {
            Values::Real(_) => FieldKind::Real,
            Values::Complex(_) => FieldKind::Complex,
        }
    }

    pub fn values(&self) -> &Values {
        &self.values
    }

    pub fn as_real(&self) -> Result<&[f64]> {
        match &self.values {
            Values::Real(v) => Ok(v),
            Values::Complex(_) => Err(Error::KindMismatch { expected: "real" }),
        }
    }

    pub fn as_complex(&self) -> Result<&[Complex64]> {
        match &self.values {
            Values::Complex(v) => Ok(v),
            Values::Real(_) => Err(Error::KindMismatch {
                expected: "complex",
            }),
        }
    }

    pub fn into_real(self) -> Result<Vec<f64>> {
        match self.values {
            Values::Real(v) => Ok(v),
            Values::Complex(_) => Err(Error::KindMismatch { expected: "real" }),
        }
    }

    /// Promotes a real field to complex storage; complex fields pass through.
    pub fn to_complex(&self) -> Field {
        let values = match &self.values {
            Values::Real(v) => v.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            Values::Complex(v) => v.clone(),
        };
        Field {
            grid: self.grid.clone(),
            values: Values::Complex(values),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        match &self.values {
            Values::Real(v) => self.grid.norm(v),
            Values::Complex(v) => self.grid.complex_norm(v),
        }
    }

    fn magnitudes(&self) -> Vec<f64> {
        match &self.values {
            Values::Real(v) => v.iter().map(|x| x.abs()).collect(),
            Values::Complex(v) => v.iter().map(|z| z.norm()).collect(),
        }
    }

    /// Max magnitude on the outermost node layer over max magnitude overall.
    /// State candidates should keep this at or below `1e-8`.
    pub fn boundary_ratio(&self) -> f64 {
        let mags = self.magnitudes();
        let total = mags.iter().cloned().fold(0.0, f64::max);
        if total == 0.0 {
            return 0.0;
        }
        let edge = mags
            .iter()
            .enumerate()
            .filter(|(i, _)| self.grid.is_boundary(*i))
            .map(|(_, m)| *m)
            .fold(0.0, f64::max);
        edge / total
    }
}

/// FFT plans and frequency tables for one grid. Cheap to share across
/// threads; every transform allocates its own scratch.
#[derive(Clone)]
pub struct SpectralOps {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    abs_xi: Vec<f64>,
}

impl fmt::Debug for SpectralOps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralOps").field("grid", &self.grid).finish()
    }
}

impl SpectralOps {
    pub fn new(grid: &Grid) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid: grid.clone(),
            forward: planner.plan_fft_forward(grid.points()),
            inverse: planner.plan_fft_inverse(grid.points()),
            abs_xi: grid.frequency_magnitude(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `|ξ|` in transform layout.
    pub fn abs_xi(&self) -> &[f64] {
        &self.abs_xi
    }

    /// Multiplier table `|ξ|^{2σ}` with the zero mode mapped to zero.
    pub fn multiplier(&self, sigma: f64) -> Vec<f64> {
        self.abs_xi
            .iter()
            .map(|&k| if k == 0.0 { 0.0 } else { k.powf(2.0 * sigma) })
            .collect()
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let m = self.grid.points();
        plan.process(buf);
        if self.grid.dim() == 2 {
            transpose_square(buf, m);
            plan.process(buf);
            transpose_square(buf, m);
        }
    }

    /// Unnormalized forward DFT in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.forward);
    }

    /// Inverse DFT in place, normalized so that `inverse(forward(x)) = x`.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.inverse);
        let scale = 1.0 / buf.len() as f64;
        buf.iter_mut().for_each(|z| *z *= scale);
    }

    /// Applies the spectral multiplier `mult` to a complex field in place.
    pub fn apply_complex(&self, buf: &mut [Complex64], mult: &[f64]) {
        self.forward(buf);
        buf.iter_mut().zip(mult).for_each(|(z, m)| *z *= *m);
        self.inverse(buf);
    }

    /// Applies the spectral multiplier `mult` to real samples.
    pub fn apply_real(&self, u: &[f64], mult: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.apply_complex(&mut buf, mult);
        buf.into_iter().map(|z| z.re).collect()
    }

    /// Unnormalized spectrum of real samples.
    pub fn spectrum(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// `h^N M^{-N} Σ mult_k |û_k|^2`, the quadratic form of the multiplier.
    pub fn quadratic_form(&self, u: &[f64], mult: &[f64]) -> f64 {
        let spec = self.spectrum(u);
        let sum: f64 = spec.iter().zip(mult).map(|(z, m)| m * z.norm_sqr()).sum();
        self.grid.weight() * sum / u.len() as f64
    }

    /// Share of spectral energy carried by modes in the top 10% of the
    /// resolved band on any axis.
    pub fn tail_fraction(&self, u: &[f64]) -> f64 {
        let spec = self.spectrum(u);
        let m = self.grid.points() as i64;
        let cut = 0.9 * (m / 2) as f64;
        let wavenumber = |j: i64| -> f64 {
            let k = if j < m / 2 { j } else { j - m };
            k.abs() as f64
        };
        let mut total = 0.0;
        let mut tail = 0.0;
        for (idx, z) in spec.iter().enumerate() {
            let e = z.norm_sqr();
            total += e;
            let high = match self.grid.dim() {
                1 => wavenumber(idx as i64) >= cut,
                _ => {
                    let (i, j) = ((idx as i64) / m, (idx as i64) % m);
                    wavenumber(i) >= cut || wavenumber(j) >= cut
                }
            };
            if high {
                tail += e;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            tail / total
        }
    }
}

fn transpose_square(buf: &mut [Complex64], m: usize) {
    for i in 0..m {
        for j in (i + 1)..m {
            buf.swap(i * m + j, j * m + i);
        }
    }
}

/// `(-Δ)^σ f` via the multiplier `|ξ|^{2σ}`, `σ ∈ (0, 1]`.
pub fn apply_fractional_power(f: &Field, sigma: f64) -> Result<Field> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "fractional exponent must lie in (0, 1], got {sigma}"
        )));
    }
    let ops = SpectralOps::new(f.grid());
    let mult = ops.multiplier(sigma);
    match f.values() {
        Values::Real(v) => {
            let mut buf: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            ops.apply_complex(&mut buf, &mult);
            let re_max = buf.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
            let im_max = buf.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
            debug_assert!(
                im_max <= 1e-12 * re_max.max(f64::MIN_POSITIVE),
                "real multiplier produced imaginary part {im_max:e}"
            );
            Field::real(f.grid().clone(), buf.into_iter().map(|z| z.re).collect())
        }
        Values::Complex(v) => {
            let mut buf = v.clone();
            ops.apply_complex(&mut buf, &mult);
            Field::complex(f.grid().clone(), buf)
        }
    }
}
