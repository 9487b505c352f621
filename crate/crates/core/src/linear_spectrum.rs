//! Spectral data of `(-Δ)^s + |x|^2` and of the linearization at a state.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, lanczos_extremes};
use crate::model::{LinearOperator, Model, ModelParams};
use crate::spectral::{Field, Grid};

const OUTER_CAP: usize = 500;
const INNER_TOL: f64 = 1e-12;
const EIG_RESIDUAL_TOL: f64 = 1e-10;
const DENSE_CAP: usize = 512;

/// An L²-normalized eigenvector, signed positive at the origin node.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Field,
    pub residual: f64,
    pub iterations: usize,
}

fn inner_cg_cap(n: usize) -> usize {
    (20 * n).max(2000)
}

/// Inverse iteration with a conjugate-gradient inner solve.
pub(crate) fn inverse_iteration(op: &LinearOperator) -> Result<EigenPair> {
    let grid = op.grid();
    let mut phi: Vec<f64> = grid
        .radius_squared()
        .iter()
        .map(|r2| (-r2 / 2.0).exp())
        .collect();
    let n0 = grid.norm(&phi);
    phi.iter_mut().for_each(|x| *x /= n0);

    let mut residual = f64::INFINITY;
    for it in 1..=OUTER_CAP {
        let solve = conjugate_gradient(
            |v| op.apply(v),
            &phi,
            Some(&phi),
            INNER_TOL,
            inner_cg_cap(phi.len()),
        )?;
        let mut y = solve.x;
        let ny = grid.norm(&y);
        y.iter_mut().for_each(|x| *x /= ny);
        let ay = op.apply(&y);
        let value = grid.inner(&y, &ay);
        let r: Vec<f64> = ay.iter().zip(&y).map(|(a, b)| a - value * b).collect();
        residual = grid.norm(&r);
        phi = y;
        if residual <= EIG_RESIDUAL_TOL {
            if phi[grid.origin_index()] < 0.0 {
                phi.iter_mut().for_each(|x| *x = -*x);
            }
            return Ok(EigenPair {
                value,
                vector: Field::real(grid.clone(), phi)?,
                residual,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "inverse iteration",
        iterations: OUTER_CAP,
        residual,
    })
}

/// Smallest eigenpair of the discretized `(-Δ)^s + |x|^2`.
pub fn ground_eigenpair(s: f64, dim: usize, grid: &Grid) -> Result<EigenPair> {
    if dim != grid.dim() {
        return Err(Error::InvalidParameter(format!(
            "dimension {dim} does not match grid dimension {}",
            grid.dim()
        )));
    }
    let op = LinearOperator::new(grid, s)?;
    inverse_iteration(&op)
}

/// Dense nodal representation of the operator, built from the Fourier
/// multiplier column by column.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    pub matrix: DMatrix<f64>,
    /// `max |B - Bᵀ|` of the kinetic block before symmetrization.
    pub asymmetry: f64,
}

pub(crate) fn assemble_dense(op: &LinearOperator) -> Result<DenseOperator> {
    let grid = op.grid();
    if grid.dim() != 1 || grid.points() > DENSE_CAP {
        return Err(Error::SizeLimit(format!(
            "dense operator needs N = 1 and M <= {DENSE_CAP}, got {grid}"
        )));
    }
    let m = grid.points();
    let mut b = DMatrix::<f64>::zeros(m, m);
    let mut unit = vec![0.0; m];
    for j in 0..m {
        unit[j] = 1.0;
        let col = op.kinetic_apply(&unit);
        unit[j] = 0.0;
        for (i, v) in col.into_iter().enumerate() {
            b[(i, j)] = v;
        }
    }
    let asymmetry = (&b - b.transpose()).amax();
    let mut matrix = (&b + b.transpose()) * 0.5;
    for (i, p) in op.potential().iter().enumerate() {
        matrix[(i, i)] += p;
    }
    Ok(DenseOperator { matrix, asymmetry })
}

pub fn dense_operator_matrix(grid: &Grid, s: f64) -> Result<DenseOperator> {
    if grid.dim() != 1 || grid.points() > DENSE_CAP {
        return Err(Error::SizeLimit(format!(
            "dense operator needs N = 1 and M <= {DENSE_CAP}, got {grid}"
        )));
    }
    assemble_dense(&LinearOperator::new(grid, s)?)
}

/// All eigenvalues of a symmetric matrix, ascending.
pub fn dense_eigenvalues(matrix: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(matrix.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Bottom-of-spectrum data for the linearization at a state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEdges {
    pub min_eig: f64,
    pub min_abs_eig: f64,
    /// Number of negative eigenvalues, capped at 2.
    pub morse_index: u8,
}

const LANCZOS_STEPS: usize = 48;

pub(crate) fn jacobian_edges(model: &Model, u: &[f64]) -> Result<SpectrumEdges> {
    let weight = model.jacobian_weight(u);
    let lambda = model.params().lambda;
    let wmax = weight.iter().cloned().fold(0.0, f64::max);
    // (-Δ)^s + |x|^2 is nonnegative, so J + shift >= 1.
    let shift = lambda + wmax + 1.0;
    let op = model.operator();
    let shifted = |v: &[f64]| -> Vec<f64> {
        let mut out = op.apply_shifted(v, shift - lambda);
        for ((o, w), x) in out.iter_mut().zip(&weight).zip(v) {
            *o -= w * x;
        }
        out
    };
    let n = u.len();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let start: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cap = inner_cg_cap(n);
    let (ritz, bounds) = lanczos_extremes(
        |v| conjugate_gradient(&shifted, v, None, INNER_TOL, cap).map(|o| o.x),
        &start,
        LANCZOS_STEPS,
    )?;
    // Ritz values of the inverse, largest first, mapped back to J.
    let mut eigs: Vec<(f64, f64)> = ritz
        .iter()
        .zip(&bounds)
        .rev()
        .take(4)
        .map(|(&theta, &bound)| (1.0 / theta - shift, bound / (theta * theta)))
        .collect();
    eigs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let loose = eigs
        .iter()
        .take(3)
        .any(|(mu, err)| *err > 1e-6 * mu.abs().max(1.0));
    if loose {
        log::debug!("Jacobian Ritz values not fully converged: {eigs:?}");
    }
    let min_eig = eigs[0].0;
    let morse_index = eigs.iter().filter(|(mu, _)| *mu < 0.0).count().min(2) as u8;
    let min_abs_eig = eigs
        .iter()
        .map(|(mu, _)| mu.abs())
        .fold(f64::INFINITY, f64::min);
    Ok(SpectrumEdges {
        min_eig,
        min_abs_eig,
        morse_index,
    })
}

/// Most negative eigenvalue, smallest |eigenvalue| and capped Morse index of
/// the linearization at `u`, by shift-and-invert Lanczos.
pub fn jacobian_spectrum_edges(u: &Field, params: &ModelParams) -> Result<SpectrumEdges> {
    let model = Model::new(*params, u.grid())?;
    jacobian_edges(&model, u.as_real()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn harmonic_oscillator_ground_state() {
        let g = Grid::new(1, 12.0, 512).unwrap();
        let pair = ground_eigenpair(1.0, 1, &g).unwrap();
        assert!((pair.value - 1.0).abs() < 1e-8, "{}", pair.value);
        assert!(pair.residual <= 1e-10);
        let v = pair.vector.as_real().unwrap();
        let err = v
            .iter()
            .zip(g.axis_nodes())
            .map(|(a, x)| (a - PI.powf(-0.25) * (-x * x / 2.0).exp()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err:e}");
        assert!((pair.vector.l2_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_dimensional_oscillator() {
        let g = Grid::new(2, 12.0, 128).unwrap();
        let pair = ground_eigenpair(1.0, 2, &g).unwrap();
        assert!((pair.value - 2.0).abs() < 1e-8, "{}", pair.value);
    }

    #[test]
    fn dense_oracle_spectrum_and_symmetry() {
        let g = Grid::new(1, 12.0, 128).unwrap();
        let d = dense_operator_matrix(&g, 1.0).unwrap();
        assert!(d.asymmetry <= 1e-12, "{:e}", d.asymmetry);
        let ev = dense_eigenvalues(&d.matrix);
        for (k, e) in ev.iter().take(5).enumerate() {
            assert!((e - (2 * k + 1) as f64).abs() < 1e-6, "{k}: {e}");
        }
    }

    #[test]
    fn matrix_free_matches_dense_for_fractional_order() {
        let g = Grid::new(1, 12.0, 256).unwrap();
        let pair = ground_eigenpair(0.5, 1, &g).unwrap();
        let d = dense_operator_matrix(&g, 0.5).unwrap();
        let ev = dense_eigenvalues(&d.matrix);
        assert!((pair.value - ev[0]).abs() < 1e-10, "{} vs {}", pair.value, ev[0]);
        // simple ground state
        assert!(ev[1] - ev[0] > 0.1);
        let rq = {
            let v = pair.vector.as_real().unwrap();
            let op = LinearOperator::new(&g, 0.5).unwrap();
            g.inner(v, &op.apply(v))
        };
        assert!((rq - pair.value).abs() <= 1e-10 * pair.value);
    }

    #[test]
    fn dense_size_guard() {
        let g = Grid::new(1, 12.0, 1024).unwrap();
        assert!(matches!(dense_operator_matrix(&g, 0.5), Err(Error::SizeLimit(_))));
        let g2 = Grid::new(2, 12.0, 16).unwrap();
        assert!(dense_operator_matrix(&g2, 0.5).is_err());
    }

    #[test]
    fn zero_state_edges_are_the_linear_spectrum() {
        let g = Grid::new(1, 12.0, 256).unwrap();
        let params = ModelParams::new(1, 0.5, 6.0, 0.0).unwrap();
        let u = Field::zeros(&g);
        let edges = jacobian_spectrum_edges(&u, &params).unwrap();
        let lambda1 = ground_eigenpair(0.5, 1, &g).unwrap().value;
        assert!((edges.min_eig - lambda1).abs() < 1e-8, "{edges:?}");
        assert_eq!(edges.morse_index, 0);
        assert!((edges.min_abs_eig - lambda1).abs() < 1e-8);
    }

    #[test]
    fn edges_agree_with_dense_jacobian() {
        let g = Grid::new(1, 10.0, 128).unwrap();
        let params = ModelParams::new(1, 0.7, 5.0, -1.0).unwrap();
        let u = Field::from_fn(&g, |x| 1.4 * (-x[0] * x[0]).exp());
        let edges = jacobian_spectrum_edges(&u, &params).unwrap();
        let model = Model::new(params, &g).unwrap();
        let mut j = model.operator().dense().unwrap().clone();
        let w = model.jacobian_weight(u.as_real().unwrap());
        for i in 0..g.len() {
            j[(i, i)] -= params.lambda + w[i];
        }
        let ev = dense_eigenvalues(&j);
        assert!((edges.min_eig - ev[0]).abs() < 1e-8, "{} vs {}", edges.min_eig, ev[0]);
        let min_abs = ev.iter().map(|e| e.abs()).fold(f64::INFINITY, f64::min);
        assert!((edges.min_abs_eig - min_abs).abs() < 1e-8);
        let neg = ev.iter().filter(|e| **e < 0.0).count().min(2) as u8;
        assert_eq!(edges.morse_index, neg);
    }
}
