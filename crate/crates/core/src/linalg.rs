//! Matrix-free Krylov kernels on flat `f64` vectors with the Euclidean inner
//! product. The node-weight `h^N` is uniform, so it cancels everywhere.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

pub(crate) fn scale(alpha: f64, x: &mut [f64]) {
    x.iter_mut().for_each(|x| *x *= alpha);
}

#[derive(Clone, Debug)]
pub struct KrylovOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Conjugate gradients for a symmetric positive definite operator. Stops
/// when `‖b - Ax‖ <= tol·‖b‖`.
pub fn conjugate_gradient<A>(
    apply: A,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<KrylovOutcome>
where
    A: Fn(&[f64]) -> Vec<f64>,
{
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(KrylovOutcome {
            x: vec![0.0; b.len()],
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let mut x = x0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; b.len()]);
    let mut r: Vec<f64> = if x0.is_some() {
        let ax = apply(&x);
        b.iter().zip(&ax).map(|(b, a)| b - a).collect()
    } else {
        b.to_vec()
    };
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for it in 0..max_iter {
        if rr.sqrt() <= tol * bnorm {
            return Ok(KrylovOutcome {
                x,
                iterations: it,
                rel_residual: rr.sqrt() / bnorm,
            });
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NoConvergence {
                what: "conjugate gradient (operator not positive definite)",
                iterations: it,
                residual: rr.sqrt() / bnorm,
            });
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        p.iter_mut().zip(&r).for_each(|(p, r)| *p = r + beta * *p);
    }
    let rel = rr.sqrt() / bnorm;
    if rel <= tol {
        Ok(KrylovOutcome {
            x,
            iterations: max_iter,
            rel_residual: rel,
        })
    } else {
        Err(Error::NoConvergence {
            what: "conjugate gradient",
            iterations: max_iter,
            residual: rel,
        })
    }
}

/// MINRES for symmetric, possibly indefinite operators.
pub fn minres<A>(apply: A, b: &[f64], tol: f64, max_iter: usize) -> Result<KrylovOutcome>
where
    A: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let beta1 = norm(b);
    if beta1 == 0.0 {
        return Ok(KrylovOutcome {
            x: vec![0.0; n],
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let mut x = vec![0.0; n];
    let mut v_old = vec![0.0; n];
    let mut v: Vec<f64> = b.iter().map(|b| b / beta1).collect();
    let mut w_old = vec![0.0; n];
    let mut w_older = vec![0.0; n];
    // coupling to the previous Lanczos vector; none for the first column
    let mut beta = 0.0;
    // Givens state
    let (mut c_old, mut s_old) = (1.0, 0.0);
    let (mut c, mut s) = (1.0, 0.0);
    let mut eta = beta1;
    let mut resid = beta1;
    for it in 1..=max_iter {
        let mut av = apply(&v);
        let alpha = dot(&v, &av);
        axpy(-alpha, &v, &mut av);
        axpy(-beta, &v_old, &mut av);
        let beta_next = norm(&av);
        // apply previous rotations to the new tridiagonal column
        let delta = c * alpha - c_old * s * beta;
        let rho1 = (delta * delta + beta_next * beta_next).sqrt();
        let rho2 = s * alpha + c_old * c * beta;
        let rho3 = s_old * beta;
        let (c_new, s_new) = if rho1 == 0.0 {
            (1.0, 0.0)
        } else {
            (delta / rho1, beta_next / rho1)
        };
        let mut w: Vec<f64> = v.clone();
        axpy(-rho3, &w_older, &mut w);
        axpy(-rho2, &w_old, &mut w);
        if rho1 == 0.0 {
            return Err(Error::NoConvergence {
                what: "MINRES (breakdown)",
                iterations: it,
                residual: resid / beta1,
            });
        }
        scale(1.0 / rho1, &mut w);
        axpy(c_new * eta, &w, &mut x);
        eta *= -s_new;
        resid = eta.abs();

        w_older = std::mem::replace(&mut w_old, w);
        c_old = c;
        s_old = s;
        c = c_new;
        s = s_new;
        if resid <= tol * beta1 {
            return Ok(KrylovOutcome {
                x,
                iterations: it,
                rel_residual: resid / beta1,
            });
        }
        if beta_next == 0.0 {
            break;
        }
        let v_next: Vec<f64> = av.iter().map(|a| a / beta_next).collect();
        v_old = std::mem::replace(&mut v, v_next);
        beta = beta_next;
    }
    Err(Error::NoConvergence {
        what: "MINRES",
        iterations: max_iter,
        residual: resid / beta1,
    })
}

/// All Ritz values of `apply` from `steps` Lanczos iterations with full
/// reorthogonalization. Returns `(ritz values ascending, residual bounds)`.
pub fn lanczos_extremes<A>(
    apply: A,
    start: &[f64],
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    A: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = start.len();
    let steps = steps.min(n);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut betas: Vec<f64> = Vec::with_capacity(steps);
    let mut q = start.to_vec();
    let nq = norm(&q);
    if nq == 0.0 {
        return Err(Error::InvalidParameter("zero Lanczos start vector".into()));
    }
    scale(1.0 / nq, &mut q);
    let mut last_beta = 0.0;
    for _ in 0..steps {
        let mut w = apply(&q)?;
        let alpha = dot(&q, &w);
        basis.push(q.clone());
        alphas.push(alpha);
        // two passes of classical Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                axpy(-c, b, &mut w);
            }
        }
        last_beta = norm(&w);
        if last_beta <= 1e-14 * alpha.abs().max(1.0) {
            break;
        }
        betas.push(last_beta);
        q = w;
        scale(1.0 / last_beta, &mut q);
    }
    let m = alphas.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|j| {
            let bound = (last_beta * eig.eigenvectors[(m - 1, j)]).abs();
            (eig.eigenvalues[j], bound)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize, shift: f64) -> impl Fn(&[f64]) -> Vec<f64> {
        move |v: &[f64]| {
            (0..n)
                .map(|i| {
                    let l = if i > 0 { v[i - 1] } else { 0.0 };
                    let r = if i + 1 < n { v[i + 1] } else { 0.0 };
                    (2.0 + shift) * v[i] - l - r
                })
                .collect()
        }
    }

    #[test]
    fn cg_solves_spd_system() {
        let n = 50;
        let a = laplacian_1d(n, 0.1);
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let out = conjugate_gradient(&a, &b, None, 1e-13, 500).unwrap();
        let r: Vec<f64> = a(&out.x).iter().zip(&b).map(|(x, y)| x - y).collect();
        assert!(norm(&r) <= 1e-12 * norm(&b));
    }

    #[test]
    fn minres_solves_indefinite_system() {
        let n = 60;
        let a = laplacian_1d(n, -1.3);
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        let out = minres(&a, &b, 1e-12, 2000).unwrap();
        let r: Vec<f64> = a(&out.x).iter().zip(&b).map(|(x, y)| x - y).collect();
        assert!(norm(&r) <= 1e-10 * norm(&b), "{}", norm(&r));
    }

    #[test]
    fn lanczos_finds_lowest_eigenvalues() {
        let n = 40;
        let a = laplacian_1d(n, 0.0);
        let start: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64).sin()).collect();
        let (vals, _) = lanczos_extremes(|v| Ok(a(v)), &start, n).unwrap();
        let exact = |k: usize| {
            let t = std::f64::consts::PI * k as f64 / (n + 1) as f64;
            2.0 - 2.0 * t.cos()
        };
        assert!((vals[0] - exact(1)).abs() < 1e-10);
        assert!((vals[1] - exact(2)).abs() < 1e-10);
    }
}
