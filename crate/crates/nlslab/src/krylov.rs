//! Small matrix-free linear algebra kernels: restarted GMRES and an Arnoldi
//! factorization with Ritz extraction. Everything here is deliberately plain;
//! operators are closures and vectors are slices.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub struct SolveStats {
    pub iterations: usize,
    /// True (unpreconditioned) relative residual of the returned iterate.
    pub residual: f64,
    /// Whether the tolerance was met; the iterate is returned either way.
    pub converged: bool,
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn nrm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Left-preconditioned restarted GMRES.
///
/// Solves `A x = b` where `apply` computes `A v` and `precond` applies an
/// approximate inverse of `A`. Convergence is declared on the true residual.
/// The best iterate is returned even when the tolerance is not met; callers
/// that require convergence must check `SolveStats::converged`.
pub fn gmres(
    mut apply: impl FnMut(&[C64]) -> Vec<C64>,
    mut precond: impl FnMut(&[C64]) -> Vec<C64>,
    b: &[C64],
    x0: Option<Vec<C64>>,
    rtol: f64,
    restart: usize,
    max_iterations: usize,
) -> Result<(Vec<C64>, SolveStats)> {
    let n = b.len();
    let bnorm = nrm(b);
    if bnorm == 0.0 {
        return Ok((
            vec![C64::new(0.0, 0.0); n],
            SolveStats { iterations: 0, residual: 0.0, converged: true },
        ));
    }
    let mut x = x0.unwrap_or_else(|| vec![C64::new(0.0, 0.0); n]);
    let mut total_iters = 0usize;

    loop {
        // True residual decides both convergence and the restart seed.
        let ax = apply(&x);
        let r_true: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let rnorm_true = nrm(&r_true);
        if rnorm_true <= rtol * bnorm || total_iters >= max_iterations {
            return Ok((
                x,
                SolveStats {
                    iterations: total_iters,
                    residual: rnorm_true / bnorm,
                    converged: rnorm_true <= rtol * bnorm,
                },
            ));
        }

        let r0 = precond(&r_true);
        let beta = nrm(&r0);
        if !beta.is_finite() {
            return Err(Error::NonFinite("gmres residual".into()));
        }

        let m = restart.min(max_iterations - total_iters);
        let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        basis.push(r0.iter().map(|z| z / beta).collect());

        // Hessenberg maintained column-wise, rotated by Givens on the fly.
        let mut h_cols: Vec<Vec<C64>> = Vec::with_capacity(m);
        let mut cs: Vec<C64> = Vec::with_capacity(m);
        let mut sn: Vec<C64> = Vec::with_capacity(m);
        let mut g = vec![C64::new(0.0, 0.0); m + 1];
        g[0] = C64::new(beta, 0.0);

        let mut k_used = 0;
        for j in 0..m {
            let av = apply(&basis[j]);
            let mut w = precond(&av);
            let mut hcol = vec![C64::new(0.0, 0.0); j + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(v, &w);
                hcol[i] = hij;
                for (wz, vz) in w.iter_mut().zip(v) {
                    *wz -= hij * vz;
                }
            }
            let hnext = nrm(&w);
            hcol[j + 1] = C64::new(hnext, 0.0);

            // Apply the accumulated rotations, then form a new one.
            for i in 0..j {
                let t = cs[i] * hcol[i] + sn[i] * hcol[i + 1];
                hcol[i + 1] = -sn[i].conj() * hcol[i] + cs[i] * hcol[i + 1];
                hcol[i] = t;
            }
            // Rotation [c, s; -conj(s), c] with real c annihilating hcol[j+1].
            let (c, s) = {
                let (a, bb) = (hcol[j], hcol[j + 1]);
                let r = (a.norm_sqr() + bb.norm_sqr()).sqrt();
                if r == 0.0 {
                    (C64::new(1.0, 0.0), C64::new(0.0, 0.0))
                } else if a.norm() == 0.0 {
                    (C64::new(0.0, 0.0), bb.conj() / r)
                } else {
                    (C64::new(a.norm() / r, 0.0), (a / a.norm()) * bb.conj() / r)
                }
            };
            cs.push(c);
            sn.push(s);
            let t = c * hcol[j] + s * hcol[j + 1];
            hcol[j] = t;
            hcol[j + 1] = C64::new(0.0, 0.0);
            let gt = c * g[j] + s * g[j + 1];
            g[j + 1] = -s.conj() * g[j] + c * g[j + 1];
            g[j] = gt;

            h_cols.push(hcol);
            total_iters += 1;
            k_used = j + 1;

            if hnext < 1e-14 * beta.max(1.0) {
                break; // invariant subspace reached
            }
            basis.push(w.iter().map(|z| z / hnext).collect());
            if g[j + 1].norm() <= 0.1 * rtol * bnorm {
                break;
            }
        }

        // Back substitution on the rotated triangular system.
        let mut y = vec![C64::new(0.0, 0.0); k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in (i + 1)..k_used {
                acc -= h_cols[j][i] * y[j];
            }
            y[i] = acc / h_cols[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xz, vz) in x.iter_mut().zip(&basis[j]) {
                *xz += yj * vz;
            }
        }
    }
}

/// Real GMRES wrapper for real operators and data.
pub fn gmres_real(
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    mut precond: impl FnMut(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Option<Vec<f64>>,
    rtol: f64,
    restart: usize,
    max_iterations: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let bz: Vec<C64> = b.iter().map(|&v| C64::new(v, 0.0)).collect();
    let xz = x0.map(|v| v.iter().map(|&t| C64::new(t, 0.0)).collect());
    let (x, stats) = gmres(
        |v| {
            let vr: Vec<f64> = v.iter().map(|z| z.re).collect();
            let vi: Vec<f64> = v.iter().map(|z| z.im).collect();
            let ar = apply(&vr);
            let ai = apply(&vi);
            ar.into_iter().zip(ai).map(|(re, im)| C64::new(re, im)).collect()
        },
        |v| {
            let vr: Vec<f64> = v.iter().map(|z| z.re).collect();
            let vi: Vec<f64> = v.iter().map(|z| z.im).collect();
            let ar = precond(&vr);
            let ai = precond(&vi);
            ar.into_iter().zip(ai).map(|(re, im)| C64::new(re, im)).collect()
        },
        &bz,
        xz,
        rtol,
        restart,
        max_iterations,
    )?;
    Ok((x.iter().map(|z| z.re).collect(), stats))
}

/// Arnoldi factorization `A V_m = V_m H_m + h_{m+1,m} v_{m+1} e_m^T`
/// for a real operator.
pub struct ArnoldiFactorization {
    pub basis: Vec<Vec<f64>>,
    /// `(m+1) x m` Hessenberg matrix.
    pub h: DMatrix<f64>,
    pub steps: usize,
}

pub fn arnoldi_real(
    n: usize,
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    m: usize,
    seed: u64,
) -> Result<ArnoldiFactorization> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nv = v0.iter().map(|t| t * t).sum::<f64>().sqrt();
    for t in v0.iter_mut() {
        *t /= nv;
    }
    let mut basis = vec![v0];
    let mut h = DMatrix::<f64>::zeros(m + 1, m);
    let mut steps = m;
    for j in 0..m {
        let mut w = apply(&basis[j]);
        if w.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("arnoldi operator output".into()));
        }
        // Two passes of Gram-Schmidt keep the basis orthogonal in practice.
        for _ in 0..2 {
            for (i, v) in basis.iter().enumerate() {
                let hij: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
                h[(i, j)] += hij;
                for (wz, vz) in w.iter_mut().zip(v) {
                    *wz -= hij * vz;
                }
            }
        }
        let hn = w.iter().map(|t| t * t).sum::<f64>().sqrt();
        h[(j + 1, j)] = hn;
        if hn < 1e-12 {
            steps = j + 1;
            break;
        }
        for t in w.iter_mut() {
            *t /= hn;
        }
        basis.push(w);
    }
    Ok(ArnoldiFactorization { basis, h, steps })
}

pub struct RitzPair {
    pub value: f64,
    pub vector: Vec<f64>,
    /// Residual estimate `h_{m+1,m} |e_m^T y|` of the Ritz pair.
    pub residual: f64,
}

/// Extracts Ritz pairs with (numerically) real Ritz values from an Arnoldi
/// factorization of a real operator.
pub fn real_ritz_pairs(fact: &ArnoldiFactorization, imag_tol: f64) -> Vec<RitzPair> {
    let m = fact.steps;
    let hm = fact.h.view((0, 0), (m, m)).into_owned();
    let tail = fact.h[(m, m - 1)];
    let eigs = hm.clone().complex_eigenvalues();
    let mut out = Vec::new();
    for lam in eigs.iter() {
        if lam.im.abs() > imag_tol * (1.0 + lam.re.abs()) {
            continue;
        }
        let y = hessenberg_eigvec(&hm, lam.re);
        let resid = tail.abs() * y[m - 1].abs();
        let n = fact.basis[0].len();
        let mut vec = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            for (vz, bz) in vec.iter_mut().zip(&fact.basis[j]) {
                *vz += yj * bz;
            }
        }
        out.push(RitzPair { value: lam.re, vector: vec, residual: resid });
    }
    out.sort_by(|a, b| a.value.partial_cmp(&b.value).unwrap());
    out
}

/// Eigenvector of a small dense matrix for a known (approximate) eigenvalue,
/// by a few steps of shifted inverse iteration.
fn hessenberg_eigvec(hm: &DMatrix<f64>, theta: f64) -> Vec<f64> {
    let m = hm.nrows();
    let scale = hm.iter().map(|t| t.abs()).fold(0.0, f64::max).max(1.0);
    let shifted = hm.clone() - DMatrix::identity(m, m) * (theta + 1e-12 * scale);
    let lu = shifted.full_piv_lu();
    let mut y = DMatrix::<f64>::from_element(m, 1, 1.0 / (m as f64).sqrt());
    for _ in 0..3 {
        if let Some(sol) = lu.solve(&y) {
            let nv = sol.norm();
            if nv > 0.0 && nv.is_finite() {
                y = sol / nv;
            } else {
                break;
            }
        } else {
            break;
        }
    }
    y.column(0).iter().copied().collect()
}

/// Dense symmetric eigendecomposition, eigenvalues ascending.
pub fn dense_symmetric_eigs(mat: DMatrix<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = mat.nrows();
    let se = mat.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let values = idx.iter().map(|&i| se.eigenvalues[i]).collect();
    let vectors = idx
        .iter()
        .map(|&i| se.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (values, vectors)
}
