//! Krylov iterations: preconditioned BiCGStab, restarted GMRES, and CG.

use super::SparseMatrix;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual(m: &SparseMatrix, b: &[f64], x: &[f64], r: &mut [f64]) {
    m.matvec_into(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}

/// Outcome of one Krylov run. `residual` is always recomputed from `x`.
pub(crate) struct Run {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Right-preconditioned BiCGStab with Jacobi scaling `inv_diag`. Stops when
/// the true relative residual drops below `tol`, on breakdown, or when the
/// best residual has not improved for `stall` iterations.
pub(crate) fn bicgstab(
    m: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    inv_diag: &[f64],
    tol: f64,
    max_iter: usize,
) -> Run {
    let n = b.len();
    let bnorm = norm(b);
    let stall = 2000.max(max_iter / 10);
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    residual(m, b, &x, &mut r);
    let mut res = norm(&r) / bnorm;
    if res <= tol {
        return Run {
            x,
            iterations: 0,
            residual: res,
            converged: true,
        };
    }
    let mut best_x = x.clone();
    let mut best = res;
    let mut best_iter = 0;

    let mut rhat = r.clone();
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let (mut rho_old, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut fresh = true;
    let mut restarts = 0;
    // aim a little below tol so the recomputed residual passes
    let inner = 0.5 * tol;

    let mut it = 0;
    while it < max_iter {
        it += 1;
        let rho = dot(&rhat, &r);
        if rho.abs() <= 1e-300 || !rho.is_finite() {
            if restarts > 20 {
                break;
            }
            restarts += 1;
            residual(m, b, &x, &mut r);
            rhat.copy_from_slice(&r);
            fresh = true;
            continue;
        }
        if fresh {
            p.copy_from_slice(&r);
            fresh = false;
        } else {
            let beta = (rho / rho_old) * (alpha / omega);
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
        }
        for i in 0..n {
            phat[i] = inv_diag[i] * p[i];
        }
        m.matvec_into(&phat, &mut v);
        let denom = dot(&rhat, &v);
        if denom == 0.0 || !denom.is_finite() {
            restarts += 1;
            if restarts > 20 {
                break;
            }
            residual(m, b, &x, &mut r);
            rhat.copy_from_slice(&r);
            fresh = true;
            continue;
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / bnorm <= inner {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            residual(m, b, &x, &mut r);
            res = norm(&r) / bnorm;
            if res <= tol {
                return Run {
                    x,
                    iterations: it,
                    residual: res,
                    converged: true,
                };
            }
            rhat.copy_from_slice(&r);
            fresh = true;
            restarts += 1;
            continue;
        }
        for i in 0..n {
            shat[i] = inv_diag[i] * s[i];
        }
        m.matvec_into(&shat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        rho_old = rho;
        let est = norm(&r) / bnorm;
        if est < 0.5 * best {
            best = est;
            best_x.copy_from_slice(&x);
            best_iter = it;
        }
        if est <= inner {
            residual(m, b, &x, &mut r);
            res = norm(&r) / bnorm;
            if res <= tol {
                return Run {
                    x,
                    iterations: it,
                    residual: res,
                    converged: true,
                };
            }
            // recursive residual drifted: restart from the true one
            rhat.copy_from_slice(&r);
            fresh = true;
            restarts += 1;
        }
        if omega == 0.0 {
            restarts += 1;
            residual(m, b, &x, &mut r);
            rhat.copy_from_slice(&r);
            fresh = true;
        }
        if it - best_iter > stall || restarts > 50 {
            break;
        }
    }
    // pick whichever of the current and best iterates is truly better
    residual(m, b, &x, &mut r);
    let cur = norm(&r) / bnorm;
    residual(m, b, &best_x, &mut r);
    let bst = norm(&r) / bnorm;
    let (x, residual) = if cur <= bst { (x, cur) } else { (best_x, bst) };
    Run {
        x,
        iterations: it,
        residual,
        converged: residual <= tol,
    }
}

/// Right-preconditioned restarted GMRES(`restart`) with Givens rotations.
pub(crate) fn gmres(
    m: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    inv_diag: &[f64],
    tol: f64,
    max_iter: usize,
    restart: usize,
) -> Run {
    let n = b.len();
    let bnorm = norm(b);
    let k = restart.max(2);
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut total = 0;
    loop {
        residual(m, b, &x, &mut r);
        let beta = norm(&r);
        if beta / bnorm <= tol || total >= max_iter {
            return Run {
                converged: beta / bnorm <= tol,
                x,
                iterations: total,
                residual: beta / bnorm,
            };
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![0.0; k]; k + 1];
        let (mut cs, mut sn) = (vec![0.0; k], vec![0.0; k]);
        let mut g = vec![0.0; k + 1];
        g[0] = beta;
        let mut used = 0;
        for j in 0..k {
            if total >= max_iter {
                break;
            }
            total += 1;
            for i in 0..n {
                z[i] = inv_diag[i] * basis[j][i];
            }
            m.matvec_into(&z, &mut w);
            for (i, vi) in basis.iter().enumerate() {
                let hij = dot(&w, vi);
                h[i][j] = hij;
                for (wl, vl) in w.iter_mut().zip(vi) {
                    *wl -= hij * vl;
                }
            }
            let hn = norm(&w);
            h[j + 1][j] = hn;
            for i in 0..j {
                let tmp = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = tmp;
            }
            let denom = (h[j][j] * h[j][j] + h[j + 1][j] * h[j + 1][j]).sqrt();
            if denom == 0.0 {
                break;
            }
            cs[j] = h[j][j] / denom;
            sn[j] = h[j + 1][j] / denom;
            h[j][j] = denom;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            if g[j + 1].abs() / bnorm <= 0.5 * tol || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        if used == 0 {
            return Run {
                x,
                iterations: total,
                residual: beta / bnorm,
                converged: false,
            };
        }
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let mut acc = g[i];
            for l in i + 1..used {
                acc -= h[i][l] * y[l];
            }
            y[i] = acc / h[i][i];
        }
        z.iter_mut().for_each(|v| *v = 0.0);
        for (yi, vi) in y.iter().zip(&basis) {
            for (zl, vl) in z.iter_mut().zip(vi) {
                *zl += yi * vl;
            }
        }
        for i in 0..n {
            x[i] += inv_diag[i] * z[i];
        }
    }
}

/// Conjugate gradients for a symmetric positive (semi-)definite matrix. With
/// `project_mean`, iterates are kept in the mean-zero subspace, which is the
/// range of a periodic Laplacian.
pub(crate) fn cg(m: &SparseMatrix, b: &[f64], tol: f64, max_iter: usize, project_mean: bool) -> Run {
    let n = b.len();
    let bnorm = norm(b);
    let project = |v: &mut [f64]| {
        if project_mean {
            let mean = v.iter().sum::<f64>() / n as f64;
            v.iter_mut().for_each(|x| *x -= mean);
        }
    };
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Run {
            x,
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }
    let mut r = b.to_vec();
    project(&mut r);
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut it = 0;
    while it < max_iter && rr.sqrt() / bnorm > 0.5 * tol {
        it += 1;
        m.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        project(&mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    project(&mut x);
    residual(m, b, &x, &mut r);
    let res = norm(&r) / bnorm;
    Run {
        x,
        iterations: it,
        residual: res,
        converged: res <= tol,
    }
}
