//! Small dense and banded complex linear algebra kernels.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `x^H y`
pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// LU factorization with partial pivoting of a banded matrix with `kl` sub- and `ku`
/// super-diagonals. Row `i` stores columns `i-kl ..= i+kl+ku` to leave room for fill-in.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    ab: Vec<C64>,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn factor(n: usize, kl: usize, ku: usize, entry: impl Fn(usize, usize) -> C64) -> Result<Self> {
        let width = 2 * kl + ku + 1;
        let mut lu = BandedLu { n, kl, ku, width, ab: vec![ZERO; n * width], piv: vec![0; n] };
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let hi = (i + ku).min(n - 1);
            for j in lo..=hi {
                *lu.at_mut(i, j) = entry(i, j);
            }
        }
        let reach = kl + ku;
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.at(k, k).norm();
            for i in k + 1..=last {
                let v = lu.at(i, k).norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular(format!("pivot {k} of banded system")));
            }
            lu.piv[k] = p;
            let jend = (k + reach).min(n - 1);
            if p != k {
                for j in k..=jend {
                    let a = lu.at(k, j);
                    let b = lu.at(p, j);
                    *lu.at_mut(k, j) = b;
                    *lu.at_mut(p, j) = a;
                }
            }
            let d = lu.at(k, k);
            for i in k + 1..=last {
                let l = lu.at(i, k) / d;
                *lu.at_mut(i, k) = l;
                if l != ZERO {
                    for j in k + 1..=jend {
                        let u = lu.at(k, j);
                        *lu.at_mut(i, j) -= l * u;
                    }
                }
            }
        }
        Ok(lu)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> C64 {
        self.ab[i * self.width + (j + self.kl - i)]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut C64 {
        &mut self.ab[i * self.width + (j + self.kl - i)]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [C64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + self.kl).min(n - 1) {
                b[i] -= self.at(i, k) * bk;
            }
        }
        let reach = self.kl + self.ku;
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..=(i + reach).min(n - 1) {
                s -= self.at(i, j) * b[j];
            }
            b[i] = s / self.at(i, i);
        }
    }
}

/// Dense LU solve; errors on exact or numerical singularity.
pub fn solve_dense(a: &CMat, b: &CVec, what: &str) -> Result<CVec> {
    let lu = a.clone().lu();
    let x = lu.solve(b).ok_or_else(|| Error::Singular(what.to_string()))?;
    if x.iter().any(|z| !z.is_finite()) {
        return Err(Error::Singular(what.to_string()));
    }
    Ok(x)
}

/// Cheap 1-norm condition estimate via an explicit inverse; only for small matrices.
pub fn condition_estimate(a: &CMat) -> f64 {
    let one_norm = |m: &CMat| {
        (0..m.ncols()).map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
    };
    match a.clone().try_inverse() {
        Some(inv) => one_norm(a) * one_norm(&inv),
        None => f64::INFINITY,
    }
}

/// Eigen-decomposition `m = X diag(lambda) X^{-1}` of a general complex matrix via the
/// complex Schur form and triangular back substitution.
pub fn eig_decompose(m: &CMat) -> Option<(CMat, CMat, Vec<C64>)> {
    let n = m.nrows();
    if n == 0 {
        return Some((CMat::zeros(0, 0), CMat::zeros(0, 0), vec![]));
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), 1e-15, 10_000)?;
    let (q, t) = schur.unpack();
    let lambda: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
    let scale = lambda.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut y = CMat::zeros(n, n);
    for k in 0..n {
        y[(k, k)] = ONE;
        for i in (0..k).rev() {
            let mut s = ZERO;
            for j in i + 1..=k {
                s += t[(i, j)] * y[(j, k)];
            }
            let mut d = t[(i, i)] - lambda[k];
            if d.norm() < 1e-14 * scale {
                d = C64::new(1e-14 * scale, 0.0);
            }
            y[(i, k)] = -s / d;
        }
        let nk = y.column(k).norm();
        y.column_mut(k).unscale_mut(nk);
    }
    let x = q * y;
    let xinv = x.clone().try_inverse()?;
    if xinv.iter().any(|z| !z.is_finite()) {
        return None;
    }
    Some((x, xinv, lambda))
}

/// Leading `r` left singular vectors of `a`, sorted by decreasing singular value.
pub fn leading_left_singular(a: &CMat, r: usize) -> CMat {
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]).then(i.cmp(&j)));
    let r = r.min(order.len());
    CMat::from_fn(a.nrows(), r, |i, j| u[(i, order[j])])
}

#[derive(Debug, Clone, Copy)]
pub struct GmresOutcome {
    pub iterations: usize,
    pub residual: f64,
}

/// Restarted, right-preconditioned GMRES. `x` holds the initial guess on entry.
/// Converged when `||b - A x|| <= tol * ||b||`.
pub fn gmres(
    apply: &mut dyn FnMut(&[C64]) -> Vec<C64>,
    precond: &mut dyn FnMut(&[C64]) -> Vec<C64>,
    b: &[C64],
    x: &mut [C64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> GmresOutcome {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = ZERO);
        return GmresOutcome { iterations: 0, residual: 0.0 };
    }
    let target = tol * bnorm;
    let mut total = 0;
    loop {
        let ax = apply(x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
        let beta = norm(&r);
        if beta <= target || total >= max_iter {
            return GmresOutcome { iterations: total, residual: beta / bnorm };
        }
        let m = restart.min(max_iter - total).max(1);
        let mut v: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        let mut z: Vec<Vec<C64>> = Vec::with_capacity(m);
        v.push(r.iter().map(|a| a / beta).collect());
        let mut h = vec![vec![ZERO; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![ZERO; m];
        let mut g = vec![ZERO; m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k_used = 0;
        for k in 0..m {
            let zk = precond(&v[k]);
            let mut w = apply(&zk);
            z.push(zk);
            for (j, vj) in v.iter().enumerate() {
                let hjk = dot(vj, &w);
                h[j][k] = hjk;
                for (wi, vi) in w.iter_mut().zip(vj) {
                    *wi -= hjk * vi;
                }
            }
            let hn = norm(&w);
            h[k + 1][k] = C64::new(hn, 0.0);
            for j in 0..k {
                let a = h[j][k];
                let bb = h[j + 1][k];
                h[j][k] = cs[j] * a + sn[j] * bb;
                h[j + 1][k] = -sn[j].conj() * a + cs[j] * bb;
            }
            let a = h[k][k];
            let bb = h[k + 1][k];
            let rr = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if rr == 0.0 {
                cs[k] = 1.0;
                sn[k] = ZERO;
            } else if a.norm() == 0.0 {
                cs[k] = 0.0;
                sn[k] = bb.conj() / rr;
            } else {
                cs[k] = a.norm() / rr;
                sn[k] = (a / a.norm()) * bb.conj() / rr;
            }
            h[k][k] = cs[k] * a + sn[k] * bb;
            h[k + 1][k] = ZERO;
            g[k + 1] = -sn[k].conj() * g[k];
            g[k] = cs[k] * g[k];
            k_used = k + 1;
            total += 1;
            if g[k + 1].norm() <= target || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|a| a / hn).collect());
        }
        let mut y = vec![ZERO; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(&z[j]) {
                *xi += yj * zi;
            }
        }
        let _ = n;
    }
}
