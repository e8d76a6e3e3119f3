//! Linear systems `sum_t (L_t1 ⊗ L_t2 ⊗ ...) y = r` on row-major tensors.
//!
//! Small systems are assembled and factored densely. Larger ones use GMRES with a
//! preconditioner that diagonalizes every non-spatial dimension against a reference
//! pair `(S_d, T_d)` and solves the remaining spatial blocks exactly. It is the exact
//! inverse whenever each non-spatial factor is a combination of its `S_d` and `T_d`.

use nalgebra::DVector;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{self, BandedLu, CMat, ONE, ZERO};
use crate::tensor::{mode_factor, mode_product, Factor};

#[derive(Debug, Clone)]
pub struct KronSystem {
    pub dims: Vec<usize>,
    pub terms: Vec<Vec<Factor>>,
    pub spatial: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct KronOptions {
    pub direct_cap: usize,
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for KronOptions {
    fn default() -> Self {
        KronOptions { direct_cap: 512, tol: 1e-11, restart: 40, max_iter: 3000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KronInfo {
    pub direct: bool,
    pub iterations: usize,
    pub residual: f64,
}

impl KronSystem {
    pub fn size(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut acc = vec![ZERO; x.len()];
        for term in &self.terms {
            let mut s = self.dims.clone();
            let mut d = x.to_vec();
            for (k, f) in term.iter().enumerate() {
                let (s2, d2) = mode_factor(&s, &d, k, f);
                s = s2;
                d = d2;
            }
            for (a, b) in acc.iter_mut().zip(d) {
                *a += b;
            }
        }
        acc
    }

    pub fn to_dense(&self) -> CMat {
        let n = self.size();
        let mut total = CMat::zeros(n, n);
        for term in &self.terms {
            let mut m = term[0].to_dense();
            for f in &term[1..] {
                m = m.kronecker(&f.to_dense());
            }
            total += m;
        }
        total
    }

    pub fn residual(&self, x: &[C64], rhs: &[C64]) -> f64 {
        let ax = self.apply(x);
        let r: Vec<C64> = rhs.iter().zip(&ax).map(|(a, b)| a - b).collect();
        let nb = linalg::norm(rhs);
        if nb == 0.0 {
            linalg::norm(&r)
        } else {
            linalg::norm(&r) / nb
        }
    }
}

enum BlockLu {
    Dense(nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>),
    Banded(BandedLu),
}

impl BlockLu {
    fn solve(&self, b: &mut [C64]) {
        match self {
            BlockLu::Dense(lu) => {
                let mut v = DVector::from_column_slice(b);
                if lu.solve_mut(&mut v) {
                    b.copy_from_slice(v.as_slice());
                }
            }
            BlockLu::Banded(lu) => lu.solve_in_place(b),
        }
    }
}

struct DimTransform {
    forward: Option<CMat>,
    back: Option<CMat>,
}

struct Preconditioner {
    dims: Vec<usize>,
    spatial: usize,
    transforms: Vec<DimTransform>,
    blocks: Vec<BlockLu>,
}

fn bandwidth(m: &CMat) -> usize {
    let mut bw = 0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)] != ZERO {
                bw = bw.max(i.abs_diff(j));
            }
        }
    }
    bw
}

impl Preconditioner {
    fn build(sys: &KronSystem, refs: &[Option<(CMat, CMat)>]) -> Result<Self> {
        let nd = sys.dims.len();
        let s = sys.spatial;
        let mut transforms = Vec::with_capacity(nd);
        let mut deltas: Vec<Vec<Vec<C64>>> = vec![Vec::new(); nd];
        for d in 0..nd {
            if d == s {
                transforms.push(DimTransform { forward: None, back: None });
                continue;
            }
            let all_diag = sys.terms.iter().all(|t| t[d].is_diag());
            let eig = if all_diag {
                None
            } else {
                refs.get(d).and_then(|r| r.as_ref()).and_then(|(sm, tm)| {
                    let sinv = sm.clone().try_inverse()?;
                    let (x, xinv, _) = linalg::eig_decompose(&(&sinv * tm))?;
                    Some((xinv * sinv, x))
                })
            };
            match eig {
                Some((q, x)) => {
                    deltas[d] = sys
                        .terms
                        .iter()
                        .map(|t| {
                            let m = &q * t[d].apply_mat(&x);
                            (0..m.nrows()).map(|i| m[(i, i)]).collect()
                        })
                        .collect();
                    transforms.push(DimTransform { forward: Some(q), back: Some(x) });
                }
                None => {
                    deltas[d] = sys
                        .terms
                        .iter()
                        .map(|t| match &t[d] {
                            Factor::Diag(v) => v.clone(),
                            Factor::Dense(m) => (0..m.nrows()).map(|i| m[(i, i)]).collect(),
                        })
                        .collect();
                    transforms.push(DimTransform { forward: None, back: None });
                }
            }
        }
        let others: Vec<usize> = (0..nd).filter(|&d| d != s).collect();
        let nblocks: usize = others.iter().map(|&d| sys.dims[d]).product();
        let spatial_mats: Vec<CMat> = sys.terms.iter().map(|t| t[s].to_dense()).collect();
        let ns = sys.dims[s];
        let bw = spatial_mats.iter().map(bandwidth).max().unwrap_or(0);
        let banded = ns > 64 && 4 * bw < ns;
        let mut blocks = Vec::with_capacity(nblocks);
        let mut idx = vec![0usize; others.len()];
        for _ in 0..nblocks {
            let coef: Vec<C64> = (0..sys.terms.len())
                .map(|t| others.iter().zip(&idx).map(|(&d, &i)| deltas[d][t][i]).fold(ONE, |a, b| a * b))
                .collect();
            let block = if banded {
                let lu = BandedLu::factor(ns, bw, bw, |i, j| {
                    spatial_mats.iter().zip(&coef).map(|(m, c)| m[(i, j)] * c).sum()
                })
                .map_err(|_| Error::Singular("preconditioner block".into()))?;
                BlockLu::Banded(lu)
            } else {
                let mut b = CMat::zeros(ns, ns);
                for (m, c) in spatial_mats.iter().zip(&coef) {
                    if *c != ZERO {
                        b += m * *c;
                    }
                }
                BlockLu::Dense(b.lu())
            };
            blocks.push(block);
            for p in (0..idx.len()).rev() {
                idx[p] += 1;
                if idx[p] < sys.dims[others[p]] {
                    break;
                }
                idx[p] = 0;
            }
        }
        Ok(Preconditioner { dims: sys.dims.clone(), spatial: s, transforms, blocks })
    }

    fn apply(&self, r: &[C64]) -> Vec<C64> {
        let mut shape = self.dims.clone();
        let mut data = r.to_vec();
        for (d, t) in self.transforms.iter().enumerate() {
            if let Some(q) = &t.forward {
                let (s, x) = mode_product(&shape, &data, d, q);
                shape = s;
                data = x;
            }
        }
        let s = self.spatial;
        let outer: usize = shape[..s].iter().product();
        let inner: usize = shape[s + 1..].iter().product();
        let ns = shape[s];
        let mut fiber = vec![ZERO; ns];
        for o in 0..outer {
            for n in 0..inner {
                for (j, f) in fiber.iter_mut().enumerate() {
                    *f = data[(o * ns + j) * inner + n];
                }
                self.blocks[o * inner + n].solve(&mut fiber);
                for (j, f) in fiber.iter().enumerate() {
                    data[(o * ns + j) * inner + n] = *f;
                }
            }
        }
        for (d, t) in self.transforms.iter().enumerate() {
            if let Some(x) = &t.back {
                let (s2, x2) = mode_product(&shape, &data, d, x);
                shape = s2;
                data = x2;
            }
        }
        data
    }
}

/// Solves the system; `x0` is an optional warm start and `refs` the per-dimension
/// reference pairs used by the preconditioner.
pub fn solve(
    sys: &KronSystem,
    rhs: &[C64],
    x0: Option<&[C64]>,
    refs: &[Option<(CMat, CMat)>],
    opts: &KronOptions,
) -> Result<(Vec<C64>, KronInfo)> {
    if sys.size() <= opts.direct_cap {
        return solve_with(sys, rhs, x0, &|v| v.to_vec(), opts);
    }
    let pre = Preconditioner::build(sys, refs)?;
    solve_with(sys, rhs, x0, &|v| pre.apply(v), opts)
}

/// Same as [`solve`] with a caller-supplied preconditioner for the iterative branch.
pub fn solve_with(
    sys: &KronSystem,
    rhs: &[C64],
    x0: Option<&[C64]>,
    pre: &dyn Fn(&[C64]) -> Vec<C64>,
    opts: &KronOptions,
) -> Result<(Vec<C64>, KronInfo)> {
    let n = sys.size();
    if rhs.len() != n {
        return Err(Error::Dimension(format!("right-hand side has {} entries, system has {n}", rhs.len())));
    }
    if n <= opts.direct_cap {
        let a = sys.to_dense();
        let x = linalg::solve_dense(&a, &DVector::from_column_slice(rhs), "reduced system")
            .map_err(|_| Error::SingularReduced { modes: 0, cond: linalg::condition_estimate(&a) })?;
        let x = x.as_slice().to_vec();
        let residual = sys.residual(&x, rhs);
        return Ok((x, KronInfo { direct: true, iterations: 0, residual }));
    }
    let mut x = match x0 {
        Some(v) if v.len() == n => v.to_vec(),
        _ => pre(rhs),
    };
    let out = linalg::gmres(&mut |v| sys.apply(v), &mut |v| pre(v), rhs, &mut x, opts.tol, opts.restart, opts.max_iter);
    if x.iter().any(|z| !z.is_finite()) {
        return Err(Error::Singular("reduced system produced non-finite values".into()));
    }
    let residual = sys.residual(&x, rhs);
    Ok((x, KronInfo { direct: false, iterations: out.iterations, residual }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rc(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    }

    fn hpd(rng: &mut ChaCha8Rng, n: usize) -> CMat {
        let a = CMat::from_fn(n, n, |_, _| rc(rng));
        &a * a.adjoint() + CMat::identity(n, n) * C64::new(n as f64, 0.0)
    }

    #[test]
    fn exact_preconditioner_on_two_matrix_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (np, nz, nw) = (6, 5, 7);
        let sp = hpd(&mut rng, np);
        let tp = hpd(&mut rng, np);
        let sw = hpd(&mut rng, nw);
        let tw = hpd(&mut rng, nw);
        let z: Vec<CMat> = (0..3).map(|_| CMat::from_fn(nz, nz, |_, _| rc(&mut rng)) + CMat::identity(nz, nz) * C64::new(4.0, 1.0)).collect();
        let terms = vec![
            vec![Factor::Dense(tp.clone()), Factor::Dense(z[0].clone()), Factor::Dense(tw.clone())],
            vec![Factor::Dense(sp.clone()), Factor::Dense(z[1].clone()), Factor::Dense(sw.clone())],
            vec![Factor::Dense(sp.clone()), Factor::Dense(z[2].clone()), Factor::Dense(&tw * C64::new(-0.3, 0.0))],
        ];
        let sys = KronSystem { dims: vec![np, nz, nw], terms, spatial: 1 };
        let rhs: Vec<C64> = (0..sys.size()).map(|_| rc(&mut rng)).collect();
        let refs = vec![Some((sp, tp)), None, Some((sw, tw))];
        let opts = KronOptions { direct_cap: 0, ..Default::default() };
        let (x, info) = solve(&sys, &rhs, None, &refs, &opts).unwrap();
        assert!(info.residual < 1e-10, "{info:?}");
        assert!(info.iterations <= 2, "{info:?}");
        let (xd, infod) = solve(&sys, &rhs, None, &refs, &KronOptions::default()).unwrap();
        assert!(infod.direct);
        let diff: f64 = x.iter().zip(&xd).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(diff < 1e-9 * linalg::norm(&xd));
    }
}
