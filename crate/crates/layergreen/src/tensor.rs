//! Tucker tensors, CP-format operators and the contractions between them.

use std::ops::Range;

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fom::{FomSetup, ForceTensor, SamplingGrid};
use crate::linalg::{CMat, I, ONE, ZERO};
use crate::thin_layer::{boundary_dofs, WaveProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DimLabel {
    Slowness,
    Depth,
    Frequency,
    ShearModulus,
}

impl DimLabel {
    pub fn name(self) -> &'static str {
        match self {
            DimLabel::Slowness => "p",
            DimLabel::Depth => "z",
            DimLabel::Frequency => "f",
            DimLabel::ShearModulus => "mu",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [DimLabel::Slowness, DimLabel::Depth, DimLabel::Frequency, DimLabel::ShearModulus].get(c as usize).copied()
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "p" | "slowness" => Some(DimLabel::Slowness),
            "z" | "depth" => Some(DimLabel::Depth),
            "f" | "freq" | "frequency" => Some(DimLabel::Frequency),
            "mu" => Some(DimLabel::ShearModulus),
            _ => None,
        }
    }
}

/// Default labels for a `(p, z, f[, mu])` tensor of rank `d`.
pub fn default_labels(d: usize) -> Vec<DimLabel> {
    [DimLabel::Slowness, DimLabel::Depth, DimLabel::Frequency, DimLabel::ShearModulus][..d.min(4)].to_vec()
}

/// One per-dimension matrix of a CP term.
#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    Diag(Vec<C64>),
    Dense(CMat),
}

impl Factor {
    pub fn n(&self) -> usize {
        match self {
            Factor::Diag(d) => d.len(),
            Factor::Dense(m) => m.ncols(),
        }
    }

    pub fn is_diag(&self) -> bool {
        matches!(self, Factor::Diag(_))
    }

    pub fn to_dense(&self) -> CMat {
        match self {
            Factor::Diag(d) => CMat::from_diagonal(&nalgebra::DVector::from_column_slice(d)),
            Factor::Dense(m) => m.clone(),
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        match self {
            Factor::Diag(d) => d.iter().zip(x).map(|(a, b)| a * b).collect(),
            Factor::Dense(m) => (m * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec(),
        }
    }

    /// `v^H M x`
    pub fn bilinear(&self, v: &[C64], x: &[C64]) -> C64 {
        match self {
            Factor::Diag(d) => v.iter().zip(d).zip(x).map(|((a, b), c)| a.conj() * b * c).sum(),
            Factor::Dense(m) => {
                let mx = m * nalgebra::DVector::from_column_slice(x);
                v.iter().zip(mx.iter()).map(|(a, b)| a.conj() * b).sum()
            }
        }
    }

    /// `M U`
    pub fn apply_mat(&self, u: &CMat) -> CMat {
        match self {
            Factor::Diag(d) => CMat::from_fn(u.nrows(), u.ncols(), |i, j| d[i] * u[(i, j)]),
            Factor::Dense(m) => m * u,
        }
    }

    /// `V^H M U`
    pub fn project(&self, v: &CMat, u: &CMat) -> CMat {
        v.adjoint() * self.apply_mat(u)
    }

    pub fn scaled(&self, c: C64) -> Factor {
        match self {
            Factor::Diag(d) => Factor::Diag(d.iter().map(|a| a * c).collect()),
            Factor::Dense(m) => Factor::Dense(m * c),
        }
    }
}

/// Row-major mode-`k` product: `out[o, i, n] = sum_j m[i, j] t[o, j, n]`.
pub fn mode_product(shape: &[usize], data: &[C64], k: usize, m: &CMat) -> (Vec<usize>, Vec<C64>) {
    let outer: usize = shape[..k].iter().product();
    let inner: usize = shape[k + 1..].iter().product();
    let nj = shape[k];
    assert_eq!(m.ncols(), nj, "mode product size mismatch");
    let ni = m.nrows();
    let mut out = vec![ZERO; outer * ni * inner];
    for o in 0..outer {
        let src = &data[o * nj * inner..(o + 1) * nj * inner];
        let dst = &mut out[o * ni * inner..(o + 1) * ni * inner];
        for i in 0..ni {
            let row = &mut dst[i * inner..(i + 1) * inner];
            for j in 0..nj {
                let c = m[(i, j)];
                if c == ZERO {
                    continue;
                }
                let s = &src[j * inner..(j + 1) * inner];
                for (r, x) in row.iter_mut().zip(s) {
                    *r += c * x;
                }
            }
        }
    }
    let mut s = shape.to_vec();
    s[k] = ni;
    (s, out)
}

pub fn mode_scale(shape: &[usize], data: &mut [C64], k: usize, d: &[C64]) {
    let inner: usize = shape[k + 1..].iter().product();
    let nk = shape[k];
    for (idx, v) in data.iter_mut().enumerate() {
        *v *= d[(idx / inner) % nk];
    }
}

pub fn mode_factor(shape: &[usize], data: &[C64], k: usize, f: &Factor) -> (Vec<usize>, Vec<C64>) {
    match f {
        Factor::Diag(d) => {
            let mut out = data.to_vec();
            mode_scale(shape, &mut out, k, d);
            (shape.to_vec(), out)
        }
        Factor::Dense(m) => mode_product(shape, data, k, m),
    }
}

/// Contracts every dimension except `keep` with a row vector, leaving a vector over `keep`.
pub fn contract_except(shape: &[usize], data: &[C64], keep: usize, rows: &[Option<Vec<C64>>]) -> Vec<C64> {
    let mut s = shape.to_vec();
    let mut d = data.to_vec();
    for (k, r) in rows.iter().enumerate() {
        if k == keep {
            continue;
        }
        let r = r.as_ref().expect("row vector for every contracted dimension");
        let m = CMat::from_fn(1, r.len(), |_, j| r[j]);
        let (s2, d2) = mode_product(&s, &d, k, &m);
        s = s2;
        d = d2;
    }
    d
}

pub fn frob(a: &ArrayD<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Core tensor and one factor matrix per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerTensor {
    pub core: ArrayD<C64>,
    pub factors: Vec<CMat>,
    pub labels: Vec<DimLabel>,
}

impl TuckerTensor {
    pub fn new(core: ArrayD<C64>, factors: Vec<CMat>, labels: Vec<DimLabel>) -> Result<Self> {
        if core.ndim() != factors.len() || labels.len() != factors.len() {
            return Err(Error::Dimension("core order, factor count and labels disagree".into()));
        }
        for (d, f) in factors.iter().enumerate() {
            if f.ncols() != core.shape()[d] {
                return Err(Error::Dimension(format!("factor {d} has {} columns, core extent is {}", f.ncols(), core.shape()[d])));
            }
        }
        Ok(TuckerTensor { core: core.as_standard_layout().to_owned(), factors, labels })
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.core.shape().to_vec()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn ndim(&self) -> usize {
        self.factors.len()
    }

    /// Reconstruct the sub-block `ranges` (one row range per dimension).
    pub fn reconstruct_ranges(&self, ranges: &[Range<usize>]) -> Result<ArrayD<C64>> {
        if ranges.len() != self.ndim() {
            return Err(Error::Dimension("one range per dimension required".into()));
        }
        for (d, r) in ranges.iter().enumerate() {
            if r.end > self.factors[d].nrows() || r.start > r.end {
                return Err(Error::Dimension(format!("range {r:?} out of bounds for dimension {d}")));
            }
        }
        let mut shape = self.ranks();
        let mut data = self.core.as_slice().expect("standard layout").to_vec();
        for (d, r) in ranges.iter().enumerate() {
            let rows = self.factors[d].rows(r.start, r.end - r.start).into_owned();
            let (s, x) = mode_product(&shape, &data, d, &rows);
            shape = s;
            data = x;
        }
        Ok(ArrayD::from_shape_vec(IxDyn(&shape), data).expect("shape matches"))
    }

    pub fn reconstruct(&self) -> ArrayD<C64> {
        let ranges: Vec<Range<usize>> = self.dims().into_iter().map(|n| 0..n).collect();
        self.reconstruct_ranges(&ranges).expect("full ranges are valid")
    }

    /// Leading `r_d` columns and the matching core block.
    pub fn truncate(&self, ranks: &[usize]) -> Result<TuckerTensor> {
        if ranks.len() != self.ndim() {
            return Err(Error::Dimension("one rank per dimension required".into()));
        }
        let full = self.ranks();
        for (d, (&r, &rf)) in ranks.iter().zip(&full).enumerate() {
            if r == 0 || r > rf {
                return Err(Error::Dimension(format!("rank {r} invalid for dimension {d} with rank {rf}")));
            }
        }
        let core = self
            .core
            .slice_each_axis(|ax| ndarray::Slice::from(0..ranks[ax.axis.index()]))
            .to_owned();
        let factors = self.factors.iter().zip(ranks).map(|(f, &r)| f.columns(0, r).into_owned()).collect();
        TuckerTensor::new(core, factors, self.labels.clone())
    }

    /// Truncation to `min(r, R_d)` in every dimension.
    pub fn truncate_uniform(&self, r: usize) -> TuckerTensor {
        let ranks: Vec<usize> = self.ranks().iter().map(|&rd| rd.min(r).max(1)).collect();
        self.truncate(&ranks).expect("ranks within bounds")
    }

    pub fn core_norm(&self) -> f64 {
        frob(&self.core)
    }

    /// Largest deviation `max |U^H U - I|` over all factors.
    pub fn orthonormality_defect(&self) -> f64 {
        self.factors.iter().map(orthonormality_defect).fold(0.0, f64::max)
    }
}

pub fn orthonormality_defect(u: &CMat) -> f64 {
    let g = u.adjoint() * u;
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((g[(i, j)] - target).norm());
        }
    }
    worst
}

pub fn rel_frobenius_error(fom: &ArrayD<C64>, rom: &TuckerTensor, ranks: &[usize]) -> Result<f64> {
    let t = rom.truncate(ranks)?;
    if fom.shape() != t.dims().as_slice() {
        return Err(Error::Dimension(format!("FOM shape {:?} vs ROM {:?}", fom.shape(), t.dims())));
    }
    let nf = frob(fom);
    if nf == 0.0 {
        return Err(Error::Dimension("reference tensor has zero norm".into()));
    }
    let rec = t.reconstruct();
    let diff: f64 = fom.iter().zip(rec.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    Ok(diff / nf)
}

pub fn dense_bytes(shape: &[usize]) -> u64 {
    16 * shape.iter().map(|&n| n as u64).product::<u64>()
}

pub fn tucker_bytes(dims: &[usize], ranks: &[usize]) -> u64 {
    let core: u64 = ranks.iter().map(|&r| r as u64).product();
    let fac: u64 = dims.iter().zip(ranks).map(|(&n, &r)| (n * r) as u64).sum();
    16 * (core + fac)
}

pub fn megabytes(bytes: u64) -> f64 {
    bytes as f64 / 1e6
}

/// Dynamic stiffness as a sum of Kronecker terms over `(p, z, f[, mu])`. Every
/// parametric dimension carries diagonal factors, including its quadrature weights.
#[derive(Debug, Clone)]
pub struct CpOperator {
    pub labels: Vec<DimLabel>,
    pub dims: Vec<usize>,
    pub terms: Vec<Vec<Factor>>,
    pub weights: Vec<Vec<f64>>,
    /// The one dimension whose factors are not diagonal.
    pub spatial: usize,
}

/// Trapezoid weights on the nodes `x`, rescaled to unit mean.
pub fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 1 {
        return vec![1.0];
    }
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = 0.5 * (x[i + 1] - x[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    let mean = w.iter().sum::<f64>() / n as f64;
    w.iter().map(|v| v / mean).collect()
}

fn diag(v: impl IntoIterator<Item = C64>) -> Factor {
    Factor::Diag(v.into_iter().collect())
}

impl CpOperator {
    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.dims.len() || self.weights.len() != self.dims.len() {
            return Err(Error::Dimension("labels, weights and extents disagree".into()));
        }
        for (t, term) in self.terms.iter().enumerate() {
            if term.len() != self.dims.len() {
                return Err(Error::Dimension(format!("term {t} has {} factors for {} dims", term.len(), self.dims.len())));
            }
            for (d, f) in term.iter().enumerate() {
                if f.n() != self.dims[d] {
                    return Err(Error::Dimension(format!("term {t} dim {d}: size {} vs {}", f.n(), self.dims[d])));
                }
                if d != self.spatial && !f.is_diag() {
                    return Err(Error::Dimension(format!("term {t} dim {d} must be diagonal")));
                }
            }
        }
        Ok(())
    }

    /// Per term, the tuple `(M_d x_d)`.
    pub fn apply_rank_one(&self, x: &[Vec<C64>]) -> Result<Vec<Vec<Vec<C64>>>> {
        if x.len() != self.ndim() {
            return Err(Error::Dimension("one vector per dimension required".into()));
        }
        for (d, xd) in x.iter().enumerate() {
            if xd.len() != self.dims[d] {
                return Err(Error::Dimension(format!("vector {d} has length {}, expected {}", xd.len(), self.dims[d])));
            }
        }
        Ok(self.terms.iter().map(|term| term.iter().zip(x).map(|(f, xd)| f.apply(xd)).collect()).collect())
    }

    /// Operator applied to a dense tensor.
    pub fn apply_dense(&self, x: &ArrayD<C64>) -> ArrayD<C64> {
        let shape = x.shape().to_vec();
        let data = x.as_standard_layout().to_owned().into_raw_vec_and_offset().0;
        let mut acc = vec![ZERO; data.len()];
        for term in &self.terms {
            let mut s = shape.clone();
            let mut d = data.clone();
            for (k, f) in term.iter().enumerate() {
                let (s2, d2) = mode_factor(&s, &d, k, f);
                s = s2;
                d = d2;
            }
            for (a, b) in acc.iter_mut().zip(d) {
                *a += b;
            }
        }
        ArrayD::from_shape_vec(IxDyn(&shape), acc).expect("shape preserved")
    }

    /// Spatial matrix at parametric multi-index `idx` (entry at `spatial` ignored).
    pub fn sample_matrix(&self, idx: &[usize]) -> CMat {
        let n = self.dims[self.spatial];
        let mut out = CMat::zeros(n, n);
        for term in &self.terms {
            let mut c = ONE;
            for (d, f) in term.iter().enumerate() {
                if d == self.spatial {
                    continue;
                }
                if let Factor::Diag(v) = f {
                    c *= v[idx[d]];
                }
            }
            out += term[self.spatial].to_dense() * c;
        }
        out
    }

    /// Product of parametric weights at `idx`.
    pub fn sample_weight(&self, idx: &[usize]) -> f64 {
        (0..self.ndim()).filter(|&d| d != self.spatial).map(|d| self.weights[d][idx[d]]).product()
    }

    /// Dense Kronecker matrix in row-major multi-index order; small grids only.
    pub fn to_dense(&self) -> CMat {
        let mut total: Option<CMat> = None;
        for term in &self.terms {
            let mut m = term[0].to_dense();
            for f in &term[1..] {
                m = m.kronecker(&f.to_dense());
            }
            total = Some(match total {
                Some(t) => t + m,
                None => m,
            });
        }
        total.unwrap_or_else(|| {
            let n: usize = self.dims.iter().product();
            CMat::zeros(n, n)
        })
    }

    /// Force factors with the parametric quadrature weights applied.
    pub fn weighted_force(&self, f: &ForceTensor) -> Result<Vec<Vec<C64>>> {
        if f.factors.len() != self.ndim() {
            return Err(Error::Dimension("force and operator orders differ".into()));
        }
        Ok(f.factors
            .iter()
            .enumerate()
            .map(|(d, v)| {
                if d == self.spatial {
                    v.clone()
                } else {
                    v.iter().zip(&self.weights[d]).map(|(a, w)| a * *w).collect()
                }
            })
            .collect())
    }
}

/// Builds the CP operator over `(p, z, f[, mu])`.
pub fn build_operator(setup: &FomSetup, grid: &SamplingGrid) -> Result<CpOperator> {
    grid.validate()?;
    let n = setup.globals.n_dof();
    if grid.depth.len() != n {
        return Err(Error::Dimension(format!("grid has {} depth DOFs, matrices have {n}", grid.depth.len())));
    }
    let p = &grid.slowness;
    let w = grid.omega();
    let wp = if grid.log_spaced {
        trapezoid_weights(&p.iter().map(|v| v.ln()).collect::<Vec<_>>())
    } else {
        trapezoid_weights(p)
    };
    let ww = trapezoid_weights(&w);
    let c = |x: f64| C64::new(x, 0.0);
    let p2: Factor = diag(p.iter().zip(&wp).map(|(a, b)| c(a * a * b)));
    let p1: Factor = diag(p.iter().zip(&wp).map(|(a, b)| c(a * b)));
    let p0: Factor = diag(wp.iter().map(|&b| c(b)));
    let w2: Factor = diag(w.iter().zip(&ww).map(|(a, b)| c(a * a * b)));
    let w1: Factor = diag(w.iter().zip(&ww).map(|(a, b)| c(a * b)));
    let w0: Factor = diag(ww.iter().map(|&b| c(b)));
    let wm2: Factor = diag(w.iter().zip(&ww).map(|(a, b)| c(-a * a * b)));
    let g = &setup.globals;
    let neg_i = -I;
    let mut terms: Vec<Vec<Factor>> = Vec::new();
    let mut labels = vec![DimLabel::Slowness, DimLabel::Depth, DimLabel::Frequency];
    let mut weights = vec![wp.clone(), vec![1.0; n], ww.clone()];
    match (&grid.mu, &setup.mu_split) {
        (None, _) => {
            terms.push(vec![p2, Factor::Dense(g.a.clone()), w2]);
            terms.push(vec![p1, Factor::Dense(&g.b * neg_i), w1.clone()]);
            terms.push(vec![p0.clone(), Factor::Dense(g.g.clone()), w0]);
            terms.push(vec![p0, Factor::Dense(g.m.clone()), wm2]);
        }
        (Some(mu), Some(split)) => {
            let wmu = trapezoid_weights(mu);
            let scale = mu.iter().sum::<f64>() / mu.len() as f64;
            let m1: Factor = diag(mu.iter().zip(&wmu).map(|(a, b)| c(a / scale * b)));
            let m0: Factor = diag(wmu.iter().map(|&b| c(b)));
            let sc = c(scale);
            labels.push(DimLabel::ShearModulus);
            weights.push(wmu);
            terms.push(vec![p2.clone(), Factor::Dense(&split.a.0 * sc), w2.clone(), m1.clone()]);
            terms.push(vec![p2, Factor::Dense(split.a.1.clone()), w2, m0.clone()]);
            terms.push(vec![p1.clone(), Factor::Dense(&split.b.0 * (sc * neg_i)), w1.clone(), m1.clone()]);
            terms.push(vec![p1, Factor::Dense(&split.b.1 * neg_i), w1.clone(), m0.clone()]);
            terms.push(vec![p0.clone(), Factor::Dense(&split.g.0 * sc), w0.clone(), m1]);
            terms.push(vec![p0.clone(), Factor::Dense(split.g.1.clone()), w0, m0.clone()]);
            terms.push(vec![p0, Factor::Dense(g.m.clone()), wm2, m0]);
        }
        (Some(_), None) => return Err(Error::Dimension("shear-modulus samples need a swept-mu setup".into())),
    }
    if let Some(hs) = &setup.impedance {
        let bd = boundary_dofs(&setup.mesh);
        let kps: Vec<CMat> = p.iter().map(|&pi| hs.kp(pi)).collect::<Result<_>>()?;
        let unit = |i: usize, j: usize, v: C64| {
            let mut m = CMat::zeros(n, n);
            m[(bd[i], bd[j])] = v;
            m
        };
        let pk = |i: usize, j: usize| diag(kps.iter().zip(&wp).map(|(k, b)| k[(i, j)] * *b));
        match setup.problem {
            WaveProblem::Sh => terms.push(vec![pk(0, 0), Factor::Dense(unit(0, 0, ONE)), w1.clone()]),
            WaveProblem::Psv => {
                terms.push(vec![pk(0, 0), Factor::Dense(unit(0, 0, ONE)), w1.clone()]);
                terms.push(vec![pk(0, 1), Factor::Dense(unit(0, 1, -I) + unit(1, 0, I)), w1.clone()]);
                terms.push(vec![pk(1, 1), Factor::Dense(unit(1, 1, ONE)), w1.clone()]);
            }
        }
    }
    let mut dims = vec![p.len(), n, w.len()];
    if let Some(mu) = &grid.mu {
        dims.push(mu.len());
    }
    let op = CpOperator { labels, dims, terms, weights, spatial: 1 };
    op.validate()?;
    Ok(op)
}

/// Mode-`k` system `H_k x_k = b_k` with the other trial and test factors fixed.
/// `previous` is the current Tucker iterate whose operator image is removed from `b_k`.
pub fn mode_system(
    op: &CpOperator,
    force: &[Vec<C64>],
    trial: &[Vec<C64>],
    test: &[Vec<C64>],
    previous: Option<&TuckerTensor>,
    k: usize,
) -> Result<(Factor, Vec<C64>)> {
    let d = op.ndim();
    if trial.len() != d || test.len() != d || force.len() != d || k >= d {
        return Err(Error::Dimension("mode system needs one factor per dimension".into()));
    }
    let mut h: Option<Factor> = None;
    let mut any = false;
    for term in &op.terms {
        let mut c = ONE;
        for dd in 0..d {
            if dd != k {
                c *= term[dd].bilinear(&test[dd], &trial[dd]);
            }
        }
        if c != ZERO {
            any = true;
        }
        let contrib = term[k].scaled(c);
        h = Some(match h {
            None => contrib,
            Some(acc) => add_factors(acc, contrib),
        });
    }
    if !any {
        return Err(Error::DegenerateModeSystem { dim: k });
    }
    let mut cf = ONE;
    for dd in 0..d {
        if dd != k {
            cf *= crate::linalg::dot(&test[dd], &force[dd]);
        }
    }
    let mut b: Vec<C64> = force[k].iter().map(|v| v * cf).collect();
    if let Some(prev) = previous {
        let shape = prev.ranks();
        let core = prev.core.as_slice().expect("standard layout");
        for term in &op.terms {
            let rows: Vec<Option<Vec<C64>>> = (0..d)
                .map(|dd| {
                    if dd == k {
                        None
                    } else {
                        let mu = term[dd].apply_mat(&prev.factors[dd]);
                        let v = nalgebra::DVector::from_column_slice(&test[dd]);
                        Some((v.adjoint() * mu).iter().copied().collect())
                    }
                })
                .collect();
            let w = contract_except(&shape, core, k, &rows);
            let mu_k = term[k].apply_mat(&prev.factors[k]);
            let img = &mu_k * nalgebra::DVector::from_column_slice(&w);
            for (bi, ci) in b.iter_mut().zip(img.iter()) {
                *bi -= ci;
            }
        }
    }
    Ok((h.expect("at least one term"), b))
}

pub fn add_factors(a: Factor, b: Factor) -> Factor {
    match (a, b) {
        (Factor::Diag(x), Factor::Diag(y)) => Factor::Diag(x.iter().zip(&y).map(|(p, q)| p + q).collect()),
        (a, b) => Factor::Dense(a.to_dense() + b.to_dense()),
    }
}
