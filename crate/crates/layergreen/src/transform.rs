//! Inverse wavenumber transform to the spatial-frequency domain.
//!
//! With `k = p w` the half-line integral becomes
//! `u(x) = (w / pi) int_0^inf u~(p) cos(p w x) dp` for components even in `k` and
//! `u(x) = (-i w / pi) int_0^inf u~(p) sin(p w x) dp` for odd ones. The quadrature is a
//! trapezoid over the samples plus a node at `p = 0` that carries the first sample.

use nalgebra::DMatrix;
use ndarray::{ArrayD, Axis, IxDyn};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{CMat, ZERO};
use crate::tensor::{mode_product, DimLabel, TuckerTensor};
use crate::thin_layer::WaveProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

/// Parity in `k_x` of displacement component `disp` (0 = x or y, 1 = z) under a load
/// along component `load`.
pub fn component_parity(problem: WaveProblem, disp: usize, load: usize) -> Result<Parity> {
    match (problem, disp, load) {
        (WaveProblem::Sh, 0, 0) => Ok(Parity::Even),
        (WaveProblem::Psv, 0, 0) | (WaveProblem::Psv, 1, 1) => Ok(Parity::Even),
        (WaveProblem::Psv, 0, 1) | (WaveProblem::Psv, 1, 0) => Ok(Parity::Odd),
        _ => Err(Error::Domain(format!("no parity for component ({disp}, {load}) of {}", problem.name()))),
    }
}

/// Parity of each depth DOF for one load component.
pub fn dof_parities(problem: WaveProblem, n_dof: usize, load: usize) -> Result<Vec<Parity>> {
    let dpn = problem.dofs_per_node();
    (0..n_dof).map(|i| component_parity(problem, i % dpn, load)).collect()
}

/// Quadrature matrix `Q[j, i]` so that `u(x_j) = sum_i Q[j, i] u~(p_i)` at one frequency.
pub fn kernel_matrix(p: &[f64], omega: f64, x: &[f64], parity: Parity) -> Result<CMat> {
    check_grid(p, x)?;
    let mut nodes = Vec::with_capacity(p.len() + 1);
    nodes.push(0.0);
    nodes.extend_from_slice(p);
    let mut w = vec![0.0; nodes.len()];
    for i in 0..nodes.len() - 1 {
        let h = 0.5 * (nodes[i + 1] - nodes[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    let scale = match parity {
        Parity::Even => C64::new(omega / PI, 0.0),
        Parity::Odd => C64::new(0.0, -omega / PI),
    };
    Ok(DMatrix::from_fn(x.len(), p.len(), |j, i| {
        let arg = p[i] * omega * x[j];
        let mut v = w[i + 1]
            * match parity {
                Parity::Even => arg.cos(),
                Parity::Odd => arg.sin(),
            };
        if i == 0 && parity == Parity::Even {
            v += w[0];
        }
        scale * v
    }))
}

fn check_grid(p: &[f64], x: &[f64]) -> Result<()> {
    if p.is_empty() || p[0] <= 0.0 || p.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Grid("slowness samples must be positive and increasing".into()));
    }
    if x.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Grid("receiver offsets must be non-negative".into()));
    }
    Ok(())
}

pub fn inverse_transform_1d(p: &[f64], values: &[C64], omega: f64, x: &[f64], parity: Parity) -> Result<Vec<C64>> {
    if values.len() != p.len() {
        return Err(Error::Dimension("one value per slowness sample required".into()));
    }
    let q = kernel_matrix(p, omega, x, parity)?;
    Ok((q * nalgebra::DVector::from_column_slice(values)).as_slice().to_vec())
}

/// Dense path. `tensor` is shaped `(slowness, dof, freq[, mu])`; the result replaces the
/// slowness axis by `x`. Returns the tensor and the number of 1D transforms executed.
pub fn inverse_transform_dense(
    tensor: &ArrayD<C64>,
    p: &[f64],
    omega: &[f64],
    x: &[f64],
    parities: &[Parity],
    workers: usize,
) -> Result<(ArrayD<C64>, usize)> {
    let shape = tensor.shape().to_vec();
    if shape.len() < 3 || shape[0] != p.len() || shape[2] != omega.len() || parities.len() != shape[1] {
        return Err(Error::Dimension(format!("tensor shape {shape:?} does not match the transform grid")));
    }
    check_grid(p, x)?;
    let nz = shape[1];
    let nm: usize = shape[3..].iter().product();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Grid(format!("thread pool: {e}")))?;
    let per_freq: Vec<Vec<C64>> = pool.install(|| {
        (0..omega.len())
            .into_par_iter()
            .map(|iw| -> Result<Vec<C64>> {
                let qe = kernel_matrix(p, omega[iw], x, Parity::Even)?;
                let qo = kernel_matrix(p, omega[iw], x, Parity::Odd)?;
                let slab = tensor.index_axis(Axis(2), iw);
                // (x, z, m) for this frequency
                let mut out = vec![ZERO; x.len() * nz * nm];
                let mut col = vec![ZERO; p.len()];
                for z in 0..nz {
                    let q = if parities[z] == Parity::Even { &qe } else { &qo };
                    for m in 0..nm {
                        for (i, c) in col.iter_mut().enumerate() {
                            let mut idx = vec![i, z];
                            idx.extend(unravel(m, &shape[3..]));
                            *c = slab[IxDyn(&idx)];
                        }
                        for j in 0..x.len() {
                            let mut s = ZERO;
                            for i in 0..p.len() {
                                s += q[(j, i)] * col[i];
                            }
                            out[(j * nz + z) * nm + m] = s;
                        }
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()
    })?;
    let mut oshape = shape.clone();
    oshape[0] = x.len();
    let mut out = ArrayD::<C64>::zeros(IxDyn(&oshape));
    for (iw, slab) in per_freq.into_iter().enumerate() {
        for j in 0..x.len() {
            for z in 0..nz {
                for m in 0..nm {
                    let mut idx = vec![j, z, iw];
                    idx.extend(unravel(m, &shape[3..]));
                    out[IxDyn(&idx)] = slab[(j * nz + z) * nm + m];
                }
            }
        }
    }
    Ok((out, nz * omega.len() * nm))
}

fn unravel(mut m: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for d in (0..dims.len()).rev() {
        idx[d] = m % dims[d];
        m /= dims[d];
    }
    idx
}

/// Tucker tensor whose slowness factor has been replaced by frequency-indexed spatial
/// factors `x_factors[k][(x, w, r)]`, one per parity present; depth DOF `z` uses
/// `x_factors[dof_factor[z]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialTucker {
    pub core: ArrayD<C64>,
    pub x_factors: Vec<ndarray::Array3<C64>>,
    pub dof_factor: Vec<usize>,
    /// Factors for the remaining dimensions (depth, frequency[, mu]).
    pub factors: Vec<CMat>,
    /// Labels of `factors`.
    pub labels: Vec<DimLabel>,
}

impl SpatialTucker {
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.x_factors[0].shape()[0]];
        d.extend(self.factors.iter().map(|f| f.nrows()));
        d
    }

    /// Dense `(x, dof, freq[, mu])` values.
    pub fn reconstruct(&self) -> ArrayD<C64> {
        let mut shape = self.core.shape().to_vec();
        let mut data = self.core.as_slice().expect("standard layout").to_vec();
        for d in 0..self.factors.len() {
            if d == 1 {
                continue;
            }
            let (s, v) = mode_product(&shape, &data, d + 1, &self.factors[d]);
            shape = s;
            data = v;
        }
        // shape = (R_p, N_z, R_w, N_mu...)
        let dims = self.dims();
        let (nx, nw) = (dims[0], dims[2]);
        let (rp, nz, rw) = (shape[0], shape[1], shape[2]);
        let nm: usize = shape[3..].iter().product();
        let uw = &self.factors[1];
        let mut out = ArrayD::<C64>::zeros(IxDyn(&dims));
        let flat = out.as_slice_mut().expect("standard layout");
        let mut tmp = vec![ZERO; rp * nz * nm];
        for iw in 0..nw {
            tmp.iter_mut().for_each(|v| *v = ZERO);
            for a in 0..rp {
                for z in 0..nz {
                    for r in 0..rw {
                        let c = uw[(iw, r)];
                        let base = ((a * nz + z) * rw + r) * nm;
                        for m in 0..nm {
                            tmp[(a * nz + z) * nm + m] += c * data[base + m];
                        }
                    }
                }
            }
            for j in 0..nx {
                for a in 0..rp {
                    for z in 0..nz {
                        let xv = self.x_factors[self.dof_factor[z]][[j, iw, a]];
                        for m in 0..nm {
                            flat[((j * nz + z) * nw + iw) * nm + m] += xv * tmp[(a * nz + z) * nm + m];
                        }
                    }
                }
            }
        }
        out
    }
}

/// Transforms only the slowness factor: `R_p` transforms per frequency and parity
/// present among `parities` (one entry per depth DOF).
pub fn inverse_transform_tucker(
    t: &TuckerTensor,
    p: &[f64],
    omega: &[f64],
    x: &[f64],
    parities: &[Parity],
) -> Result<(SpatialTucker, usize)> {
    if t.labels.first() != Some(&DimLabel::Slowness) {
        return Err(Error::Dimension("Tucker tensor has no leading slowness dimension".into()));
    }
    if t.ndim() < 3
        || t.labels.get(2) != Some(&DimLabel::Frequency)
        || t.factors[2].nrows() != omega.len()
        || t.factors[0].nrows() != p.len()
        || t.factors[1].nrows() != parities.len()
    {
        return Err(Error::Dimension("Tucker tensor does not match the transform grid".into()));
    }
    let mut kinds: Vec<Parity> = Vec::new();
    for &q in parities {
        if !kinds.contains(&q) {
            kinds.push(q);
        }
    }
    let dof_factor: Vec<usize> = parities.iter().map(|q| kinds.iter().position(|k| k == q).unwrap()).collect();
    let up = &t.factors[0];
    let rp = up.ncols();
    let mut x_factors = Vec::with_capacity(kinds.len());
    for &kind in &kinds {
        let mut xf = ndarray::Array3::<C64>::zeros((x.len(), omega.len(), rp));
        for (iw, &w) in omega.iter().enumerate() {
            let m = kernel_matrix(p, w, x, kind)? * up;
            for j in 0..x.len() {
                for r in 0..rp {
                    xf[[j, iw, r]] = m[(j, r)];
                }
            }
        }
        x_factors.push(xf);
    }
    let count = rp * omega.len() * kinds.len();
    Ok((
        SpatialTucker {
            core: t.core.clone(),
            x_factors,
            dof_factor,
            factors: t.factors[1..].to_vec(),
            labels: t.labels[1..].to_vec(),
        },
        count,
    ))
}
