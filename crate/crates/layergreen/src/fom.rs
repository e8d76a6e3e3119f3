//! Full-order Green's tensor: one banded solve per (slowness, frequency[, mu]) sample.

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{BandedLu, CMat, ONE, ZERO};
use crate::soil::{complex_lame, Bottom, Layer, SoilProfile};
use crate::thin_layer::{assemble_global, GlobalMatrices, HalfspaceImpedance, LayerMesh, WaveProblem};

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    pub slowness: Vec<f64>,
    /// Reference shear speed with `kbar = p * cs_ref`.
    pub cs_ref: f64,
    pub log_spaced: bool,
    /// Depth of the node behind every retained DOF.
    pub depth: Vec<f64>,
    pub freq: Vec<f64>,
    pub x: Vec<f64>,
    pub mu: Option<Vec<f64>>,
    pub source: (f64, f64),
}

impl SamplingGrid {
    pub fn new(
        slowness: Vec<f64>,
        cs_ref: f64,
        log_spaced: bool,
        mesh: &LayerMesh,
        freq: Vec<f64>,
        x: Vec<f64>,
        mu: Option<Vec<f64>>,
    ) -> Result<Self> {
        let grid = SamplingGrid { slowness, cs_ref, log_spaced, depth: mesh.dof_depths(), freq, x, mu, source: (0.0, 0.0) };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if self.freq.is_empty() || !increasing(&self.freq) {
            return Err(Error::Grid("frequencies must be non-empty and strictly increasing".into()));
        }
        if !(self.freq[0] > 0.0) {
            return Err(Error::Grid("the first frequency must be positive".into()));
        }
        if self.freq.len() > 1 && self.freq[0] < (self.freq[1] - self.freq[0]) * (1.0 - 1e-9) {
            return Err(Error::Grid("the first frequency must be at least one bin".into()));
        }
        if self.slowness.is_empty() || !increasing(&self.slowness) || self.slowness[0] < 0.0 {
            return Err(Error::Grid("slowness must be non-negative and strictly increasing".into()));
        }
        if self.log_spaced && !(self.slowness[0] > 0.0) {
            return Err(Error::Grid("log-spaced slowness must start above zero".into()));
        }
        if let Some(mu) = &self.mu {
            if mu.is_empty() || !increasing(mu) || !(mu[0] > 0.0) {
                return Err(Error::Grid("shear modulus samples must be positive and increasing".into()));
            }
        }
        Ok(())
    }

    /// `n` log-spaced dimensionless wavenumbers in `[kbar_min, kbar_max]` turned into slowness.
    pub fn log_slowness(kbar_min: f64, kbar_max: f64, n: usize, cs_ref: f64) -> Vec<f64> {
        let (a, b) = (kbar_min.ln(), kbar_max.ln());
        (0..n)
            .map(|i| {
                let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                (a + (b - a) * t).exp() / cs_ref
            })
            .collect()
    }

    /// `df, 2 df, ...` up to and including `f_max`.
    pub fn freq_bins(df: f64, f_max: f64) -> Vec<f64> {
        let n = (f_max / df + 1e-9).floor() as usize;
        (1..=n).map(|i| i as f64 * df).collect()
    }

    pub fn omega(&self) -> Vec<f64> {
        self.freq.iter().map(|f| TWO_PI * f).collect()
    }

    pub fn kbar(&self) -> Vec<f64> {
        self.slowness.iter().map(|p| p * self.cs_ref).collect()
    }

    /// Tensor shape `(slowness, dof, freq[, mu])`.
    pub fn shape(&self) -> Vec<usize> {
        let mut s = vec![self.slowness.len(), self.depth.len(), self.freq.len()];
        if let Some(mu) = &self.mu {
            s.push(mu.len());
        }
        s
    }
}

/// Direction of the unit point load; `Y` is the SH load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Load {
    X,
    Y,
    Z,
}

impl Load {
    pub fn component(self) -> usize {
        match self {
            Load::X | Load::Y => 0,
            Load::Z => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Load::X => "x",
            Load::Y => "y",
            Load::Z => "z",
        }
    }

    pub fn loads_for(problem: WaveProblem) -> Vec<Load> {
        match problem {
            WaveProblem::Sh => vec![Load::Y],
            WaveProblem::Psv => vec![Load::X, Load::Z],
        }
    }

    fn check(self, problem: WaveProblem) -> Result<()> {
        match (problem, self) {
            (WaveProblem::Sh, Load::Y) | (WaveProblem::Psv, Load::X) | (WaveProblem::Psv, Load::Z) => Ok(()),
            _ => Err(Error::Grid(format!("load {} is not defined for {}", self.name(), problem.name()))),
        }
    }
}

/// Rank-one separated load: all-ones over parametric dims, unit nodal vector over depth.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceTensor {
    pub load: Load,
    pub factors: Vec<Vec<C64>>,
}

pub fn build_force(grid: &SamplingGrid, mesh: &LayerMesh, load: Load) -> Result<ForceTensor> {
    load.check(mesh.problem)?;
    let node = mesh
        .node_at_depth(grid.source.1)
        .ok_or_else(|| Error::Grid(format!("source depth {} m is not a mesh node", grid.source.1)))?;
    let dof = mesh
        .dof(node, load.component())
        .ok_or_else(|| Error::Grid(format!("source node {node} carries no unknown")))?;
    let mut fz = vec![ZERO; mesh.n_dof()];
    fz[dof] = ONE;
    let mut factors = vec![vec![ONE; grid.slowness.len()], fz, vec![ONE; grid.freq.len()]];
    if let Some(mu) = &grid.mu {
        factors.push(vec![ONE; mu.len()]);
    }
    Ok(ForceTensor { load, factors })
}

/// Matrices for a one-layer profile with the shear modulus swept and lambda held fixed.
/// `X(mu) = mu * X_mu_part + X_fixed` for `X` in `{A, B, G}`.
#[derive(Debug, Clone)]
pub struct MuSplit {
    pub a: (CMat, CMat),
    pub b: (CMat, CMat),
    pub g: (CMat, CMat),
}

/// Swept-mu split for a single-layer profile: with hysteretic damping
/// `mu* = mu(1 + 2i bs)` and `lambda* = lambda(1 + 2i bp) + 4i mu (bp - bs)`.
pub fn mu_split(globals: &GlobalMatrices, layer: &Layer) -> MuSplit {
    let cm = C64::new(1.0, 2.0 * layer.beta_s);
    let cml = C64::new(0.0, 4.0 * (layer.beta_p - layer.beta_s));
    let cl = C64::new(1.0, 2.0 * layer.beta_p) * layer.lambda();
    let part = |xm: &CMat, xl: &CMat| (xm * cm + xl * cml, xl * cl);
    MuSplit {
        a: part(&globals.a_mu, &globals.a_lambda),
        b: part(&globals.b_mu, &globals.b_lambda),
        g: part(&globals.g_mu, &globals.g_lambda),
    }
}

/// Globals for one swept shear modulus.
pub fn globals_at_mu(globals: &GlobalMatrices, split: &MuSplit, mu: f64) -> GlobalMatrices {
    let mut out = globals.clone();
    out.a = &split.a.0 * C64::new(mu, 0.0) + &split.a.1;
    out.b = &split.b.0 * C64::new(mu, 0.0) + &split.b.1;
    out.g = &split.g.0 * C64::new(mu, 0.0) + &split.g.1;
    out
}

/// Full-order tensors, one per load direction, each shaped `(slowness, dof, freq[, mu])`.
#[derive(Debug, Clone)]
pub struct DenseGreensTensor {
    pub problem: WaveProblem,
    pub grid: SamplingGrid,
    pub loads: Vec<Load>,
    pub values: Vec<ArrayD<C64>>,
}

impl DenseGreensTensor {
    pub fn for_load(&self, load: Load) -> Option<&ArrayD<C64>> {
        self.loads.iter().position(|&l| l == load).map(|i| &self.values[i])
    }

    /// Displacement component `disp` (0 = x|y, 1 = z) due to `load`, shaped
    /// `(slowness, node, freq[, mu])`.
    pub fn component(&self, disp: usize, load: Load) -> Option<ArrayD<C64>> {
        let d = self.problem.dofs_per_node();
        if disp >= d {
            return None;
        }
        let v = self.for_load(load)?;
        let sel: Vec<usize> = (disp..v.shape()[1]).step_by(d).collect();
        Some(v.select(ndarray::Axis(1), &sel))
    }
}

/// Problem data shared by all samples.
pub struct FomSetup {
    pub problem: WaveProblem,
    pub mesh: LayerMesh,
    pub globals: GlobalMatrices,
    pub impedance: Option<HalfspaceImpedance>,
    pub mu_split: Option<MuSplit>,
}

impl FomSetup {
    pub fn new(profile: &SoilProfile, mesh: &LayerMesh, with_mu: bool) -> Result<Self> {
        let globals = assemble_global(profile, mesh)?;
        let impedance = match &profile.bottom {
            Bottom::Halfspace(h) => Some(HalfspaceImpedance::new(mesh.problem, *h)?),
            Bottom::Bedrock => None,
        };
        let mu_split = if with_mu {
            if profile.layers.len() != 1 || impedance.is_some() {
                return Err(Error::Grid("a shear-modulus sweep needs a single layer on bedrock".into()));
            }
            complex_lame(&profile.layers[0])?;
            Some(mu_split(&globals, &profile.layers[0]))
        } else {
            None
        };
        Ok(FomSetup { problem: mesh.problem, mesh: mesh.clone(), globals, impedance, mu_split })
    }
}

pub fn solve_fom(
    profile: &SoilProfile,
    mesh: &LayerMesh,
    grid: &SamplingGrid,
    loads: &[Load],
    workers: usize,
) -> Result<DenseGreensTensor> {
    grid.validate()?;
    if grid.depth.len() != mesh.n_dof() {
        return Err(Error::Grid(format!("grid has {} depth DOFs, mesh has {}", grid.depth.len(), mesh.n_dof())));
    }
    let setup = FomSetup::new(profile, mesh, grid.mu.is_some())?;
    let forces: Vec<ForceTensor> = loads.iter().map(|&l| build_force(grid, mesh, l)).collect::<Result<_>>()?;
    let n = mesh.n_dof();
    let omega = grid.omega();
    let mus: Vec<Option<f64>> = match &grid.mu {
        Some(m) => m.iter().map(|&v| Some(v)).collect(),
        None => vec![None],
    };
    let (np, nw, nm) = (grid.slowness.len(), omega.len(), mus.len());
    let globals_mu: Vec<GlobalMatrices> = match &setup.mu_split {
        Some(split) => mus.iter().map(|m| globals_at_mu(&setup.globals, split, m.unwrap())).collect(),
        None => vec![setup.globals.clone()],
    };
    let solve_sample = |s: usize| -> Result<Vec<Vec<C64>>> {
        let (ip, rest) = (s / (nw * nm), s % (nw * nm));
        let (iw, im) = (rest / nm, rest % nm);
        let lu: BandedLu =
            crate::thin_layer::factor_stiffness(&globals_mu[im], setup.impedance.as_ref(), grid.slowness[ip], omega[iw])
                .map_err(|_| {
                    Error::Singular(format!(
                        "sample p = {:e} s/m, f = {} Hz{}",
                        grid.slowness[ip],
                        grid.freq[iw],
                        mus[im].map(|m| format!(", mu = {m:e} Pa")).unwrap_or_default()
                    ))
                })?;
        Ok(forces
            .iter()
            .map(|f| {
                let mut b = f.factors[1].clone();
                lu.solve_in_place(&mut b);
                b
            })
            .collect())
    };
    let total = np * nw * nm;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Grid(format!("thread pool: {e}")))?;
    let results: Vec<Vec<Vec<C64>>> = pool.install(|| (0..total).into_par_iter().map(solve_sample).collect::<Result<_>>())?;
    let shape = grid.shape();
    let mut values: Vec<ArrayD<C64>> = loads.iter().map(|_| ArrayD::zeros(IxDyn(&shape))).collect();
    for (s, per_load) in results.into_iter().enumerate() {
        let (ip, rest) = (s / (nw * nm), s % (nw * nm));
        let (iw, im) = (rest / nm, rest % nm);
        for (li, u) in per_load.into_iter().enumerate() {
            for (z, val) in u.into_iter().enumerate() {
                let idx: Vec<usize> = if grid.mu.is_some() { vec![ip, z, iw, im] } else { vec![ip, z, iw] };
                values[li][IxDyn(&idx)] = val;
            }
        }
    }
    debug_assert!(values.iter().all(|v| v.len() == np * n * nw * nm));
    Ok(DenseGreensTensor { problem: mesh.problem, grid: grid.clone(), loads: loads.to_vec(), values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thin_layer::WaveProblem;

    fn layer_profile() -> SoilProfile {
        SoilProfile::new(vec![Layer::new(20.0, 100.0, 200.0, 0.02, 0.02, 1800.0).unwrap()], Bottom::Bedrock).unwrap()
    }

    #[test]
    fn force_factors() {
        let prof = layer_profile();
        let mesh = LayerMesh::with_max_element(&prof, WaveProblem::Psv, 2.0).unwrap();
        let grid = SamplingGrid::new(vec![0.001, 0.01], 100.0, true, &mesh, vec![1.0, 2.0], vec![0.0], None).unwrap();
        let f = build_force(&grid, &mesh, Load::Z).unwrap();
        assert_eq!(f.factors[1][1], ONE);
        assert_eq!(f.factors[1].iter().filter(|z| **z != ZERO).count(), 1);
        assert!(f.factors[0].iter().all(|z| *z == ONE));
        assert!(build_force(&grid, &mesh, Load::Y).is_err());
    }

    #[test]
    fn frequency_grid_excludes_zero() {
        let f = SamplingGrid::freq_bins(0.25, 15.0);
        assert_eq!(f.len(), 60);
        assert!((f[0] - 0.25).abs() < 1e-15 && (f[59] - 15.0).abs() < 1e-12);
    }

    #[test]
    fn reciprocity_and_worker_independence() {
        let prof = layer_profile();
        let mesh = LayerMesh::with_max_element(&prof, WaveProblem::Sh, 1.0).unwrap();
        let setup = FomSetup::new(&prof, &mesh, false).unwrap();
        let k = crate::thin_layer::dynamic_stiffness(&setup.globals, None, 0.0, 7.0).unwrap();
        let inv = k.try_inverse().unwrap();
        assert!((inv[(0, 5)] - inv[(5, 0)]).norm() < 1e-12 * inv[(0, 5)].norm());
        let grid = SamplingGrid::new(vec![1e-4], 100.0, true, &mesh, vec![1.0, 2.0], vec![0.0], None).unwrap();
        let a = solve_fom(&prof, &mesh, &grid, &[Load::Y], 1).unwrap();
        let b = solve_fom(&prof, &mesh, &grid, &[Load::Y], 2).unwrap();
        assert_eq!(a.values[0], b.values[0]);
    }
}
