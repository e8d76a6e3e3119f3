//! Greedy Tucker approximation: rank-one ALS enrichment, Gram-Schmidt growth of the
//! factor bases and a reduced core solve after every mode.

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kron::{self, KronInfo, KronOptions, KronSystem};
use crate::linalg::{self, CMat, CVec, ZERO};
use crate::tensor::{mode_product, orthonormality_defect, CpOperator, Factor, TuckerTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestRule {
    /// Test factor follows the operator image of the trial factor.
    PetrovGalerkin,
    /// Test factor equals the trial factor.
    Galerkin,
}

impl TestRule {
    pub fn name(self) -> &'static str {
        match self {
            TestRule::PetrovGalerkin => "petrov-galerkin",
            TestRule::Galerkin => "galerkin",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "petrov-galerkin" | "pg" => Some(TestRule::PetrovGalerkin),
            "galerkin" => Some(TestRule::Galerkin),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GtaConfig {
    pub als_tol: f64,
    pub als_max_iter: usize,
    pub max_modes: usize,
    pub mode_accept_tol: f64,
    pub rng_seed: u64,
    pub test_rule: TestRule,
    /// Subspace refinement sweeps after each enrichment (0 disables).
    pub refine_sweeps: usize,
    pub solver: KronOptions,
}

impl Default for GtaConfig {
    fn default() -> Self {
        GtaConfig {
            als_tol: 1e-5,
            als_max_iter: 50,
            max_modes: 40,
            mode_accept_tol: 1e-8,
            rng_seed: 7,
            test_rule: TestRule::Galerkin,
            refine_sweeps: 0,
            solver: KronOptions::default(),
        }
    }
}

impl GtaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.als_tol > 0.0) {
            return Err(Error::Domain("ALS tolerance must be positive".into()));
        }
        if self.max_modes == 0 || self.als_max_iter == 0 {
            return Err(Error::Domain("mode and iteration limits must be at least one".into()));
        }
        if !(self.mode_accept_tol > 0.0 && self.mode_accept_tol < 1.0) {
            return Err(Error::Domain("mode acceptance tolerance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeLog {
    pub mode: usize,
    pub accepted: Vec<bool>,
    pub als_iterations: usize,
    pub als_converged: bool,
    pub ranks: Vec<usize>,
    pub reduced_residual: f64,
    pub solver_iterations: usize,
    pub direct_solve: bool,
    /// `max |U^H U - I|` over trial and test factors after this mode.
    pub orthonormality: f64,
}

#[derive(Debug, Clone)]
pub struct GtaState {
    pub trial: Vec<CMat>,
    pub test: Vec<CMat>,
    pub core: ArrayD<C64>,
    pub log: Vec<ModeLog>,
}

impl GtaState {
    pub fn empty(dims: &[usize]) -> Self {
        GtaState {
            trial: dims.iter().map(|&n| CMat::zeros(n, 0)).collect(),
            test: dims.iter().map(|&n| CMat::zeros(n, 0)).collect(),
            core: ArrayD::zeros(IxDyn(&vec![0; dims.len()])),
            log: Vec::new(),
        }
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.trial.iter().map(|u| u.ncols()).collect()
    }

    fn tucker(&self, op: &CpOperator) -> Option<TuckerTensor> {
        if self.ranks().contains(&0) {
            return None;
        }
        TuckerTensor::new(self.core.clone(), self.trial.clone(), op.labels.clone()).ok()
    }
}

#[derive(Debug, Clone)]
pub struct GtaResult {
    pub tucker: TuckerTensor,
    pub state: GtaState,
    pub stopped_early: bool,
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    let v: Vec<C64> = (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re, im)
        })
        .collect();
    normalized(v)
}

fn normalized(mut v: Vec<C64>) -> Vec<C64> {
    let n = linalg::norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|z| *z /= n);
    }
    v
}

/// Distance between unit vectors up to a global phase.
fn phase_distance(a: &[C64], b: &[C64]) -> f64 {
    (2.0 - 2.0 * linalg::dot(a, b).norm()).max(0.0).sqrt()
}

fn solve_mode(h: &Factor, b: &[C64], dim: usize) -> Result<Vec<C64>> {
    match h {
        Factor::Diag(d) => {
            if d.contains(&ZERO) {
                return Err(Error::DegenerateModeSystem { dim });
            }
            Ok(b.iter().zip(d).map(|(x, y)| x / y).collect())
        }
        Factor::Dense(m) => Ok(linalg::solve_dense(m, &CVec::from_column_slice(b), "mode system")
            .map_err(|_| Error::DegenerateModeSystem { dim })?
            .as_slice()
            .to_vec()),
    }
}

/// Rank-one trial and test tuples for the current residual.
pub fn als_rank_one(
    op: &CpOperator,
    force: &[Vec<C64>],
    state: &GtaState,
    cfg: &GtaConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<C64>>, Vec<Vec<C64>>, usize, bool)> {
    let d = op.ndim();
    let previous = state.tucker(op);
    let mut x: Vec<Vec<C64>> = op.dims.iter().map(|&n| random_unit(rng, n)).collect();
    let mut v = x.clone();
    for sweep in 1..=cfg.als_max_iter {
        let old = x.clone();
        for k in 0..d {
            let (h, b) = crate::tensor::mode_system(op, force, &x, &v, previous.as_ref(), k)?;
            // residual already resolved by the previous modes
            let load: f64 = linalg::norm(&force[k])
                * (0..d).filter(|&j| j != k).map(|j| linalg::dot(&v[j], &force[j]).norm()).product::<f64>();
            if previous.is_some() && linalg::norm(&b) <= 1e-12 * load {
                let zero: Vec<Vec<C64>> = op.dims.iter().map(|&n| vec![ZERO; n]).collect();
                return Ok((zero.clone(), zero, sweep, true));
            }
            let xk = solve_mode(&h, &b, k)?;
            if xk.iter().any(|z| !z.is_finite()) {
                return Err(Error::NonFinite { dim: k, sweep });
            }
            if linalg::norm(&xk) == 0.0 {
                x[k] = xk;
                v[k] = x[k].clone();
                continue;
            }
            x[k] = normalized(xk);
            v[k] = match cfg.test_rule {
                TestRule::Galerkin => x[k].clone(),
                TestRule::PetrovGalerkin => {
                    let hx = normalized(h.apply(&x[k]));
                    if linalg::norm(&hx) == 0.0 {
                        x[k].clone()
                    } else {
                        hx
                    }
                }
            };
        }
        let change = x.iter().zip(&old).map(|(a, b)| phase_distance(a, b)).fold(0.0, f64::max);
        if change < cfg.als_tol {
            return Ok((x, v, sweep, true));
        }
    }
    Ok((x, v, cfg.als_max_iter, false))
}

/// Appends `x` orthogonalized (two modified Gram-Schmidt passes) if enough of it survives.
pub fn gram_schmidt_append(u: &CMat, x: &[C64], tol: f64) -> (CMat, bool) {
    let nx = linalg::norm(x);
    if nx == 0.0 {
        return (u.clone(), false);
    }
    let mut y = CVec::from_column_slice(x);
    for _ in 0..2 {
        for j in 0..u.ncols() {
            let c = u.column(j).dotc(&y);
            y.axpy(-c, &u.column(j), linalg::ONE);
        }
    }
    let ny = y.norm();
    if !(ny > tol * nx) {
        return (u.clone(), false);
    }
    y.unscale_mut(ny);
    let mut out = u.clone().resize_horizontally(u.ncols() + 1, ZERO);
    out.set_column(u.ncols(), &y);
    (out, true)
}

fn kron_vectors(vs: &[Vec<C64>]) -> Vec<C64> {
    let mut out = vec![linalg::ONE];
    for v in vs {
        let mut next = Vec::with_capacity(out.len() * v.len());
        for a in &out {
            for b in v {
                next.push(a * b);
            }
        }
        out = next;
    }
    out
}

fn project_vec(v: &CMat, f: &[C64]) -> Vec<C64> {
    (v.adjoint() * CVec::from_column_slice(f)).as_slice().to_vec()
}

/// Reference pairs `(V^H W U, V^H M_0 U)` for the preconditioner.
fn reference_pairs(op: &CpOperator, u: &[CMat], v: &[CMat], full: Option<usize>) -> Vec<Option<(CMat, CMat)>> {
    (0..op.ndim())
        .map(|d| {
            if d == op.spatial || Some(d) == full {
                return None;
            }
            let w = Factor::Diag(op.weights[d].iter().map(|&x| C64::new(x, 0.0)).collect());
            Some((w.project(&v[d], &u[d]), op.terms[0][d].project(&v[d], &u[d])))
        })
        .collect()
}

/// `(V^H A U) g = V^H F` with all bases fixed.
pub fn solve_core(
    op: &CpOperator,
    u: &[CMat],
    v: &[CMat],
    force: &[Vec<C64>],
    warm: Option<&ArrayD<C64>>,
    opts: &KronOptions,
) -> Result<(ArrayD<C64>, KronInfo)> {
    let ranks: Vec<usize> = u.iter().map(|m| m.ncols()).collect();
    let terms: Vec<Vec<Factor>> = op
        .terms
        .iter()
        .map(|t| t.iter().enumerate().map(|(d, f)| Factor::Dense(f.project(&v[d], &u[d]))).collect())
        .collect();
    let sys = KronSystem { dims: ranks.clone(), terms, spatial: op.spatial };
    let rhs = kron_vectors(&force.iter().zip(v).map(|(f, vd)| project_vec(vd, f)).collect::<Vec<_>>());
    let x0 = warm.map(|w| pad_core(w, &ranks));
    let refs = reference_pairs(op, u, v, None);
    let (g, info) = kron::solve(&sys, &rhs, x0.as_deref(), &refs, opts)?;
    Ok((ArrayD::from_shape_vec(IxDyn(&ranks), g).expect("core shape"), info))
}

fn pad_core(core: &ArrayD<C64>, ranks: &[usize]) -> Vec<C64> {
    let mut out = ArrayD::<C64>::zeros(IxDyn(ranks));
    if core.ndim() == ranks.len() && !core.is_empty() {
        let sub: Vec<usize> = core.shape().iter().zip(ranks).map(|(&a, &b)| a.min(b)).collect();
        out.slice_each_axis_mut(|ax| ndarray::Slice::from(0..sub[ax.axis.index()]))
            .assign(&core.slice_each_axis(|ax| ndarray::Slice::from(0..sub[ax.axis.index()])));
    }
    out.into_raw_vec_and_offset().0
}

/// Galerkin solve with dimension `k` left at full resolution, then the leading
/// left singular vectors of the mode-`k` unfolding replace `U_k`.
fn refine_dimension(state: &mut GtaState, op: &CpOperator, force: &[Vec<C64>], k: usize, cfg: &GtaConfig) -> Result<()> {
    let nd = op.ndim();
    let ranks = state.ranks();
    let mut dims = ranks.clone();
    dims[k] = op.dims[k];
    let terms: Vec<Vec<Factor>> = op
        .terms
        .iter()
        .map(|t| {
            t.iter()
                .enumerate()
                .map(|(d, f)| if d == k { f.clone() } else { Factor::Dense(f.project(&state.test[d], &state.trial[d])) })
                .collect()
        })
        .collect();
    let sys = KronSystem { dims: dims.clone(), terms, spatial: op.spatial };
    let parts: Vec<Vec<C64>> =
        (0..nd).map(|d| if d == k { force[d].clone() } else { project_vec(&state.test[d], &force[d]) }).collect();
    let rhs = kron_vectors(&parts);
    let (_, warm) = mode_product(&ranks, &pad_core(&state.core, &ranks), k, &state.trial[k]);
    let mut opts = cfg.solver;
    opts.direct_cap = opts.direct_cap.min(256);
    let refs = reference_pairs(op, &state.trial, &state.test, Some(k));
    let (y, _) = kron::solve(&sys, &rhs, Some(&warm), &refs, &opts)?;
    let outer: usize = dims[..k].iter().product();
    let inner: usize = dims[k + 1..].iter().product();
    let nk = dims[k];
    let unfold = CMat::from_fn(nk, outer * inner, |i, c| {
        let (o, n) = (c / inner, c % inner);
        y[(o * nk + i) * inner + n]
    });
    let u = linalg::leading_left_singular(&unfold, ranks[k]);
    if u.ncols() == ranks[k] {
        state.trial[k] = u;
        if cfg.test_rule == TestRule::Galerkin {
            state.test[k] = state.trial[k].clone();
        }
    }
    Ok(())
}

pub fn gta_build(op: &CpOperator, force: &[Vec<C64>], cfg: &GtaConfig) -> Result<GtaResult> {
    gta_build_observed(op, force, cfg, &mut |_, _| {})
}

/// As [`gta_build`], calling `observe` with the Tucker iterate after every mode.
pub fn gta_build_observed(
    op: &CpOperator,
    force: &[Vec<C64>],
    cfg: &GtaConfig,
    observe: &mut dyn FnMut(&ModeLog, &TuckerTensor),
) -> Result<GtaResult> {
    cfg.validate()?;
    op.validate()?;
    if force.len() != op.ndim() || force.iter().zip(&op.dims).any(|(f, &n)| f.len() != n) {
        return Err(Error::Dimension("force factors do not match the operator".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut state = GtaState::empty(&op.dims);
    let mut stopped_early = false;
    for mode in 1..=cfg.max_modes {
        let (x, v, iters, converged) = als_rank_one(op, force, &state, cfg, &mut rng)?;
        let mut accepted = Vec::with_capacity(op.ndim());
        for d in 0..op.ndim() {
            let (u, ok) = gram_schmidt_append(&state.trial[d], &x[d], cfg.mode_accept_tol);
            accepted.push(ok);
            if ok {
                state.trial[d] = u;
                state.test[d] = match cfg.test_rule {
                    TestRule::Galerkin => state.trial[d].clone(),
                    TestRule::PetrovGalerkin => {
                        let (vt, vok) = gram_schmidt_append(&state.test[d], &v[d], cfg.mode_accept_tol);
                        if vok {
                            vt
                        } else {
                            let (vt, vok) = gram_schmidt_append(&state.test[d], &x[d], cfg.mode_accept_tol);
                            if vok {
                                vt
                            } else {
                                // keep both bases the same size
                                let mut alt = None;
                                for j in 0..state.test[d].nrows() {
                                    let mut e = vec![ZERO; state.test[d].nrows()];
                                    e[j] = linalg::ONE;
                                    let (vt, vok) = gram_schmidt_append(&state.test[d], &e, 1e-3);
                                    if vok {
                                        alt = Some(vt);
                                        break;
                                    }
                                }
                                alt.ok_or_else(|| Error::Dimension(format!("test basis of dim {d} is complete")))?
                            }
                        }
                    }
                };
            }
        }
        if !accepted.iter().any(|&a| a) {
            stopped_early = true;
            break;
        }
        if mode > 1 {
            for _ in 0..cfg.refine_sweeps {
                for k in 0..op.ndim() {
                    refine_dimension(&mut state, op, force, k, cfg)?;
                }
            }
        }
        let warm = if !state.core.is_empty() { Some(state.core.clone()) } else { None };
        let (g, info) = solve_core(op, &state.trial, &state.test, force, warm.as_ref(), &cfg.solver)
            .map_err(|e| match e {
                Error::SingularReduced { cond, .. } => Error::SingularReduced { modes: mode, cond },
                other => other,
            })?;
        state.core = g;
        let orth = state
            .trial
            .iter()
            .chain(state.test.iter())
            .map(orthonormality_defect)
            .fold(0.0, f64::max);
        let entry = ModeLog {
            mode,
            accepted,
            als_iterations: iters,
            als_converged: converged,
            ranks: state.ranks(),
            reduced_residual: info.residual,
            solver_iterations: info.iterations,
            direct_solve: info.direct,
            orthonormality: orth,
        };
        let t = state.tucker(op).expect("non-empty bases");
        observe(&entry, &t);
        state.log.push(entry);
    }
    let tucker = state
        .tucker(op)
        .ok_or_else(|| Error::Dimension("no mode was accepted".into()))?;
    Ok(GtaResult { tucker, state, stopped_early })
}
