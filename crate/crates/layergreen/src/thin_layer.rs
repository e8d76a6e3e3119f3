//! Thin-layer element matrices, global assembly and the halfspace impedance.
//!
//! The dynamic stiffness at slowness `p` and angular frequency `w` is
//! `K = k^2 A - i k B + G - w^2 M` with `k = p w`. The element matrix `B` is the real
//! antisymmetric pattern below, so the coupling term carries an explicit `-i`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{BandedLu, CMat, I, ONE, ZERO};
use crate::soil::{complex_lame, Bottom, ComplexModuli, Layer, SoilProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WaveProblem {
    Sh,
    Psv,
}

impl WaveProblem {
    pub fn dofs_per_node(self) -> usize {
        match self {
            WaveProblem::Sh => 1,
            WaveProblem::Psv => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WaveProblem::Sh => "sh",
            WaveProblem::Psv => "psv",
        }
    }
}

/// Element matrices, DOFs ordered top node then bottom node, `(u_x, u_z)` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMatrices {
    pub a: CMat,
    pub b: CMat,
    pub g: CMat,
    pub m: CMat,
}

fn cmat<const N: usize>(scale: C64, rows: [[C64; N]; N]) -> CMat {
    DMatrix::from_fn(N, N, |i, j| scale * rows[i][j])
}

pub fn element_matrices_psv(moduli: &ComplexModuli, rho: f64, h: f64) -> ElementMatrices {
    let mu = moduli.mu_star;
    let la = moduli.lambda_star;
    let p = la + 2.0 * mu;
    let z = ZERO;
    let a = cmat(
        ONE * (h / 6.0),
        [
            [2.0 * p, z, p, z],
            [z, 2.0 * mu, z, mu],
            [p, z, 2.0 * p, z],
            [z, mu, z, 2.0 * mu],
        ],
    );
    let b = cmat(
        ONE * 0.5,
        [
            [z, la - mu, z, -(la + mu)],
            [mu - la, z, -(la + mu), z],
            [z, la + mu, z, mu - la],
            [la + mu, z, la - mu, z],
        ],
    );
    let g = cmat(
        ONE / h,
        [
            [mu, z, -mu, z],
            [z, p, z, -p],
            [-mu, z, mu, z],
            [z, -p, z, p],
        ],
    );
    let o = ONE;
    let m = cmat(
        ONE * (rho * h / 6.0),
        [
            [2.0 * o, z, o, z],
            [z, 2.0 * o, z, o],
            [o, z, 2.0 * o, z],
            [z, o, z, 2.0 * o],
        ],
    );
    ElementMatrices { a, b, g, m }
}

pub fn element_matrices_sh(moduli: &ComplexModuli, rho: f64, h: f64) -> ElementMatrices {
    let mu = moduli.mu_star;
    let pat = [[2.0 * ONE, ONE], [ONE, 2.0 * ONE]];
    ElementMatrices {
        a: cmat(mu * (h / 6.0), pat),
        b: CMat::zeros(2, 2),
        g: cmat(mu / h, [[ONE, -ONE], [-ONE, ONE]]),
        m: cmat(ONE * (rho * h / 6.0), pat),
    }
}

pub fn element_matrices(problem: WaveProblem, moduli: &ComplexModuli, rho: f64, h: f64) -> ElementMatrices {
    match problem {
        WaveProblem::Sh => element_matrices_sh(moduli, rho, h),
        WaveProblem::Psv => element_matrices_psv(moduli, rho, h),
    }
}

/// Linear-element mesh over the finite layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMesh {
    pub problem: WaveProblem,
    pub nodes: Vec<f64>,
    pub element_layer: Vec<usize>,
    pub halfspace_bottom: bool,
}

impl LayerMesh {
    /// Uniform elements inside each layer, no thicker than `h_max`.
    pub fn with_max_element(profile: &SoilProfile, problem: WaveProblem, h_max: f64) -> Result<Self> {
        if !(h_max > 0.0) {
            return Err(Error::Mesh(format!("element size must be positive, got {h_max}")));
        }
        let mut nodes = vec![0.0];
        let mut element_layer = Vec::new();
        let mut top = 0.0;
        for (li, layer) in profile.layers.iter().enumerate() {
            let n = ((layer.thickness / h_max) - 1e-9).ceil().max(1.0) as usize;
            for e in 1..=n {
                nodes.push(top + layer.thickness * e as f64 / n as f64);
                element_layer.push(li);
            }
            top += layer.thickness;
        }
        Ok(LayerMesh { problem, nodes, element_layer, halfspace_bottom: matches!(profile.bottom, Bottom::Halfspace(_)) })
    }

    /// Element size `min_s(Cs) / (f_max * per_wavelength)`.
    pub fn for_frequency(profile: &SoilProfile, problem: WaveProblem, f_max: f64, per_wavelength: f64) -> Result<Self> {
        if !(f_max > 0.0 && per_wavelength > 0.0) {
            return Err(Error::Mesh("f_max and elements per wavelength must be positive".into()));
        }
        let cs = profile.layers.iter().map(|l| l.cs).fold(f64::INFINITY, f64::min);
        Self::with_max_element(profile, problem, cs / f_max / per_wavelength)
    }

    /// Checks interface alignment and the resolution rule `h_e <= (Cs/f_max)/10`.
    pub fn check(&self, profile: &SoilProfile, f_max: f64) -> Result<()> {
        if self.element_layer.len() + 1 != self.nodes.len() {
            return Err(Error::Mesh("node and element counts disagree".into()));
        }
        let mut top = 0.0;
        let mut e = 0;
        for (li, layer) in profile.layers.iter().enumerate() {
            let bottom = top + layer.thickness;
            while e < self.element_layer.len() && self.element_layer[e] == li {
                let h = self.nodes[e + 1] - self.nodes[e];
                if h > layer.cs / f_max / 10.0 * (1.0 + 1e-9) {
                    return Err(Error::Mesh(format!(
                        "element {e} in layer {} is {h:.4} m thick, above lambda/10 = {:.4} m at {f_max} Hz",
                        li + 1,
                        layer.cs / f_max / 10.0
                    )));
                }
                e += 1;
            }
            if (self.nodes[e] - bottom).abs() > 1e-9 * bottom.max(1.0) {
                return Err(Error::Mesh(format!("layer {} interface does not coincide with a node", li + 1)));
            }
            top = bottom;
        }
        if e != self.element_layer.len() {
            return Err(Error::Mesh("mesh has more elements than the profile has layers".into()));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes that carry unknowns (bedrock removes the bottom node).
    pub fn n_free_nodes(&self) -> usize {
        if self.halfspace_bottom {
            self.nodes.len()
        } else {
            self.nodes.len() - 1
        }
    }

    pub fn n_dof(&self) -> usize {
        self.n_free_nodes() * self.problem.dofs_per_node()
    }

    /// Depth of the node carrying each retained DOF.
    pub fn dof_depths(&self) -> Vec<f64> {
        let d = self.problem.dofs_per_node();
        (0..self.n_dof()).map(|i| self.nodes[i / d]).collect()
    }

    /// DOF index of `component` (0 = x or y, 1 = z) at a node.
    pub fn dof(&self, node: usize, component: usize) -> Option<usize> {
        let d = self.problem.dofs_per_node();
        if node < self.n_free_nodes() && component < d {
            Some(node * d + component)
        } else {
            None
        }
    }

    pub fn node_at_depth(&self, z: f64) -> Option<usize> {
        self.nodes.iter().position(|&n| (n - z).abs() <= 1e-9 * z.abs().max(1.0))
    }
}

/// Assembled thin-layer matrices and their unit-Lame parts.
#[derive(Debug, Clone)]
pub struct GlobalMatrices {
    pub problem: WaveProblem,
    pub a: CMat,
    pub b: CMat,
    pub g: CMat,
    pub m: CMat,
    pub a_mu: CMat,
    pub a_lambda: CMat,
    pub b_mu: CMat,
    pub b_lambda: CMat,
    pub g_mu: CMat,
    pub g_lambda: CMat,
}

impl GlobalMatrices {
    pub fn n_dof(&self) -> usize {
        self.a.nrows()
    }

    /// Half bandwidth of the assembled matrices.
    pub fn bandwidth(&self) -> usize {
        2 * self.problem.dofs_per_node() - 1
    }

    /// Matrices for a uniform profile with real moduli `(mu, lambda)` swapped in through the split.
    pub fn with_moduli(&self, mu: C64, lambda: C64) -> (CMat, CMat, CMat) {
        (
            &self.a_mu * mu + &self.a_lambda * lambda,
            &self.b_mu * mu + &self.b_lambda * lambda,
            &self.g_mu * mu + &self.g_lambda * lambda,
        )
    }
}

pub fn assemble_global(profile: &SoilProfile, mesh: &LayerMesh) -> Result<GlobalMatrices> {
    if mesh.element_layer.len() + 1 != mesh.nodes.len() {
        return Err(Error::Mesh("node and element counts disagree".into()));
    }
    if let Some(&li) = mesh.element_layer.iter().max() {
        if li >= profile.layers.len() {
            return Err(Error::Mesh(format!("element refers to layer {} but the profile has {}", li + 1, profile.layers.len())));
        }
    }
    if mesh.halfspace_bottom != matches!(profile.bottom, Bottom::Halfspace(_)) {
        return Err(Error::Mesh("mesh and profile disagree on the bottom condition".into()));
    }
    let problem = mesh.problem;
    let d = problem.dofs_per_node();
    let n = mesh.n_dof();
    let mut out: Vec<CMat> = (0..10).map(|_| CMat::zeros(n, n)).collect();
    let unit_mu = ComplexModuli { mu_star: ONE, lambda_star: ZERO };
    let unit_la = ComplexModuli { mu_star: ZERO, lambda_star: ONE };
    for (e, &li) in mesh.element_layer.iter().enumerate() {
        let layer = &profile.layers[li];
        let h = mesh.nodes[e + 1] - mesh.nodes[e];
        if !(h > 0.0) {
            return Err(Error::Mesh(format!("element {e} has non-positive thickness")));
        }
        let moduli = complex_lame(layer)?;
        let full = element_matrices(problem, &moduli, layer.rho, h);
        let um = element_matrices(problem, &unit_mu, layer.rho, h);
        let ul = element_matrices(problem, &unit_la, layer.rho, h);
        let parts = [&full.a, &full.b, &full.g, &full.m, &um.a, &ul.a, &um.b, &ul.b, &um.g, &ul.g];
        for i in 0..2 * d {
            let gi = e * d + i;
            if gi >= n {
                continue;
            }
            for j in 0..2 * d {
                let gj = e * d + j;
                if gj >= n {
                    continue;
                }
                for (o, p) in out.iter_mut().zip(parts.iter()) {
                    o[(gi, gj)] += p[(i, j)];
                }
            }
        }
    }
    let mut it = out.into_iter();
    let mut next = || it.next().expect("ten matrices");
    Ok(GlobalMatrices {
        problem,
        a: next(),
        b: next(),
        g: next(),
        m: next(),
        a_mu: next(),
        a_lambda: next(),
        b_mu: next(),
        b_lambda: next(),
        g_mu: next(),
        g_lambda: next(),
    })
}

/// Halfspace impedance `K_s = w Kp(p)`.
#[derive(Debug, Clone, Copy)]
pub struct HalfspaceImpedance {
    pub problem: WaveProblem,
    pub layer: Layer,
    pub moduli: ComplexModuli,
}

impl HalfspaceImpedance {
    pub fn new(problem: WaveProblem, layer: Layer) -> Result<Self> {
        Ok(HalfspaceImpedance { problem, layer, moduli: complex_lame(&layer)? })
    }

    pub fn kp(&self, p: f64) -> Result<CMat> {
        halfspace_impedance(self.problem, &self.layer, p)
    }

    /// `Kp` rotated into the DOF convention of the assembled matrices: the off-diagonal
    /// entries of the symmetric matrix pick up `-i` (x row) and `+i` (z row).
    pub fn kp_dof(&self, p: f64) -> Result<CMat> {
        let mut k = self.kp(p)?;
        if self.problem == WaveProblem::Psv {
            k[(0, 1)] *= -I;
            k[(1, 0)] *= I;
        }
        Ok(k)
    }
}

/// Vertical radical `sqrt(p^2 - 1/c^2)` with a complex speed, principal branch.
fn radical(p: f64, c2: C64) -> C64 {
    (C64::new(p * p, 0.0) - c2.inv()).sqrt()
}

pub fn halfspace_impedance(problem: WaveProblem, halfspace: &Layer, p: f64) -> Result<CMat> {
    if !(p >= 0.0) {
        return Err(Error::Domain(format!("slowness must be non-negative, got {p}")));
    }
    let m = complex_lame(halfspace)?;
    let cs2 = m.mu_star / halfspace.rho;
    match problem {
        WaveProblem::Sh => Ok(CMat::from_element(1, 1, m.mu_star * radical(p, cs2))),
        WaveProblem::Psv => {
            let cp2 = (m.lambda_star + 2.0 * m.mu_star) / halfspace.rho;
            let rp = radical(p, cp2);
            let rs = radical(p, cs2);
            let xi = 2.0 * cs2 * (p * p - rp * rs);
            if xi.norm() <= 1e-13 * (2.0 * cs2 * p * p).norm().max(1.0) {
                return Err(Error::RayleighPole { p });
            }
            let f = 2.0 * m.mu_star / xi;
            let off = f * p * (ONE - xi);
            Ok(DMatrix::from_row_slice(2, 2, &[f * rp, off, off, f * rs]))
        }
    }
}

/// Boundary DOFs that receive the halfspace impedance.
pub fn boundary_dofs(mesh: &LayerMesh) -> Vec<usize> {
    let d = mesh.problem.dofs_per_node();
    let last = mesh.n_free_nodes() - 1;
    (0..d).map(|c| last * d + c).collect()
}

/// Dense dynamic stiffness at one sample.
pub fn dynamic_stiffness(
    globals: &GlobalMatrices,
    impedance: Option<&HalfspaceImpedance>,
    p: f64,
    omega: f64,
) -> Result<CMat> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("angular frequency must be positive, got {omega}")));
    }
    let k = p * omega;
    let mut kk = &globals.a * C64::new(k * k, 0.0) + &globals.b * C64::new(0.0, -k) + &globals.g
        - &globals.m * C64::new(omega * omega, 0.0);
    if let Some(hs) = impedance {
        add_boundary(&mut kk, globals, hs, p, omega)?;
    }
    Ok(kk)
}

fn add_boundary(kk: &mut CMat, globals: &GlobalMatrices, hs: &HalfspaceImpedance, p: f64, omega: f64) -> Result<()> {
    let kp = hs.kp_dof(p)?;
    let d = globals.problem.dofs_per_node();
    let base = globals.n_dof() - d;
    for i in 0..d {
        for j in 0..d {
            kk[(base + i, base + j)] += kp[(i, j)] * omega;
        }
    }
    Ok(())
}

/// Banded factorization of the dynamic stiffness at one sample.
pub fn factor_stiffness(
    globals: &GlobalMatrices,
    impedance: Option<&HalfspaceImpedance>,
    p: f64,
    omega: f64,
) -> Result<BandedLu> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("angular frequency must be positive, got {omega}")));
    }
    let k = p * omega;
    let (k2, w2) = (k * k, omega * omega);
    let n = globals.n_dof();
    let d = globals.problem.dofs_per_node();
    let bw = globals.bandwidth();
    let kp = match impedance {
        Some(hs) => Some(hs.kp_dof(p)?),
        None => None,
    };
    let base = n - d;
    BandedLu::factor(n, bw, bw, |i, j| {
        let mut v = globals.a[(i, j)] * k2 + globals.b[(i, j)] * C64::new(0.0, -k) + globals.g[(i, j)]
            - globals.m[(i, j)] * w2;
        if let Some(kp) = &kp {
            if i >= base && j >= base {
                v += kp[(i - base, j - base)] * omega;
            }
        }
        v
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bedrock_layer() -> Layer {
        Layer::new(20.0, 100.0, 200.0, 0.02, 0.02, 1800.0).unwrap()
    }

    fn real(mu: f64, la: f64) -> ComplexModuli {
        ComplexModuli { mu_star: C64::new(mu, 0.0), lambda_star: C64::new(la, 0.0) }
    }

    #[test]
    fn psv_mass_only() {
        let e = element_matrices_psv(&real(0.0, 0.0), 1800.0, 0.2);
        assert!(e.a.norm() == 0.0 && e.b.norm() == 0.0 && e.g.norm() == 0.0);
        let pat = [[2.0, 0.0, 1.0, 0.0], [0.0, 2.0, 0.0, 1.0], [1.0, 0.0, 2.0, 0.0], [0.0, 1.0, 0.0, 2.0]];
        for i in 0..4 {
            for j in 0..4 {
                assert!((e.m[(i, j)].re - 60.0 * pat[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn psv_g_with_zero_lambda() {
        let e = element_matrices_psv(&real(1.0, 0.0), 1.0, 1.0);
        assert_eq!(e.g[(0, 0)].re, 1.0);
        assert_eq!(e.g[(1, 1)].re, 2.0);
        assert_eq!(e.g[(0, 2)].re, -1.0);
    }

    #[test]
    fn psv_b_antisymmetric() {
        let e = element_matrices_psv(&real(3.0, 5.0), 1.0, 0.7);
        assert!((&e.b + e.b.transpose()).norm() == 0.0);
    }

    #[test]
    fn sh_elements() {
        let e = element_matrices_sh(&real(18e6, 0.0), 1800.0, 0.2);
        assert!((e.g[(0, 0)].re - 9e7).abs() < 1e-6 && (e.g[(0, 1)].re + 9e7).abs() < 1e-6);
        assert!(e.b.norm() == 0.0);
        assert!((e.m[(0, 0)].re - 120.0).abs() < 1e-12 && (e.m[(0, 1)].re - 60.0).abs() < 1e-12);
    }

    #[test]
    fn single_element_bedrock() {
        let layer = bedrock_layer();
        let profile = SoilProfile::new(vec![layer], Bottom::Bedrock).unwrap();
        let mesh = LayerMesh::with_max_element(&profile, WaveProblem::Sh, 20.0).unwrap();
        let g = assemble_global(&profile, &mesh).unwrap();
        assert_eq!(g.n_dof(), 1);
        let w = 3.0;
        let k = dynamic_stiffness(&g, None, 0.0, w).unwrap();
        let mu = complex_lame(&layer).unwrap().mu_star;
        let expect = mu / 20.0 - C64::new(w * w * 1800.0 * 20.0 / 3.0, 0.0);
        assert!((k[(0, 0)] - expect).norm() < 1e-9 * expect.norm());
    }

    #[test]
    fn coarse_mesh_resonance() {
        let layer = Layer::new(20.0, 100.0, 200.0, 0.0, 0.0, 1800.0).unwrap();
        let profile = SoilProfile::new(vec![layer], Bottom::Bedrock).unwrap();
        let mesh = LayerMesh::with_max_element(&profile, WaveProblem::Sh, 20.0).unwrap();
        let g = assemble_global(&profile, &mesh).unwrap();
        let f = 3f64.sqrt() * 100.0 / (2.0 * std::f64::consts::PI * 20.0);
        let k = dynamic_stiffness(&g, None, 0.0, 2.0 * std::f64::consts::PI * f).unwrap();
        assert!(k[(0, 0)].norm() < 1e-6 * g.g[(0, 0)].norm());
        assert!((f - 1.378).abs() < 1e-3);
    }

    #[test]
    fn two_elements_interior_diagonal() {
        let layer = Layer::new(2.0, 100.0, 200.0, 0.0, 0.0, 1800.0).unwrap();
        let profile = SoilProfile::new(vec![layer], Bottom::Bedrock).unwrap();
        let mesh = LayerMesh::with_max_element(&profile, WaveProblem::Sh, 1.0).unwrap();
        let g = assemble_global(&profile, &mesh).unwrap();
        assert!((g.g[(1, 1)].re - 2.0 * layer.mu() / 1.0).abs() < 1e-6);
    }

    #[test]
    fn split_is_linear() {
        let layer = Layer::new(4.0, 100.0, 200.0, 0.0, 0.0, 1800.0).unwrap();
        let profile = SoilProfile::new(vec![layer], Bottom::Bedrock).unwrap();
        let mesh = LayerMesh::with_max_element(&profile, WaveProblem::Psv, 1.0).unwrap();
        let g = assemble_global(&profile, &mesh).unwrap();
        let (a, b, gg) = g.with_moduli(C64::new(2.0, 0.0), C64::new(3.0, 0.0));
        let e = element_matrices_psv(&real(2.0, 3.0), 1.0, 1.0);
        assert!((a[(0, 0)] - e.a[(0, 0)]).norm() < 1e-14);
        assert!((b[(0, 1)] - e.b[(0, 1)]).norm() < 1e-14);
        assert!((gg[(1, 1)] - e.g[(1, 1)]).norm() < 1e-14);
        assert!((gg[(3, 3)] - e.g[(1, 1)] - e.g[(3, 3)]).norm() < 1e-14);
    }

    #[test]
    fn assembled_symmetry() {
        let profile = SoilProfile::new(
            vec![bedrock_layer(), Layer::new(5.0, 150.0, 400.0, 0.01, 0.03, 1900.0).unwrap()],
            Bottom::Bedrock,
        )
        .unwrap();
        let mesh = LayerMesh::with_max_element(&profile, WaveProblem::Psv, 2.5).unwrap();
        let g = assemble_global(&profile, &mesh).unwrap();
        for m in [&g.a, &g.g, &g.m] {
            assert!((m - m.transpose()).norm() < 1e-12 * m.norm());
        }
        assert!((&g.b + g.b.transpose()).norm() < 1e-12 * g.b.norm());
    }

    #[test]
    fn sh_impedance_examples() {
        let l = Layer::halfspace(100.0, 200.0, 0.0, 0.0, 1800.0).unwrap();
        let k = halfspace_impedance(WaveProblem::Sh, &l, 1.0 / 100.0).unwrap();
        assert!(k[(0, 0)].norm() < 1e-9);
        let k = halfspace_impedance(WaveProblem::Sh, &l, 2.0 / 100.0).unwrap();
        assert!((k[(0, 0)].re - 18e6 * 3f64.sqrt() / 100.0).abs() < 1e-6);
        let big = 10.0 / 100.0;
        let k = halfspace_impedance(WaveProblem::Sh, &l, big).unwrap();
        assert!((k[(0, 0)].re / (18e6 * big) - 1.0).abs() < 0.01);
    }

    #[test]
    fn psv_impedance_at_zero_slowness() {
        let l = Layer::halfspace(100.0, 200.0, 0.0, 0.0, 1800.0).unwrap();
        let k = halfspace_impedance(WaveProblem::Psv, &l, 0.0).unwrap();
        assert!(k[(0, 1)].norm() == 0.0 && k[(1, 0)].norm() == 0.0);
        let m = complex_lame(&l).unwrap();
        let cp2 = (m.lambda_star + 2.0 * m.mu_star) / 1800.0;
        let xi = 2.0 * (m.mu_star / 1800.0) * (ONE * 0.0 - radical(0.0, cp2) * radical(0.0, m.mu_star / 1800.0));
        assert!((xi - ONE).norm() < 1e-12);
    }

    #[test]
    fn mesh_rule() {
        let profile = SoilProfile::new(vec![bedrock_layer()], Bottom::Bedrock).unwrap();
        let mesh = LayerMesh::for_frequency(&profile, WaveProblem::Sh, 15.0, 10.0).unwrap();
        assert_eq!(mesh.element_layer.len(), 30);
        mesh.check(&profile, 15.0).unwrap();
        let coarse = LayerMesh::with_max_element(&profile, WaveProblem::Sh, 1.0).unwrap();
        assert!(coarse.check(&profile, 15.0).is_err());
    }
}
