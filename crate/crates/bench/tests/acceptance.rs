//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero when
//! any of them fails.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use layergreen::fom::{globals_at_mu, mu_split, solve_fom, FomSetup, Load, SamplingGrid, TWO_PI};
use layergreen::gta::{gta_build, GtaConfig};
use layergreen::linalg::{CMat, CVec};
use layergreen::soil::{complex_lame, rayleigh_estimate};
use layergreen::tensor::{build_operator, default_labels, frob, rel_frobenius_error, CpOperator, Factor, TuckerTensor};
use layergreen::thin_layer::{assemble_global, dynamic_stiffness};
use layergreen::transform::{inverse_transform_1d, inverse_transform_dense, inverse_transform_tucker, Parity};
use layergreen::{Bottom, Layer, LayerMesh, SoilProfile, WaveProblem};
use layergreen_bench::report::Report;
use layergreen_bench::run::peak_frequencies;
use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(bool, String)>;

fn table1_layer() -> Layer {
    Layer::new(20.0, 100.0, 200.0, 0.02, 0.02, 1800.0).unwrap()
}

fn bedrock() -> SoilProfile {
    SoilProfile::new(vec![table1_layer()], Bottom::Bedrock).unwrap()
}

fn rc(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
}

fn rel(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm() / b.norm()
}

// ---------------------------------------------------------------- runs of the binary

struct Runs {
    root: PathBuf,
    done: HashMap<String, Result<PathBuf, String>>,
}

impl Runs {
    fn get(&mut self, key: &str, args: &[&str]) -> Result<PathBuf> {
        if !self.done.contains_key(key) {
            let out = self.root.join(key);
            let _ = std::fs::remove_dir_all(&out);
            let t = Instant::now();
            let res = Command::new(env!("CARGO_BIN_EXE_lgbench"))
                .arg("run")
                .args(args)
                .arg("--out")
                .arg(&out)
                .output()
                .map_err(|e| e.to_string())
                .and_then(|o| {
                    if o.status.success() {
                        Ok(out.clone())
                    } else {
                        Err(format!("{:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr).trim()))
                    }
                });
            eprintln!("  [run {key}: {:.1} s]", t.elapsed().as_secs_f64());
            self.done.insert(key.to_string(), res);
        }
        self.done[key].clone().map_err(|e| anyhow!("lgbench run {key} failed: {e}"))
    }

    fn sh(&mut self) -> Result<PathBuf> {
        self.get("bedrock_sh", &["bedrock_sh", "--mode", "both"])
    }

    fn psv(&mut self) -> Result<PathBuf> {
        self.get("bedrock_psv", &["bedrock_psv", "--mode", "both"])
    }

    fn sh_pg(&mut self) -> Result<PathBuf> {
        self.get("bedrock_sh_pg", &["bedrock_sh", "--mode", "both", "--test-rule", "petrov-galerkin"])
    }
}

fn report(dir: &Path) -> Result<Report> {
    Report::read(&dir.join("report.csv"))
}

fn error_curve(dir: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(dir.join("error_vs_rank.csv"))?;
    r.records().map(|rec| Ok(rec?[2].parse::<f64>()?)).collect()
}

fn orthonormality(dir: &Path) -> Result<f64> {
    let mut r = csv::Reader::from_path(dir.join("modes.csv"))?;
    let col = r.headers()?.iter().position(|h| h == "orthonormality").context("no orthonormality column")?;
    let mut worst = 0.0f64;
    for rec in r.records() {
        worst = worst.max(rec?[col].parse::<f64>()?);
    }
    Ok(worst)
}

// ---------------------------------------------------------------- criteria

fn c1_analytic() -> Check {
    let t = Instant::now();
    let profile = bedrock();
    let layer = profile.layers[0];
    let mesh = LayerMesh::for_frequency(&profile, WaveProblem::Sh, 15.0, 20.0)?;
    let g = assemble_global(&profile, &mesh)?;
    let mu = complex_lame(&layer)?.mu_star;
    let (mut worst, mut at) = (0.0f64, 0.0);
    for i in 0..=580 {
        let f = 0.5 + 0.025 * i as f64;
        let w = TWO_PI * f;
        let ks = w / (mu / layer.rho).sqrt();
        let exact = (ks * layer.thickness).tan() / (mu * ks);
        let k = dynamic_stiffness(&g, None, 0.0, w)?;
        let mut rhs = CVec::zeros(k.nrows());
        rhs[0] = C64::new(1.0, 0.0);
        let u = k.lu().solve(&rhs).context("singular sample")?[0];
        let e = ((u - exact) / exact).norm();
        if e > worst {
            (worst, at) = (e, f);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((worst < 1e-2 && secs < 10.0, format!("max rel. error {worst:.3e} at {at} Hz, {} elements, {secs:.2} s", mesh.element_layer.len())))
}

fn surface_peaks(problem: WaveProblem, load: Load) -> Result<Vec<f64>> {
    let profile = bedrock();
    let mesh = LayerMesh::for_frequency(&profile, problem, 15.0, 10.0)?;
    let p = SamplingGrid::log_slowness(1e-2, 10.0, 150, 100.0);
    let freq = SamplingGrid::freq_bins(0.025, 15.0);
    let grid = SamplingGrid::new(vec![p[0]], 100.0, true, &mesh, freq.clone(), vec![0.0], None)?;
    let t = solve_fom(&profile, &mesh, &grid, &[load], 1)?;
    let dof = mesh.dof(0, load.component()).context("surface DOF")?;
    let u = t.for_load(load).context("load missing")?;
    let amp: Vec<f64> = (0..freq.len()).map(|i| u[[0, dof, i]].norm()).collect();
    Ok(peak_frequencies(&freq, &amp))
}

fn c2_resonances() -> Check {
    let hit = |peaks: &[f64], f: f64| peaks.iter().any(|p| (p - f).abs() <= 0.025 + 1e-9);
    let sh = surface_peaks(WaveProblem::Sh, Load::Y)?;
    let psv = surface_peaks(WaveProblem::Psv, Load::Z)?;
    let ok = hit(&sh, 1.25) && hit(&sh, 3.75) && hit(&psv, 2.5) && hit(&psv, 7.5);
    let show = |v: &[f64]| v.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>().join(" ");
    Ok((ok, format!("SH peaks [{}] Hz, P-SV vertical peaks [{}] Hz", show(&sh), show(&psv))))
}

fn c3_rayleigh() -> Check {
    let (cr, lr) = rayleigh_estimate(100.0, 1.0 / 3.0, 10.0)?;
    let (e1, e2) = ((cr / 93.2 - 1.0).abs(), (lr / 9.31 - 1.0).abs());
    Ok((e1 < 2e-3 && e2 < 2e-3, format!("Cr = {cr:.3} m/s ({e1:.1e}), lambda_r = {lr:.4} m ({e2:.1e})")))
}

fn c4_split() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let profile = bedrock();
    let mesh = LayerMesh::with_max_element(&profile, WaveProblem::Psv, 2.0)?;
    let base = assemble_global(&profile, &mesh)?;
    let split = mu_split(&base, &profile.layers[0]);
    let rho = 1800.0f64;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mu: f64 = rng.random_range(1e6..1e8);
        let lambda: f64 = rng.random_range(1e6..1e8);
        let layer = Layer::new(20.0, (mu / rho).sqrt(), ((lambda + 2.0 * mu) / rho).sqrt(), 0.02, 0.03, rho)?;
        let p = SoilProfile::new(vec![layer], Bottom::Bedrock)?;
        let direct = assemble_global(&p, &mesh)?;
        let m = complex_lame(&layer)?;
        let (a, b, g) = base.with_moduli(m.mu_star, m.lambda_star);
        worst = worst.max(rel(&a, &direct.a)).max(rel(&b, &direct.b)).max(rel(&g, &direct.g));
        // swept shear modulus with the base layer's lambda held fixed
        let l0 = profile.layers[0];
        let fixed = Layer::new(20.0, (mu / rho).sqrt(), ((l0.lambda() + 2.0 * mu) / rho).sqrt(), 0.02, 0.02, rho)?;
        let direct = assemble_global(&SoilProfile::new(vec![fixed], Bottom::Bedrock)?, &mesh)?;
        let swept = globals_at_mu(&base, &split, mu);
        worst = worst.max(rel(&swept.a, &direct.a)).max(rel(&swept.b, &direct.b)).max(rel(&swept.g, &direct.g));
    }
    Ok((worst < 1e-14, format!("max rel. difference {worst:.2e} over 20 pairs")))
}

/// Applies the operator to random rank-one tensors and compares with per-sample `K x`.
fn cp_vs_dense(setup: &FomSetup, grid: &SamplingGrid, rng: &mut ChaCha8Rng) -> Result<f64> {
    let op = build_operator(setup, grid)?;
    let omega = grid.omega();
    let mus: Vec<Option<f64>> = match &grid.mu {
        Some(m) => m.iter().map(|&v| Some(v)).collect(),
        None => vec![None],
    };
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x: Vec<Vec<C64>> = op.dims.iter().map(|&n| (0..n).map(|_| rc(rng)).collect()).collect();
        let parts = op.apply_rank_one(&x)?;
        let mut y = ArrayD::<C64>::zeros(IxDyn(&op.dims));
        for term in &parts {
            for (ix, v) in y.indexed_iter_mut() {
                *v += (0..op.ndim()).map(|d| term[d][ix[d]]).product::<C64>();
            }
        }
        let mut reference = ArrayD::<C64>::zeros(IxDyn(&op.dims));
        for ip in 0..grid.slowness.len() {
            for iw in 0..omega.len() {
                for (im, mu) in mus.iter().enumerate() {
                    let globals = match (mu, &setup.mu_split) {
                        (Some(m), Some(s)) => globals_at_mu(&setup.globals, s, *m),
                        _ => setup.globals.clone(),
                    };
                    let k = dynamic_stiffness(&globals, setup.impedance.as_ref(), grid.slowness[ip], omega[iw])?;
                    let mut idx = vec![ip, 0, iw];
                    let mut scale = x[0][ip] * x[2][iw];
                    if mu.is_some() {
                        idx.push(im);
                        scale *= x[3][im];
                    }
                    let xs = CVec::from_iterator(x[1].len(), x[1].iter().map(|v| v * scale));
                    let ks = k * xs * C64::new(op.sample_weight(&idx), 0.0);
                    for (z, v) in ks.iter().enumerate() {
                        idx[1] = z;
                        reference[IxDyn(&idx)] = *v;
                    }
                }
            }
        }
        worst = worst.max(frob(&(&y - &reference)) / frob(&reference));
    }
    Ok(worst)
}

fn c5_operator() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let top = Layer::new(4.0, 50.0, 300.0, 0.025, 0.025, 1100.0)?;
    let hs = Layer::halfspace(150.0, 400.0, 0.025, 0.025, 1900.0)?;
    let layered = SoilProfile::new(vec![top], Bottom::Halfspace(hs))?;
    let mesh = LayerMesh::with_max_element(&layered, WaveProblem::Psv, 1.0)?;
    let p = SamplingGrid::log_slowness(1e-2, 10.0, 5, 50.0);
    let grid = SamplingGrid::new(p, 50.0, true, &mesh, SamplingGrid::freq_bins(1.2, 6.0), vec![0.0], None)?;
    let setup = FomSetup::new(&layered, &mesh, false)?;
    let e1 = cp_vs_dense(&setup, &grid, &mut rng)?;
    let n1 = grid.shape().iter().product::<usize>();

    let profile = bedrock();
    let sh = LayerMesh::with_max_element(&profile, WaveProblem::Sh, 4.0)?;
    let p = SamplingGrid::log_slowness(1e-2, 10.0, 4, 100.0);
    let grid = SamplingGrid::new(p, 100.0, true, &sh, SamplingGrid::freq_bins(1.0, 4.0), vec![0.0], Some(vec![1.6e7, 1.8e7, 2.0e7, 2.4e7, 2.6e7]))?;
    let setup = FomSetup::new(&profile, &sh, true)?;
    let e2 = cp_vs_dense(&setup, &grid, &mut rng)?;
    let n2 = grid.shape().iter().product::<usize>();
    let worst = e1.max(e2);
    Ok((
        worst < 1e-12 && n1 <= 500 && n2 <= 500,
        format!("P-SV halfspace ({n1} entries) {e1:.2e}, SH shear-modulus sweep ({n2} entries) {e2:.2e}"),
    ))
}

fn unfold(x: &ArrayD<C64>, d: usize) -> CMat {
    let n = x.shape()[d];
    let mut m = CMat::zeros(n, x.len() / n);
    let mut count = vec![0usize; n];
    for (ix, v) in x.indexed_iter() {
        m[(ix[d], count[ix[d]])] = *v;
        count[ix[d]] += 1;
    }
    m
}

fn leading(m: &CMat, r: usize) -> CMat {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left vectors");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    CMat::from_fn(m.nrows(), r, |i, j| u[(i, idx[j])])
}

fn project(x: &ArrayD<C64>, d: usize, u: &CMat) -> ArrayD<C64> {
    let p = u * u.adjoint();
    let mut out = ArrayD::zeros(x.raw_dim());
    for (ix, v) in out.indexed_iter_mut() {
        let mut j = ix.clone();
        for k in 0..x.shape()[d] {
            j[d] = k;
            *v += p[(ix[d], k)] * x[&j];
        }
    }
    out
}

/// Best multilinear rank-`(r, r, r)` error, HOSVD start plus HOOI sweeps.
fn best_rank_error(x: &ArrayD<C64>, r: usize) -> f64 {
    let mut u: Vec<CMat> = (0..3).map(|d| leading(&unfold(x, d), r)).collect();
    for _ in 0..100 {
        for d in 0..3 {
            let mut y = x.clone();
            for k in (0..3).filter(|&k| k != d) {
                y = project(&y, k, &u[k]);
            }
            u[d] = leading(&unfold(&y, d), r);
        }
    }
    let mut y = x.clone();
    for (d, ud) in u.iter().enumerate() {
        y = project(&y, d, ud);
    }
    frob(&(&y - x)) / frob(x)
}

fn c6_separable() -> Check {
    let n = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ones = |n: usize| vec![C64::new(1.0, 0.0); n];
    let identity = CpOperator {
        labels: default_labels(3),
        dims: vec![n; 3],
        terms: vec![(0..3).map(|_| Factor::Diag(ones(n))).collect()],
        weights: vec![vec![1.0; n]; 3],
        spatial: 1,
    };
    let force: Vec<Vec<C64>> = (0..3).map(|_| (0..n).map(|_| rc(&mut rng)).collect()).collect();
    let res = gta_build(&identity, &force, &GtaConfig { max_modes: 5, ..Default::default() })?;
    let residual = res.state.log[0].reduced_residual;
    let mut ok = res.tucker.ranks() == vec![1, 1, 1] && res.state.log.len() == 1 && residual < 1e-10;
    let mut worst_gap = f64::NEG_INFINITY;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(60 + seed);
        let mut pos = || (0..n).map(|_| C64::new(0.5 + rng.random::<f64>(), 0.0)).collect::<Vec<_>>();
        let terms: Vec<Vec<Vec<C64>>> = (0..2).map(|_| (0..3).map(|_| pos()).collect()).collect();
        let force: Vec<Vec<C64>> = (0..3).map(|_| pos()).collect();
        let x = ArrayD::from_shape_fn(IxDyn(&[n, n, n]), |ix| {
            let d: C64 = terms.iter().map(|t| t[0][ix[0]] * t[1][ix[1]] * t[2][ix[2]]).sum();
            force[0][ix[0]] * force[1][ix[1]] * force[2][ix[2]] / d
        });
        let op = CpOperator {
            labels: default_labels(3),
            dims: vec![n; 3],
            terms: terms.into_iter().map(|t| t.into_iter().map(Factor::Diag).collect()).collect(),
            weights: vec![vec![1.0; n]; 3],
            spatial: 1,
        };
        for r in 1..=3 {
            let res = gta_build(&op, &force, &GtaConfig { max_modes: r, ..Default::default() })?;
            let ranks = res.tucker.ranks();
            let e = rel_frobenius_error(&x, &res.tucker, &ranks)?;
            let gap = e - best_rank_error(&x, r);
            worst_gap = worst_gap.max(gap);
            ok &= ranks == vec![r; 3] && gap <= 0.05;
        }
    }
    Ok((ok, format!("identity: 1 mode, residual {residual:.1e}; diagonal 4x4x4: worst gap to best rank {worst_gap:.2e}")))
}

fn c7_convergence(runs: &mut Runs) -> Check {
    let sh = error_curve(&runs.sh()?)?;
    let psv = error_curve(&runs.psv()?)?;
    if sh.len() < 40 || psv.len() < 40 {
        bail!("error curves have {} and {} ranks", sh.len(), psv.len());
    }
    let smoothed: Vec<f64> = sh.iter().scan(f64::INFINITY, |m, &e| {
        *m = m.min(e);
        Some(*m)
    }).collect();
    let tail = &smoothed[smoothed.len() - 10..];
    let monotone = tail.windows(2).all(|w| w[1] <= w[0]);
    let (e_sh, e_psv) = (sh[39], psv[39]);
    Ok((
        e_sh <= 0.05 && monotone && e_psv > e_sh,
        format!("SH error at 40 modes {e_sh:.4}, P-SV {e_psv:.4}, smoothed tail non-increasing: {monotone}"),
    ))
}

fn c8_test_rule(runs: &mut Runs) -> Check {
    let g = report(&runs.sh()?)?.number("final_error").context("final_error")?;
    let pg = report(&runs.sh_pg()?)?.number("final_error").context("final_error")?;
    let msg = if pg <= g {
        format!("Petrov-Galerkin {pg:.4} <= Galerkin {g:.4}")
    } else {
        format!("FLAGGED: Petrov-Galerkin {pg:.4} > Galerkin {g:.4} at 40 modes")
    };
    Ok((true, msg))
}

fn c9_transform() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = SamplingGrid::log_slowness(1e-2, 10.0, 50, 100.0);
    let omega: Vec<f64> = (1..=8).map(|i| TWO_PI * i as f64).collect();
    let x: Vec<f64> = (0..21).map(|i| 2.5 * i as f64).collect();
    let par: Vec<Parity> = (0..10).map(|i| if i % 2 == 0 { Parity::Even } else { Parity::Odd }).collect();
    let core = ArrayD::from_shape_fn(IxDyn(&[8, 5, 6]), |_| rc(&mut rng));
    let factors = [50, 10, 8].iter().zip([8, 5, 6]).map(|(&n, r)| CMat::from_fn(n, r, |_, _| rc(&mut rng))).collect();
    let t = TuckerTensor::new(core, factors, default_labels(3))?;
    let (st, _) = inverse_transform_tucker(&t, &p, &omega, &x, &par)?;
    let (dense, _) = inverse_transform_dense(&t.reconstruct(), &p, &omega, &x, &par, 1)?;
    let e_path = frob(&(&st.reconstruct() - &dense)) / frob(&dense);

    let pk = SamplingGrid::log_slowness(1e-3, 1e2, 1500, 1.0);
    let u: Vec<C64> = pk.iter().map(|&k| C64::new(2.0 / (1.0 + k * k), 0.0)).collect();
    let xs: Vec<f64> = (0..=100).map(|i| 0.05 * i as f64).collect();
    let v = inverse_transform_1d(&pk, &u, 1.0, &xs, Parity::Even)?;
    let e_lor = xs.iter().zip(&v).map(|(x, v)| ((v - (-x).exp()) / (-x).exp()).norm()).fold(0.0, f64::max);
    Ok((e_path <= 1e-10 && e_lor < 1e-2, format!("Tucker vs dense on 50x10x8 {e_path:.2e}, Lorentzian max pointwise {e_lor:.2e}")))
}

fn c10_compression(runs: &mut Runs) -> Check {
    let r = report(&runs.sh()?)?;
    let fom = r.number("fom_bytes").context("fom_bytes")?;
    let rom = r.number("rom_bytes").context("rom_bytes")?;
    Ok((rom * 100.0 <= fom, format!("ROM {rom} B vs FOM {fom} B, ratio {:.2} (needs >= 100)", fom / rom)))
}

fn c11_determinism(runs: &mut Runs) -> Check {
    let a = runs.get("rom_seed7_a", &["bedrock_sh", "--mode", "rom", "--seed", "7"])?;
    let b = runs.get("rom_seed7_b", &["bedrock_sh", "--mode", "rom", "--seed", "7"])?;
    let (x, y) = (std::fs::read(a.join("rom.tkr"))?, std::fs::read(b.join("rom.tkr"))?);
    Ok((x == y, format!("rom.tkr {} and {} bytes, identical: {}", x.len(), y.len(), x == y)))
}

fn c12_orthonormality(runs: &mut Runs) -> Check {
    let mut dirs = vec![
        ("bedrock_sh".to_string(), runs.sh()?),
        ("bedrock_psv".to_string(), runs.psv()?),
        ("bedrock_sh (Petrov-Galerkin)".to_string(), runs.sh_pg()?),
    ];
    for name in ["bedrock_mu_sweep", "groene_hart_sh", "groene_hart_psv"] {
        dirs.push((name.to_string(), runs.get(name, &[name, "--mode", "both"])?));
    }
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, d) in &dirs {
        let o = orthonormality(d)?;
        worst = worst.max(o);
        parts.push(format!("{name} {o:.1e}"));
    }
    Ok((worst < 1e-10, parts.join(", ")))
}

fn main() -> ExitCode {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let mut runs = Runs { root, done: HashMap::new() };
    let criteria: Vec<(&str, Box<dyn FnMut(&mut Runs) -> Check>)> = vec![
        ("analytic clamped-layer oracle", Box::new(|_| c1_analytic())),
        ("resonance locations", Box::new(|_| c2_resonances())),
        ("Rayleigh estimate", Box::new(|_| c3_rayleigh())),
        ("shear/Lame split assembly", Box::new(|_| c4_split())),
        ("operator equivalence", Box::new(|_| c5_operator())),
        ("separable problems", Box::new(|_| c6_separable())),
        ("reduced-order convergence", Box::new(c7_convergence)),
        ("Petrov-Galerkin vs Galerkin", Box::new(c8_test_rule)),
        ("transform equivalence", Box::new(|_| c9_transform())),
        ("compression", Box::new(c10_compression)),
        ("determinism", Box::new(c11_determinism)),
        ("orthonormality", Box::new(c12_orthonormality)),
    ];
    let mut failed = 0;
    let n = criteria.len();
    for (i, (name, mut f)) in criteria.into_iter().enumerate() {
        let (ok, detail) = match f(&mut runs) {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e:#}")),
        };
        if !ok {
            failed += 1;
        }
        println!("{} {:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("{} of {n} criteria passed", n - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
