//! `run`: full-order solve, reduced-order build, error sweep, timings and artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use layergreen::fom::{build_force, solve_fom, FomSetup};
use layergreen::gta::{gta_build_observed, ModeLog};
use layergreen::io;
use layergreen::tensor::{build_operator, dense_bytes, megabytes, rel_frobenius_error, tucker_bytes};
use layergreen::transform::{dof_parities, inverse_transform_1d, inverse_transform_dense, inverse_transform_tucker};
use layergreen::TuckerTensor;
use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64 as C64;

use crate::report::Report;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Fom,
    Rom,
    Both,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "fom" => Some(Mode::Fom),
            "rom" => Some(Mode::Rom),
            "both" => Some(Mode::Both),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Fom => "fom",
            Mode::Rom => "rom",
            Mode::Both => "both",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: Mode,
    pub workers: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    /// `(r, ranks used, error)` for the final ROM truncated to `min(r, R_d)`.
    pub error_vs_rank: Option<Vec<(usize, Vec<usize>, f64)>>,
    pub modes: Vec<ModeLog>,
    pub peaks_hz: Vec<f64>,
}

/// Library errors are numerical failures; everything else (I/O, CSV) is not.
#[derive(Debug, thiserror::Error)]
#[error(transparent)]
pub struct Numerical(#[from] pub layergreen::Error);

fn seconds(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn median3(mut f: impl FnMut() -> Result<f64>) -> Result<f64> {
    let mut v = [f()?, f()?, f()?];
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(v[1])
}

fn nearest(v: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, &y) in v.iter().enumerate() {
        if (y - x).abs() < (v[best] - x).abs() {
            best = i;
        }
    }
    best
}

/// Local maxima of `|u|` above 5% of the largest value, in increasing frequency.
pub fn peak_frequencies(freq: &[f64], amp: &[f64]) -> Vec<f64> {
    let top = amp.iter().cloned().fold(0.0, f64::max);
    (1..amp.len().saturating_sub(1))
        .filter(|&i| amp[i] > amp[i - 1] && amp[i] >= amp[i + 1] && amp[i] >= 0.05 * top)
        .map(|i| freq[i])
        .collect()
}

/// Index tuple for `(p, dof, f[, mu=0])`.
fn idx(s: &Scenario, ip: usize, z: usize, iw: usize) -> Vec<usize> {
    let mut v = vec![ip, z, iw];
    if s.grid.mu.is_some() {
        v.push(0);
    }
    v
}

fn surface_dof(s: &Scenario) -> usize {
    s.mesh.dof(0, s.load.component()).expect("surface node is free")
}

fn fmt_ranks(r: &[usize]) -> String {
    r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("x")
}

pub fn run(s: &Scenario, opts: &RunOptions) -> Result<RunOutcome> {
    let out = &opts.out;
    fs::create_dir_all(out.join("slices")).with_context(|| format!("creating {}", out.display()))?;
    let shape = s.grid.shape();
    let fom_bytes_expected = dense_bytes(&shape);
    if fom_bytes_expected > 1_000_000_000 {
        eprintln!(
            "warning: the dense tensor for this grid needs {:.0} MB of memory",
            megabytes(fom_bytes_expected)
        );
    }
    let mut report = Report::default();
    report.push("scenario", &s.name);
    report.push("problem", s.problem.name());
    report.push("load", s.load.name());
    report.push("mode", opts.mode.name());
    report.push("grid", if s.paper_grid { "paper" } else { "desk" });
    report.push("shape", &fmt_ranks(&shape));
    report.push("workers", &opts.workers.to_string());

    let fom_path = out.join("fom.tns");
    let mut fom: Option<ArrayD<C64>> = None;
    if opts.mode != Mode::Rom {
        let t = Instant::now();
        let g = solve_fom(&s.profile, &s.mesh, &s.grid, &[s.load], opts.workers).map_err(Numerical)?;
        report.push("fom_time_s", &format!("{:.6}", seconds(t)));
        let v = g.values.into_iter().next().expect("one load");
        io::write_dense(&fom_path, &v).map_err(Numerical)?;
        fom = Some(v);
    } else if fom_path.exists() {
        if let Ok(v) = io::read_dense(&fom_path) {
            if v.shape() == shape.as_slice() {
                fom = Some(v);
            }
        }
    }
    report.push("reference", if fom.is_some() { "fom" } else { "no reference" });

    let parities = dof_parities(s.problem, s.mesh.n_dof(), s.load.component()).map_err(Numerical)?;
    let omega = s.grid.omega();
    let mut rom: Option<TuckerTensor> = None;
    let mut modes = Vec::new();
    if opts.mode != Mode::Fom {
        let setup = FomSetup::new(&s.profile, &s.mesh, s.grid.mu.is_some()).map_err(Numerical)?;
        let t = Instant::now();
        let op = build_operator(&setup, &s.grid).map_err(Numerical)?;
        let force = op
            .weighted_force(&build_force(&s.grid, &s.mesh, s.load).map_err(Numerical)?)
            .map_err(Numerical)?;
        let res = gta_build_observed(&op, &force, &s.gta, &mut |log, _| {
            eprintln!(
                "mode {:>3}  ranks {:<12} als {:>2}  residual {:.1e}",
                log.mode,
                fmt_ranks(&log.ranks),
                log.als_iterations,
                log.reduced_residual
            );
        })
        .map_err(Numerical)?;
        report.push("rom_offline_s", &format!("{:.6}", seconds(t)));
        report.push("test_rule", s.gta.test_rule.name());
        report.push("seed", &s.gta.rng_seed.to_string());
        report.push("modes", &res.state.log.len().to_string());
        report.push("stopped_early", &res.stopped_early.to_string());
        report.push("ranks", &fmt_ranks(&res.tucker.ranks()));
        let max_orth = res.state.log.iter().map(|l| l.orthonormality).fold(0.0, f64::max);
        report.push("max_orthonormality_defect", &format!("{max_orth:e}"));
        io::write_tucker(&out.join("rom.tkr"), &res.tucker).map_err(Numerical)?;
        let online = median3(|| {
            let t = Instant::now();
            std::hint::black_box(res.tucker.reconstruct());
            Ok(seconds(t))
        })?;
        report.push("rom_online_s", &format!("{online:.6}"));
        let spatial = median3(|| {
            let t = Instant::now();
            let (st, _) = inverse_transform_tucker(&res.tucker, &s.grid.slowness, &omega, &s.grid.x, &parities).map_err(Numerical)?;
            std::hint::black_box(st.reconstruct());
            Ok(seconds(t))
        })?;
        report.push("rom_spatial_s", &format!("{spatial:.6}"));
        modes = res.state.log.clone();
        rom = Some(res.tucker);
    }
    if let Some(f) = &fom {
        let t = Instant::now();
        let (sp, count) = inverse_transform_dense(f, &s.grid.slowness, &omega, &s.grid.x, &parities, opts.workers).map_err(Numerical)?;
        std::hint::black_box(&sp);
        report.push("fom_spatial_s", &format!("{:.6}", seconds(t)));
        report.push("fom_transforms", &count.to_string());
    }
    if let Some(r) = &rom {
        let rp = r.ranks()[0];
        let kinds = if parities.windows(2).all(|w| w[0] == w[1]) { 1 } else { 2 };
        report.push("rom_transforms", &(rp * omega.len() * kinds).to_string());
    }

    // storage, recomputed from the dumped files
    if fom_path.exists() && fom.is_some() {
        let d = io::read_dense(&fom_path).map_err(Numerical)?;
        let b = dense_bytes(d.shape());
        report.push("fom_bytes", &b.to_string());
        report.push("fom_mb", &format!("{:.6}", megabytes(b)));
    }
    if rom.is_some() {
        let t = io::read_tucker(&out.join("rom.tkr")).map_err(Numerical)?;
        let b = tucker_bytes(&t.dims(), &t.ranks());
        report.push("rom_bytes", &b.to_string());
        report.push("rom_mb", &format!("{:.6}", megabytes(b)));
        report.push("compression", &format!("{:.3}", dense_bytes(&t.dims()) as f64 / b as f64));
    }

    let mut table = None;
    if let (Some(f), Some(r)) = (&fom, &rom) {
        let n = modes.len();
        let mut rows = Vec::with_capacity(n);
        for k in 1..=n {
            let t = r.truncate_uniform(k);
            let e = rel_frobenius_error(f, &t, &t.ranks()).map_err(Numerical)?;
            rows.push((k, t.ranks(), e));
        }
        let mut w = csv::Writer::from_path(out.join("error_vs_rank.csv"))?;
        w.write_record(["rank", "ranks", "error"])?;
        for (k, rk, e) in &rows {
            w.write_record([k.to_string(), fmt_ranks(rk), format!("{e:.9e}")])?;
        }
        w.flush()?;
        report.push("final_error", &format!("{:.9e}", rows.last().map(|r| r.2).unwrap_or(f64::NAN)));
        table = Some(rows);
    } else {
        let _ = fs::remove_file(out.join("error_vs_rank.csv"));
    }
    if !modes.is_empty() {
        let mut w = csv::Writer::from_path(out.join("modes.csv"))?;
        w.write_record(["mode", "ranks", "accepted", "als_iterations", "als_converged", "reduced_residual", "solver_iterations", "orthonormality"])?;
        for l in &modes {
            let acc: String = l.accepted.iter().map(|&a| if a { '1' } else { '0' }).collect();
            w.write_record([
                l.mode.to_string(),
                fmt_ranks(&l.ranks),
                acc,
                l.als_iterations.to_string(),
                l.als_converged.to_string(),
                format!("{:e}", l.reduced_residual),
                l.solver_iterations.to_string(),
                format!("{:e}", l.orthonormality),
            ])?;
        }
        w.flush()?;
    }

    // peaks at the smallest slowness sample, surface response in the load direction
    let zs = surface_dof(s);
    let column = |t: &dyn Fn(&[usize]) -> C64| -> Vec<f64> { (0..omega.len()).map(|iw| t(&idx(s, 0, zs, iw)).norm()).collect() };
    let rom_lines = rom.as_ref().map(SliceSource::new);
    let amp = match (&fom, &rom_lines) {
        (Some(f), _) => column(&|i| f[IxDyn(i)]),
        (None, Some(r)) => column(&|i| r.at(i)),
        _ => unreachable!("fom or rom runs"),
    };
    let peaks = peak_frequencies(&s.grid.freq, &amp);
    report.push("peaks_hz", &peaks.iter().map(|p| format!("{p}")).collect::<Vec<_>>().join(" "));

    write_slices(s, out, fom.as_ref(), rom_lines.as_ref())?;
    report.write(&out.join("report.csv"))?;
    Ok(RunOutcome { report, error_vs_rank: table, modes, peaks_hz: peaks })
}

/// Point evaluation of a Tucker tensor without reconstructing it.
struct SliceSource<'a> {
    t: &'a TuckerTensor,
}

impl<'a> SliceSource<'a> {
    fn new(t: &'a TuckerTensor) -> Self {
        SliceSource { t }
    }

    fn at(&self, i: &[usize]) -> C64 {
        let ranges: Vec<_> = i.iter().map(|&k| k..k + 1).collect();
        self.t.reconstruct_ranges(&ranges).expect("index in range").iter().next().copied().unwrap()
    }

    /// Values along dimension `d` with the others fixed at `i`.
    fn line(&self, i: &[usize], d: usize) -> Vec<C64> {
        let ranges: Vec<_> = i
            .iter()
            .enumerate()
            .map(|(k, &v)| if k == d { 0..self.t.factors[d].nrows() } else { v..v + 1 })
            .collect();
        self.t.reconstruct_ranges(&ranges).expect("index in range").iter().copied().collect()
    }
}

fn write_slices(s: &Scenario, out: &Path, fom: Option<&ArrayD<C64>>, rom: Option<&SliceSource>) -> Result<()> {
    let zs = surface_dof(s);
    let iw = nearest(&s.grid.freq, s.slice_freq);
    let fsel = s.grid.freq[iw];
    let np = s.grid.slowness.len();
    let nw = s.grid.freq.len();
    let kbar = s.grid.kbar();
    let header = ["fom_re", "fom_im", "fom_abs", "rom_re", "rom_im", "rom_abs"];
    let cells = |f: Option<C64>, r: Option<C64>| -> Vec<String> {
        let mut v = Vec::with_capacity(6);
        for z in [f, r] {
            match z {
                Some(z) => v.extend([format!("{:.9e}", z.re), format!("{:.9e}", z.im), format!("{:.9e}", z.norm())]),
                None => v.extend([String::new(), String::new(), String::new()]),
            }
        }
        v
    };

    let fline: Option<Vec<C64>> = fom.map(|f| (0..np).map(|ip| f[IxDyn(&idx(s, ip, zs, iw))]).collect());
    let rline: Option<Vec<C64>> = rom.map(|r| r.line(&idx(s, 0, zs, iw), 0));
    let mut w = csv::Writer::from_path(out.join("slices").join(format!("wavenumber_f{fsel}.csv")))?;
    w.write_record(std::iter::once("kbar").chain(header))?;
    for ip in 0..np {
        let mut row = vec![format!("{:.9e}", kbar[ip])];
        row.extend(cells(fline.as_ref().map(|v| v[ip]), rline.as_ref().map(|v| v[ip])));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("slices").join(format!("frequency_kbar{}.csv", kbar[0])))?;
    w.write_record(std::iter::once("f").chain(header))?;
    let rf: Option<Vec<C64>> = rom.map(|r| r.line(&idx(s, 0, zs, 0), 2));
    for k in 0..nw {
        let mut row = vec![format!("{}", s.grid.freq[k])];
        row.extend(cells(fom.map(|f| f[IxDyn(&idx(s, 0, zs, k))]), rf.as_ref().map(|v| v[k])));
        w.write_record(&row)?;
    }
    w.flush()?;

    let parity = layergreen::transform::component_parity(s.problem, s.load.component(), s.load.component()).map_err(Numerical)?;
    let w_sel = s.grid.omega()[iw];
    let fx = match &fline {
        Some(v) => Some(inverse_transform_1d(&s.grid.slowness, v, w_sel, &s.grid.x, parity).map_err(Numerical)?),
        None => None,
    };
    let rx = match &rline {
        Some(v) => Some(inverse_transform_1d(&s.grid.slowness, v, w_sel, &s.grid.x, parity).map_err(Numerical)?),
        None => None,
    };
    let mut w = csv::Writer::from_path(out.join("slices").join(format!("surface_x_f{fsel}.csv")))?;
    w.write_record(std::iter::once("x").chain(header))?;
    for (j, &x) in s.grid.x.iter().enumerate() {
        let mut row = vec![format!("{x}")];
        row.extend(cells(fx.as_ref().map(|v| v[j]), rx.as_ref().map(|v| v[j])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peaks_are_local_maxima() {
        let f = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let a = [0.0, 5.0, 1.0, 0.1, 3.0, 0.0];
        assert_eq!(peak_frequencies(&f, &a), vec![2.0, 5.0]);
    }
}
