//! Scenario files: TOML with `[[layers]]`, `[bottom]`, `[grid]`, optional
//! `[paper_grid]` overrides, `[gta]` and `[output]`. See `docs/scenario.md`.

use std::path::{Path, PathBuf};

use layergreen::fom::{Load, SamplingGrid};
use layergreen::gta::{GtaConfig, TestRule};
use layergreen::{Bottom, Layer, LayerMesh, SoilProfile, WaveProblem};
use serde::Deserialize;

const BUNDLED: &[(&str, &str)] = &[
    ("bedrock_sh", include_str!("../scenarios/bedrock_sh.toml")),
    ("bedrock_psv", include_str!("../scenarios/bedrock_psv.toml")),
    ("bedrock_mu_sweep", include_str!("../scenarios/bedrock_mu_sweep.toml")),
    ("groene_hart_sh", include_str!("../scenarios/groene_hart_sh.toml")),
    ("groene_hart_psv", include_str!("../scenarios/groene_hart_psv.toml")),
];

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{origin}:{line}: {message}")]
pub struct ScenarioError {
    pub origin: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSpec {
    name: String,
    problem: String,
    load: Option<String>,
    layers: Vec<LayerSpec>,
    bottom: BottomSpec,
    grid: GridSpec,
    paper_grid: Option<GridOverride>,
    gta: Option<GtaSpec>,
    output: Option<OutputSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerSpec {
    thickness: f64,
    cs: f64,
    cp: f64,
    beta_s: f64,
    beta_p: f64,
    rho: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BottomSpec {
    kind: String,
    cs: Option<f64>,
    cp: Option<f64>,
    beta_s: Option<f64>,
    beta_p: Option<f64>,
    rho: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    f_max: f64,
    df: f64,
    kbar_min: f64,
    kbar_max: f64,
    kbar_count: usize,
    #[serde(default = "yes")]
    log_spaced: bool,
    cs_ref: Option<f64>,
    elements_per_wavelength: Option<f64>,
    element_size: Option<f64>,
    x_max: f64,
    x_count: usize,
    mu_min: Option<f64>,
    mu_max: Option<f64>,
    mu_count: Option<usize>,
    slice_freq: Option<f64>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridOverride {
    f_max: Option<f64>,
    df: Option<f64>,
    kbar_min: Option<f64>,
    kbar_max: Option<f64>,
    kbar_count: Option<usize>,
    elements_per_wavelength: Option<f64>,
    element_size: Option<f64>,
    x_max: Option<f64>,
    x_count: Option<usize>,
    mu_count: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtaSpec {
    max_modes: Option<usize>,
    als_tol: Option<f64>,
    als_max_iter: Option<usize>,
    mode_accept_tol: Option<f64>,
    seed: Option<u64>,
    test_rule: Option<String>,
    refine_sweeps: Option<usize>,
    solver_max_iter: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSpec {
    dir: Option<String>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub max_modes: Option<usize>,
    pub als_tol: Option<f64>,
    pub seed: Option<u64>,
    pub test_rule: Option<TestRule>,
    pub refine_sweeps: Option<usize>,
    pub paper_grid: bool,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub problem: WaveProblem,
    pub load: Load,
    pub profile: SoilProfile,
    pub mesh: LayerMesh,
    pub grid: SamplingGrid,
    pub gta: GtaConfig,
    pub out_dir: Option<PathBuf>,
    pub slice_freq: f64,
    pub paper_grid: bool,
}

impl Scenario {
    pub fn fom_entries(&self) -> usize {
        self.grid.shape().iter().product()
    }
}

/// Reads `spec` as a path if it exists, otherwise as a bundled scenario name.
pub fn load(spec: &str, ov: &Overrides) -> Result<Scenario, ScenarioError> {
    let path = Path::new(spec);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError {
            origin: spec.to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        return parse(&text, spec, ov);
    }
    let stem = spec.trim_end_matches(".toml");
    match BUNDLED.iter().find(|(n, _)| *n == stem) {
        Some((n, text)) => parse(text, &format!("{n}.toml"), ov),
        None => Err(ScenarioError {
            origin: spec.to_string(),
            line: 0,
            message: format!("no such file or bundled scenario (bundled: {})", bundled_names().join(", ")),
        }),
    }
}

/// Line (1-based) of `key` inside the `nth` occurrence of table `table`; falls back to
/// the table header, then to line 1.
fn locate(text: &str, table: &str, nth: usize, key: Option<&str>) -> usize {
    let headers = [format!("[{table}]"), format!("[[{table}]]")];
    let mut seen = 0;
    let mut in_table = table.is_empty();
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            if in_table && header_line.is_some() {
                break;
            }
            in_table = false;
            if headers.iter().any(|h| line == h) {
                if seen == nth {
                    in_table = true;
                    header_line = Some(i + 1);
                }
                seen += 1;
            }
            continue;
        }
        if in_table {
            if let Some(k) = key {
                let lhs = line.split('=').next().unwrap_or("").trim();
                if lhs == k && line.contains('=') {
                    return i + 1;
                }
            }
        }
    }
    header_line.unwrap_or(1)
}

pub fn parse(text: &str, origin: &str, ov: &Overrides) -> Result<Scenario, ScenarioError> {
    let err = |line: usize, message: String| ScenarioError { origin: origin.to_string(), line, message };
    let spec: FileSpec = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(1);
        err(line, e.message().to_string())
    })?;
    let at = |table: &str, nth: usize, key: &str| locate(text, table, nth, Some(key));

    let problem = match spec.problem.as_str() {
        "sh" => WaveProblem::Sh,
        "psv" => WaveProblem::Psv,
        other => return Err(err(at("", 0, "problem"), format!("problem must be \"sh\" or \"psv\", got \"{other}\""))),
    };
    let load = match (problem, spec.load.as_deref()) {
        (WaveProblem::Sh, None | Some("y")) => Load::Y,
        (WaveProblem::Psv, None | Some("z")) => Load::Z,
        (WaveProblem::Psv, Some("x")) => Load::X,
        (_, Some(l)) => return Err(err(at("", 0, "load"), format!("load \"{l}\" is not valid for {}", problem.name()))),
    };
    if spec.layers.is_empty() {
        return Err(err(1, "at least one [[layers]] table is required".into()));
    }
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (i, l) in spec.layers.iter().enumerate() {
        let bad = if !(l.thickness > 0.0) {
            Some("thickness")
        } else if !(l.cs > 0.0) {
            Some("cs")
        } else if !(l.cp > l.cs * (4.0f64 / 3.0).sqrt()) {
            Some("cp")
        } else if !(l.beta_s >= 0.0) {
            Some("beta_s")
        } else if !(l.beta_p >= 0.0) {
            Some("beta_p")
        } else if !(l.rho > 0.0) {
            Some("rho")
        } else {
            None
        };
        let layer = Layer::new(l.thickness, l.cs, l.cp, l.beta_s, l.beta_p, l.rho)
            .map_err(|e| err(locate(text, "layers", i, bad), format!("layer {}: {e}", i + 1)))?;
        layers.push(layer);
    }
    let bottom = match spec.bottom.kind.as_str() {
        "bedrock" => Bottom::Bedrock,
        "halfspace" => {
            let b = &spec.bottom;
            let need = |v: Option<f64>, k: &str| v.ok_or_else(|| err(locate(text, "bottom", 0, None), format!("halfspace needs `{k}`")));
            let hs = Layer::halfspace(need(b.cs, "cs")?, need(b.cp, "cp")?, need(b.beta_s, "beta_s")?, need(b.beta_p, "beta_p")?, need(b.rho, "rho")?)
                .map_err(|e| err(locate(text, "bottom", 0, None), format!("halfspace: {e}")))?;
            Bottom::Halfspace(hs)
        }
        other => return Err(err(at("bottom", 0, "kind"), format!("bottom kind must be \"bedrock\" or \"halfspace\", got \"{other}\""))),
    };
    let profile = SoilProfile::new(layers, bottom).map_err(|e| err(locate(text, "layers", 0, None), e.to_string()))?;

    let mut g = spec.grid.clone();
    if ov.paper_grid {
        let o = spec.paper_grid.clone().unwrap_or_default();
        macro_rules! over {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { g.$f = v; } )* };
        }
        over!(f_max, df, kbar_min, kbar_max, kbar_count, x_max, x_count);
        if o.element_size.is_some() {
            g.element_size = o.element_size;
            g.elements_per_wavelength = None;
        }
        if o.elements_per_wavelength.is_some() {
            g.elements_per_wavelength = o.elements_per_wavelength;
            g.element_size = None;
        }
        if o.mu_count.is_some() {
            g.mu_count = o.mu_count;
        }
    }
    let positive = |v: f64, key: &str| -> Result<(), ScenarioError> {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(err(at("grid", 0, key), format!("`{key}` must be positive, got {v}")))
        }
    };
    positive(g.f_max, "f_max")?;
    positive(g.df, "df")?;
    positive(g.kbar_min, "kbar_min")?;
    positive(g.kbar_max, "kbar_max")?;
    positive(g.x_max, "x_max")?;
    if g.kbar_max <= g.kbar_min {
        return Err(err(at("grid", 0, "kbar_max"), "`kbar_max` must exceed `kbar_min`".into()));
    }
    if g.kbar_count < 2 {
        return Err(err(at("grid", 0, "kbar_count"), "`kbar_count` must be at least 2".into()));
    }
    if g.x_count < 1 {
        return Err(err(at("grid", 0, "x_count"), "`x_count` must be at least 1".into()));
    }
    if g.df > g.f_max {
        return Err(err(at("grid", 0, "df"), "`df` exceeds `f_max`".into()));
    }
    let cs_ref = g.cs_ref.unwrap_or_else(|| profile.min_cs());
    positive(cs_ref, "cs_ref")?;
    let mesh = match (g.element_size, g.elements_per_wavelength) {
        (Some(h), None) => LayerMesh::with_max_element(&profile, problem, h),
        (None, Some(n)) => LayerMesh::for_frequency(&profile, problem, g.f_max, n),
        (None, None) => LayerMesh::for_frequency(&profile, problem, g.f_max, 10.0),
        (Some(_), Some(_)) => {
            return Err(err(at("grid", 0, "element_size"), "give either `element_size` or `elements_per_wavelength`".into()))
        }
    }
    .map_err(|e| err(locate(text, "grid", 0, None), e.to_string()))?;
    mesh.check(&profile, g.f_max).map_err(|e| err(locate(text, "grid", 0, None), e.to_string()))?;

    let slowness = if g.log_spaced {
        SamplingGrid::log_slowness(g.kbar_min, g.kbar_max, g.kbar_count, cs_ref)
    } else {
        (0..g.kbar_count)
            .map(|i| (g.kbar_min + (g.kbar_max - g.kbar_min) * i as f64 / (g.kbar_count - 1) as f64) / cs_ref)
            .collect()
    };
    let freq = SamplingGrid::freq_bins(g.df, g.f_max);
    let x: Vec<f64> = if g.x_count == 1 {
        vec![0.0]
    } else {
        (0..g.x_count).map(|i| g.x_max * i as f64 / (g.x_count - 1) as f64).collect()
    };
    let mu = match (g.mu_min, g.mu_max, g.mu_count) {
        (None, None, None) => None,
        (Some(a), Some(b), Some(n)) => {
            if !(a > 0.0 && b > a && n >= 2) {
                return Err(err(at("grid", 0, "mu_min"), "need 0 < mu_min < mu_max and mu_count >= 2".into()));
            }
            if profile.layers.len() != 1 || !matches!(profile.bottom, Bottom::Bedrock) {
                return Err(err(at("grid", 0, "mu_min"), "a shear-modulus sweep needs a single layer on bedrock".into()));
            }
            Some((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
        }
        _ => return Err(err(at("grid", 0, "mu_min"), "`mu_min`, `mu_max` and `mu_count` go together".into())),
    };
    let grid = SamplingGrid::new(slowness, cs_ref, g.log_spaced, &mesh, freq, x, mu)
        .map_err(|e| err(locate(text, "grid", 0, None), e.to_string()))?;

    let gs = spec.gta.unwrap_or_default();
    let mut gta = GtaConfig::default();
    if let Some(v) = gs.max_modes {
        gta.max_modes = v;
    }
    if let Some(v) = gs.als_tol {
        gta.als_tol = v;
    }
    if let Some(v) = gs.als_max_iter {
        gta.als_max_iter = v;
    }
    if let Some(v) = gs.mode_accept_tol {
        gta.mode_accept_tol = v;
    }
    if let Some(v) = gs.seed {
        gta.rng_seed = v;
    }
    if let Some(v) = gs.refine_sweeps {
        gta.refine_sweeps = v;
    }
    if let Some(v) = gs.solver_max_iter {
        gta.solver.max_iter = v;
    }
    if let Some(r) = gs.test_rule.as_deref() {
        gta.test_rule = TestRule::parse(r)
            .ok_or_else(|| err(at("gta", 0, "test_rule"), format!("test_rule must be \"galerkin\" or \"petrov-galerkin\", got \"{r}\"")))?;
    }
    if let Some(v) = ov.max_modes {
        gta.max_modes = v;
    }
    if let Some(v) = ov.als_tol {
        gta.als_tol = v;
    }
    if let Some(v) = ov.seed {
        gta.rng_seed = v;
    }
    if let Some(v) = ov.test_rule {
        gta.test_rule = v;
    }
    if let Some(v) = ov.refine_sweeps {
        gta.refine_sweeps = v;
    }
    gta.validate().map_err(|e| err(locate(text, "gta", 0, None), e.to_string()))?;

    let slice_freq = g.slice_freq.unwrap_or(g.f_max * 2.0 / 3.0);
    Ok(Scenario {
        name: spec.name,
        problem,
        load,
        profile,
        mesh,
        grid,
        gta,
        out_dir: spec.output.and_then(|o| o.dir).map(PathBuf::from),
        slice_freq,
        paper_grid: ov.paper_grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_parse_both_grids() {
        for name in bundled_names() {
            let desk = load(name, &Overrides::default()).unwrap();
            let paper = load(name, &Overrides { paper_grid: true, ..Default::default() }).unwrap();
            assert!(paper.fom_entries() > desk.fom_entries(), "{name}");
        }
    }

    #[test]
    fn desk_bedrock_shape() {
        let s = load("bedrock_sh", &Overrides::default()).unwrap();
        assert_eq!(s.grid.shape(), vec![150, 30, 60]);
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = include_str!("../scenarios/bedrock_sh.toml").replace("cp = 200.0", "cq = 200.0");
        let e = parse(&text, "t.toml", &Overrides::default()).unwrap_err();
        assert_eq!(e.line, 9);
        assert!(e.message.contains("cq"));
    }

    #[test]
    fn bad_value_reports_line() {
        let text = include_str!("../scenarios/bedrock_sh.toml").replace("kbar_count = 150", "kbar_count = 1");
        let e = parse(&text, "t.toml", &Overrides::default()).unwrap_err();
        assert_eq!(e.line, 22);
        let text = include_str!("../scenarios/bedrock_sh.toml").replace("cs = 100.0", "cs = -1.0");
        let e = parse(&text, "t.toml", &Overrides::default()).unwrap_err();
        assert_eq!(e.line, 8);
    }
}
