//! Flat `key = value` run configuration.
//!
//! One pair per line, `#` starts a comment. Keys starting with `result.` are
//! ignored so that a run manifest can be fed back as a configuration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mesh::{DomainKind, MAX_DISK_LEVEL, MAX_SQUARE_CELLS};
use crate::quantum::{InitKind, IterationConfig, ModelParams};
use crate::radial::MIN_RADIAL_POINTS;

/// Prefix of manifest keys that are outputs rather than inputs.
pub const RESULT_PREFIX: &str = "result.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Fem2d,
    Radial,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fem2d => "fem2d",
            Mode::Radial => "radial",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fem2d" => Ok(Mode::Fem2d),
            "radial" => Ok(Mode::Radial),
            other => Err(Error::config(format!("unknown mode `{other}` (expected `fem2d` or `radial`)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Vtk,
}

impl ExportFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            ExportFormat::Csv => "csv",
            ExportFormat::Vtk => "vtk",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    Epsilon,
    Sigma,
}

impl SweepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::Epsilon => "epsilon",
            SweepKind::Sigma => "sigma",
        }
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epsilon" => Ok(SweepKind::Epsilon),
            "sigma" => Ok(SweepKind::Sigma),
            other => Err(Error::config(format!("unknown sweep kind `{other}` (expected `epsilon` or `sigma`)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    pub iteration: IterationConfig,
    pub mode: Mode,
    /// Disk: refinement level. Square: 2^level cells per side.
    pub mesh_level: usize,
    pub radial_points: usize,
    pub radial_grading: f64,
    pub output_dir: PathBuf,
    pub export_formats: Vec<ExportFormat>,
    /// Constants of the uniqueness bound, reported in manifests.
    pub c0: f64,
    pub c1: f64,
    /// Bump centres of the two non-uniqueness runs.
    pub center_a: [f64; 2],
    pub center_b: [f64; 2],
    pub sweep_kind: SweepKind,
    pub sweep_values: Vec<f64>,
    pub warm_start: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let params = ModelParams {
            epsilon: 1e-3,
            sigma: 0.0,
            domain: DomainKind::Disk,
        };
        RunConfig {
            params,
            iteration: IterationConfig::default(),
            mode: Mode::Fem2d,
            mesh_level: 5,
            radial_points: 4096,
            radial_grading: default_grading(params.epsilon),
            output_dir: PathBuf::from("runs"),
            export_formats: vec![ExportFormat::Csv],
            c0: 1.0,
            c1: 1.0,
            center_a: [0.3, 0.0],
            center_b: [-0.3, 0.0],
            sweep_kind: SweepKind::Epsilon,
            sweep_values: Vec::new(),
            warm_start: true,
        }
    }
}

/// Radial grid grading used when none is given: uniform for ε ≥ 10⁻², else
/// clustered towards the origin where the peak sits.
pub fn default_grading(epsilon: f64) -> f64 {
    if epsilon >= 1e-2 {
        0.0
    } else {
        8.0
    }
}

/// Shortest text that parses back to `x`; exponent form outside [1e-4, 1e15).
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// Every accepted key, in manifest order.
pub const KEYS: &[&str] = &[
    "epsilon",
    "sigma",
    "domain",
    "mode",
    "mesh_level",
    "radial_points",
    "radial_grading",
    "damping",
    "newton_tol",
    "picard_tol",
    "max_newton",
    "max_picard",
    "line_search_max_halvings",
    "init",
    "bump_center",
    "bump_amplitude",
    "bump_width",
    "continuation_steps",
    "anderson_depth",
    "output_dir",
    "export_formats",
    "c0",
    "c1",
    "center_a",
    "center_b",
    "sweep_kind",
    "sweep_values",
    "warm_start",
];

fn suggestion(key: &str) -> Option<&'static str> {
    KEYS.iter()
        .map(|k| (strsim::damerau_levenshtein(key, k), *k))
        .filter(|(d, k)| *d <= 2.max(k.len() / 3))
        .min_by_key(|(d, _)| *d)
        .map(|(_, k)| k)
}

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("`{v}` is not finite"))
    }
}

fn parse_usize(v: &str) -> std::result::Result<usize, String> {
    v.parse().map_err(|_| format!("`{v}` is not a non-negative integer"))
}

fn parse_point(v: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("`{v}` is not a point `x, y`"));
    }
    Ok([parse_f64(parts[0])?, parse_f64(parts[1])?])
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse_f64(p.trim())).collect()
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn parse_formats(v: &str) -> std::result::Result<Vec<ExportFormat>, String> {
    let mut out = Vec::new();
    for p in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let f = match p {
            "csv" => ExportFormat::Csv,
            "vtk" => ExportFormat::Vtk,
            other => return Err(format!("unknown export format `{other}`")),
        };
        if !out.contains(&f) {
            out.push(f);
        }
    }
    Ok(out)
}

/// Applies one `key = value` assignment. `line` is used in messages only.
fn apply(cfg: &mut RunConfig, key: &str, value: &str, line: usize, explicit: &mut Explicit) -> Result<()> {
    let at = |msg: String| Error::config(format!("line {line}: {key}: {msg}"));
    let it = &mut cfg.iteration;
    match key {
        "epsilon" => cfg.params.epsilon = parse_f64(value).map_err(at)?,
        "sigma" => cfg.params.sigma = parse_f64(value).map_err(at)?,
        "domain" => cfg.params.domain = value.parse().map_err(|e: Error| at(e.to_string()))?,
        "mode" => cfg.mode = value.parse().map_err(|e: Error| at(e.to_string()))?,
        "mesh_level" => cfg.mesh_level = parse_usize(value).map_err(at)?,
        "radial_points" => cfg.radial_points = parse_usize(value).map_err(at)?,
        "radial_grading" => {
            cfg.radial_grading = parse_f64(value).map_err(at)?;
            explicit.grading = true;
        }
        "damping" => it.damping = parse_f64(value).map_err(at)?,
        "newton_tol" => it.newton_tol = parse_f64(value).map_err(at)?,
        "picard_tol" => it.picard_tol = parse_f64(value).map_err(at)?,
        "max_newton" => it.max_newton = parse_usize(value).map_err(at)?,
        "max_picard" => it.max_picard = parse_usize(value).map_err(at)?,
        "line_search_max_halvings" => it.line_search_max_halvings = parse_usize(value).map_err(at)?,
        "init" => it.init = value.parse::<InitKind>().map_err(|e| at(e.to_string()))?,
        "bump_center" => it.bump_center = parse_point(value).map_err(at)?,
        "bump_amplitude" => it.bump_amplitude = parse_f64(value).map_err(at)?,
        "bump_width" => it.bump_width = parse_f64(value).map_err(at)?,
        "continuation_steps" => {
            it.continuation_steps = parse_usize(value).map_err(at)?;
            explicit.continuation = true;
        }
        "anderson_depth" => it.anderson_depth = parse_usize(value).map_err(at)?,
        "output_dir" => cfg.output_dir = PathBuf::from(value),
        "export_formats" => cfg.export_formats = parse_formats(value).map_err(at)?,
        "c0" => cfg.c0 = parse_f64(value).map_err(at)?,
        "c1" => cfg.c1 = parse_f64(value).map_err(at)?,
        "center_a" => cfg.center_a = parse_point(value).map_err(at)?,
        "center_b" => cfg.center_b = parse_point(value).map_err(at)?,
        "sweep_kind" => cfg.sweep_kind = value.parse().map_err(|e: Error| at(e.to_string()))?,
        "sweep_values" => cfg.sweep_values = parse_list(value).map_err(at)?,
        "warm_start" => cfg.warm_start = parse_bool(value).map_err(at)?,
        _ => {
            let hint = suggestion(key).map(|s| format!("; did you mean `{s}`?")).unwrap_or_default();
            return Err(Error::config(format!("line {line}: unknown key `{key}`{hint}")));
        }
    }
    Ok(())
}

#[derive(Default)]
struct Explicit {
    grading: bool,
    continuation: bool,
}

/// Parses configuration text, then applies `overrides` (`key=value`).
pub fn parse_config_with(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut explicit = Explicit::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::config(format!("line {line}: expected `key = value`, got `{content}`")));
        };
        let key = key.trim();
        if key.starts_with(RESULT_PREFIX) {
            continue;
        }
        apply(&mut cfg, key, value.trim(), line, &mut explicit)?;
    }
    for ov in overrides {
        let Some((key, value)) = ov.split_once('=') else {
            return Err(Error::config(format!("--set expects key=value, got `{ov}`")));
        };
        let key = key.trim();
        apply(&mut cfg, key, value.trim(), 0, &mut explicit).map_err(|e| match e {
            Error::Config(msg) => Error::Config(msg.replacen("line 0: ", "--set ", 1)),
            other => other,
        })?;
    }
    if !explicit.continuation {
        cfg.iteration.continuation_steps = if cfg.params.sigma > 8.0 * std::f64::consts::PI { 10 } else { 0 };
    }
    if !explicit.grading {
        cfg.radial_grading = default_grading(cfg.params.epsilon);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &[])
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.iteration.validate()?;
        match (self.mode, self.params.domain) {
            (Mode::Radial, DomainKind::Square) => {
                return Err(Error::config("mode = radial requires domain = disk"));
            }
            (Mode::Radial, _) if self.radial_points < MIN_RADIAL_POINTS => {
                return Err(Error::config(format!(
                    "radial_points must be at least {MIN_RADIAL_POINTS}, got {}",
                    self.radial_points
                )));
            }
            (Mode::Fem2d, DomainKind::Disk) if self.mesh_level > MAX_DISK_LEVEL => {
                return Err(Error::config(format!(
                    "mesh_level {} exceeds the disk limit {MAX_DISK_LEVEL}",
                    self.mesh_level
                )));
            }
            (Mode::Fem2d, DomainKind::Square)
                if self.mesh_level >= usize::BITS as usize || (1usize << self.mesh_level) > MAX_SQUARE_CELLS =>
            {
                return Err(Error::config(format!("mesh_level {} too fine for the square", self.mesh_level)));
            }
            _ => {}
        }
        if !(self.radial_grading >= 0.0) {
            return Err(Error::config("radial_grading must be >= 0"));
        }
        if self.mode == Mode::Radial && self.export_formats.contains(&ExportFormat::Vtk) {
            return Err(Error::config("radial mode exports csv only; drop vtk from export_formats"));
        }
        if self.export_formats.is_empty() {
            return Err(Error::config("export_formats must name at least one format"));
        }
        if !(self.c0 > 0.0 && self.c1 > 0.0) {
            return Err(Error::config("c0 and c1 must be positive"));
        }
        Ok(())
    }

    /// Square side subdivisions for `mesh_level`.
    pub fn square_cells(&self) -> usize {
        1 << self.mesh_level
    }

    /// Canonical `key = value` text; parsing it yields `self` again.
    pub fn to_text(&self) -> String {
        let it = &self.iteration;
        let point = |p: [f64; 2]| format!("{}, {}", fmt_f64(p[0]), fmt_f64(p[1]));
        let list = |v: &[f64]| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(", ");
        let formats = self.export_formats.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(", ");
        let pairs: Vec<(&str, String)> = vec![
            ("epsilon", fmt_f64(self.params.epsilon)),
            ("sigma", fmt_f64(self.params.sigma)),
            ("domain", self.params.domain.as_str().to_string()),
            ("mode", self.mode.as_str().to_string()),
            ("mesh_level", self.mesh_level.to_string()),
            ("radial_points", self.radial_points.to_string()),
            ("radial_grading", fmt_f64(self.radial_grading)),
            ("damping", fmt_f64(it.damping)),
            ("newton_tol", fmt_f64(it.newton_tol)),
            ("picard_tol", fmt_f64(it.picard_tol)),
            ("max_newton", it.max_newton.to_string()),
            ("max_picard", it.max_picard.to_string()),
            ("line_search_max_halvings", it.line_search_max_halvings.to_string()),
            ("init", it.init.as_str().to_string()),
            ("bump_center", point(it.bump_center)),
            ("bump_amplitude", fmt_f64(it.bump_amplitude)),
            ("bump_width", fmt_f64(it.bump_width)),
            ("continuation_steps", it.continuation_steps.to_string()),
            ("anderson_depth", it.anderson_depth.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("export_formats", formats),
            ("c0", fmt_f64(self.c0)),
            ("c1", fmt_f64(self.c1)),
            ("center_a", point(self.center_a)),
            ("center_b", point(self.center_b)),
            ("sweep_kind", self.sweep_kind.as_str().to_string()),
            ("sweep_values", list(&self.sweep_values)),
            ("warm_start", self.warm_start.to_string()),
        ];
        debug_assert_eq!(pairs.len(), KEYS.len());
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.params.epsilon, 1e-3);
        assert_eq!(cfg.params.sigma, 0.0);
        assert_eq!(cfg.mode, Mode::Fem2d);
        assert_eq!(cfg.mesh_level, 5);
        assert_eq!(cfg.iteration.damping, 0.5);
        assert_eq!(cfg.iteration.newton_tol, 1e-10);
        assert_eq!(cfg.iteration.picard_tol, 1e-8);
        assert_eq!(cfg.iteration.max_newton, 50);
        assert_eq!(cfg.iteration.max_picard, 500);
        assert_eq!(cfg.iteration.init, InitKind::Zero);
        assert_eq!(cfg.iteration.continuation_steps, 0);
    }

    #[test]
    fn supercritical_small_epsilon_settings() {
        let cfg = parse_config("sigma = 31.4159265\nepsilon = 0.001").unwrap();
        assert!((cfg.params.sigma - 10.0 * PI).abs() < 1e-6);
        assert_eq!(cfg.params.epsilon, 1e-3);
        assert_eq!(cfg.iteration.continuation_steps, 10);
        let cfg = parse_config("sigma = 31.4159265\ncontinuation_steps = 3").unwrap();
        assert_eq!(cfg.iteration.continuation_steps, 3);
    }

    #[test]
    fn typo_names_line_and_suggestion() {
        let err = parse_config("sigm = 1").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        assert!(err.contains("`sigma`"), "{err}");
        let err = parse_config("# header\n\nepsilon = 0.1\nmax_pickard = 3").unwrap_err().to_string();
        assert!(err.contains("line 4") && err.contains("max_picard"), "{err}");
        let err = parse_config("zzzzzz = 1").unwrap_err().to_string();
        assert!(!err.contains("did you mean"), "{err}");
    }

    #[test]
    fn malformed_values() {
        assert!(parse_config("sigma 3").unwrap_err().to_string().contains("line 1"));
        assert!(parse_config("\nepsilon = abc").unwrap_err().to_string().contains("line 2"));
        assert!(parse_config("epsilon = -1").is_err());
        assert!(parse_config("damping = 1.5").is_err());
        assert!(parse_config("mode = radial\ndomain = square").is_err());
        assert!(parse_config("mode = radial\nradial_points = 10").is_err());
        assert!(parse_config("mesh_level = 11").is_err());
        assert!(parse_config("export_formats = png").is_err());
        assert!(parse_config("mode = radial\nexport_formats = csv, vtk").is_err());
    }

    #[test]
    fn comments_and_result_keys_ignored() {
        let cfg = parse_config("sigma = 2 # inline\nresult.fermi_level = -3\n  # full line").unwrap();
        assert_eq!(cfg.params.sigma, 2.0);
    }

    #[test]
    fn overrides_win() {
        let cfg = parse_config_with("sigma = 2", &["sigma=3".into(), "mode = radial".into()]).unwrap();
        assert_eq!(cfg.params.sigma, 3.0);
        assert_eq!(cfg.mode, Mode::Radial);
        let err = parse_config_with("", &["sigmaa=1".into()]).unwrap_err().to_string();
        assert!(err.contains("--set") && err.contains("`sigma`"), "{err}");
    }

    #[test]
    fn float_text_round_trips() {
        for x in [0.0, -0.0, 1e-10, 0.1, 1.0 / 3.0, 31.41592653589793, 2.2250738585072014e-308, 1e300, -5e-5] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits(), "{x}");
        }
        assert_eq!(fmt_f64(1e-12), "1e-12");
        assert_eq!(fmt_f64(0.5), "0.5");
    }

    #[test]
    fn text_round_trip() {
        let text = "sigma = 31.41592653589793\nepsilon = 0.05\ninit = bump\nbump_center = 0, 0\nexport_formats = csv, vtk\n\
                    radial_points = 777\nsweep_values = 0.2, 0.1\n\
                    center_a = 0.25, -0.125\nwarm_start = false";
        let cfg = parse_config(text).unwrap();
        let again = parse_config(&cfg.to_text()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.sweep_values, vec![0.2, 0.1]);
        assert!(cfg.to_text().contains("newton_tol = 1e-10\n"));
        assert_eq!(again.export_formats, vec![ExportFormat::Csv, ExportFormat::Vtk]);
    }
}
