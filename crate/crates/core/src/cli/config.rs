//! TOML run configuration.
//!
//! ```toml
//! [problem]
//! preset = "toro-test5"      # or left/right/x0/domain given explicitly
//!
//! [grid]
//! n_cells = 2000             # cells across the measurement window
//!
//! [scheme]
//! kind = "explicit"          # or "pressure-correction"
//! reconstruction = "upwind"  # or "muscl"
//! cfl_fraction = 0.5
//!
//! [output]
//! dir = "out"
//! ```

use std::path::PathBuf;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::oracle::preset;
use crate::state::{Primitive, Reconstruction, SchemeConfig, SchemeKind, Stabilization};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: RawProblem,
    grid: RawGrid,
    #[serde(default)]
    scheme: RawScheme,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    preset: Option<String>,
    /// `[rho, u, p]`
    left: Option<[f64; 3]>,
    right: Option<[f64; 3]>,
    x0: Option<f64>,
    gamma: Option<f64>,
    end_time: Option<f64>,
    domain: Option<[f64; 2]>,
    window: Option<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    n_cells: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawKind {
    PressureCorrection,
    Explicit,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawReconstruction {
    Upwind,
    Muscl,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStabilization {
    q: f64,
    alpha: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScheme {
    kind: Option<RawKind>,
    reconstruction: Option<RawReconstruction>,
    cfl_fraction: Option<f64>,
    corrective_source: Option<bool>,
    picard_tol: Option<f64>,
    picard_max_iter: Option<usize>,
    stabilization: Option<RawStabilization>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    cadence: Option<usize>,
    snapshots: Option<Vec<f64>>,
    entropy: Option<bool>,
    audits: Option<bool>,
}

/// Riemann problem on a walled domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub name: String,
    pub left: Primitive<f64>,
    pub right: Primitive<f64>,
    pub x0: f64,
    pub domain: (f64, f64),
    /// Sub-interval where errors are measured and fields are written.
    pub window: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Steps between rows of the diagnostics time series.
    pub cadence: usize,
    /// Times at which the full state is kept.
    pub snapshots: Vec<f64>,
    /// Entropy residuals, norms and CFL diagnostics.
    pub entropy: bool,
    /// Remainder bound audits (needs `entropy`).
    pub audits: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out"), cadence: 1, snapshots: Vec::new(), entropy: true, audits: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: Problem,
    /// Cells across the window; the cell width is `window length / n_cells`.
    pub n_cells: usize,
    pub scheme: SchemeConfig<f64>,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Preset problem with default scheme settings.
    pub fn from_preset(name: &str, n_cells: usize, kind: SchemeKind) -> Result<Self> {
        let p = preset::<f64>(name).ok_or_else(|| Error::Config(format!("problem.preset: unknown preset `{name}`")))?;
        let mut scheme = SchemeConfig::new(kind);
        scheme.gamma = p.gamma;
        scheme.end_time = p.end_time;
        let cfg = RunConfig {
            problem: Problem {
                name: p.name.to_string(),
                left: p.left,
                right: p.right,
                x0: p.x0,
                domain: p.domain,
                window: p.window,
            },
            n_cells,
            scheme,
            output: OutputConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cell_width(&self) -> f64 {
        (self.problem.window.1 - self.problem.window.0) / self.n_cells as f64
    }

    /// Cells over the whole domain.
    pub fn total_cells(&self) -> usize {
        let (a, b) = self.problem.domain;
        ((b - a) / self.cell_width()).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        let (a, b) = p.domain;
        let (wa, wb) = p.window;
        if !(b > a) {
            return Err(Error::Config(format!("problem.domain: right end {b} must exceed left end {a}")));
        }
        if !(wb > wa && wa >= a && wb <= b) {
            return Err(Error::Config(format!("problem.window: [{wa}, {wb}] must be a nonempty part of the domain")));
        }
        if !(p.x0 > a && p.x0 < b) {
            return Err(Error::Config(format!("problem.x0: {} lies outside the domain", p.x0)));
        }
        for (key, s) in [("problem.left", p.left), ("problem.right", p.right)] {
            if !(s.rho > 0.0 && s.p > 0.0 && s.u.is_finite()) {
                return Err(Error::Config(format!("{key}: density and pressure must be positive")));
            }
        }
        if self.n_cells < 2 {
            return Err(Error::Config("grid.n_cells: at least 2 cells are needed".into()));
        }
        if self.total_cells() < 2 {
            return Err(Error::Config("grid.n_cells: the domain holds fewer than 2 cells".into()));
        }
        self.scheme.validate().map_err(|e| Error::Config(format!("scheme: {}", strip(e))))?;
        if self.scheme.stabilization.is_some() && self.scheme.scheme != SchemeKind::Explicit {
            return Err(Error::Config("scheme.stabilization: only the explicit scheme takes a stabilization term".into()));
        }
        if self.output.cadence == 0 {
            return Err(Error::Config("output.cadence: must be at least 1".into()));
        }
        if self.output.audits && !self.output.entropy {
            return Err(Error::Config("output.audits: audits need output.entropy = true".into()));
        }
        Ok(())
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn primitive(v: [f64; 3]) -> Primitive<f64> {
    Primitive::new(v[0], v[1], v[2])
}

/// Parse and validate a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let rp = raw.problem;
    let base = match &rp.preset {
        Some(name) => Some(
            preset::<f64>(name).ok_or_else(|| Error::Config(format!("problem.preset: unknown preset `{name}`")))?,
        ),
        None => None,
    };
    let missing = |key: &str| Error::Config(format!("problem.{key}: required without a preset"));
    let left = rp.left.map(primitive).or(base.as_ref().map(|p| p.left)).ok_or_else(|| missing("left"))?;
    let right = rp.right.map(primitive).or(base.as_ref().map(|p| p.right)).ok_or_else(|| missing("right"))?;
    let x0 = rp.x0.or(base.as_ref().map(|p| p.x0)).ok_or_else(|| missing("x0"))?;
    let end_time = rp.end_time.or(base.as_ref().map(|p| p.end_time)).ok_or_else(|| missing("end_time"))?;
    let domain = rp.domain.map(|d| (d[0], d[1])).or(base.as_ref().map(|p| p.domain)).unwrap_or((0.0, 1.0));
    let window = rp.window.map(|d| (d[0], d[1])).or(base.as_ref().map(|p| p.window)).unwrap_or(domain);
    let gamma = rp.gamma.or(base.as_ref().map(|p| p.gamma)).unwrap_or(1.4);

    let rs = raw.scheme;
    let kind = match rs.kind.unwrap_or(RawKind::PressureCorrection) {
        RawKind::PressureCorrection => SchemeKind::PressureCorrection,
        RawKind::Explicit => SchemeKind::Explicit,
    };
    let mut scheme = SchemeConfig::new(kind);
    scheme.gamma = gamma;
    scheme.end_time = end_time;
    if let Some(r) = rs.reconstruction {
        scheme.reconstruction = match r {
            RawReconstruction::Upwind => Reconstruction::Upwind,
            RawReconstruction::Muscl => Reconstruction::Muscl,
        };
    }
    if let Some(c) = rs.cfl_fraction {
        scheme.cfl_fraction = c;
    }
    if let Some(c) = rs.corrective_source {
        scheme.corrective_source = c;
    }
    if let Some(t) = rs.picard_tol {
        scheme.picard_tol = t;
    }
    if let Some(m) = rs.picard_max_iter {
        scheme.picard_max_iter = m;
    }
    if let Some(s) = rs.stabilization {
        scheme.stabilization = Some(
            Stabilization::new(s.q, s.alpha).map_err(|e| Error::Config(format!("scheme.stabilization: {}", strip(e))))?,
        );
    }

    let ro = raw.output;
    let defaults = OutputConfig::default();
    let output = OutputConfig {
        dir: ro.dir.unwrap_or(defaults.dir),
        cadence: ro.cadence.unwrap_or(defaults.cadence),
        snapshots: ro.snapshots.unwrap_or_default(),
        entropy: ro.entropy.unwrap_or(defaults.entropy),
        audits: ro.audits.unwrap_or(defaults.audits && ro.entropy.unwrap_or(true)),
    };

    let name = rp.preset.clone().unwrap_or_else(|| "custom".to_string());
    let cfg = RunConfig {
        problem: Problem { name, left, right, x0, domain, window },
        n_cells: raw.grid.n_cells,
        scheme,
        output,
    };
    cfg.validate()?;
    Ok(cfg)
}
