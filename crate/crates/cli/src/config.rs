//! Run configuration: a sectioned `key = value` file (TOML syntax), command-line
//! overrides, and the `#! section.key = value` header embedded in every artifact.

use std::fmt;
use std::path::PathBuf;

use jumpmil::errorlab::{Reference, Tilt, DEFAULT_FINE_FACTOR};
use jumpmil::model::AffineCoef;
use jumpmil::{Exec, IntensityModel, MertonParams, MethodKind, Mode, SdeModel};
use serde::{Deserialize, Serialize};

/// Prefix of the header lines that carry the resolved config.
pub const HEADER_PREFIX: &str = "#! ";

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn field_err(field: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("{field}: {msg}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `merton`, `pure-jump-additive`, `pure-diffusion` or `polynomial`.
    pub name: String,
    pub x0: f64,
    pub horizon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Alternative to `r` for Merton: `γ = r + σ²/2 + 3λ/2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub sigma: f64,
    pub lam: f64,
    /// Polynomial coefficients in `t`, lowest degree first: `a = p_a(t) + a_y(t)·y`, etc.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub a: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub a_y: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub b: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub b_y: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub c: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub c_y: Vec<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            name: "merton".into(),
            x0: 1.0,
            horizon: 1.0,
            r: None,
            gamma: None,
            sigma: 1.0,
            lam: 2.0,
            a: vec![],
            a_y: vec![],
            b: vec![],
            b_y: vec![],
            c: vec![],
            c_y: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntensitySection {
    /// `constant` or `linear` (`λ(t) = l0 + l1·t`).
    pub kind: String,
    pub lam: f64,
    pub l0: f64,
    pub l1: f64,
}

impl Default for IntensitySection {
    fn default() -> Self {
        IntensitySection { kind: "constant".into(), lam: 1.0, l0: 1.0, l1: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSection {
    pub kind: String,
}

impl Default for MethodSection {
    fn default() -> Self {
        MethodSection { kind: "linear".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    /// `equidistant`, `pilot-optimal` or `merton-optimal`.
    pub kind: String,
    pub n: Vec<usize>,
    pub floor: f64,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection { kind: "equidistant".into(), n: vec![64, 128, 256, 512], floor: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotSection {
    /// Number of pilot grid points.
    pub grid: usize,
    pub replications: u64,
}

impl Default for PilotSection {
    fn default() -> Self {
        PilotSection { grid: 512, replications: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub replications: u64,
    /// Number of intervals of the uniform evaluation grid.
    pub eval_grid: usize,
    /// `merton-exact` or `fine-milstein`; defaults by model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub fine_factor: usize,
    pub tilt_drift: f64,
    pub tilt_intensity: f64,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            replications: 10_000,
            eval_grid: 4096,
            reference: None,
            fine_factor: DEFAULT_FINE_FACTOR,
            tilt_drift: 0.0,
            tilt_intensity: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// `det` or `fast`.
    pub mode: String,
    /// 0 lets rayon decide.
    pub threads: usize,
    pub out: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 1, mode: "det".into(), threads: 0, out: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Intervals of the uniform dump grid.
    pub grid: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection { grid: 1024 }
    }
}

/// The config file as written by the user, with defaults filled in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: ModelSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intensity: Option<IntensitySection>,
    pub method: MethodSection,
    pub mesh: MeshSection,
    pub pilot: PilotSection,
    pub mc: McSection,
    pub run: RunSection,
    pub simulate: SimulateSection,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("config error: {e}")))
    }

    /// Rebuilds the config from the `#!` header lines of an artifact.
    pub fn from_artifact(text: &str) -> Result<Self, ConfigError> {
        let body: Vec<&str> = text.lines().filter_map(|l| l.strip_prefix(HEADER_PREFIX)).collect();
        if body.is_empty() {
            return Err(ConfigError("artifact has no '#!' config header".into()));
        }
        toml::from_str(&body.join("\n")).map_err(|e| ConfigError(format!("artifact header: {e}")))
    }

    /// Applies `section.key=value`. The value is read as TOML, falling back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("override '{assignment}' is not key=value")))?;
        let (key, value) = (key.trim(), value.trim());
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| ConfigError(format!("override key '{key}' must be section.key")))?;
        let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").expect("just inserted"),
            Err(_) => toml::Value::String(value.to_string()),
        };
        let mut table = toml::Table::try_from(&*self).map_err(|e| ConfigError(e.to_string()))?;
        let sec = table
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let sec = sec
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("'{section}' is not a section")))?;
        sec.insert(field.to_string(), parsed);
        *self = toml::Value::Table(table)
            .try_into()
            .map_err(|e| ConfigError(format!("override {key}: {e}")))?;
        Ok(())
    }

    /// `#! section.key = value` lines, sorted, covering every resolved key.
    pub fn header_lines(&self) -> Vec<String> {
        let table = toml::Table::try_from(self).expect("config serializes");
        let mut lines = Vec::new();
        for (section, body) in &table {
            if let toml::Value::Table(fields) = body {
                for (k, v) in fields {
                    lines.push(format!("{HEADER_PREFIX}{section}.{k} = {v}"));
                }
            }
        }
        lines
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Merton(MertonParams),
    Affine { name: String, x0: f64, horizon: f64, a: AffineCoef, b: AffineCoef, c: AffineCoef },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshChoice {
    Equidistant,
    PilotOptimal,
    MertonOptimal,
}

impl MeshChoice {
    pub fn name(&self) -> &'static str {
        match self {
            MeshChoice::Equidistant => "equidistant",
            MeshChoice::PilotOptimal => "pilot-optimal",
            MeshChoice::MertonOptimal => "merton-optimal",
        }
    }
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub file: FileConfig,
    pub model: ModelSpec,
    pub intensity: Option<(f64, f64)>,
    pub method: MethodKind,
    pub mesh: MeshChoice,
    pub n_list: Vec<usize>,
    pub floor: f64,
    pub pilot_grid: usize,
    pub pilot_replications: u64,
    pub replications: u64,
    pub eval_grid: usize,
    pub reference: Reference,
    pub tilt: Tilt,
    pub seed: u64,
    pub mode: Mode,
    pub threads: usize,
    pub out: PathBuf,
    pub simulate_grid: usize,
}

fn positive(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(field_err(field, format!("must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn resolve(file: FileConfig) -> Result<Self, ConfigError> {
        let m = &file.model;
        let x0 = m.x0;
        if !x0.is_finite() {
            return Err(field_err("model.x0", "must be finite"));
        }
        let horizon = positive("model.horizon", m.horizon)?;
        let is_merton = m.name == "merton";
        let model = match m.name.as_str() {
            "merton" => {
                let sigma = positive("model.sigma", m.sigma)?;
                let lam = positive("model.lam", m.lam)?;
                positive("model.x0", x0)?;
                if file.intensity.is_some() {
                    return Err(field_err("intensity", "merton takes its intensity from model.lam"));
                }
                for (k, v) in [("a", &m.a), ("a_y", &m.a_y), ("b", &m.b), ("b_y", &m.b_y), ("c", &m.c), ("c_y", &m.c_y)] {
                    if !v.is_empty() {
                        return Err(field_err(&format!("model.{k}"), "not used by merton"));
                    }
                }
                let p = match (m.r, m.gamma) {
                    (Some(_), Some(_)) => return Err(field_err("model.gamma", "give either r or gamma")),
                    (Some(r), None) => MertonParams::new(r, sigma, lam, x0, horizon),
                    (None, g) => MertonParams::with_gamma(g.unwrap_or(0.0), sigma, lam, x0, horizon),
                }
                .map_err(|e| field_err("model", e))?;
                ModelSpec::Merton(p)
            }
            "pure-jump-additive" | "pure-diffusion" | "polynomial" => {
                let a = AffineCoef::new(m.a.clone(), m.a_y.clone());
                let b = AffineCoef::new(m.b.clone(), m.b_y.clone());
                let c = AffineCoef::new(m.c.clone(), m.c_y.clone());
                if m.name == "pure-jump-additive" && !(b.is_zero() && c.is_state_free()) {
                    return Err(field_err("model", "pure-jump-additive needs b = 0 and c_y empty"));
                }
                if m.name == "pure-diffusion" && !c.is_zero() {
                    return Err(field_err("model.c", "pure-diffusion has c = 0"));
                }
                ModelSpec::Affine { name: m.name.clone(), x0, horizon, a, b, c }
            }
            other => return Err(field_err("model.name", format!("unknown model '{other}'"))),
        };
        let intensity = if is_merton {
            None
        } else {
            let s = file.intensity.clone().unwrap_or_default();
            match s.kind.as_str() {
                "constant" => Some((positive("intensity.lam", s.lam)?, 0.0)),
                "linear" => Some((s.l0, s.l1)),
                other => return Err(field_err("intensity.kind", format!("unknown intensity '{other}'"))),
            }
        };
        let method: MethodKind = file.method.kind.parse().map_err(|e| field_err("method.kind", e))?;
        let mesh = match file.mesh.kind.as_str() {
            "equidistant" => MeshChoice::Equidistant,
            "pilot-optimal" => MeshChoice::PilotOptimal,
            "merton-optimal" if is_merton => MeshChoice::MertonOptimal,
            "merton-optimal" => return Err(field_err("mesh.kind", "merton-optimal needs the merton model")),
            other => return Err(field_err("mesh.kind", format!("unknown mesh '{other}'"))),
        };
        let n_list = file.mesh.n.clone();
        if n_list.is_empty() || n_list.iter().any(|&n| n < 2) {
            return Err(field_err("mesh.n", "entries must be at least 2"));
        }
        if n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(field_err("mesh.n", "must be strictly increasing"));
        }
        if !(file.mesh.floor >= 0.0) {
            return Err(field_err("mesh.floor", "must be nonnegative"));
        }
        if file.pilot.grid < 2 {
            return Err(field_err("pilot.grid", "needs at least two points"));
        }
        if file.pilot.replications < 100 {
            return Err(field_err("pilot.replications", "must be at least 100"));
        }
        if file.mc.replications < 2 {
            return Err(field_err("mc.replications", "must be at least 2"));
        }
        if file.mc.eval_grid < 1 {
            return Err(field_err("mc.eval_grid", "must be positive"));
        }
        let reference = match (file.mc.reference.as_deref(), &model) {
            (Some("merton-exact") | None, ModelSpec::Merton(p)) => Reference::MertonExact(*p),
            (Some("merton-exact"), _) => return Err(field_err("mc.reference", "merton-exact needs the merton model")),
            (Some("fine-milstein"), _) | (None, _) => Reference::FineMilstein { factor: file.mc.fine_factor },
            (Some(other), _) => return Err(field_err("mc.reference", format!("unknown reference '{other}'"))),
        };
        if matches!(reference, Reference::FineMilstein { factor } if factor < 8) {
            return Err(field_err("mc.fine_factor", "must be at least 8"));
        }
        if !file.mc.tilt_drift.is_finite() {
            return Err(field_err("mc.tilt_drift", "must be finite"));
        }
        let tilt = Tilt { drift: file.mc.tilt_drift, intensity_factor: positive("mc.tilt_intensity", file.mc.tilt_intensity)? };
        let mode = match file.run.mode.as_str() {
            "det" | "deterministic" => Mode::Deterministic,
            "fast" => Mode::Fast,
            other => return Err(field_err("run.mode", format!("expected det or fast, got '{other}'"))),
        };
        // one thread means deterministic
        let mode = if file.run.threads == 1 { Mode::Deterministic } else { mode };
        if file.simulate.grid < 1 {
            return Err(field_err("simulate.grid", "must be positive"));
        }
        Ok(RunConfig {
            model,
            intensity,
            method,
            mesh,
            n_list,
            floor: file.mesh.floor,
            pilot_grid: file.pilot.grid,
            pilot_replications: file.pilot.replications,
            replications: file.mc.replications,
            eval_grid: file.mc.eval_grid,
            reference,
            tilt,
            seed: file.run.seed,
            mode,
            threads: file.run.threads,
            out: PathBuf::from(&file.run.out),
            simulate_grid: file.simulate.grid,
            file,
        })
    }

    pub fn horizon(&self) -> f64 {
        match &self.model {
            ModelSpec::Merton(p) => p.horizon,
            ModelSpec::Affine { horizon, .. } => *horizon,
        }
    }

    pub fn merton(&self) -> Option<MertonParams> {
        match &self.model {
            ModelSpec::Merton(p) => Some(*p),
            ModelSpec::Affine { .. } => None,
        }
    }

    /// Builds the SDE model and intensity; intensity problems are contract failures.
    pub fn build(&self) -> jumpmil::Result<(SdeModel, IntensityModel)> {
        match &self.model {
            ModelSpec::Merton(p) => Ok((p.model(), p.intensity())),
            ModelSpec::Affine { name, x0, horizon, a, b, c } => {
                let model = SdeModel::affine(name.clone(), *x0, *horizon, a.clone(), b.clone(), c.clone())?;
                let (l0, l1) = self.intensity.expect("non-merton models carry an intensity");
                let intensity = IntensityModel::linear(l0, l1, *horizon)?;
                intensity.validate(*horizon, 64)?;
                Ok((model, intensity))
            }
        }
    }

    pub fn exec(&self) -> Exec {
        Exec { mode: self.mode, parallel: self.threads != 1 }
    }

    /// Master seed for pilot runs, kept apart from the error-lab streams.
    pub fn pilot_seed(&self) -> u64 {
        self.seed ^ 0x5049_4c4f_5400_0000
    }

    pub fn header_lines(&self) -> Vec<String> {
        self.file.header_lines()
    }
}
