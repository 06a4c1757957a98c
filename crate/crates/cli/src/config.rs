//! Experiment configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fpme_core::{Cylinder, EvolvingGeometry, Family, NonlinearitySpec, RadiusLaw, Stepper};
use serde::Deserialize;

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    VerifyExtension,
    VerifyNorms,
    Solve,
    #[serde(rename = "sweep-R")]
    SweepR,
    SweepK,
    SweepDt,
    #[serde(rename = "sweep-N")]
    SweepN,
    ExactCompare,
    Determinism,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::VerifyExtension => "verify-extension",
            ExperimentKind::VerifyNorms => "verify-norms",
            ExperimentKind::Solve => "solve",
            ExperimentKind::SweepR => "sweep-R",
            ExperimentKind::SweepK => "sweep-k",
            ExperimentKind::SweepDt => "sweep-dt",
            ExperimentKind::SweepN => "sweep-N",
            ExperimentKind::ExactCompare => "exact-compare",
            ExperimentKind::Determinism => "determinism",
        }
    }

    /// CLI verb that runs this kind.
    pub fn verb(self) -> &'static str {
        match self {
            ExperimentKind::VerifyExtension | ExperimentKind::VerifyNorms | ExperimentKind::Determinism => "verify",
            ExperimentKind::Solve => "solve",
            ExperimentKind::SweepR | ExperimentKind::SweepK | ExperimentKind::SweepDt | ExperimentKind::SweepN => "sweep",
            ExperimentKind::ExactCompare => "compare",
        }
    }

    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::VerifyExtension,
        ExperimentKind::VerifyNorms,
        ExperimentKind::Solve,
        ExperimentKind::SweepR,
        ExperimentKind::SweepK,
        ExperimentKind::SweepDt,
        ExperimentKind::SweepN,
        ExperimentKind::ExactCompare,
        ExperimentKind::Determinism,
    ];

    /// Checks understood by this kind; the first entries run by default.
    pub fn checks(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::VerifyExtension => &[
                "harmonic-residual",
                "trace",
                "dtn-richardson",
                "grad-energy-full",
                "grad-energy-truncated",
            ],
            ExperimentKind::VerifyNorms => &["norm-equivalence", "k-quadrature"],
            ExperimentKind::Solve => &["mass", "max-principle", "energy", "comparison"],
            ExperimentKind::SweepR => &["decay-bound", "decay-slope", "truncation-l2", "solver-limit"],
            ExperimentKind::SweepK => &["regularization-limit"],
            ExperimentKind::SweepDt => &["contraction"],
            ExperimentKind::SweepN => &["spectral-convergence"],
            ExperimentKind::ExactCompare => &["linear-modes", "constant-datum"],
            ExperimentKind::Determinism => &["byte-identical"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Circle,
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawName {
    Constant,
    Linear,
    Sinusoidal,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryParams {
    pub family: FamilyName,
    pub law: LawName,
    pub r0: f64,
    pub rate: f64,
    pub amplitude: f64,
    pub omega: f64,
    pub horizon: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        Self {
            family: FamilyName::Circle,
            law: LawName::Constant,
            r0: 1.0,
            rate: 0.5,
            amplitude: 0.2,
            omega: 2.0 * std::f64::consts::PI,
            horizon: 1.0,
        }
    }
}

impl GeometryParams {
    pub fn family(&self) -> Family {
        match self.family {
            FamilyName::Circle => Family::Circle,
            FamilyName::Sphere => Family::SphereZonal,
        }
    }

    pub fn law(&self) -> RadiusLaw {
        match self.law {
            LawName::Constant => RadiusLaw::Constant { r0: self.r0 },
            LawName::Linear => RadiusLaw::Linear { r0: self.r0, rate: self.rate },
            LawName::Sinusoidal => RadiusLaw::Sinusoidal { r0: self.r0, amplitude: self.amplitude, omega: self.omega },
        }
    }

    pub fn build(&self) -> fpme_core::Result<EvolvingGeometry> {
        EvolvingGeometry::new(self.family(), self.law(), self.horizon)
    }

    pub fn describe(&self) -> String {
        let family = match self.family {
            FamilyName::Circle => "circle",
            FamilyName::Sphere => "sphere",
        };
        match self.law {
            LawName::Constant => format!("{family};r0={}", self.r0),
            LawName::Linear => format!("{family};r0={};rate={}", self.r0, self.rate),
            LawName::Sinusoidal => format!(
                "{family};r0={};amplitude={};omega={}",
                self.r0, self.amplitude, self.omega
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearityKind {
    PowerLaw,
    Regularized,
    Arctan,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonlinearityParams {
    pub kind: NonlinearityKind,
    pub m: f64,
    pub k: f64,
    /// Half-width `A` of the working interval; defaults to `1.1·M e^{λT}`.
    pub working_interval: Option<f64>,
}

impl Default for NonlinearityParams {
    fn default() -> Self {
        Self { kind: NonlinearityKind::PowerLaw, m: 1.0, k: 10.0, working_interval: None }
    }
}

impl NonlinearityParams {
    pub fn build(&self, needed: f64) -> fpme_core::Result<NonlinearitySpec> {
        let a = self.working_interval.unwrap_or(1.1 * needed);
        match self.kind {
            NonlinearityKind::PowerLaw => NonlinearitySpec::power_law(self.m),
            NonlinearityKind::Regularized => NonlinearitySpec::make_regularized(self.m, self.k, a),
            NonlinearityKind::Arctan => NonlinearitySpec::arctan_example(a),
        }
    }

    pub fn describe(&self) -> String {
        match self.kind {
            NonlinearityKind::PowerLaw => format!("m={}", self.m),
            NonlinearityKind::Regularized => format!("m={};k={}", self.m, self.k),
            NonlinearityKind::Arctan => "beta=arctan".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CylinderName {
    Full,
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepperName {
    ImplicitEuler,
    ExplicitRk,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    pub modes: usize,
    pub time_step: f64,
    pub cylinder: CylinderName,
    pub truncation: f64,
    pub stepper: StepperName,
    pub newton_tol: f64,
    pub max_iter: usize,
    pub rk_tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            modes: 64,
            time_step: 1e-3,
            cylinder: CylinderName::Full,
            truncation: 2.0,
            stepper: StepperName::ImplicitEuler,
            newton_tol: 1e-10,
            max_iter: 30,
            rk_tol: 1e-8,
        }
    }
}

impl SolverParams {
    pub fn cylinder(&self) -> fpme_core::Result<Cylinder> {
        match self.cylinder {
            CylinderName::Full => Ok(Cylinder::Full),
            CylinderName::Truncated => Cylinder::truncated(self.truncation),
        }
    }

    pub fn stepper(&self) -> Stepper {
        match self.stepper {
            StepperName::ImplicitEuler => Stepper::ImplicitEuler { newton_tol: self.newton_tol, max_iter: self.max_iter },
            StepperName::ExplicitRk => Stepper::ExplicitRK { tol: self.rk_tol },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    BandLimited,
    Constant,
    Mode,
}

/// Initial data and verification fields.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldParams {
    pub kind: InitialKind,
    /// Number of fields (or of pairs, for two-trajectory checks).
    pub count: usize,
    pub band: usize,
    pub decay: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub mode: usize,
    /// Mode count for the verification suites.
    pub modes: usize,
    /// Radii used by the verification suites.
    pub radii: Vec<f64>,
}

impl Default for FieldParams {
    fn default() -> Self {
        Self {
            kind: InitialKind::BandLimited,
            count: 1,
            band: 6,
            decay: 1.0,
            amplitude: 1.0,
            offset: 0.0,
            mode: 1,
            modes: 32,
            radii: vec![1.0],
        }
    }
}

/// Section replacements for one run of an experiment.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOverride {
    pub label: String,
    pub geometry: Option<GeometryParams>,
    pub nonlinearity: Option<NonlinearityParams>,
    pub solver: Option<SolverParams>,
    pub fields: Option<FieldParams>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    /// Subset of the kind's checks; all of them when empty.
    #[serde(default)]
    pub checks: Vec<String>,
    #[serde(default)]
    pub geometry: GeometryParams,
    #[serde(default)]
    pub nonlinearity: NonlinearityParams,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub fields: FieldParams,
    /// Swept parameter values (R, k, Δt or N).
    #[serde(default)]
    pub values: Vec<f64>,
    /// Threshold overrides keyed by quantity name.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub runs: Vec<RunOverride>,
    /// Config files replayed by the determinism check, relative to this file.
    #[serde(default)]
    pub configs: Vec<PathBuf>,
    /// CSV file name inside the output directory; `<id>.csv` by default.
    #[serde(default)]
    pub output: Option<String>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// One fully resolved run.
#[derive(Debug, Clone)]
pub struct Run {
    pub label: String,
    pub geometry: GeometryParams,
    pub nonlinearity: NonlinearityParams,
    pub solver: SolverParams,
    pub fields: FieldParams,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, HarnessError> {
        let mut config: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config {
            path: origin.display().to_string(),
            message: e.to_string(),
        })?;
        config.base_dir = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        config.validate().map_err(|message| HarnessError::Config { path: origin.display().to_string(), message })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text, path)
    }

    pub fn output_name(&self) -> String {
        self.output.clone().unwrap_or_else(|| format!("{}.csv", self.id))
    }

    /// Resolved runs; a config without `[[runs]]` has a single run.
    pub fn runs(&self) -> Vec<Run> {
        let base = Run {
            label: String::new(),
            geometry: self.geometry.clone(),
            nonlinearity: self.nonlinearity.clone(),
            solver: self.solver.clone(),
            fields: self.fields.clone(),
        };
        if self.runs.is_empty() {
            return vec![base];
        }
        self.runs
            .iter()
            .map(|o| Run {
                label: o.label.clone(),
                geometry: o.geometry.clone().unwrap_or_else(|| base.geometry.clone()),
                nonlinearity: o.nonlinearity.clone().unwrap_or_else(|| base.nonlinearity.clone()),
                solver: o.solver.clone().unwrap_or_else(|| base.solver.clone()),
                fields: o.fields.clone().unwrap_or_else(|| base.fields.clone()),
            })
            .collect()
    }

    pub fn active_checks(&self) -> Vec<&'static str> {
        self.kind
            .checks()
            .iter()
            .copied()
            .filter(|c| self.checks.is_empty() || self.checks.iter().any(|s| s == c))
            .collect()
    }

    pub fn tolerance(&self, quantity: &str, default: f64) -> f64 {
        self.tolerances.get(quantity).copied().unwrap_or(default)
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(format!("field `id`: expected a non-empty [A-Za-z0-9_-] name, got {:?}", self.id));
        }
        for check in &self.checks {
            if !self.kind.checks().contains(&check.as_str()) {
                return Err(format!(
                    "field `checks`: {check:?} is not a check of kind {} (known: {})",
                    self.kind.name(),
                    self.kind.checks().join(", ")
                ));
            }
        }
        let needs_values = matches!(
            self.kind,
            ExperimentKind::SweepR | ExperimentKind::SweepK | ExperimentKind::SweepDt | ExperimentKind::SweepN
        ) || (self.kind == ExperimentKind::ExactCompare && self.active_checks().contains(&"linear-modes"));
        if needs_values && self.values.len() < 2 {
            return Err(format!("field `values`: kind {} needs at least two swept values", self.kind.name()));
        }
        if self.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err("field `values`: swept values must be positive and finite".into());
        }
        if self.kind == ExperimentKind::SweepN && self.values.iter().any(|v| v.fract() != 0.0) {
            return Err("field `values`: mode counts must be integers".into());
        }
        if self.kind == ExperimentKind::Determinism && self.configs.is_empty() {
            return Err("field `configs`: the determinism check needs at least one config".into());
        }
        for (i, run) in self.runs().iter().enumerate() {
            let at = if self.runs.is_empty() { String::new() } else { format!("runs[{i}].") };
            if run.solver.modes == 0 || run.fields.modes == 0 {
                return Err(format!("field `{at}solver.modes`/`{at}fields.modes`: must be positive"));
            }
            if !(run.solver.time_step > 0.0) {
                return Err(format!("field `{at}solver.time_step`: must be positive"));
            }
            if run.fields.radii.is_empty() || run.fields.radii.iter().any(|r| !(*r > 0.0)) {
                return Err(format!("field `{at}fields.radii`: needs positive radii"));
            }
            run.geometry.build().map_err(|e| format!("section `{at}geometry`: {e}"))?;
            if let Err(e) = run.solver.cylinder() {
                return Err(format!("field `{at}solver.truncation`: {e}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, HarnessError> {
        ExperimentConfig::from_toml(text, Path::new("configs/test.toml"))
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse("id = \"x\"\nkind = \"solve\"\n").unwrap();
        assert_eq!(c.kind, ExperimentKind::Solve);
        assert_eq!(c.solver.modes, 64);
        assert_eq!(c.runs().len(), 1);
        assert_eq!(c.active_checks(), ExperimentKind::Solve.checks());
        assert_eq!(c.output_name(), "x.csv");
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let err = parse("id = \"x\"\nkind = \"solve\"\n[solver]\nmodes = \"many\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4"), "{msg}");
        let err = parse("id = \"x\"\nkind = \"solve\"\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn validation_names_the_field() {
        let err = parse("id = \"x\"\nkind = \"sweep-k\"\nvalues = [10.0]\n").unwrap_err();
        assert!(err.to_string().contains("values"));
        let err = parse("id = \"x\"\nkind = \"solve\"\nchecks = [\"nope\"]\n").unwrap_err();
        assert!(err.to_string().contains("checks"));
        let err = parse("id = \"x\"\nkind = \"solve\"\n[[runs]]\nlabel = \"a\"\n[runs.solver]\ntime_step = -1.0\n")
            .unwrap_err();
        assert!(err.to_string().contains("runs[0].solver.time_step"), "{err}");
    }

    #[test]
    fn runs_replace_whole_sections() {
        let c = parse(
            "id = \"x\"\nkind = \"solve\"\n[nonlinearity]\nm = 3.0\n[[runs]]\nlabel = \"dil\"\n[runs.geometry]\nlaw = \"linear\"\n",
        )
        .unwrap();
        let runs = c.runs();
        assert_eq!(runs[0].geometry.law, LawName::Linear);
        assert_eq!(runs[0].nonlinearity.m, 3.0);
    }
}
