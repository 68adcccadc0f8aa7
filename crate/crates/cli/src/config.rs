//! Run configuration: a TOML file selecting one experiment.

use std::path::PathBuf;

use confcurv::diagnostics::DiagnosticsConfig;
use confcurv::fields::{CurvatureData, FieldExpr};
use confcurv::geometry::{build_mesh, DomainKind, Mesh, Resolution};
use confcurv::solvers::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    VerifyProfiles,
    CheckIdentities,
    TraceIneq,
    Minimize,
    MountainPass,
    Continuation,
    TestfnEnergy,
    BlowupScan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainName {
    RadialBall,
    AxiBall3,
    AxiHalfBox,
    AxiHalfBall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub kind: DomainName,
    /// `[N_r]` for the radial ball, `[N_1, N_2]` otherwise.
    pub resolution: Vec<usize>,
    /// Dimension of the radial ball.
    pub dim: Option<usize>,
    pub half_width: Option<f64>,
    pub height: Option<f64>,
    pub radius: Option<f64>,
}

impl DomainSpec {
    pub fn kind(&self) -> Result<DomainKind, CliError> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| CliError::Validation(format!("missing field `domain.{name}`")));
        Ok(match self.kind {
            DomainName::RadialBall => DomainKind::RadialBall { n: self.dim.unwrap_or(3) },
            DomainName::AxiBall3 => DomainKind::AxiBall3,
            DomainName::AxiHalfBox => {
                DomainKind::AxiHalfBox { half_width: need(self.half_width, "half_width")?, height: need(self.height, "height")? }
            }
            DomainName::AxiHalfBall => DomainKind::AxiHalfBall { radius: need(self.radius, "radius")? },
        })
    }

    pub fn resolution(&self, refine: u32) -> Result<Resolution, CliError> {
        let f = 1usize << refine;
        match (self.kind, self.resolution.as_slice()) {
            (DomainName::RadialBall, [n]) => Ok(Resolution::radial(n * f)),
            (DomainName::RadialBall, _) => Err(CliError::Validation("radial-ball resolution takes one entry".into())),
            (_, [a, b]) => Ok(Resolution::grid(a * f, b * f)),
            _ => Err(CliError::Validation("grid resolution takes two entries".into())),
        }
    }

    pub fn mesh(&self, refine: u32) -> Result<Mesh, CliError> {
        Ok(build_mesh(self.kind()?, self.resolution(refine)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvatureSpec {
    pub k: String,
    pub h: String,
    #[serde(default = "zero_field")]
    pub s: String,
    #[serde(default = "zero_field")]
    pub hg: String,
}

fn zero_field() -> String {
    "const:0".into()
}

impl CurvatureSpec {
    pub fn data(&self, mesh: &Mesh) -> Result<CurvatureData, CliError> {
        let parse = |s: &str| s.parse::<FieldExpr>().map_err(CliError::from);
        Ok(CurvatureData::from_exprs(mesh, &parse(&self.k)?, &parse(&self.h)?, &parse(&self.s)?, &parse(&self.hg)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileName {
    Hyperball,
    Bubble,
    Horo,
}

/// Closed-form profile parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub name: ProfileName,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_dn")]
    pub dn: f64,
    #[serde(default = "one")]
    pub alpha: f64,
}

fn default_rho() -> f64 {
    2.0
}
fn default_beta() -> f64 {
    0.5
}
fn default_dn() -> f64 {
    1.5
}
fn one() -> f64 {
    1.0
}
fn three() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementSpec {
    /// Number of meshes in the study, each twice as fine as the last.
    #[serde(default = "three")]
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_degree")]
    pub max_degree: usize,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec { samples: default_samples(), epsilon: default_epsilon(), max_degree: default_degree() }
    }
}

fn default_samples() -> usize {
    1000
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_degree() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MountainPassSpec {
    pub p: f64,
    #[serde(default = "one")]
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFnSpec {
    pub beta: f64,
    pub mu: Option<f64>,
    pub ladder: Vec<f64>,
}

/// Concentrated test-function start for `minimize`, anchored at the north pole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub beta: f64,
    pub d: f64,
    /// Defaults to the optimal scale for the data at the anchor.
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Hyperball,
    Bubble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlowupSpec {
    pub family: Family,
    /// `rho` values for the hyperball family, `beta` values for bubbles.
    pub parameters: Vec<f64>,
    /// Also solve the subcritical problem from each exact profile at this exponent.
    pub solve_at: Option<f64>,
    #[serde(default = "default_dn")]
    pub dn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub domain: DomainSpec,
    pub curvature: Option<CurvatureSpec>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    pub profile: Option<ProfileSpec>,
    pub refinement: Option<RefinementSpec>,
    pub trace: Option<TraceSpec>,
    pub initial: Option<InitialSpec>,
    pub mountain_pass: Option<MountainPassSpec>,
    pub testfn: Option<TestFnSpec>,
    pub blowup: Option<BlowupSpec>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Validation(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let missing = |name: &str| Err(CliError::Validation(format!("missing field `{name}`")));
        let needs_curvature = matches!(
            self.experiment,
            Experiment::TraceIneq
                | Experiment::Minimize
                | Experiment::MountainPass
                | Experiment::Continuation
                | Experiment::TestfnEnergy
        );
        if needs_curvature && self.curvature.is_none() {
            return missing("curvature");
        }
        match self.experiment {
            Experiment::VerifyProfiles | Experiment::CheckIdentities if self.profile.is_none() => missing("profile"),
            Experiment::MountainPass if self.mountain_pass.is_none() => missing("mountain_pass"),
            Experiment::TestfnEnergy if self.testfn.is_none() => missing("testfn"),
            Experiment::BlowupScan if self.blowup.is_none() => missing("blowup"),
            _ => Ok(()),
        }?;
        self.domain.kind()?;
        self.domain.resolution(0)?;
        self.solver.validate(self.domain.kind()?.dim())?;
        if let Some(t) = &self.trace {
            if t.samples == 0 || t.max_degree == 0 {
                return Err(CliError::Validation("trace.samples and trace.max_degree must be positive".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMIZE: &str = r#"
experiment = "minimize"
[domain]
kind = "axi-ball3"
resolution = [16, 16]
[curvature]
k = "const:-6"
h = "const:0.2"
"#;

    #[test]
    fn parses_a_minimal_run() {
        let c = RunConfig::parse(MINIMIZE).unwrap();
        assert_eq!(c.experiment, Experiment::Minimize);
        assert_eq!(c.solver, SolverConfig::default());
        assert_eq!(c.curvature.unwrap().s, "const:0");
        assert_eq!(c.domain.resolution(1).unwrap(), Resolution::grid(32, 32));
    }

    #[test]
    fn empty_config_names_the_first_missing_field() {
        match RunConfig::parse("") {
            Err(CliError::Validation(m)) => assert!(m.contains("experiment"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn experiment_tables_are_required() {
        let text = MINIMIZE.replace("\"minimize\"", "\"mountain-pass\"");
        match RunConfig::parse(&text) {
            Err(CliError::Validation(m)) => assert!(m.contains("mountain_pass"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::parse(&MINIMIZE.replace("\"minimize\"", "\"teleport\"")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMIZE}\n[solver]\ngrad_tol = -1.0\n")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMIZE}\n[solver]\ngrad_toll = 1.0\n")).is_err());
    }
}
