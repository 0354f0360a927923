//! Run configuration: TOML file plus flag overrides, resolved against preset
//! defaults before any computation. Unknown keys are rejected at parse time,
//! and the fully resolved configuration is embedded in every output file.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use phtrack::catalog::{self, PresetBundle, ReferenceKind};
use phtrack::certify::{default_epsilon_grid, DomainBox};
use phtrack::controller::ControllerGains;
use phtrack::state::StateVector;

pub const ENV_OUT_DIR: &str = "PHTRACK_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "phtrack_out";
pub const DEFAULT_FINAL_ERROR_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-6;
pub const DEFAULT_FEASIBILITY_SAMPLES: usize = 1001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceChoice {
    Paper,
    Solver,
}

impl ReferenceChoice {
    pub fn kind(self) -> ReferenceKind {
        match self {
            Self::Paper => ReferenceKind::Paper,
            Self::Solver => ReferenceKind::Solver,
        }
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(Self::Paper),
            "solver" => Ok(Self::Solver),
            other => Err(format!("unknown reference `{other}` (expected paper|solver)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReVariant {
    /// Electrical damping 0 (model-text loudspeaker variant).
    Model,
    /// Electrical damping 1 (numeric-block value).
    Numeric,
}

impl ReVariant {
    pub fn value(self) -> f64 {
        match self {
            Self::Model => 0.0,
            Self::Numeric => 1.0,
        }
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "model" => Ok(Self::Model),
            "numeric" => Ok(Self::Numeric),
            other => Err(format!(
                "unknown Re variant `{other}` (expected model|numeric)"
            )),
        }
    }
}

/// Initial condition: explicit state or "on-reference".
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum Eta0Spec {
    Named(String),
    Values(Vec<f64>),
}

/// Scalar (times identity) or diagonal gain entry.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum GainSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
}

impl GainSpec {
    fn to_matrix(&self, n_e: usize, label: &str) -> Result<DMatrix<f64>, String> {
        match self {
            Self::Scalar(s) => Ok(DMatrix::identity(n_e, n_e) * *s),
            Self::Diagonal(d) => {
                if d.len() != n_e {
                    return Err(format!(
                        "{label}: diagonal length {} does not match n_e = {n_e}",
                        d.len()
                    ));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
            }
        }
    }

    fn to_diag(&self, n_e: usize) -> Vec<f64> {
        match self {
            Self::Scalar(s) => vec![*s; n_e],
            Self::Diagonal(d) => d.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub grid_points: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    pub rbar_e: GainSpec,
    pub k_c: GainSpec,
}

#[derive(Debug, Clone, Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub rbar_grid: Option<Vec<f64>>,
    pub kc_grid: Option<Vec<f64>>,
}

/// The TOML file schema. Every field is optional; flags override the file.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    pub tmax: Option<f64>,
    pub step: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub reference: Option<ReferenceChoice>,
    pub ls: Option<f64>,
    pub re_variant: Option<ReVariant>,
    pub eta0: Option<Eta0Spec>,
    pub epsilon_grid: Option<Vec<f64>>,
    pub final_error_threshold: Option<f64>,
    pub feasibility_tol: Option<f64>,
    pub feasibility_samples: Option<usize>,
    pub qbox: Option<[f64; 2]>,
    pub domain: Option<DomainConfig>,
    pub gains: Option<GainsConfig>,
    pub sweep: Option<SweepConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config parse error: {e}"))
    }
}

/// Flag-level overrides collected by the argument parser.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub preset: Option<String>,
    pub tmax: Option<f64>,
    pub step: Option<f64>,
    pub out: Option<PathBuf>,
    pub qbox: Option<(f64, f64)>,
    pub epsilon_grid: Option<Vec<f64>>,
    pub reference: Option<ReferenceChoice>,
    pub ls: Option<f64>,
    pub re_variant: Option<ReVariant>,
    pub eta0: Option<Eta0Spec>,
    pub rbar_grid: Option<Vec<f64>>,
    pub kc_grid: Option<Vec<f64>>,
}

/// Fully resolved configuration, embedded verbatim in every output file.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub command: String,
    pub preset: String,
    pub tmax: f64,
    pub step: f64,
    pub out_dir: String,
    pub reference: ReferenceChoice,
    pub ls: f64,
    pub re_variant: ReVariant,
    pub eta0: Vec<f64>,
    pub eta0_on_reference: bool,
    pub epsilon_grid: Vec<f64>,
    pub final_error_threshold: f64,
    pub feasibility_tol: f64,
    pub feasibility_samples: usize,
    pub domain_lower: Vec<f64>,
    pub domain_upper: Vec<f64>,
    pub grid_points: usize,
    pub rbar_e_diag: Vec<f64>,
    pub k_c_diag: Vec<f64>,
    pub sweep_rbar_grid: Vec<f64>,
    pub sweep_kc_grid: Vec<f64>,
    /// Names of fields that did not come from preset defaults.
    pub overridden: Vec<String>,
}

/// Everything a command needs to run.
pub struct ResolvedRun {
    pub bundle: PresetBundle,
    pub gains: ControllerGains,
    pub eta0: StateVector,
    pub domain: DomainBox,
    pub config: ResolvedConfig,
}

/// Merge flag overrides over the file config over preset defaults.
pub fn resolve(
    command: &str,
    file: &FileConfig,
    flags: &FlagOverrides,
) -> Result<ResolvedRun, String> {
    let mut overridden = Vec::new();
    let mut note = |name: &str, from_flag: bool, from_file: bool| {
        if from_flag || from_file {
            overridden.push(name.to_string());
        }
    };

    let preset_name = flags
        .preset
        .clone()
        .or_else(|| file.preset.clone())
        .ok_or("no preset selected (use --preset or `preset` in the config)")?;
    note("preset", flags.preset.is_some(), file.preset.is_some());

    let ls = flags.ls.or(file.ls).unwrap_or(1.0);
    note("ls", flags.ls.is_some(), file.ls.is_some());
    let re_variant = flags
        .re_variant
        .or(file.re_variant)
        .unwrap_or(ReVariant::Numeric);
    note(
        "re_variant",
        flags.re_variant.is_some(),
        file.re_variant.is_some(),
    );

    let bundle = match preset_name.as_str() {
        "stepper" | "stepper-motor" => catalog::stepper_motor_with_ls(ls),
        "microphone" => catalog::microphone(),
        "loudspeaker" => catalog::loudspeaker_with_re(re_variant.value()),
        other => {
            return Err(format!(
                "unknown preset `{other}` (expected one of {:?})",
                catalog::PRESET_NAMES
            ))
        }
    };

    let reference = flags.reference.or(file.reference).unwrap_or(
        if bundle.name == "loudspeaker" {
            ReferenceChoice::Solver
        } else {
            ReferenceChoice::Paper
        },
    );
    note(
        "reference",
        flags.reference.is_some(),
        file.reference.is_some(),
    );

    let tmax = flags.tmax.or(file.tmax).unwrap_or(bundle.t_span.1);
    note("tmax", flags.tmax.is_some(), file.tmax.is_some());
    if !(tmax > 0.0) {
        return Err(format!("tmax must be positive, got {tmax}"));
    }
    let step = flags.step.or(file.step).unwrap_or(bundle.default_step);
    note("step", flags.step.is_some(), file.step.is_some());
    if !(step > 0.0) {
        return Err(format!("step must be positive, got {step}"));
    }

    let out_dir = flags
        .out
        .clone()
        .or_else(|| file.out_dir.clone())
        .or_else(|| std::env::var(ENV_OUT_DIR).ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    note("out_dir", flags.out.is_some(), file.out_dir.is_some());

    let epsilon_grid = flags
        .epsilon_grid
        .clone()
        .or_else(|| file.epsilon_grid.clone())
        .unwrap_or_else(default_epsilon_grid);
    note(
        "epsilon_grid",
        flags.epsilon_grid.is_some(),
        file.epsilon_grid.is_some(),
    );
    if epsilon_grid.is_empty() || epsilon_grid.iter().any(|e| *e <= 0.0) {
        return Err("epsilon grid must be nonempty and positive".into());
    }

    // Domain: explicit table wins, then the preset default; --qbox rewrites
    // the q axis on top of either.
    let mut domain = if let Some(d) = &file.domain {
        note("domain", false, true);
        DomainBox::new(
            d.lower.clone(),
            d.upper.clone(),
            d.grid_points.unwrap_or(bundle.domain.grid_points),
        )
        .map_err(|e| e.to_string())?
    } else {
        bundle.domain.clone()
    };
    if domain.dim() != bundle.system.dim() {
        return Err(format!(
            "domain dimension {} does not match the state dimension {}",
            domain.dim(),
            bundle.system.dim()
        ));
    }
    let qbox = flags.qbox.or_else(|| file.qbox.map(|b| (b[0], b[1])));
    if let Some((lo, hi)) = qbox {
        note("qbox", flags.qbox.is_some(), file.qbox.is_some());
        for axis in 0..bundle.system.n_m() {
            domain = domain.with_axis(axis, lo, hi).map_err(|e| e.to_string())?;
        }
    }

    let gains = if let Some(g) = &file.gains {
        note("gains", false, true);
        let n_e = bundle.system.n_e();
        ControllerGains::new(
            g.rbar_e.to_matrix(n_e, "rbar_e")?,
            g.k_c.to_matrix(n_e, "k_c")?,
            &bundle.system,
        )
        .map_err(|e| e.to_string())?
    } else {
        bundle.gains.clone()
    };

    let eta0_spec = flags.eta0.clone().or_else(|| file.eta0.clone());
    note("eta0", flags.eta0.is_some(), file.eta0.is_some());
    let (eta0, eta0_on_reference) = match &eta0_spec {
        None => (bundle.eta0.clone(), false),
        Some(Eta0Spec::Named(s)) if s == "on-reference" => {
            let reference_traj = bundle
                .reference_for(reference.kind())
                .ok_or("the selected reference is not available for this preset")?;
            (reference_traj.eval(0.0), true)
        }
        Some(Eta0Spec::Named(s)) => {
            return Err(format!("unknown eta0 spec `{s}` (expected on-reference or a state)"))
        }
        Some(Eta0Spec::Values(v)) => (
            StateVector::from_slice(bundle.system.n_m(), bundle.system.n_e(), v)
                .map_err(|e| e.to_string())?,
            false,
        ),
    };

    let final_error_threshold = file
        .final_error_threshold
        .unwrap_or(DEFAULT_FINAL_ERROR_THRESHOLD);
    note("final_error_threshold", false, file.final_error_threshold.is_some());
    let feasibility_tol = file.feasibility_tol.unwrap_or(DEFAULT_FEASIBILITY_TOL);
    note("feasibility_tol", false, file.feasibility_tol.is_some());
    let feasibility_samples = file
        .feasibility_samples
        .unwrap_or(DEFAULT_FEASIBILITY_SAMPLES);
    note("feasibility_samples", false, file.feasibility_samples.is_some());
    if feasibility_samples < 2 {
        return Err("feasibility_samples must be at least 2".into());
    }

    let sweep_rbar_grid = flags
        .rbar_grid
        .clone()
        .or_else(|| file.sweep.as_ref().and_then(|s| s.rbar_grid.clone()))
        .unwrap_or_default();
    let sweep_kc_grid = flags
        .kc_grid
        .clone()
        .or_else(|| file.sweep.as_ref().and_then(|s| s.kc_grid.clone()))
        .unwrap_or_default();
    if flags.rbar_grid.is_some() || file.sweep.is_some() {
        overridden.push("sweep".to_string());
    }

    overridden.sort();
    overridden.dedup();

    let n_e = bundle.system.n_e();
    let config = ResolvedConfig {
        command: command.to_string(),
        preset: bundle.name.to_string(),
        tmax,
        step,
        out_dir: out_dir.display().to_string(),
        reference,
        ls,
        re_variant,
        eta0: eta0.as_flat().as_slice().to_vec(),
        eta0_on_reference,
        epsilon_grid,
        final_error_threshold,
        feasibility_tol,
        feasibility_samples,
        domain_lower: domain.lower.clone(),
        domain_upper: domain.upper.clone(),
        grid_points: domain.grid_points,
        rbar_e_diag: file
            .gains
            .as_ref()
            .map(|g| g.rbar_e.to_diag(n_e))
            .unwrap_or_else(|| bundle.gains.rbar_e().diagonal().as_slice().to_vec()),
        k_c_diag: file
            .gains
            .as_ref()
            .map(|g| g.k_c.to_diag(n_e))
            .unwrap_or_else(|| bundle.gains.k_c().diagonal().as_slice().to_vec()),
        sweep_rbar_grid,
        sweep_kc_grid,
        overridden,
    };

    Ok(ResolvedRun {
        bundle,
        gains,
        eta0,
        domain,
        config,
    })
}

/// Parse a comma-separated list of floats.
pub fn parse_float_list(s: &str, what: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|e| format!("invalid {what} entry `{tok}`: {e}"))
        })
        .collect()
}
