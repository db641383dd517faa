//! JSON experiment configuration: versioned schema, strict key checking,
//! defaults echoed back into the output directory.

use qem_core::dynamics::IntegrationOptions;
use qem_core::rates::SystemParams;
use qem_core::reconstruct::RlOptions;
use qem_core::spectra::SpectrumConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output directory; `--out` overrides.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub system: SystemParams,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub protocol: Option<ProtocolConfig>,
    #[serde(default)]
    pub reconstruction: Option<ReconstructionConfig>,
    #[serde(default)]
    pub monte_carlo: Option<MonteCarloConfig>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_max: usize,
    pub freq_min: f64,
    pub freq_max: f64,
    pub freq_points: usize,
    /// When set, `psf` emits an identity kernel of this size instead of the
    /// synthetic map (deconvolution fixed-point tests).
    pub identity_size: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_max: 200,
            freq_min: -80.0,
            freq_max: 180.0,
            freq_points: 601,
            identity_size: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChirpConfig {
    pub n_start: f64,
    pub rate_per_ms: f64,
    pub t_end_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlueConfig {
    pub omega_b0: f64,
    pub chirp: ChirpConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedConfig {
    pub omega_r0: f64,
    pub n_r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub n_th: f64,
    pub blue: Option<BlueConfig>,
    pub red: Option<RedConfig>,
    pub spurious_l_max: Option<i64>,
    pub duration_ms: f64,
    pub integration: IntegrationOptions,
    /// Include the residual linear coupling in the qubit-flip branching.
    pub residual_branching: bool,
    /// Also convolve the final distribution with the synthetic kernel and
    /// emit spectrum.csv.
    pub emit_spectrum: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            n_th: 13.0,
            blue: None,
            red: None,
            spurious_l_max: None,
            duration_ms: 1.0,
            integration: IntegrationOptions::default(),
            residual_branching: false,
            emit_spectrum: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionMode {
    RichardsonLucy,
    ThermalFit,
    DisplacedThermalFit,
    JointFit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub traces_file: PathBuf,
    pub resamples: usize,
    pub level: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauFile {
    pub tau_ms: f64,
    pub file: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointFitConfig {
    pub blue_only: Vec<TauFile>,
    pub both_drives: Vec<TauFile>,
    pub omega_b0_grid: Vec<f64>,
    pub n_b0_grid: Vec<f64>,
    pub omega_r0_grid: Vec<f64>,
    pub chirp_rate: f64,
    /// Detuning between the red and initial blue drive tones in MHz; n_R
    /// is derived from it, not fitted.
    pub drive_detuning_mhz: f64,
    pub n_th: f64,
    pub dt_ms: f64,
}

impl Default for JointFitConfig {
    fn default() -> Self {
        JointFitConfig {
            blue_only: Vec::new(),
            both_drives: Vec::new(),
            omega_b0_grid: vec![0.079, 0.089, 0.099],
            n_b0_grid: vec![-2.3, -1.3, -0.3],
            omega_r0_grid: vec![0.056, 0.066, 0.076],
            chirp_rate: 38.5,
            drive_detuning_mhz: 2.0 * 0.26 * (44.0 + 1.3) - 50.0,
            n_th: 13.0,
            dt_ms: 2e-5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructionConfig {
    pub mode: ReconstructionMode,
    /// Externally measured kernel; when absent the synthetic map is built
    /// from the system and grid blocks.
    pub psf_file: Option<PathBuf>,
    pub rl: RlOptions,
    pub n_th_fixed: f64,
    pub shift_mhz: f64,
    pub n_disp_range: (f64, f64),
    pub n_th_range: (f64, f64),
    pub shift_range: (f64, f64),
    pub bootstrap: Option<BootstrapConfig>,
    pub joint_fit: JointFitConfig,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            mode: ReconstructionMode::RichardsonLucy,
            psf_file: None,
            rl: RlOptions::default(),
            n_th_fixed: 17.7,
            shift_mhz: 0.0,
            n_disp_range: (0.5, 80.0),
            n_th_range: (0.5, 80.0),
            shift_range: (-5.0, 5.0),
            bootstrap: None,
            joint_fit: JointFitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloConfig {
    pub mean: f64,
    pub f_true_start: f64,
    pub f_true_step: f64,
    pub f_true_count: usize,
    pub noise_coeffs: [f64; 3],
    pub n_sims: usize,
    pub n_averages: usize,
    pub rl: RlOptions,
    /// F_extract conditioning window for the CDF report.
    pub window: (f64, f64),
    /// Reconstruction support: kernel rows 0..=psf_rows.
    pub psf_rows: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            mean: 43.0,
            f_true_start: 0.08,
            f_true_step: 0.03,
            f_true_count: 15,
            noise_coeffs: [0.005, 0.02, 0.0],
            n_sims: 300,
            n_averages: 916,
            rl: RlOptions::default(),
            window: (0.255, 0.265),
            psf_rows: 150,
        }
    }
}

pub const PRESETS: &[(&str, &str)] = &[
    ("fig2_thermal", include_str!("../presets/fig2_thermal.json")),
    ("fig3_chirp", include_str!("../presets/fig3_chirp.json")),
    ("fig3_squeeze", include_str!("../presets/fig3_squeeze.json")),
    ("fig4_subpoisson", include_str!("../presets/fig4_subpoisson.json")),
    ("figS11_jointfit", include_str!("../presets/figS11_jointfit.json")),
    ("figS12_spurious", include_str!("../presets/figS12_spurious.json")),
    ("figS13_fanobound", include_str!("../presets/figS13_fanobound.json")),
];

pub fn load_config(spec: &str) -> Result<ExperimentConfig, String> {
    let text = if let Some(name) = spec.strip_prefix("preset:") {
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, body)| body.to_string())
            .ok_or_else(|| {
                format!(
                    "unknown preset '{name}'; available: {}",
                    PRESETS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
                )
            })?
    } else {
        std::fs::read_to_string(spec).map_err(|e| format!("cannot read config {spec}: {e}"))?
    };
    let config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| format!("config parse error: {e}"))?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(format!(
            "schema_version {} unsupported (expected {SCHEMA_VERSION})",
            config.schema_version
        ));
    }
    config.system.validate().map_err(|e| format!("system block: {e}"))?;
    if config.grid.freq_points < 2 || config.grid.freq_max <= config.grid.freq_min {
        return Err("grid block: freq grid must have >= 2 increasing points".into());
    }
    if config.grid.n_max < 8 {
        return Err("grid block: n_max must be >= 8".into());
    }
    Ok(config)
}

/// Canonical serialization used for both the echoed effective config and
/// its provenance hash.
pub fn canonical_json(config: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(config).expect("config serializes")
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical_json(config).as_bytes());
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Comment header carried by every output CSV.
pub fn provenance_line(config: &ExperimentConfig, cmd: &str) -> String {
    format!("qem v{TOOL_VERSION} cmd={cmd} config_sha256={}", config_hash(config))
}

pub fn echo_config(config: &ExperimentConfig, outdir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(outdir)?;
    std::fs::write(outdir.join("effective_config.json"), canonical_json(config))
}
