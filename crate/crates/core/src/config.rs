//! Experiment configuration: JSON schema, validation and presets.
//!
//! A configuration names one experiment kind with its parameters, a master
//! seed and a trial count. Named geometries are expanded to explicit
//! coordinates on load, so a loaded configuration is self-contained and
//! `load(emit(config)) == config`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codesign::StepRule;
use crate::error::{Error, Result};
use crate::geometry::{reference_targets, Position, RadarGeometry, SPEED_OF_LIGHT_KM_S};
use crate::track::FusionMode;

// ----------------------------------------------------------------------------
// Schema
// ----------------------------------------------------------------------------

/// Top-level experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    /// Output directory; the CLI default is `results/<kind>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub experiment: Experiment,
}

/// Experiment kind and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    CodesignConvergence(CodesignSpec),
    SystemSweep(SweepSpec),
    AssociationPc(AssociationSpec),
    Tracking(TrackingSpec),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::CodesignConvergence(_) => "codesign-convergence",
            Experiment::SystemSweep(_) => "system-sweep",
            Experiment::AssociationPc(_) => "association-pc",
            Experiment::Tracking(_) => "tracking",
        }
    }
}

/// Radar transmitter and receiver placement, by preset name or explicit
/// coordinates in km.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default)]
    pub tx: Vec<[f64; 2]>,
    #[serde(default)]
    pub rx: Vec<[f64; 2]>,
}

impl GeometrySpec {
    pub fn preset(name: &str) -> Result<Self> {
        let mut g = Self {
            preset: Some(name.into()),
            tx: Vec::new(),
            rx: Vec::new(),
        };
        g.expand()?;
        Ok(g)
    }

    /// Fill in preset coordinates, or check given ones against the preset.
    pub fn expand(&mut self) -> Result<()> {
        let Some(name) = &self.preset else {
            return Ok(());
        };
        let g = RadarGeometry::by_name(name).map_err(|e| Error::Config(e.to_string()))?;
        let tx: Vec<[f64; 2]> = g.tx.iter().map(|p| [p.x, p.y]).collect();
        let rx: Vec<[f64; 2]> = g.rx.iter().map(|p| [p.x, p.y]).collect();
        if self.tx.is_empty() && self.rx.is_empty() {
            self.tx = tx;
            self.rx = rx;
        } else if self.tx != tx || self.rx != rx {
            return Err(Error::Config(format!(
                "coordinates differ from the {name:?} preset"
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.preset.clone().unwrap_or_else(|| "custom".into())
    }

    pub fn geometry(&self) -> RadarGeometry {
        let pos = |v: &[[f64; 2]]| v.iter().map(|p| Position::new(p[0], p[1])).collect();
        RadarGeometry {
            name: self.label(),
            tx: pos(&self.tx),
            rx: pos(&self.rx),
        }
    }

    fn validate(&self, problems: &mut Vec<String>) {
        if self.tx.is_empty() || self.rx.is_empty() {
            problems.push("geometry needs at least one Tx and one Rx".into());
        }
        if self
            .tx
            .iter()
            .chain(&self.rx)
            .flatten()
            .any(|v| !v.is_finite())
        {
            problems.push("geometry coordinates must be finite".into());
        }
    }
}

/// Pulse timing shared by the association and tracking experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarParams {
    pub carrier_hz: f64,
    pub pri_s: f64,
    pub pulses: usize,
    pub range_cells: usize,
}

impl Default for RadarParams {
    fn default() -> Self {
        Self {
            carrier_hz: 12e9,
            pri_s: 0.2,
            pulses: 16,
            range_cells: 32,
        }
    }
}

impl RadarParams {
    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT_KM_S * 1e3 / self.carrier_hz
    }

    /// Range cell `T_p = T_r / L`, s.
    pub fn range_cell_s(&self) -> f64 {
        self.pri_s / self.range_cells as f64
    }

    /// Doppler bin `1 / (K T_r)`, Hz.
    pub fn doppler_bin_hz(&self) -> f64 {
        1.0 / (self.pulses as f64 * self.pri_s)
    }

    fn validate(&self, problems: &mut Vec<String>) {
        if !(self.carrier_hz > 0.0 && self.pri_s > 0.0) {
            problems.push("carrier and PRI must be positive".into());
        }
        if self.pulses == 0 || self.range_cells == 0 {
            problems.push("pulses and range cells must be positive".into());
        }
    }
}

fn default_targets() -> usize {
    2
}
fn default_max_outer() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-4
}
fn default_rules() -> Vec<StepRule> {
    vec![StepRule::BarzilaiBorwein, StepRule::Polyak]
}

/// Co-design convergence: the alternating optimiser on the compact cell,
/// once per step rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodesignSpec {
    #[serde(default = "default_targets")]
    pub targets: usize,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    /// Relative change of the running minimum that counts as converged.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_rules")]
    pub rules: Vec<StepRule>,
}

impl Default for CodesignSpec {
    fn default() -> Self {
        Self {
            targets: default_targets(),
            max_outer: default_max_outer(),
            tol: default_tol(),
            rules: default_rules(),
        }
    }
}

/// Swept parameter of [`SweepSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Common SNR in dB: every noise variance is `10^(-snr/10)`.
    Snr,
    /// Self-interference attenuation `sigma_FD^2` in dB.
    Fd,
    /// Number of targets.
    Targets,
}

/// System metrics of the optimised design against a swept parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default = "default_targets")]
    pub targets: usize,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_radius() -> f64 {
    300.0
}
fn default_speed() -> f64 {
    50.0
}
fn one() -> f64 {
    1.0
}

/// Probability of correct association against geometry and target count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssociationSpec {
    pub geometries: Vec<GeometrySpec>,
    pub target_counts: Vec<usize>,
    /// Targets are uniform in a disc of this radius (km) about the origin.
    #[serde(default = "default_radius")]
    pub disc_radius_km: f64,
    /// Speeds are uniform in `[0, max]` m/s with uniform heading.
    #[serde(default = "default_speed")]
    pub max_speed_m_s: f64,
    /// Measurement spread in bins, both coordinates.
    #[serde(default = "one")]
    pub sigma_bins: f64,
    /// Mixture weights are `|h|^(2 exponent)`, normalised.
    #[serde(default = "one")]
    pub rcs_exponent: f64,
    #[serde(default)]
    pub radar: RadarParams,
}

fn default_cpis() -> usize {
    20
}
fn default_pd() -> f64 {
    0.9
}
fn default_pfa() -> f64 {
    1e-3
}
fn default_pg() -> f64 {
    0.99
}
fn default_nu() -> f64 {
    1e-4
}
fn default_sigma_vel() -> f64 {
    0.1
}
fn default_gn() -> usize {
    10
}
fn default_miss() -> usize {
    3
}
fn default_survival() -> f64 {
    0.99
}
fn default_existence() -> f64 {
    0.9
}
fn default_states() -> Vec<[f64; 4]> {
    reference_targets()
        .iter()
        .map(|s| [s[0], s[1], s[2], s[3]])
        .collect()
}

/// Multi-target tracking on a fixed geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingSpec {
    pub geometry: GeometrySpec,
    /// Initial states `[x, y, vx, vy]` in km and km/s.
    #[serde(default = "default_states")]
    pub targets: Vec<[f64; 4]>,
    #[serde(default = "default_cpis")]
    pub cpis: usize,
    #[serde(default)]
    pub radar: RadarParams,
    #[serde(default = "default_pd")]
    pub p_d: f64,
    #[serde(default = "default_pfa")]
    pub p_fa: f64,
    #[serde(default = "default_pg")]
    pub p_g: f64,
    /// Process-noise intensity for both axes.
    #[serde(default = "default_nu")]
    pub process_noise: f64,
    /// Measurement standard deviations (range km, range rate km/s); the
    /// default is one range cell and one Doppler bin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_std: Option<[f64; 2]>,
    /// Initialisation error of position (km) and velocity (km/s).
    #[serde(default = "one")]
    pub init_sigma_pos: f64,
    #[serde(default = "default_sigma_vel")]
    pub init_sigma_vel: f64,
    #[serde(default = "default_existence")]
    pub init_existence: f64,
    #[serde(default)]
    pub fusion: FusionMode,
    #[serde(default = "default_gn")]
    pub gn_iterations: usize,
    #[serde(default = "default_miss")]
    pub miss_limit: usize,
    #[serde(default = "default_survival")]
    pub survival: f64,
}

impl TrackingSpec {
    pub fn new(geometry: GeometrySpec) -> Self {
        serde_json::from_value(serde_json::json!({ "geometry": geometry }))
            .expect("all tracking fields except the geometry have defaults")
    }
}

// ----------------------------------------------------------------------------
// Validation, load and emit
// ----------------------------------------------------------------------------

fn probability(name: &str, v: f64, problems: &mut Vec<String>) {
    if !(0.0..=1.0).contains(&v) {
        problems.push(format!("{name} must lie in [0, 1]"));
    }
}

impl ExperimentConfig {
    /// Expand presets and check every invariant, listing all violations.
    pub fn validate(&mut self) -> Result<()> {
        let mut problems = Vec::new();
        if self.trials == 0 {
            problems.push("trials must be at least 1".into());
        }
        let expand = |g: &mut GeometrySpec, problems: &mut Vec<String>| {
            if let Err(e) = g.expand() {
                problems.push(e.to_string());
            }
            g.validate(problems);
        };
        match &mut self.experiment {
            Experiment::CodesignConvergence(s) => {
                if s.targets == 0 || s.max_outer == 0 || s.rules.is_empty() {
                    problems.push(
                        "codesign needs targets, iterations and at least one step rule".into(),
                    );
                }
                if !(s.tol > 0.0) {
                    problems.push("tol must be positive".into());
                }
            }
            Experiment::SystemSweep(s) => {
                if s.values.is_empty() || s.values.iter().any(|v| !v.is_finite()) {
                    problems.push("sweep values must be a nonempty list of finite numbers".into());
                }
                if s.axis == SweepAxis::Targets
                    && s.values.iter().any(|v| !(*v >= 1.0 && v.fract() == 0.0))
                {
                    problems.push("target-count sweep values must be positive integers".into());
                }
                if s.targets == 0 || s.max_outer == 0 || !(s.tol > 0.0) {
                    problems.push("sweep needs targets, iterations and a positive tol".into());
                }
            }
            Experiment::AssociationPc(s) => {
                if s.geometries.is_empty() || s.target_counts.is_empty() {
                    problems.push("association needs geometries and target counts".into());
                }
                for g in &mut s.geometries {
                    expand(g, &mut problems);
                }
                if s.target_counts
                    .iter()
                    .any(|&n| n == 0 || n > crate::associate::PERMANENT_MAX_N)
                {
                    problems.push(format!(
                        "target counts must lie in 1..={}",
                        crate::associate::PERMANENT_MAX_N
                    ));
                }
                if !(s.disc_radius_km > 0.0 && s.max_speed_m_s >= 0.0 && s.sigma_bins > 0.0) {
                    problems
                        .push("disc radius and spread must be positive, speed nonnegative".into());
                }
                s.radar.validate(&mut problems);
            }
            Experiment::Tracking(s) => {
                expand(&mut s.geometry, &mut problems);
                s.radar.validate(&mut problems);
                if s.targets.is_empty() || s.cpis == 0 {
                    problems.push("tracking needs targets and at least one CPI".into());
                }
                for (name, v) in [
                    ("p_d", s.p_d),
                    ("p_fa", s.p_fa),
                    ("p_g", s.p_g),
                    ("survival", s.survival),
                    ("init_existence", s.init_existence),
                ] {
                    probability(name, v, &mut problems);
                }
                if !(s.p_fa > 0.0 && s.p_g < 1.0) {
                    problems.push("p_fa must be positive and p_g below 1".into());
                }
                if !(s.process_noise >= 0.0 && s.init_sigma_pos >= 0.0 && s.init_sigma_vel >= 0.0) {
                    problems.push("noise intensities must be nonnegative".into());
                }
                if let Some(std) = s.measurement_std {
                    if std.iter().any(|v| !(*v > 0.0)) {
                        problems.push("measurement_std must be positive".into());
                    }
                }
                if s.gn_iterations == 0 || s.miss_limit == 0 {
                    problems.push("gn_iterations and miss_limit must be positive".into());
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Parse and validate JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {} column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serialises")
    }

    /// Output directory, defaulting to `results/<kind>`.
    pub fn output_dir(&self) -> PathBuf {
        self.output
            .clone()
            .unwrap_or_else(|| Path::new("results").join(self.experiment.kind()))
    }
}

/// Read, parse and validate a configuration file. A bare preset name is
/// accepted in place of a path.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    if !path.exists() {
        if let Some(p) = path.to_str().and_then(preset) {
            return ExperimentConfig::from_json(p.text);
        }
    }
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

// ----------------------------------------------------------------------------
// Presets
// ----------------------------------------------------------------------------

/// A configuration file shipped with the library.
#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub file: &'static str,
    pub text: &'static str,
    /// Pinned SHA-256 of `text`.
    pub sha256: &'static str,
}

macro_rules! preset {
    ($name:literal, $sha:literal) => {
        Preset {
            name: $name,
            file: concat!($name, ".json"),
            text: include_str!(concat!("../presets/", $name, ".json")),
            sha256: $sha,
        }
    };
}

pub const PRESETS: &[Preset] = &[
    preset!(
        "association-pc",
        "591da67849df581ea736d38aa30179fab3eb6d875747119307508dc95712754c"
    ),
    preset!(
        "codesign-convergence",
        "c1f235aef03a095a03a8db80657dc72cf101973d9273ca033201f1ed0916a410"
    ),
    preset!(
        "system-sweep-fd",
        "f5470cf5a65ade6d42074ecbcf0c428603ee81e8477bf93624b7d3d8a0dd1ba0"
    ),
    preset!(
        "system-sweep-snr",
        "88cf4a868ccfc2cb927efba2b9e2f06d0b951238d9e4d94be64ab20030de5283"
    ),
    preset!(
        "tracking-circular",
        "7adceb3a855a449c892083847e68ec670f96ac4222ccbb72523cee621bef7658"
    ),
    preset!(
        "tracking-lshape",
        "d01ae7200b72d028f9b3a2bc7b26970fea37273fb6ed150309fd8e5b2d8d594f"
    ),
    preset!(
        "tracking-random",
        "b10d79c734ba1708b84021bda72715de712da4fb276a7134be54b34bd20e7c8f"
    ),
    preset!(
        "tracking-single",
        "2e5473fa2a4996328c95189ed27c038bc760895cc938456156a2f62e13648eb8"
    ),
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

/// Directory holding the preset files in the source tree.
pub fn preset_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets")
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Outcome of checking one preset.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetCheck {
    pub name: String,
    pub problems: Vec<String>,
}

impl PresetCheck {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Check preset text against its pinned checksum, the schema, and the
/// reference coordinates of every named geometry it contains.
pub fn verify_preset_text(name: &str, text: &str, sha256: &str) -> PresetCheck {
    let mut problems = Vec::new();
    let digest = sha256_hex(text);
    if digest != sha256 {
        problems.push(format!("checksum {digest} differs from pinned {sha256}"));
    }
    let raw: std::result::Result<ExperimentConfig, _> = serde_json::from_str(text);
    match raw {
        Err(e) => problems.push(format!("parse error: {e}")),
        Ok(cfg) => {
            let geometries: Vec<&GeometrySpec> = match &cfg.experiment {
                Experiment::AssociationPc(s) => s.geometries.iter().collect(),
                Experiment::Tracking(s) => vec![&s.geometry],
                _ => Vec::new(),
            };
            for g in geometries {
                let Some(pname) = &g.preset else {
                    problems.push("preset geometries must be named".into());
                    continue;
                };
                match RadarGeometry::by_name(pname) {
                    Err(e) => problems.push(e.to_string()),
                    Ok(reference) => {
                        let check =
                            |role: &str,
                             given: &[[f64; 2]],
                             want: &[Position],
                             problems: &mut Vec<String>| {
                                if given.len() != want.len() {
                                    problems.push(format!(
                                        "{pname}: {} {role} nodes, expected {}",
                                        given.len(),
                                        want.len()
                                    ));
                                    return;
                                }
                                for (k, (g, w)) in given.iter().zip(want).enumerate() {
                                    if g[0] != w.x || g[1] != w.y {
                                        problems.push(format!(
                                            "{pname}: {role}{} = ({}, {}), expected ({}, {})",
                                            k + 1,
                                            g[0],
                                            g[1],
                                            w.x,
                                            w.y
                                        ));
                                    }
                                }
                            };
                        check("Tx", &g.tx, &reference.tx, &mut problems);
                        check("Rx", &g.rx, &reference.rx, &mut problems);
                    }
                }
            }
            let mut cfg = cfg;
            if let Err(e) = cfg.validate() {
                problems.push(e.to_string());
            }
        }
    }
    PresetCheck {
        name: name.into(),
        problems,
    }
}

/// Check every shipped preset.
pub fn verify_presets() -> Vec<PresetCheck> {
    PRESETS
        .iter()
        .map(|p| verify_preset_text(p.name, p.text, p.sha256))
        .collect()
}
