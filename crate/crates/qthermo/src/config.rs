//! Run configuration: a versioned JSON schema plus the shipped scene and
//! source presets. Every command validates its config fully before touching
//! the filesystem.

use crate::error::{Error, Result};
use crate::scan::{DetectionConfig, ScanConfig};
use crate::source::{FwmParams, SourceMode};
use crate::thermal::{DriveWaveform, Material, Region, TerminalAxis, ThermalScene};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const CONFIG_VERSION: u32 = 1;

const PRESET_AL_BRIDGE: &str = include_str!("../presets/al_bridge.json");
const PRESET_NB_CPW: &str = include_str!("../presets/nb_cpw.json");
const PRESET_PAPER_MATCHED: &str = include_str!("../presets/paper_matched.json");

/// Geometry of the patterned film, evaluated at cell centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneGeometry {
    /// Wire along x with narrowed bridge segments (the hot spots).
    BridgedWire {
        wire_width_um: f64,
        bridges: Vec<BridgeSpec>,
    },
    /// Coplanar waveguide along x: center strip between two ground planes.
    Cpw {
        strip_width_um: f64,
        gap_um: f64,
        ground_width_um: f64,
    },
    /// Unpatterned film covering the whole window.
    FullSheet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeSpec {
    pub center_x_um: f64,
    pub width_um: f64,
    pub length_um: f64,
}

/// Declarative scene description as shipped in preset files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub name: String,
    pub window_um: [f64; 2],
    pub cell_um: f64,
    pub geometry: SceneGeometry,
    pub metal: Material,
    pub oxide: Material,
    pub sheet_resistance_ohm_sq: f64,
    pub sink_conductance_w_m2k: f64,
    #[serde(default = "default_sink_temperature")]
    pub sink_temperature_k: f64,
    #[serde(default)]
    pub terminal_axis: TerminalAxis,
    #[serde(default)]
    pub vertical_conductance_w_m2k: Option<f64>,
    /// Free-form provenance notes carried by preset files.
    #[serde(default)]
    pub notes: Option<serde_json::Value>,
}

fn default_sink_temperature() -> f64 {
    295.0
}

impl SceneSpec {
    pub fn build(&self) -> Result<ThermalScene> {
        if !(self.cell_um > 0.0) {
            return Err(Error::config("scene.cell_um must be > 0"));
        }
        let cell = self.cell_um * 1e-6;
        let nx = (self.window_um[0] / self.cell_um).round() as usize;
        let ny = (self.window_um[1] / self.cell_um).round() as usize;
        if nx < 4 || ny < 4 {
            return Err(Error::config("scene.window_um must span at least 4 cells per axis"));
        }
        let mut mask = vec![Region::Substrate; nx * ny];
        let x_of = |ix: usize| (ix as f64 + 0.5 - nx as f64 / 2.0) * self.cell_um;
        let y_of = |iy: usize| (iy as f64 + 0.5 - ny as f64 / 2.0) * self.cell_um;
        for iy in 0..ny {
            let y = y_of(iy);
            for ix in 0..nx {
                let x = x_of(ix);
                let metal = match &self.geometry {
                    SceneGeometry::BridgedWire { wire_width_um, bridges } => {
                        let mut in_bridge_zone = false;
                        let mut on_bridge_metal = false;
                        for b in bridges {
                            if (x - b.center_x_um).abs() <= b.length_um / 2.0 {
                                in_bridge_zone = true;
                                if y.abs() <= b.width_um / 2.0 {
                                    on_bridge_metal = true;
                                }
                            }
                        }
                        if in_bridge_zone {
                            on_bridge_metal
                        } else {
                            y.abs() <= wire_width_um / 2.0
                        }
                    }
                    SceneGeometry::Cpw { strip_width_um, gap_um, ground_width_um } => {
                        let half_strip = strip_width_um / 2.0;
                        let a = y.abs();
                        a <= half_strip
                            || (a > half_strip + gap_um
                                && a <= half_strip + gap_um + ground_width_um)
                    }
                    SceneGeometry::FullSheet => true,
                };
                if metal {
                    mask[iy * nx + ix] = Region::Metal;
                }
            }
        }
        let scene = ThermalScene {
            nx,
            ny,
            cell_size: cell,
            mask,
            metal: self.metal,
            oxide: self.oxide,
            sink_temperature: self.sink_temperature_k,
            sheet_resistance: vec![self.sheet_resistance_ohm_sq; nx * ny],
            sink_conductance: self.sink_conductance_w_m2k,
            vertical_conductance: self.vertical_conductance_w_m2k,
            clamped: Vec::new(),
            terminal_axis: self.terminal_axis,
            name: self.name.clone(),
        };
        scene.validate()?;
        Ok(scene)
    }
}

/// Scene selector: shipped preset by name or inline spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRef {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub inline: Option<SceneSpec>,
}

impl SceneRef {
    pub fn resolve(&self) -> Result<SceneSpec> {
        match (&self.preset, &self.inline) {
            (Some(name), None) => scene_preset(name),
            (None, Some(spec)) => Ok(spec.clone()),
            _ => Err(Error::config("scene: give exactly one of `preset` or `inline`")),
        }
    }
}

/// Source selector: preset by name or explicit parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceRef {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub params: Option<FwmParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourcePresetFile {
    name: String,
    params: FwmParams,
    #[serde(default)]
    notes: Option<serde_json::Value>,
}

impl SourceRef {
    pub fn resolve(&self) -> Result<FwmParams> {
        let params = match (&self.preset, &self.params) {
            (Some(name), None) => source_preset(name)?,
            (None, Some(p)) => *p,
            _ => return Err(Error::config("source: give exactly one of `preset` or `params`")),
        };
        params.validate()?;
        Ok(params)
    }
}

pub fn scene_preset(name: &str) -> Result<SceneSpec> {
    let text = match name {
        "al_bridge" => PRESET_AL_BRIDGE,
        "nb_cpw" => PRESET_NB_CPW,
        other => {
            return Err(Error::config(format!(
                "scene.preset: unknown preset `{other}` (available: al_bridge, nb_cpw)"
            )))
        }
    };
    Ok(serde_json::from_str(text)?)
}

pub fn source_preset(name: &str) -> Result<FwmParams> {
    let text = match name {
        "paper_matched" => PRESET_PAPER_MATCHED,
        other => {
            return Err(Error::config(format!(
                "source.preset: unknown preset `{other}` (available: paper_matched)"
            )))
        }
    };
    let file: SourcePresetFile = serde_json::from_str(text)?;
    Ok(file.params)
}

/// Detection section with unit-suffixed fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    #[serde(default = "default_detector_efficiency")]
    pub detector_efficiency: f64,
    #[serde(default = "default_gate_fraction")]
    pub gate_fraction: f64,
    #[serde(default = "default_bins_per_cycle")]
    pub bins_per_cycle: usize,
    #[serde(default = "default_spot_diameter_um")]
    pub spot_diameter_um: f64,
    #[serde(default = "default_spot_power_w")]
    pub spot_power_w: f64,
}

fn default_detector_efficiency() -> f64 {
    0.95
}
fn default_gate_fraction() -> f64 {
    crate::detection::DEFAULT_GATE_FRACTION
}
fn default_bins_per_cycle() -> usize {
    250
}
fn default_spot_diameter_um() -> f64 {
    25.0
}
fn default_spot_power_w() -> f64 {
    25e-6
}

impl Default for DetectionSection {
    fn default() -> Self {
        DetectionSection {
            detector_efficiency: default_detector_efficiency(),
            gate_fraction: default_gate_fraction(),
            bins_per_cycle: default_bins_per_cycle(),
            spot_diameter_um: default_spot_diameter_um(),
            spot_power_w: default_spot_power_w(),
        }
    }
}

impl DetectionSection {
    pub fn build(&self) -> Result<DetectionConfig> {
        let cfg = DetectionConfig {
            detector_efficiency: self.detector_efficiency,
            gate_fraction: self.gate_fraction,
            bins_per_cycle: self.bins_per_cycle,
            spot_diameter: self.spot_diameter_um * 1e-6,
            spot_power: self.spot_power_w,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub nx: usize,
    pub ny: usize,
    pub step_um: f64,
    pub origin_um: [f64; 2],
    pub dwell_s: f64,
    #[serde(default = "default_move_time")]
    pub move_time_s: f64,
    #[serde(default = "default_source_mode")]
    pub source_mode: SourceMode,
}

fn default_move_time() -> f64 {
    0.3e-3
}
fn default_source_mode() -> SourceMode {
    SourceMode::Squeezed
}

impl ScanSection {
    pub fn build(&self) -> Result<ScanConfig> {
        let cfg = ScanConfig {
            nx: self.nx,
            ny: self.ny,
            step: self.step_um * 1e-6,
            origin: (self.origin_um[0] * 1e-6, self.origin_um[1] * 1e-6),
            dwell: self.dwell_s,
            move_time: self.move_time_s,
            source_mode: self.source_mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransientSection {
    pub positions_um: Vec<[f64; 2]>,
    #[serde(default = "default_transient_cycles")]
    pub n_cycles: usize,
    #[serde(default = "default_source_mode")]
    pub source_mode: SourceMode,
}

fn default_transient_cycles() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default = "default_corner")]
    pub technical_corner_hz: f64,
    #[serde(default = "default_f_max")]
    pub f_max_hz: f64,
    #[serde(default = "default_durations")]
    pub durations_s: Vec<f64>,
    #[serde(default = "default_repeats")]
    pub n_repeats: usize,
}

fn default_corner() -> f64 {
    1e3
}
fn default_f_max() -> f64 {
    2e6
}
fn default_durations() -> Vec<f64> {
    vec![1e-5, 1e-4, 1e-3, 1e-2, 5e-2]
}
fn default_repeats() -> usize {
    100
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            technical_corner_hz: default_corner(),
            f_max_hz: default_f_max(),
            durations_s: default_durations(),
            n_repeats: default_repeats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    #[serde(default = "default_eta_p")]
    pub eta_p: f64,
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default = "default_gain_min")]
    pub gain_min: f64,
    #[serde(default = "default_gain_max")]
    pub gain_max: f64,
    #[serde(default = "default_gain_steps")]
    pub gain_steps: usize,
    #[serde(default = "default_eta_steps")]
    pub eta_steps: usize,
}

fn default_eta_p() -> f64 {
    0.75
}
fn default_gain() -> f64 {
    5.0
}
fn default_gain_min() -> f64 {
    1.0
}
fn default_gain_max() -> f64 {
    10.0
}
fn default_gain_steps() -> usize {
    91
}
fn default_eta_steps() -> usize {
    200
}

impl Default for OptimizeSection {
    fn default() -> Self {
        OptimizeSection {
            eta_p: default_eta_p(),
            gain: default_gain(),
            gain_min: default_gain_min(),
            gain_max: default_gain_max(),
            gain_steps: default_gain_steps(),
            eta_steps: default_eta_steps(),
        }
    }
}

/// Top-level run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub scene: Option<SceneRef>,
    #[serde(default)]
    pub source: Option<SourceRef>,
    #[serde(default)]
    pub detection: DetectionSection,
    #[serde(default)]
    pub drive: Option<DriveWaveform>,
    #[serde(default)]
    pub scan: Option<ScanSection>,
    #[serde(default)]
    pub transient: Option<TransientSection>,
    #[serde(default)]
    pub noise: Option<NoiseSection>,
    #[serde(default)]
    pub optimize: Option<OptimizeSection>,
}

impl RunConfig {
    pub fn validate_version(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "version: expected {CONFIG_VERSION}, got {}",
                self.version
            )));
        }
        Ok(())
    }

    pub fn require_scene(&self) -> Result<ThermalScene> {
        self.scene
            .as_ref()
            .ok_or_else(|| Error::config("missing required section `scene`"))?
            .resolve()?
            .build()
    }

    pub fn require_source(&self) -> Result<FwmParams> {
        self.source
            .as_ref()
            .ok_or_else(|| Error::config("missing required section `source`"))?
            .resolve()
    }

    pub fn require_drive(&self) -> Result<DriveWaveform> {
        let drive = self
            .drive
            .ok_or_else(|| Error::config("missing required section `drive`"))?;
        drive.validate()?;
        Ok(drive)
    }

    pub fn require_scan(&self) -> Result<ScanConfig> {
        self.scan
            .as_ref()
            .ok_or_else(|| Error::config("missing required section `scan`"))?
            .build()
    }

    pub fn require_transient(&self) -> Result<TransientSection> {
        let t = self
            .transient
            .clone()
            .ok_or_else(|| Error::config("missing required section `transient`"))?;
        if t.positions_um.is_empty() {
            return Err(Error::config("transient.positions_um must be non-empty"));
        }
        if t.n_cycles < 10 {
            return Err(Error::config("transient.n_cycles must be >= 10"));
        }
        Ok(t)
    }
}

/// Re-runnable manifest wrapper: a manifest file embeds the resolved config,
/// so pointing `--config` at a manifest reproduces the run.
#[derive(Debug, Deserialize)]
struct ManifestEnvelope {
    config: RunConfig,
}

/// Load a run config from a config file or a previously written manifest.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config `{}`: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("config is not valid JSON: {e}")))?;
    let config: RunConfig = if value.get("manifest_version").is_some() {
        let envelope: ManifestEnvelope = serde_json::from_value(value)
            .map_err(|e| Error::config(format!("manifest: {e}")))?;
        envelope.config
    } else {
        serde_json::from_value(value).map_err(|e| Error::config(format!("{e}")))?
    };
    config.validate_version()?;
    Ok(config)
}
