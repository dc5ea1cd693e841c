//! Output artifacts: CSV tables, PGM renderings, and the JSON run manifest.
//!
//! Every writer is deterministic: floats go through Rust's shortest
//! round-trip formatting and no timestamps are recorded, so a rerun with the
//! same config and seed reproduces identical bytes.

use crate::config::RunConfig;
use crate::error::Result;
use crate::fitting::{DoubleExpFit, ResolutionPoint, TransientCurve};
use crate::scan::{GroundTruthMap, HeatMapImage};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Heat-map CSV: x_um, y_um, dT_mK, stderr_mK, noise_db, valid.
pub fn write_image_csv(path: &Path, image: &HeatMapImage) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "x_um,y_um,dT_mK,stderr_mK,noise_db,valid")?;
    for iy in 0..image.scan.ny {
        for ix in 0..image.scan.nx {
            let (x, y) = image.scan.pixel_center(ix, iy);
            match image.pixel(ix, iy) {
                Some(p) => writeln!(
                    out,
                    "{},{},{},{},{},1",
                    x * 1e6,
                    y * 1e6,
                    p.delta_t * 1e3,
                    p.std_error * 1e3,
                    p.noise_rel_shot_db
                )?,
                None => writeln!(out, "{},{},,,,0", x * 1e6, y * 1e6)?,
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Ground-truth CSV alongside an image: x_um, y_um, dT_mK, valid.
pub fn write_ground_truth_csv(
    path: &Path,
    image: &HeatMapImage,
    truth: &GroundTruthMap,
) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "x_um,y_um,dT_mK,valid")?;
    for iy in 0..image.scan.ny {
        for ix in 0..image.scan.nx {
            let (x, y) = image.scan.pixel_center(ix, iy);
            let i = iy * image.scan.nx + ix;
            if truth.valid[i] {
                writeln!(out, "{},{},{},1", x * 1e6, y * 1e6, truth.delta_t.get(ix, iy) * 1e3)?;
            } else {
                writeln!(out, "{},{},,0", x * 1e6, y * 1e6)?;
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// 16-bit binary PGM (P5). Valid pixels map linearly from [0, max_mK] to
/// [0, 65535]; invalid pixels render as 0. The scale is recorded in a
/// comment line and returned for the manifest.
pub fn write_image_pgm(path: &Path, image: &HeatMapImage) -> Result<f64> {
    let mut max_mk = 0.0f64;
    for p in image.pixels.iter().flatten() {
        max_mk = max_mk.max(p.delta_t * 1e3);
    }
    if max_mk <= 0.0 {
        max_mk = 1.0;
    }
    let mut out = Vec::new();
    writeln!(out, "P5")?;
    writeln!(out, "# qthermo heat map: gray = dT_mK / {max_mk} * 65535, invalid pixels = 0")?;
    writeln!(out, "{} {}", image.scan.nx, image.scan.ny)?;
    writeln!(out, "65535")?;
    for iy in 0..image.scan.ny {
        for ix in 0..image.scan.nx {
            let v = match image.pixel(ix, iy) {
                Some(p) => {
                    let scaled = (p.delta_t * 1e3 / max_mk * 65535.0).round();
                    scaled.clamp(0.0, 65535.0) as u16
                }
                None => 0,
            };
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(max_mk)
}

/// Variance surface CSV for the squeezing optimizer sweeps.
pub fn write_surface_csv(
    path: &Path,
    columns: (&str, &str),
    rows: &[(f64, f64, f64)],
) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{},{},variance_db", columns.0, columns.1)?;
    for (a, b, v) in rows {
        writeln!(out, "{a},{b},{v}")?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Optimizer ridge CSV: gain, eta_c_opt, variance_db.
pub fn write_ridge_csv(path: &Path, rows: &[(f64, f64, f64)]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "gain,eta_c_opt,variance_db")?;
    for (g, e, v) in rows {
        writeln!(out, "{g},{e},{v}")?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Noise spectrum CSV: frequency_hz, relative_noise_db.
pub fn write_spectrum_csv(path: &Path, spectrum: &[(f64, f64)]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "frequency_hz,relative_noise_db")?;
    for (f, db) in spectrum {
        writeln!(out, "{f},{db}")?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Resolution-vs-averaging CSV.
pub fn write_resolution_csv(path: &Path, points: &[ResolutionPoint]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "requested_duration_s,actual_duration_s,n_cycles,delta_t_std_mK")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{}",
            p.requested_duration,
            p.actual_duration,
            p.n_cycles,
            p.delta_t_std * 1e3
        )?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Transient curve CSV: time_us, dT_mK, band_mK.
pub fn write_curve_csv(path: &Path, curve: &TransientCurve) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "time_us,dT_mK,band_mK")?;
    for i in 0..curve.times.len() {
        writeln!(
            out,
            "{},{},{}",
            curve.times[i] * 1e6,
            curve.dt_mean[i] * 1e3,
            curve.dt_band[i] * 1e3
        )?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// One fit row per position/phase.
pub struct FitRow {
    pub position_id: String,
    pub phase: String,
    pub fit: DoubleExpFit,
}

pub fn write_fits_csv(path: &Path, rows: &[FitRow]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(
        out,
        "position,phase,a0_K,a1_K,tau1_s,a2_K,tau2_s,residual_rms_K,converged,n_iterations"
    )?;
    for r in rows {
        let f = &r.fit;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.position_id,
            r.phase,
            f.a0,
            f.a1,
            f.tau1,
            f.a2,
            f.tau2,
            f.residual_rms,
            f.converged,
            f.n_iterations
        )?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Intra-cycle variance CSV: time_us, variance_db.
pub fn write_variance_csv(path: &Path, rows: &[(f64, f64)]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "time_us,variance_db")?;
    for (t, db) in rows {
        writeln!(out, "{},{}", t * 1e6, db)?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Machine-readable run record. Embeds the resolved config so the manifest
/// itself can be fed back through `--config` for a byte-identical rerun.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub command: String,
    pub config: RunConfig,
    /// SHA-256 of the canonical serialized config.
    pub config_hash: String,
    pub seed: u64,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acquisition: Option<AcquisitionRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

#[derive(Debug, Serialize)]
pub struct AcquisitionRecord {
    pub total_time_s: f64,
    pub predicted_delta_t_std_mk: f64,
    pub dwell_cycles: usize,
    pub thermal_warmup_cycles: usize,
    pub thermal_converged_at: Option<usize>,
    pub ground_truth_argmax_px: Option<(usize, usize)>,
}

pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        RunManifest {
            manifest_version: 1,
            command: command.to_string(),
            config_hash: config_hash(config),
            config: config.clone(),
            seed: config.seed,
            outputs: Vec::new(),
            acquisition: None,
            warnings: Vec::new(),
            extra: None,
        }
    }

    pub fn record_output(&mut self, path: &Path) {
        if let Some(name) = path.file_name() {
            self.outputs.push(name.to_string_lossy().into_owned());
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text)?;
        Ok(path)
    }
}
