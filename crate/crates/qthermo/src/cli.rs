//! The five reproduction workflows behind the `qthermo` binary.
//!
//! Each command loads and fully validates its config before creating any
//! output, runs deterministically given (config, seed), and finishes by
//! writing a manifest that can itself be fed back through `--config` for a
//! byte-identical rerun. Exit codes: 0 success, 2 config/input error,
//! 3 numerical non-convergence (partial outputs flagged in the manifest).

use crate::config::{load_config, OptimizeSection, RunConfig};
use crate::detection::ProbeSpot;
use crate::error::{Error, Result};
use crate::fitting::{
    cycle_resolved_transient, fit_double_exponential, fit_double_exponential_series,
    log_log_slope, resolution_vs_averaging, variance_transient, Phase, ZeroSignalPipeline,
};
use crate::report::{
    self, AcquisitionRecord, FitRow, RunManifest,
};
use crate::scan::{acquire_image, acquisition_budget, ImagingSession, SensitivityModel};
use crate::source::{
    noise_spectrum, optimize_conjugate_loss, squeezing_db, variance_with_loss, FwmParams,
};
use std::path::{Path, PathBuf};

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

fn apply_overrides(config: &mut RunConfig, overrides: &Overrides) {
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(out) = &overrides.out {
        config.output_dir = out.clone();
    }
    if let Some(threads) = overrides.threads {
        config.threads = threads;
    }
}

fn with_thread_pool<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("threads: {e}")))?;
    pool.install(f)
}

/// Run one subcommand end to end; returns the process exit code.
pub fn run(command: &str, config_path: &Path, overrides: &Overrides) -> Result<i32> {
    let mut config = load_config(config_path)?;
    apply_overrides(&mut config, overrides);
    let threads = config.threads;
    match command {
        "optimize" => with_thread_pool(threads, || cmd_optimize(&config)),
        "scan" => with_thread_pool(threads, || cmd_scan(&config)),
        "transient" => with_thread_pool(threads, || cmd_transient(&config)),
        "noise" => with_thread_pool(threads, || cmd_noise(&config)),
        other => Err(Error::config(format!("unknown command `{other}`"))),
    }
}

fn prepare_output_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Squeezing surfaces and the conjugate-loss optimizer ridge.
pub fn cmd_optimize(config: &RunConfig) -> Result<i32> {
    config.validate_version()?;
    let opt = config.optimize.clone().unwrap_or_default();
    validate_optimize(&opt)?;
    let dir = prepare_output_dir(config)?;
    let mut manifest = RunManifest::new("optimize", config);

    let gains: Vec<f64> = linspace(opt.gain_min, opt.gain_max, opt.gain_steps);
    let etas: Vec<f64> = (1..=opt.eta_steps)
        .map(|i| i as f64 / opt.eta_steps as f64)
        .collect();

    // Squeezing vs (gain, conjugate loss) at fixed probe loss.
    let mut surface_a = Vec::with_capacity(gains.len() * etas.len());
    for &g in &gains {
        for &ec in &etas {
            let v = variance_with_loss(&FwmParams::new(g, opt.eta_p, ec, 1.0))?;
            surface_a.push((g, ec, squeezing_db(v)?));
        }
    }
    let path_a = dir.join("conjugate_loss_surface.csv");
    report::write_surface_csv(&path_a, ("gain", "eta_c"), &surface_a)?;
    manifest.record_output(&path_a);

    // Squeezing vs (probe loss, conjugate loss) at fixed gain.
    let mut surface_b = Vec::with_capacity(etas.len() * etas.len());
    for &ep in &etas {
        for &ec in &etas {
            let v = variance_with_loss(&FwmParams::new(opt.gain, ep, ec, 1.0))?;
            surface_b.push((ep, ec, squeezing_db(v)?));
        }
    }
    let path_b = dir.join("loss_balance_surface.csv");
    report::write_surface_csv(&path_b, ("eta_p", "eta_c"), &surface_b)?;
    manifest.record_output(&path_b);

    // Optimal conjugate transmission per gain.
    let mut ridge = Vec::with_capacity(gains.len());
    for &g in &gains {
        let (ec, v) = optimize_conjugate_loss(g, opt.eta_p)?;
        ridge.push((g, ec, squeezing_db(v)?));
    }
    let path_r = dir.join("optimal_ridge.csv");
    report::write_ridge_csv(&path_r, &ridge)?;
    manifest.record_output(&path_r);

    let path_m = manifest.write(&dir)?;
    let _ = path_m;
    Ok(0)
}

fn validate_optimize(opt: &OptimizeSection) -> Result<()> {
    if !(opt.eta_p > 0.0 && opt.eta_p <= 1.0) {
        return Err(Error::config("optimize.eta_p must lie in (0, 1]"));
    }
    if opt.gain < 1.0 || opt.gain_min < 1.0 || opt.gain_max <= opt.gain_min {
        return Err(Error::config("optimize gain range must satisfy 1 <= gain_min < gain_max"));
    }
    if opt.gain_steps < 2 || opt.eta_steps < 2 {
        return Err(Error::config("optimize.gain_steps and eta_steps must be >= 2"));
    }
    Ok(())
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Raster-scan heat map with PGM rendering and ground truth.
pub fn cmd_scan(config: &RunConfig) -> Result<i32> {
    config.validate_version()?;
    let scene = config.require_scene()?;
    let source = config.require_source()?;
    let drive = config.require_drive()?;
    let scan = config.require_scan()?;
    let detection = config.detection.build()?;
    let dir = prepare_output_dir(config)?;
    let mut manifest = RunManifest::new("scan", config);

    let session = ImagingSession::prepare(scene, drive, detection)?;
    if session.thermal_converged_at.is_none() {
        manifest.warnings.push(format!(
            "thermal drive did not reach the periodic steady state within {} warm-up cycles",
            session.warmup_cycles
        ));
    }
    let image = acquire_image(&session, &scan, &source, config.seed)?;
    let truth = session.ground_truth(&scan)?;
    let model = SensitivityModel {
        source,
        mode: scan.source_mode,
        detection,
        modulation_frequency: drive.modulation_frequency,
        duty: drive.duty,
        c_tr: session.scene.metal.c_tr,
    };
    let (total_time, predicted) = acquisition_budget(&scan, &model)?;

    let path_csv = dir.join("heat_map.csv");
    report::write_image_csv(&path_csv, &image)?;
    manifest.record_output(&path_csv);
    let path_pgm = dir.join("heat_map.pgm");
    let pgm_scale = report::write_image_pgm(&path_pgm, &image)?;
    manifest.record_output(&path_pgm);
    let path_truth = dir.join("ground_truth.csv");
    report::write_ground_truth_csv(&path_truth, &image, &truth)?;
    manifest.record_output(&path_truth);

    manifest.acquisition = Some(AcquisitionRecord {
        total_time_s: total_time,
        predicted_delta_t_std_mk: predicted * 1e3,
        dwell_cycles: session.dwell_cycles(&scan)?,
        thermal_warmup_cycles: session.warmup_cycles,
        thermal_converged_at: session.thermal_converged_at,
        ground_truth_argmax_px: Some(truth.delta_t.argmax()),
    });
    manifest.extra = Some(serde_json::json!({ "pgm_scale_max_mk": pgm_scale }));
    manifest.write(&dir)?;
    Ok(if session.thermal_converged_at.is_none() { 3 } else { 0 })
}

/// Cycle-resolved transients, double-exponential fits, and variance insets
/// for the configured probe positions.
pub fn cmd_transient(config: &RunConfig) -> Result<i32> {
    config.validate_version()?;
    let scene = config.require_scene()?;
    let source = config.require_source()?;
    let drive = config.require_drive()?;
    let transient = config.require_transient()?;
    let detection = config.detection.build()?;
    let dir = prepare_output_dir(config)?;
    let mut manifest = RunManifest::new("transient", config);

    let session = ImagingSession::prepare(scene, drive, detection)?;
    if session.thermal_converged_at.is_none() {
        manifest.warnings.push("thermal drive did not reach the periodic steady state".into());
    }
    let mut fit_rows = Vec::new();
    let mut all_converged = true;
    for (i, pos_um) in transient.positions_um.iter().enumerate() {
        let center = (pos_um[0] * 1e-6, pos_um[1] * 1e-6);
        let trace = session
            .pixel_trace(
                center,
                transient.n_cycles,
                &source,
                transient.source_mode,
                config.seed,
                i,
            )?
            .ok_or_else(|| {
                Error::config(format!(
                    "transient.positions_um[{i}]: spot is fully off the device"
                ))
            })?;
        for phase in [Phase::Heating, Phase::Cooling] {
            let curve = cycle_resolved_transient(&trace, &session.scene.metal, phase)?;
            let name = match phase {
                Phase::Heating => format!("pos{i}_heating.csv"),
                Phase::Cooling => format!("pos{i}_cooling.csv"),
            };
            let path = dir.join(&name);
            report::write_curve_csv(&path, &curve)?;
            manifest.record_output(&path);
            let fit = fit_double_exponential(&curve)?;
            all_converged &= fit.converged;
            fit_rows.push(FitRow {
                position_id: format!("pos{i}"),
                phase: match phase {
                    Phase::Heating => "heating".into(),
                    Phase::Cooling => "cooling".into(),
                },
                fit,
            });
        }
        if transient.n_cycles >= 100 {
            let vt = variance_transient(&trace)?;
            let path = dir.join(format!("pos{i}_variance.csv"));
            report::write_variance_csv(&path, &vt)?;
            manifest.record_output(&path);
        }
    }
    let path_fits = dir.join("fits.csv");
    report::write_fits_csv(&path_fits, &fit_rows)?;
    manifest.record_output(&path_fits);
    if !all_converged {
        manifest.warnings.push("one or more fits did not converge".into());
    }
    manifest.acquisition = Some(AcquisitionRecord {
        total_time_s: transient.n_cycles as f64 * session.drive.period()
            * transient.positions_um.len() as f64,
        predicted_delta_t_std_mk: 0.0,
        dwell_cycles: transient.n_cycles,
        thermal_warmup_cycles: session.warmup_cycles,
        thermal_converged_at: session.thermal_converged_at,
        ground_truth_argmax_px: None,
    });
    manifest.write(&dir)?;
    Ok(if session.thermal_converged_at.is_none() || !all_converged { 3 } else { 0 })
}

/// Noise spectrum plus the resolution-vs-averaging table.
pub fn cmd_noise(config: &RunConfig) -> Result<i32> {
    config.validate_version()?;
    let source = config.require_source()?;
    let scene = config.require_scene()?;
    let drive = config.require_drive()?;
    let noise = config.noise.clone().unwrap_or_default();
    let detection = config.detection.build()?;
    if noise.n_repeats < 8 {
        return Err(Error::config("noise.n_repeats must be >= 8"));
    }
    let dir = prepare_output_dir(config)?;
    let mut manifest = RunManifest::new("noise", config);

    let spectrum = noise_spectrum(&source, noise.technical_corner_hz, noise.f_max_hz)?;
    let path_spec = dir.join("spectrum.csv");
    report::write_spectrum_csv(&path_spec, &spectrum)?;
    manifest.record_output(&path_spec);

    let pipeline = ZeroSignalPipeline {
        source,
        mode: crate::source::SourceMode::Squeezed,
        detector_efficiency: detection.detector_efficiency,
        modulation_frequency: drive.modulation_frequency,
        duty: drive.duty,
        bins_per_cycle: detection.bins_per_cycle,
        gate_fraction: detection.gate_fraction,
        base_reflectivity: scene.metal.base_reflectivity,
        c_tr: scene.metal.c_tr,
    };
    let points = resolution_vs_averaging(&pipeline, &noise.durations_s, noise.n_repeats, config.seed)?;
    let path_res = dir.join("resolution.csv");
    report::write_resolution_csv(&path_res, &points)?;
    manifest.record_output(&path_res);

    let slope = log_log_slope(&points);
    let floor_db = squeezing_db(crate::source::total_normalized_variance(&source)?)?;
    let path_sum = dir.join("summary.csv");
    {
        let mut out = Vec::new();
        use std::io::Write;
        writeln!(out, "quantity,value")?;
        writeln!(out, "log_log_slope,{slope}")?;
        writeln!(out, "squeezing_floor_db,{floor_db}")?;
        std::fs::write(&path_sum, out)?;
    }
    manifest.record_output(&path_sum);
    manifest.extra = Some(serde_json::json!({
        "log_log_slope": slope,
        "squeezing_floor_db": floor_db,
    }));
    manifest.write(&dir)?;
    Ok(0)
}

/// Standalone fitter for external or recorded transient curves.
///
/// Accepts the curve CSVs this tool writes (`time_us,dT_mK[,band_mK]`) or any
/// two-column numeric CSV with one header line.
pub fn cmd_fit(input: &Path, out_dir: &Path) -> Result<i32> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| Error::config(format!("cannot read input `{}`: {e}", input.display())))?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut header: Option<String> = None;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if header.is_none() {
            header = Some(trimmed.to_string());
            continue;
        }
        let mut fields = trimmed.split(',');
        let t: f64 = fields
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::Parse { line: lineno, message: format!("bad time value in `{trimmed}`") })?;
        let v: f64 = fields
            .next()
            .ok_or(Error::Parse { line: lineno, message: "missing value column".into() })?
            .trim()
            .parse()
            .map_err(|_| Error::Parse { line: lineno, message: format!("bad data value in `{trimmed}`") })?;
        times.push(t);
        values.push(v);
    }
    let header = header.ok_or(Error::Parse { line: 1, message: "empty input".into() })?;
    // Curve CSVs from this tool carry microseconds and millikelvin.
    let (t_scale, v_scale) = if header.starts_with("time_us") {
        (1e-6, if header.contains("dT_mK") { 1e-3 } else { 1.0 })
    } else {
        (1.0, 1.0)
    };
    for t in times.iter_mut() {
        *t *= t_scale;
    }
    for v in values.iter_mut() {
        *v *= v_scale;
    }
    let fit = fit_double_exponential_series(&times, &values)?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("fit.csv");
    report::write_fits_csv(
        &path,
        &[FitRow {
            position_id: input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            phase: "input".into(),
            fit,
        }],
    )?;
    Ok(if fit.converged { 0 } else { 3 })
}

/// Probe spot helper for command-level code and tests.
pub fn spot_from_detection(center: (f64, f64), detection: &crate::scan::DetectionConfig) -> ProbeSpot {
    ProbeSpot::new(center, detection.spot_diameter, detection.spot_power)
}
