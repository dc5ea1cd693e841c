//! From temperature fields to demodulated pixel estimates.
//!
//! Reflectivity tracks temperature linearly (dR/R = C_TR dT). The reflected
//! probe minus the directly detected conjugate forms the differential
//! photocurrent; hot/cold frame demodulation turns it into a per-pixel
//! reflectivity change with calibrated statistical uncertainty.

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::source::TwinBeamTrace;
use crate::thermal::{Material, Region, TemperatureField, ThermalCycle, ThermalScene};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Fraction of each half-cycle entering the demodulation means (the last
/// 60%, excluding the thermal settling transient).
pub const DEFAULT_GATE_FRACTION: f64 = 0.6;

/// Gaussian probe spot on the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpot {
    /// Center (x, y), m, in scene coordinates (window centered at 0).
    pub center: (f64, f64),
    /// 1/e^2 intensity diameter, m.
    pub diameter_1e2: f64,
    /// W at the sample.
    pub power_at_sample: f64,
    /// m; metadata only.
    pub wavelength: f64,
}

impl ProbeSpot {
    pub fn new(center: (f64, f64), diameter_1e2: f64, power_at_sample: f64) -> Self {
        ProbeSpot { center, diameter_1e2, power_at_sample, wavelength: 795e-9 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diameter_1e2 > 0.0) {
            return Err(Error::domain("spot diameter must be > 0"));
        }
        if self.power_at_sample < 0.0 {
            return Err(Error::domain("spot power must be >= 0"));
        }
        Ok(())
    }

    /// 1/e^2 intensity radius, m.
    pub fn waist_radius(&self) -> f64 {
        self.diameter_1e2 / 2.0
    }
}

/// dR/R for a film temperature change.
pub fn reflectivity_from_temperature(dt: f64, material: &Material) -> f64 {
    material.c_tr * dt
}

/// Fundamental reflectivity uncertainty of a shot-noise-limited measurement
/// with N detected photons.
pub fn shot_noise_limit(n_photons: f64) -> Result<f64> {
    if !(n_photons > 0.0) {
        return Err(Error::domain(format!("photon number must be > 0, got {n_photons}")));
    }
    Ok(1.0 / n_photons.sqrt())
}

/// Gaussian-intensity-weighted reflection of the spot over the scene:
/// `(effective_reflectivity, spot_weighted_film_dT)`.
///
/// Off-metal cells reflect nothing (light is scattered out of the detection
/// path), so a spot hanging off the device sees a reduced effective
/// reflectivity. Weights are normalized against the analytic Gaussian
/// integral, making window truncation a real loss as well.
pub fn effective_reflection(
    spot: &ProbeSpot,
    scene: &ThermalScene,
    field: &TemperatureField,
) -> Result<(f64, f64)> {
    spot.validate()?;
    let half_w = scene.nx as f64 * scene.cell_size / 2.0;
    let half_h = scene.ny as f64 * scene.cell_size / 2.0;
    if spot.center.0.abs() > half_w || spot.center.1.abs() > half_h {
        return Err(Error::domain("spot center lies outside the scene window"));
    }
    let w0 = spot.waist_radius();
    let cell_area = scene.cell_size * scene.cell_size;
    let norm = std::f64::consts::PI * w0 * w0 / 2.0;
    let mut metal_weight = 0.0;
    let mut weighted_dt = 0.0;
    let mut reflected = 0.0;
    for y in 0..scene.ny {
        let dy = scene.y_of(y) - spot.center.1;
        for x in 0..scene.nx {
            if scene.region(x, y) != Region::Metal {
                continue;
            }
            let dx = scene.x_of(x) - spot.center.0;
            let w = (-2.0 * (dx * dx + dy * dy) / (w0 * w0)).exp() * cell_area / norm;
            let dt = field.film_dt.get(x, y);
            metal_weight += w;
            weighted_dt += w * dt;
            reflected += w * scene.metal.base_reflectivity * (1.0 + scene.metal.c_tr * dt);
        }
    }
    if metal_weight < 1e-12 {
        return Err(Error::domain("spot is fully off the device"));
    }
    Ok((reflected, weighted_dt / metal_weight))
}

/// Hot/cold/transition classification of one sample bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameLabel {
    Hot,
    Cold,
    Transition,
}

/// Absolute effective reflectivity per bin, tiled from the drive cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectivitySeries {
    pub values: Vec<f64>,
    pub modulation_frequency: f64,
    pub duty: f64,
}

/// Per-bin reflectivity seen by the spot over `n_cycles` drive cycles.
pub fn reflectivity_series(
    cycle: &ThermalCycle,
    scene: &ThermalScene,
    spot: &ProbeSpot,
    n_cycles: usize,
) -> Result<ReflectivitySeries> {
    let spc = cycle.samples_per_cycle();
    let mut one_cycle = Vec::with_capacity(spc);
    for field in &cycle.fields {
        one_cycle.push(effective_reflection(spot, scene, field)?.0);
    }
    let mut values = Vec::with_capacity(spc * n_cycles);
    for _ in 0..n_cycles {
        values.extend_from_slice(&one_cycle);
    }
    Ok(ReflectivitySeries {
        values,
        modulation_frequency: 1.0 / cycle.period,
        duty: cycle.duty,
    })
}

/// Sampled differential photocurrent with frame markers.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorTrace {
    pub probe: Vec<f64>,
    pub conjugate: Vec<f64>,
    /// s
    pub bin_duration: f64,
    pub labels: Vec<FrameLabel>,
    /// Hz
    pub modulation_frequency: f64,
    pub duty: f64,
}

impl DetectorTrace {
    pub fn len(&self) -> usize {
        self.probe.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probe.is_empty()
    }

    pub fn differential(&self) -> Vec<f64> {
        self.probe.iter().zip(&self.conjugate).map(|(p, c)| p - c).collect()
    }

    /// Sample bins per modulation cycle; demodulation requires the sampling
    /// to be commensurate with the drive.
    pub fn bins_per_cycle(&self) -> Result<usize> {
        let ratio = 1.0 / (self.modulation_frequency * self.bin_duration);
        let rounded = ratio.round();
        if rounded < 2.0 || (ratio - rounded).abs() > 1e-6 * ratio {
            return Err(Error::domain(format!(
                "sampling is not commensurate with the drive ({ratio} bins/cycle)"
            )));
        }
        Ok(rounded as usize)
    }

    pub fn full_cycles(&self) -> Result<usize> {
        Ok(self.len() / self.bins_per_cycle()?)
    }
}

/// Frame labels for `n_bins` consecutive sample bins under the given drive.
pub fn frame_labels(n_bins: usize, bin_duration: f64, frequency: f64, duty: f64) -> Vec<FrameLabel> {
    (0..n_bins).map(|i| label_bin(i, bin_duration, frequency, duty)).collect()
}

/// Frame label of bin `i`: hot while the drive is on, transition for bins
/// straddling a switch instant.
fn label_bin(i: usize, bin_duration: f64, frequency: f64, duty: f64) -> FrameLabel {
    let period = 1.0 / frequency;
    let t0 = i as f64 * bin_duration;
    let cycle = (t0 / period).floor();
    let p0 = t0 / period - cycle;
    let p1 = p0 + bin_duration / period;
    let eps = 1e-9 * bin_duration / period;
    let straddles_duty = p0 < duty - eps && p1 > duty + eps;
    let straddles_wrap = p1 > 1.0 + eps && p0 < 1.0 - eps && duty > eps;
    if straddles_duty || straddles_wrap {
        return FrameLabel::Transition;
    }
    let center = 0.5 * (p0 + p1) % 1.0;
    if center < duty {
        FrameLabel::Hot
    } else {
        FrameLabel::Cold
    }
}

/// Modulate a twin-beam trace with the per-bin reflectivity, thin both beams
/// by the detector efficiency, and label frames from the drive phase.
///
/// The probe is scaled by R(t)/R0 where the calibration reflectivity R0 is
/// the cold-frame mean of the series; the absolute (static) reflection loss
/// is part of the source transmission `eta_p`.
pub fn synthesize_trace(
    twin: &TwinBeamTrace,
    series: &ReflectivitySeries,
    detector_efficiency: f64,
    seed: u64,
    stream: u64,
) -> Result<DetectorTrace> {
    if twin.len() != series.values.len() {
        return Err(Error::domain(format!(
            "reflectivity series has {} bins, trace has {}",
            series.values.len(),
            twin.len()
        )));
    }
    if !(0.0 < detector_efficiency && detector_efficiency <= 1.0) {
        return Err(Error::domain("detector efficiency must lie in (0, 1]"));
    }
    let labels: Vec<FrameLabel> = (0..twin.len())
        .map(|i| label_bin(i, twin.bin_duration, series.modulation_frequency, series.duty))
        .collect();
    let mut cold_sum = 0.0;
    let mut cold_n = 0usize;
    for (i, label) in labels.iter().enumerate() {
        if *label == FrameLabel::Cold {
            cold_sum += series.values[i];
            cold_n += 1;
        }
    }
    if cold_n == 0 {
        return Err(Error::domain("series contains no cold frames to calibrate against"));
    }
    let r0 = cold_sum / cold_n as f64;
    if !(r0 > 0.0) {
        return Err(Error::domain("calibration reflectivity is zero"));
    }

    let mut rng = stream_rng(seed, stream);
    let eta = detector_efficiency;
    let mut probe = Vec::with_capacity(twin.len());
    let mut conjugate = Vec::with_capacity(twin.len());
    for i in 0..twin.len() {
        let scaled = twin.probe_counts[i] * (series.values[i] / r0);
        probe.push(thin_counts(scaled, eta, &mut rng));
        conjugate.push(thin_counts(twin.conjugate_counts[i], eta, &mut rng));
    }
    Ok(DetectorTrace {
        probe,
        conjugate,
        bin_duration: twin.bin_duration,
        labels,
        modulation_frequency: series.modulation_frequency,
        duty: series.duty,
    })
}

#[inline]
fn thin_counts<R: Rng>(n: f64, eta: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    if eta >= 1.0 {
        return n;
    }
    (eta * n + (eta * (1.0 - eta) * n).sqrt() * z).max(0.0)
}

/// Per-pixel measurement product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelEstimate {
    pub delta_r_over_r: f64,
    /// K
    pub delta_t: f64,
    /// K; standard error of `delta_t` from the cycle-to-cycle scatter.
    pub std_error: f64,
    /// Measured estimator noise relative to the Poisson expectation, dB.
    pub noise_rel_shot_db: f64,
    pub n_cycles_averaged: usize,
}

/// Per-cycle demodulation context shared by the estimators.
pub struct Demodulation {
    /// One reflectivity-change estimate per full cycle.
    pub per_cycle: Vec<f64>,
    /// Normalizer: mean probe level over gated cold bins, counts/bin.
    pub mean_level: f64,
    /// Poisson variance expectation for one per-cycle estimate.
    pub poisson_variance: f64,
}

/// Gated hot-minus-cold estimates, one per cycle.
///
/// Within each half-frame the last `gate_fraction` of bins enter the means,
/// excluding the thermal settling transient.
pub fn demodulate_cycles(trace: &DetectorTrace, gate_fraction: f64) -> Result<Demodulation> {
    if !(0.0 < gate_fraction && gate_fraction <= 1.0) {
        return Err(Error::domain("gate_fraction must lie in (0, 1]"));
    }
    let bpc = trace.bins_per_cycle()?;
    let n_cycles = trace.len() / bpc;
    if n_cycles < 1 {
        return Err(Error::domain("trace holds less than one full cycle"));
    }
    // Gate masks are identical across cycles; build them once from the
    // first cycle's labels.
    let mut hot_bins: Vec<usize> = Vec::new();
    let mut cold_bins: Vec<usize> = Vec::new();
    for s in 0..bpc {
        match trace.labels[s] {
            FrameLabel::Hot => hot_bins.push(s),
            FrameLabel::Cold => cold_bins.push(s),
            FrameLabel::Transition => {}
        }
    }
    if hot_bins.is_empty() || cold_bins.is_empty() {
        return Err(Error::domain("trace lacks hot or cold frames"));
    }
    let keep = |bins: &[usize]| -> Vec<usize> {
        let k = ((bins.len() as f64 * gate_fraction).floor() as usize).max(1);
        bins[bins.len() - k..].to_vec()
    };
    let hot_gated = keep(&hot_bins);
    let cold_gated = keep(&cold_bins);

    let d = trace.differential();
    // Global normalizer: mean probe level over gated cold bins.
    let mut level_sum = 0.0;
    let mut mean_p = 0.0;
    let mut mean_c = 0.0;
    let mut n_level = 0usize;
    for cyc in 0..n_cycles {
        let base = cyc * bpc;
        for &s in &cold_gated {
            level_sum += trace.probe[base + s];
            n_level += 1;
        }
        for &s in hot_gated.iter().chain(&cold_gated) {
            mean_p += trace.probe[base + s];
            mean_c += trace.conjugate[base + s];
        }
    }
    let mean_level = level_sum / n_level as f64;
    if !(mean_level > 0.0) {
        return Err(Error::domain("probe level is zero; cannot normalize"));
    }
    let n_gated_total = (hot_gated.len() + cold_gated.len()) * n_cycles;
    mean_p /= n_gated_total as f64;
    mean_c /= n_gated_total as f64;

    let mut per_cycle = Vec::with_capacity(n_cycles);
    for cyc in 0..n_cycles {
        let base = cyc * bpc;
        let hot: f64 = hot_gated.iter().map(|&s| d[base + s]).sum::<f64>() / hot_gated.len() as f64;
        let cold: f64 =
            cold_gated.iter().map(|&s| d[base + s]).sum::<f64>() / cold_gated.len() as f64;
        per_cycle.push((hot - cold) / mean_level);
    }

    let poisson_variance = (mean_p + mean_c)
        * (1.0 / hot_gated.len() as f64 + 1.0 / cold_gated.len() as f64)
        / (mean_level * mean_level);

    Ok(Demodulation { per_cycle, mean_level, poisson_variance })
}

/// Average the per-cycle estimates into a pixel estimate with a
/// cycle-scatter standard error.
pub fn lock_in_demodulate(
    trace: &DetectorTrace,
    material: &Material,
    gate_fraction: f64,
) -> Result<PixelEstimate> {
    let demod = demodulate_cycles(trace, gate_fraction)?;
    let n = demod.per_cycle.len();
    if n < 2 {
        return Err(Error::domain(format!(
            "lock-in needs at least 2 full cycles, trace holds {n}"
        )));
    }
    let mean = demod.per_cycle.iter().sum::<f64>() / n as f64;
    let var = demod.per_cycle.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (n as f64 - 1.0);
    let std_error_rr = (var / n as f64).sqrt();
    let c_tr = material.c_tr;
    if c_tr == 0.0 {
        return Err(Error::domain("material has zero thermoreflective coefficient"));
    }
    let noise_rel_shot_db = if var > 0.0 && demod.poisson_variance > 0.0 {
        10.0 * (var / demod.poisson_variance).log10()
    } else {
        f64::NEG_INFINITY
    };
    Ok(PixelEstimate {
        delta_r_over_r: mean,
        delta_t: mean / c_tr,
        std_error: std_error_rr / c_tr.abs(),
        noise_rel_shot_db,
        n_cycles_averaged: n,
    })
}

/// Export as CSV with embedded metadata comments:
/// time_s, probe, conjugate, differential, frame.
pub fn trace_to_csv<W: Write>(trace: &DetectorTrace, mut out: W) -> Result<()> {
    writeln!(out, "# modulation_frequency_hz={}", trace.modulation_frequency)?;
    writeln!(out, "# duty={}", trace.duty)?;
    writeln!(out, "# bin_duration_s={}", trace.bin_duration)?;
    writeln!(out, "time_s,probe,conjugate,differential,frame")?;
    for i in 0..trace.len() {
        let t = i as f64 * trace.bin_duration;
        let frame = match trace.labels[i] {
            FrameLabel::Hot => "hot",
            FrameLabel::Cold => "cold",
            FrameLabel::Transition => "transition",
        };
        writeln!(
            out,
            "{},{},{},{},{}",
            t,
            trace.probe[i],
            trace.conjugate[i],
            trace.probe[i] - trace.conjugate[i],
            frame
        )?;
    }
    Ok(())
}

/// Re-import a trace written by [`trace_to_csv`]; parse failures carry the
/// offending 1-based line number.
pub fn trace_from_csv<R: BufRead>(input: R) -> Result<DetectorTrace> {
    let mut frequency = None;
    let mut duty = None;
    let mut bin_duration = None;
    let mut probe = Vec::new();
    let mut conjugate = Vec::new();
    let mut labels = Vec::new();
    let mut saw_header = false;
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let bad = |message: String| Error::Parse { line: lineno, message };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(meta) = trimmed.strip_prefix('#') {
            let mut parts = meta.trim().splitn(2, '=');
            let key = parts.next().unwrap_or("").trim();
            let value = parts.next().unwrap_or("").trim();
            let parsed: f64 = value
                .parse()
                .map_err(|_| bad(format!("metadata `{key}` is not a number: `{value}`")))?;
            match key {
                "modulation_frequency_hz" => frequency = Some(parsed),
                "duty" => duty = Some(parsed),
                "bin_duration_s" => bin_duration = Some(parsed),
                _ => {}
            }
            continue;
        }
        if !saw_header {
            if !trimmed.starts_with("time_s,") {
                return Err(bad("expected header `time_s,probe,conjugate,differential,frame`".into()));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 columns, found {}", fields.len())));
        }
        let p: f64 = fields[1].parse().map_err(|_| bad(format!("bad probe value `{}`", fields[1])))?;
        let c: f64 =
            fields[2].parse().map_err(|_| bad(format!("bad conjugate value `{}`", fields[2])))?;
        let label = match fields[4] {
            "hot" => FrameLabel::Hot,
            "cold" => FrameLabel::Cold,
            "transition" => FrameLabel::Transition,
            other => return Err(bad(format!("unknown frame label `{other}`"))),
        };
        probe.push(p);
        conjugate.push(c);
        labels.push(label);
    }
    let frequency =
        frequency.ok_or_else(|| Error::Parse { line: 1, message: "missing `# modulation_frequency_hz=` metadata".into() })?;
    let duty = duty.ok_or_else(|| Error::Parse { line: 1, message: "missing `# duty=` metadata".into() })?;
    let bin_duration = bin_duration
        .ok_or_else(|| Error::Parse { line: 1, message: "missing `# bin_duration_s=` metadata".into() })?;
    if probe.is_empty() {
        return Err(Error::Parse { line: 1, message: "trace holds no samples".into() });
    }
    Ok(DetectorTrace { probe, conjugate, bin_duration, labels, modulation_frequency: frequency, duty })
}
