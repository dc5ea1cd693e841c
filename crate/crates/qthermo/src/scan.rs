//! Raster-scan orchestration: run the full source -> thermal -> detection
//! pipeline per pixel and assemble heat-map images with uncertainty.

use crate::detection::{
    effective_reflection, frame_labels, lock_in_demodulate, reflectivity_series,
    synthesize_trace, FrameLabel, PixelEstimate, ProbeSpot,
};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::{pixel_detector_stream, pixel_source_stream};
use crate::source::{sample_pair, FwmParams, SourceMode};
use crate::thermal::{
    run_modulated, DriveWaveform, ThermalCycle, ThermalScene,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Raster-scan geometry and timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub nx: usize,
    pub ny: usize,
    /// m between pixel centers.
    pub step: f64,
    /// m; center of pixel (0, 0). The scan grows toward +x, +y.
    pub origin: (f64, f64),
    /// s per pixel.
    pub dwell: f64,
    /// s per pixel move.
    pub move_time: f64,
    pub source_mode: SourceMode,
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 1 || self.ny < 1 {
            return Err(Error::config("scan.nx and scan.ny must be >= 1"));
        }
        if !(self.step > 0.0) {
            return Err(Error::config("scan.step must be > 0"));
        }
        if !(self.dwell > 0.0) {
            return Err(Error::config("scan.dwell must be > 0"));
        }
        if self.move_time < 0.0 {
            return Err(Error::config("scan.move_time must be >= 0"));
        }
        Ok(())
    }

    pub fn pixel_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.0 + ix as f64 * self.step,
            self.origin.1 + iy as f64 * self.step,
        )
    }

    pub fn n_pixels(&self) -> usize {
        self.nx * self.ny
    }

    /// Total wall time: pixels * (dwell + move).
    pub fn total_time(&self) -> f64 {
        self.n_pixels() as f64 * (self.dwell + self.move_time)
    }
}

/// Detection-chain settings shared by every pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub detector_efficiency: f64,
    pub gate_fraction: f64,
    /// Sample bins per drive cycle (also the thermal sampling density).
    pub bins_per_cycle: usize,
    /// m
    pub spot_diameter: f64,
    /// W
    pub spot_power: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            detector_efficiency: 0.95,
            gate_fraction: crate::detection::DEFAULT_GATE_FRACTION,
            bins_per_cycle: 250,
            spot_diameter: 25e-6,
            spot_power: 25e-6,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.detector_efficiency && self.detector_efficiency <= 1.0) {
            return Err(Error::config("detection.detector_efficiency must lie in (0, 1]"));
        }
        if !(0.0 < self.gate_fraction && self.gate_fraction <= 1.0) {
            return Err(Error::config("detection.gate_fraction must lie in (0, 1]"));
        }
        if self.bins_per_cycle < 4 {
            return Err(Error::config("detection.bins_per_cycle must be >= 4"));
        }
        if !(self.spot_diameter > 0.0) {
            return Err(Error::config("detection.spot_diameter must be > 0"));
        }
        if self.spot_power < 0.0 {
            return Err(Error::config("detection.spot_power must be >= 0"));
        }
        Ok(())
    }
}

/// Prepared imaging context: the periodic thermal state is computed once per
/// (scene, drive) and reused across pixels, seeds and modalities.
#[derive(Debug, Clone)]
pub struct ImagingSession {
    pub scene: ThermalScene,
    pub drive: DriveWaveform,
    pub detection: DetectionConfig,
    pub cycle: ThermalCycle,
    /// Cycle at which the thermal warm-up reached the periodic steady state;
    /// None when it never did (flagged, not fatal).
    pub thermal_converged_at: Option<usize>,
    pub warmup_cycles: usize,
}

impl ImagingSession {
    /// Warm the drive to the periodic steady state and capture one cycle.
    ///
    /// The warm-up budget is five slow thermal time constants (film plus
    /// substrate capacitance against the sink conductance), at least 10
    /// cycles; the run stops early once successive cycles agree to 1 mK.
    pub fn prepare(
        scene: ThermalScene,
        drive: DriveWaveform,
        detection: DetectionConfig,
    ) -> Result<Self> {
        scene.validate()?;
        drive.validate()?;
        detection.validate()?;
        let tau_slow = if scene.sink_conductance > 0.0 {
            (scene.metal.areal_heat_capacity() + scene.oxide.areal_heat_capacity())
                / scene.sink_conductance
        } else {
            // Sink-free scenes never truly settle; fall back to a fixed budget.
            50.0 * drive.period()
        };
        let warmup = ((5.0 * tau_slow / drive.period()).ceil() as usize).clamp(10, 400);
        let run = run_modulated(&scene, &drive, warmup, detection.bins_per_cycle)?;
        Ok(ImagingSession {
            scene,
            drive,
            detection,
            cycle: run.cycle,
            thermal_converged_at: run.converged_at,
            warmup_cycles: run.cycles_run,
        })
    }

    /// Session around externally supplied cycle snapshots (replay or
    /// synthetic fields).
    pub fn from_cycle(
        scene: ThermalScene,
        drive: DriveWaveform,
        detection: DetectionConfig,
        cycle: ThermalCycle,
    ) -> Self {
        ImagingSession {
            scene,
            drive,
            detection,
            cycle,
            thermal_converged_at: Some(1),
            warmup_cycles: 0,
        }
    }

    fn spot_at(&self, center: (f64, f64)) -> ProbeSpot {
        ProbeSpot::new(center, self.detection.spot_diameter, self.detection.spot_power)
    }

    fn check_scan_bounds(&self, scan: &ScanConfig) -> Result<()> {
        let half_w = self.scene.nx as f64 * self.scene.cell_size / 2.0;
        let half_h = self.scene.ny as f64 * self.scene.cell_size / 2.0;
        for (ix, iy) in [(0, 0), (scan.nx - 1, scan.ny - 1)] {
            let (x, y) = scan.pixel_center(ix, iy);
            if x.abs() > half_w || y.abs() > half_h {
                return Err(Error::config(format!(
                    "scan window exceeds the scene bounds at pixel ({ix}, {iy})"
                )));
            }
        }
        Ok(())
    }

    /// Whole drive cycles in one pixel dwell.
    pub fn dwell_cycles(&self, scan: &ScanConfig) -> Result<usize> {
        let cycles = (scan.dwell * self.drive.modulation_frequency).round() as usize;
        if cycles < 2 {
            return Err(Error::config(
                "scan.dwell must cover at least 2 drive cycles for lock-in detection",
            ));
        }
        Ok(cycles)
    }

    /// Full detector trace for one pixel position with dedicated RNG
    /// streams; `None` when the spot is fully off the device.
    pub fn pixel_trace(
        &self,
        center: (f64, f64),
        n_cycles: usize,
        source: &FwmParams,
        mode: SourceMode,
        seed: u64,
        pixel_index: usize,
    ) -> Result<Option<crate::detection::DetectorTrace>> {
        let spot = self.spot_at(center);
        // Static geometric transmission of the spot (fraction of the
        // Gaussian hitting metal); scales the probe path efficiency.
        let cold_field = &self.cycle.fields[self.cycle.fields.len() - 1];
        let geometric = match effective_reflection(&spot, &self.scene, cold_field) {
            Ok(_) => gaussian_metal_fraction(&spot, &self.scene),
            Err(_) => return Ok(None),
        };
        if geometric < 1e-6 {
            return Ok(None);
        }
        let series = reflectivity_series(&self.cycle, &self.scene, &spot, n_cycles)?;
        let mut params = *source;
        params.eta_p *= geometric;
        let bin_duration = self.cycle.sample_dt;
        let n_bins = n_cycles * self.cycle.samples_per_cycle();
        let twin = sample_pair(
            &params,
            mode,
            n_bins,
            bin_duration,
            seed,
            pixel_source_stream(pixel_index),
        )?;
        let trace = synthesize_trace(
            &twin,
            &series,
            self.detection.detector_efficiency,
            seed,
            pixel_detector_stream(pixel_index),
        )?;
        Ok(Some(trace))
    }

    /// Measure one pixel; `None` when the spot is fully off the device.
    pub fn measure_pixel(
        &self,
        center: (f64, f64),
        n_cycles: usize,
        source: &FwmParams,
        mode: SourceMode,
        seed: u64,
        pixel_index: usize,
    ) -> Result<Option<PixelEstimate>> {
        match self.pixel_trace(center, n_cycles, source, mode, seed, pixel_index)? {
            Some(trace) => Ok(Some(lock_in_demodulate(
                &trace,
                &self.scene.metal,
                self.detection.gate_fraction,
            )?)),
            None => Ok(None),
        }
    }

    /// Noiseless spot-averaged hot-minus-cold temperature map: the ground
    /// truth the imaging pipeline estimates.
    pub fn ground_truth(&self, scan: &ScanConfig) -> Result<GroundTruthMap> {
        self.check_scan_bounds(scan)?;
        let spc = self.cycle.samples_per_cycle();
        let labels = frame_labels(
            spc,
            self.cycle.sample_dt,
            1.0 / self.cycle.period,
            self.cycle.duty,
        );
        let gate = self.detection.gate_fraction;
        let gated = |want: FrameLabel| -> Vec<usize> {
            let bins: Vec<usize> = (0..spc).filter(|&s| labels[s] == want).collect();
            let k = ((bins.len() as f64 * gate).floor() as usize).max(1);
            bins[bins.len() - k..].to_vec()
        };
        let hot = gated(FrameLabel::Hot);
        let cold = gated(FrameLabel::Cold);
        let mut map = Grid::zeros(scan.nx, scan.ny);
        let mut valid = vec![false; scan.n_pixels()];
        for iy in 0..scan.ny {
            for ix in 0..scan.nx {
                let spot = self.spot_at(scan.pixel_center(ix, iy));
                let mut ok = true;
                let mut mean_of = |bins: &[usize]| -> f64 {
                    let mut acc = 0.0;
                    for &s in bins {
                        match effective_reflection(&spot, &self.scene, &self.cycle.fields[s]) {
                            Ok((_, dt)) => acc += dt,
                            Err(_) => {
                                ok = false;
                                return 0.0;
                            }
                        }
                    }
                    acc / bins.len() as f64
                };
                let hot_dt = mean_of(&hot);
                let cold_dt = mean_of(&cold);
                if ok {
                    map.set(ix, iy, hot_dt - cold_dt);
                    valid[iy * scan.nx + ix] = true;
                }
            }
        }
        Ok(GroundTruthMap { delta_t: map, valid })
    }
}

/// Fraction of the spot's Gaussian power landing on metal cells.
fn gaussian_metal_fraction(spot: &ProbeSpot, scene: &ThermalScene) -> f64 {
    let w0 = spot.waist_radius();
    let cell_area = scene.cell_size * scene.cell_size;
    let norm = std::f64::consts::PI * w0 * w0 / 2.0;
    let mut acc = 0.0;
    for y in 0..scene.ny {
        let dy = scene.y_of(y) - spot.center.1;
        for x in 0..scene.nx {
            if scene.region(x, y) != crate::thermal::Region::Metal {
                continue;
            }
            let dx = scene.x_of(x) - spot.center.0;
            acc += (-2.0 * (dx * dx + dy * dy) / (w0 * w0)).exp() * cell_area / norm;
        }
    }
    acc.min(1.0)
}

/// Noiseless per-pixel spot-averaged temperature contrast.
pub struct GroundTruthMap {
    pub delta_t: Grid,
    pub valid: Vec<bool>,
}

/// Assembled heat-map image.
#[derive(Debug, Clone)]
pub struct HeatMapImage {
    /// Row-major nx*ny; None marks pixels with the spot fully off-device.
    pub pixels: Vec<Option<PixelEstimate>>,
    pub scan: ScanConfig,
    pub scene_name: String,
    /// s
    pub total_acquisition_time: f64,
}

impl HeatMapImage {
    pub fn pixel(&self, ix: usize, iy: usize) -> &Option<PixelEstimate> {
        &self.pixels[iy * self.scan.nx + ix]
    }

    /// Valid-pixel argmax of the temperature estimate.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for iy in 0..self.scan.ny {
            for ix in 0..self.scan.nx {
                if let Some(p) = self.pixel(ix, iy) {
                    if best.map_or(true, |(_, _, v)| p.delta_t > v) {
                        best = Some((ix, iy, p.delta_t));
                    }
                }
            }
        }
        best.map(|(x, y, _)| (x, y))
    }
}

/// Raster-scan the scene: every pixel runs the full pipeline over
/// `dwell` worth of drive cycles with its own RNG streams. Deterministic in
/// (scene, drive, scan, seed) regardless of the rayon pool shape.
pub fn acquire_image(
    session: &ImagingSession,
    scan: &ScanConfig,
    source: &FwmParams,
    seed: u64,
) -> Result<HeatMapImage> {
    scan.validate()?;
    source.validate()?;
    session.check_scan_bounds(scan)?;
    let n_cycles = session.dwell_cycles(scan)?;
    let pixels: Result<Vec<Option<PixelEstimate>>> = (0..scan.n_pixels())
        .into_par_iter()
        .map(|i| {
            let (ix, iy) = (i % scan.nx, i / scan.nx);
            session.measure_pixel(
                scan.pixel_center(ix, iy),
                n_cycles,
                source,
                scan.source_mode,
                seed,
                i,
            )
        })
        .collect();
    Ok(HeatMapImage {
        pixels: pixels?,
        scan: *scan,
        scene_name: session.scene.name.clone(),
        total_acquisition_time: scan.total_time(),
    })
}

/// Analytic sensitivity model calibrated to the demodulation chain; used by
/// the acquisition budget (delta_T proportional to 1/sqrt(dwell)).
#[derive(Debug, Clone, Copy)]
pub struct SensitivityModel {
    pub source: FwmParams,
    pub mode: SourceMode,
    pub detection: DetectionConfig,
    pub modulation_frequency: f64,
    pub duty: f64,
    pub c_tr: f64,
}

impl SensitivityModel {
    /// Normalized differential variance at the detector (shot = 1).
    pub fn detected_variance(&self) -> Result<f64> {
        let v_source = match self.mode {
            SourceMode::Squeezed => crate::source::total_normalized_variance(&self.source)?,
            SourceMode::Coherent => 1.0,
        };
        // Thinning both beams by the detector efficiency blends the
        // normalized variance toward shot noise.
        Ok(1.0 + self.detection.detector_efficiency * (v_source - 1.0))
    }

    /// Predicted temperature resolution after `dwell` seconds of averaging
    /// (rounded to whole cycles, minimum one).
    pub fn predicted_delta_t_std(&self, dwell: f64) -> Result<f64> {
        if !(dwell > 0.0) {
            return Err(Error::domain("dwell must be > 0"));
        }
        let period = 1.0 / self.modulation_frequency;
        let n_cycles = ((dwell / period).round() as usize).max(1) as f64;
        let bpc = self.detection.bins_per_cycle as f64;
        let bin_duration = period / bpc;
        let hot_bins = (bpc * self.duty).round();
        let cold_bins = bpc - hot_bins;
        let gate = self.detection.gate_fraction;
        let n_h = (hot_bins * gate).floor().max(1.0);
        let n_c = (cold_bins * gate).floor().max(1.0);
        let eta_d = self.detection.detector_efficiency;
        let mu_p = eta_d * self.source.probe_flux() * bin_duration;
        let mu_c = eta_d * self.source.conjugate_flux() * bin_duration;
        let v = self.detected_variance()?;
        let per_cycle_var = v * (mu_p + mu_c) * (1.0 / n_h + 1.0 / n_c) / (mu_p * mu_p);
        Ok((per_cycle_var / n_cycles).sqrt() / self.c_tr.abs())
    }
}

/// Wall-clock budget and predicted per-pixel resolution for a scan.
pub fn acquisition_budget(scan: &ScanConfig, model: &SensitivityModel) -> Result<(f64, f64)> {
    scan.validate()?;
    Ok((scan.total_time(), model.predicted_delta_t_std(scan.dwell)?))
}

/// Paired squeezed-vs-coherent comparison at equal detected flux.
#[derive(Debug, Clone)]
pub struct ModalityComparison {
    pub squeezed: HeatMapImage,
    pub coherent: HeatMapImage,
    /// Per-pixel std-error ratio (squeezed / coherent); None on invalid.
    pub ratio_map: Vec<Option<f64>>,
    pub median_ratio: f64,
}

pub fn compare_modalities(
    session: &ImagingSession,
    scan: &ScanConfig,
    source: &FwmParams,
    seed: u64,
) -> Result<ModalityComparison> {
    let mut squeezed_scan = *scan;
    squeezed_scan.source_mode = SourceMode::Squeezed;
    let mut coherent_scan = *scan;
    coherent_scan.source_mode = SourceMode::Coherent;
    let squeezed = acquire_image(session, &squeezed_scan, source, seed)?;
    let coherent = acquire_image(session, &coherent_scan, source, seed)?;
    let mut ratio_map = Vec::with_capacity(scan.n_pixels());
    let mut ratios = Vec::new();
    for i in 0..scan.n_pixels() {
        match (&squeezed.pixels[i], &coherent.pixels[i]) {
            (Some(s), Some(c)) if c.std_error > 0.0 => {
                let r = s.std_error / c.std_error;
                ratio_map.push(Some(r));
                ratios.push(r);
            }
            _ => ratio_map.push(None),
        }
    }
    if ratios.is_empty() {
        return Err(Error::domain("no valid pixels to compare"));
    }
    ratios.sort_by(f64::total_cmp);
    let median_ratio = ratios[ratios.len() / 2];
    Ok(ModalityComparison { squeezed, coherent, ratio_map, median_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermal::{DriveKind, Material, Region, TemperatureField};

    fn al() -> Material {
        Material {
            thermal_conductivity: 237.0,
            volumetric_heat_capacity: 2.42e6,
            thickness: 100e-9,
            c_tr: 1.8e-4,
            base_reflectivity: 0.86,
        }
    }

    fn oxide() -> Material {
        Material {
            thermal_conductivity: 1.4,
            volumetric_heat_capacity: 1.65e6,
            thickness: 300e-9,
            c_tr: 0.0,
            base_reflectivity: 0.2,
        }
    }

    /// Small bridged wire: 40x24 cells of 2.5 um (100 x 60 um window),
    /// wire 9 cells (22.5 um) tall with a 3-cell (7.5 um) bridge.
    fn mini_bridge_scene() -> ThermalScene {
        let (nx, ny) = (40, 24);
        let mut scene = ThermalScene::uniform(nx, ny, 2.5e-6, al(), oxide(), 0.27, 2e5);
        scene.name = "mini_bridge".into();
        for y in 0..ny {
            for x in 0..nx {
                let in_wire = (8..17).contains(&y);
                let in_bridge = (11..14).contains(&y);
                let narrow = (17..23).contains(&x);
                let metal = if narrow { in_bridge } else { in_wire };
                let i = scene.idx(x, y);
                scene.mask[i] = if metal { Region::Metal } else { Region::Substrate };
            }
        }
        scene
    }

    fn drive(amplitude_a: f64) -> DriveWaveform {
        DriveWaveform {
            kind: DriveKind::DcSquare { amplitude_a },
            modulation_frequency: 40e3,
            duty: 0.5,
        }
    }

    fn small_detection() -> DetectionConfig {
        DetectionConfig { bins_per_cycle: 50, ..DetectionConfig::default() }
    }

    fn source() -> FwmParams {
        FwmParams::new(5.0, 0.75, 0.89, 5.082e11)
    }

    #[test]
    fn budget_arithmetic_is_exact() {
        let scan = ScanConfig {
            nx: 10,
            ny: 10,
            step: 4.8e-6,
            origin: (-21.6e-6, -21.6e-6),
            dwell: 50e-3,
            move_time: 0.3e-3,
            source_mode: SourceMode::Squeezed,
        };
        let model = SensitivityModel {
            source: source(),
            mode: SourceMode::Squeezed,
            detection: DetectionConfig::default(),
            modulation_frequency: 40e3,
            duty: 0.5,
            c_tr: 1.8e-4,
        };
        let (total, resolution) = acquisition_budget(&scan, &model).unwrap();
        assert!((total - 5.03).abs() < 1e-12, "total {total}");
        assert!(resolution > 0.0);
        // 256x256 at the same dwell: ~54.9 minutes.
        let big = ScanConfig { nx: 256, ny: 256, ..scan };
        let (total_big, _) = acquisition_budget(&big, &model).unwrap();
        assert!((total_big / 60.0 - 54.9).abs() < 0.05, "{} min", total_big / 60.0);
    }

    #[test]
    fn one_pixel_scan_equals_direct_pipeline_call() {
        let session =
            ImagingSession::prepare(mini_bridge_scene(), drive(0.012), small_detection()).unwrap();
        let scan = ScanConfig {
            nx: 1,
            ny: 1,
            step: 4.8e-6,
            origin: (0.0, 0.0),
            dwell: 20.0 / 40e3,
            move_time: 0.3e-3,
            source_mode: SourceMode::Squeezed,
        };
        let seed = 99;
        let image = acquire_image(&session, &scan, &source(), seed).unwrap();
        let direct = session
            .measure_pixel((0.0, 0.0), 20, &source(), SourceMode::Squeezed, seed, 0)
            .unwrap();
        let a = image.pixels[0].as_ref().unwrap();
        let b = direct.as_ref().unwrap();
        assert_eq!(a.delta_t, b.delta_t);
        assert_eq!(a.std_error, b.std_error);
    }

    #[test]
    fn zero_drive_gives_statistically_null_image() {
        let session =
            ImagingSession::prepare(mini_bridge_scene(), drive(0.0), small_detection()).unwrap();
        let scan = ScanConfig {
            nx: 3,
            ny: 3,
            step: 6e-6,
            origin: (-6e-6, -6e-6),
            dwell: 40.0 / 40e3,
            move_time: 0.0,
            source_mode: SourceMode::Squeezed,
        };
        let image = acquire_image(&session, &scan, &source(), 5).unwrap();
        let mut within = 0;
        let mut total = 0;
        for p in image.pixels.iter().flatten() {
            total += 1;
            if p.delta_t.abs() <= 3.0 * p.std_error {
                within += 1;
            }
        }
        assert!(total == 9);
        assert!(within >= 8, "{within}/{total} pixels within 3 sigma of zero");
    }

    #[test]
    fn off_device_pixels_are_invalid_not_zero() {
        let mut scene = mini_bridge_scene();
        // Top band entirely off-device.
        for y in 20..24 {
            for x in 0..40 {
                let i = scene.idx(x, y);
                scene.mask[i] = Region::OffDevice;
            }
        }
        let session = ImagingSession::prepare(scene, drive(0.012), small_detection()).unwrap();
        let scan = ScanConfig {
            nx: 2,
            ny: 2,
            step: 8e-6,
            origin: (0.0, -4e-6),
            dwell: 10.0 / 40e3,
            move_time: 0.0,
            source_mode: SourceMode::Squeezed,
        };
        // Shift the second row of pixels far into the dead zone.
        let mut shifted = scan;
        shifted.origin = (0.0, 55e-6);
        assert!(acquire_image(&session, &shifted, &source(), 1).is_err(), "out of bounds");
        let image = acquire_image(&session, &scan, &source(), 1).unwrap();
        assert!(image.pixels.iter().any(|p| p.is_some()));
    }

    #[test]
    fn scan_exceeding_scene_bounds_is_an_error() {
        let session =
            ImagingSession::prepare(mini_bridge_scene(), drive(0.012), small_detection()).unwrap();
        let scan = ScanConfig {
            nx: 30,
            ny: 2,
            step: 5e-6,
            origin: (0.0, 0.0),
            dwell: 10.0 / 40e3,
            move_time: 0.0,
            source_mode: SourceMode::Squeezed,
        };
        assert!(acquire_image(&session, &scan, &source(), 1).is_err());
    }

    #[test]
    fn images_are_deterministic_across_thread_counts() {
        let session =
            ImagingSession::prepare(mini_bridge_scene(), drive(0.012), small_detection()).unwrap();
        let scan = ScanConfig {
            nx: 4,
            ny: 3,
            step: 6e-6,
            origin: (-9e-6, -6e-6),
            dwell: 10.0 / 40e3,
            move_time: 0.0,
            source_mode: SourceMode::Squeezed,
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| acquire_image(&session, &scan, &source(), 7).unwrap())
        };
        let a = run(1);
        let b = run(4);
        for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
            match (pa, pb) {
                (Some(x), Some(y)) => {
                    assert_eq!(x.delta_t, y.delta_t);
                    assert_eq!(x.std_error, y.std_error);
                }
                (None, None) => {}
                _ => panic!("validity mask differs between thread counts"),
            }
        }
    }

    #[test]
    fn ground_truth_peaks_on_the_bridge_and_decays_along_wire() {
        let session =
            ImagingSession::prepare(mini_bridge_scene(), drive(0.012), small_detection()).unwrap();
        assert!(session.thermal_converged_at.is_some(), "drive never settled");
        let scan = ScanConfig {
            nx: 9,
            ny: 5,
            step: 5e-6,
            origin: (-20e-6, -10e-6),
            dwell: 10.0 / 40e3,
            move_time: 0.0,
            source_mode: SourceMode::Squeezed,
        };
        let truth = session.ground_truth(&scan).unwrap();
        let (ax, ay) = truth.delta_t.argmax();
        // Bridge center sits at x = 0 um => pixel 4; wire axis y = 0 => row 2.
        assert!((3..=5).contains(&ax), "argmax x at {ax}");
        assert_eq!(ay, 2, "argmax y at {ay}");
        // Monotone decay along the wire axis away from the bridge.
        let row = 2;
        for ix in (ax + 1)..scan.nx {
            assert!(
                truth.delta_t.get(ix, row) <= truth.delta_t.get(ix - 1, row) + 1e-12,
                "dT rose moving away from the bridge at ix={ix}"
            );
        }
        for ix in (1..=ax).rev() {
            assert!(truth.delta_t.get(ix - 1, row) <= truth.delta_t.get(ix, row) + 1e-12);
        }
    }

    #[test]
    fn coherent_comparison_at_unit_gain_is_unity() {
        let session =
            ImagingSession::prepare(mini_bridge_scene(), drive(0.012), small_detection()).unwrap();
        let scan = ScanConfig {
            nx: 2,
            ny: 2,
            step: 5e-6,
            origin: (-2.5e-6, -2.5e-6),
            dwell: 400.0 / 40e3,
            move_time: 0.0,
            source_mode: SourceMode::Squeezed,
        };
        // G = 1: the "squeezed" source is itself shot-noise limited.
        let flat = FwmParams::new(1.0, 0.75, 0.89, 5.082e11);
        let cmp = compare_modalities(&session, &scan, &flat, 3).unwrap();
        assert!(
            (cmp.median_ratio - 1.0).abs() < 0.05,
            "median ratio {}",
            cmp.median_ratio
        );
    }

    #[test]
    fn point_source_image_follows_gaussian_spot_convolution() {
        // Synthetic single-hot-cell cycle: neighbor pixels must fall off as
        // the analytic Gaussian convolution predicts.
        let scene = {
            let mut s = ThermalScene::uniform(48, 48, 2e-6, al(), oxide(), 0.27, 2e5);
            s.name = "point".into();
            s
        };
        let spc = 10;
        let mut fields = Vec::new();
        let drv = drive(0.0);
        for s in 0..spc {
            let mut f = TemperatureField::zeros(&scene);
            // Hot frame in the first half of the cycle.
            if s < spc / 2 {
                f.film_dt.set(24, 24, 1.0);
            }
            fields.push(f);
        }
        let cycle = ThermalCycle::from_snapshots(fields, drv.period(), drv.duty);
        let mut det = small_detection();
        det.bins_per_cycle = spc;
        det.spot_diameter = 8e-6;
        let session = ImagingSession::from_cycle(scene.clone(), drv, det, cycle);
        let scan = ScanConfig {
            nx: 5,
            ny: 1,
            step: 4e-6,
            origin: (scene.x_of(24), scene.y_of(24)),
            dwell: 10.0 / 40e3,
            move_time: 0.0,
            source_mode: SourceMode::Squeezed,
        };
        let truth = session.ground_truth(&scan).unwrap();
        let w0 = det.spot_diameter / 2.0;
        let center = truth.delta_t.get(0, 0);
        for ix in 1..5 {
            let d = ix as f64 * scan.step;
            let expected = center * (-2.0 * d * d / (w0 * w0)).exp();
            let got = truth.delta_t.get(ix, 0);
            let tol = 0.05 * center.max(1e-12) * (-2.0 * d * d / (w0 * w0)).exp() + 1e-9 * center;
            assert!(
                (got - expected).abs() <= tol.max(1e-6 * center),
                "pixel {ix}: {got} vs convolution {expected}"
            );
        }
    }
}
