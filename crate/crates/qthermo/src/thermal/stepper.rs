//! Explicit two-layer finite-difference time stepping.

use super::{DriveKind, DriveWaveform, Region, TemperatureField, ThermalScene};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Largest stable explicit time step for the scene, s.
///
/// Per node the limit is C_cell / (sum of attached conductances); the film
/// and substrate layers are both checked.
pub fn stability_limit(scene: &ThermalScene) -> f64 {
    let a = scene.cell_size * scene.cell_size;
    let g_lat_f = scene.metal.sheet_thermal_conductance();
    let g_lat_s = scene.oxide.sheet_thermal_conductance();
    let g_v = scene.coupling_conductance() * a;
    let g_sink = scene.sink_conductance * a;
    let film = scene.metal.areal_heat_capacity() * a / (4.0 * g_lat_f + g_v);
    let substrate = scene.oxide.areal_heat_capacity() * a / (4.0 * g_lat_s + g_v + g_sink);
    film.min(substrate)
}

/// One explicit update of both layers.
///
/// `source` is volumetric power density (W/m^3) deposited in the film layer
/// of metal cells. Lateral boundaries are adiabatic; missing neighbors
/// contribute no flux. Cells marked clamped stay at the sink temperature.
pub fn step(
    field: &TemperatureField,
    scene: &ThermalScene,
    source: &Grid,
    dt: f64,
) -> Result<TemperatureField> {
    let dt_max = stability_limit(scene);
    if dt > dt_max {
        return Err(Error::domain(format!(
            "dt = {dt:.3e} s violates the stability limit {dt_max:.3e} s"
        )));
    }
    let mut next = field.clone();
    step_in_place(field, &mut next, scene, source, dt);
    next.timestamp = field.timestamp + dt;
    Ok(next)
}

/// Stencil core shared by `step` and the cycle runner. Writes layer updates
/// of `from` into `into` (timestamp untouched).
fn step_in_place(
    from: &TemperatureField,
    into: &mut TemperatureField,
    scene: &ThermalScene,
    source: &Grid,
    dt: f64,
) {
    let (nx, ny) = (scene.nx, scene.ny);
    let a = scene.cell_size * scene.cell_size;
    let g_lat_f = scene.metal.sheet_thermal_conductance();
    let g_lat_s = scene.oxide.sheet_thermal_conductance();
    let g_v = scene.coupling_conductance() * a;
    let g_sink = scene.sink_conductance * a;
    let inv_cf = 1.0 / (scene.metal.areal_heat_capacity() * a);
    let inv_cs = 1.0 / (scene.oxide.areal_heat_capacity() * a);
    let film_volume = a * scene.metal.thickness;

    let tf = from.film_dt.as_slice();
    let ts = from.substrate_dt.as_slice();
    let q = source.as_slice();
    let (film_out, sub_out) = (into.film_dt.as_mut_slice(), into.substrate_dt.as_mut_slice());

    for y in 0..ny {
        for x in 0..nx {
            let i = y * nx + x;
            let region = scene.mask[i];
            if region == Region::OffDevice {
                continue;
            }
            if scene.is_clamped(i) {
                film_out[i] = 0.0;
                sub_out[i] = 0.0;
                continue;
            }
            // Lateral fluxes grouped (west+east)+(north+south) so mirrored
            // scenes produce bitwise-mirrored fields.
            let mut film_flux = 0.0;
            if region == Region::Metal {
                let we = lateral(tf, scene, i, x, y, nx, Region::Metal, true)
                    + lateral(tf, scene, i, x, y, nx, Region::Metal, false);
                film_flux = g_lat_f * we;
            }
            let sub_we = lateral_on_device(ts, scene, i, x, y, nx, true)
                + lateral_on_device(ts, scene, i, x, y, nx, false);
            let sub_flux = g_lat_s * sub_we;

            if region == Region::Metal {
                let vertical = g_v * (ts[i] - tf[i]);
                let heat = q[i] * film_volume;
                film_out[i] = tf[i] + dt * (film_flux + vertical + heat) * inv_cf;
                sub_out[i] = ts[i] + dt * (sub_flux - g_v * (ts[i] - tf[i]) - g_sink * ts[i]) * inv_cs;
            } else {
                film_out[i] = 0.0;
                sub_out[i] = ts[i] + dt * (sub_flux - g_sink * ts[i]) * inv_cs;
            }
        }
    }
}

/// Sum of (T_nb - T_i) over the west/east (axis=true) or north/south pair,
/// restricted to neighbors of the given region.
#[inline]
fn lateral(
    t: &[f64],
    scene: &ThermalScene,
    i: usize,
    x: usize,
    y: usize,
    nx: usize,
    want: Region,
    x_axis: bool,
) -> f64 {
    let mut acc = 0.0;
    let (lo, hi) = if x_axis {
        ((x > 0).then(|| i - 1), (x + 1 < nx).then(|| i + 1))
    } else {
        ((y > 0).then(|| i - nx), (y + 1 < scene.ny).then(|| i + nx))
    };
    if let Some(j) = lo {
        if scene.mask[j] == want {
            acc += t[j] - t[i];
        }
    }
    if let Some(j) = hi {
        if scene.mask[j] == want {
            acc += t[j] - t[i];
        }
    }
    acc
}

#[inline]
fn lateral_on_device(
    t: &[f64],
    scene: &ThermalScene,
    i: usize,
    x: usize,
    y: usize,
    nx: usize,
    x_axis: bool,
) -> f64 {
    let mut acc = 0.0;
    let (lo, hi) = if x_axis {
        ((x > 0).then(|| i - 1), (x + 1 < nx).then(|| i + 1))
    } else {
        ((y > 0).then(|| i - nx), (y + 1 < scene.ny).then(|| i + nx))
    };
    if let Some(j) = lo {
        if scene.mask[j] != Region::OffDevice {
            acc += t[j] - t[i];
        }
    }
    if let Some(j) = hi {
        if scene.mask[j] != Region::OffDevice {
            acc += t[j] - t[i];
        }
    }
    acc
}

/// One steady drive cycle sampled at fixed intervals, reusable across scan
/// pixels. Snapshots are taken at the end of each of the `fields.len()`
/// equal sample intervals.
#[derive(Debug, Clone)]
pub struct ThermalCycle {
    pub fields: Vec<TemperatureField>,
    /// Sample interval, s.
    pub sample_dt: f64,
    /// Drive period, s.
    pub period: f64,
    pub duty: f64,
}

impl ThermalCycle {
    pub fn samples_per_cycle(&self) -> usize {
        self.fields.len()
    }

    /// Build a cycle from externally produced snapshots (replay, synthetic
    /// leakage studies).
    pub fn from_snapshots(fields: Vec<TemperatureField>, period: f64, duty: f64) -> Self {
        let n = fields.len().max(1);
        ThermalCycle { sample_dt: period / n as f64, fields, period, duty }
    }
}

/// Outcome of a modulated run: the last simulated cycle's snapshots plus
/// convergence bookkeeping.
#[derive(Debug, Clone)]
pub struct ModulatedRun {
    pub cycle: ThermalCycle,
    /// 1-based cycle index at which the periodic steady state was declared
    /// (successive-cycle max |dT| difference < 1 mK); None if never reached.
    pub converged_at: Option<usize>,
    pub cycles_run: usize,
    /// Field at the end of the final cycle.
    pub final_field: TemperatureField,
}

/// Threshold for declaring the periodic steady state, K.
pub const STEADY_STATE_TOLERANCE: f64 = 1e-3;

/// Run the drive for up to `n_cycles` cycles, sampling `samples_per_cycle`
/// snapshots per cycle, stopping once the cycle-to-cycle field difference
/// falls below 1 mK. Non-convergence is flagged on the returned value, not
/// an error: partial results remain usable.
pub fn run_modulated(
    scene: &ThermalScene,
    drive: &DriveWaveform,
    n_cycles: usize,
    samples_per_cycle: usize,
) -> Result<ModulatedRun> {
    scene.validate()?;
    drive.validate()?;
    if n_cycles == 0 {
        return Err(Error::domain("n_cycles must be >= 1"));
    }
    if samples_per_cycle == 0 {
        return Err(Error::domain("samples_per_cycle must be >= 1"));
    }
    let source_on = match drive.kind {
        DriveKind::DcSquare { amplitude_a } => super::joule::joule_source(scene, amplitude_a)?,
        DriveKind::RfSquare { absorbed_power_w } => super::joule::rf_source(scene, absorbed_power_w)?,
    };
    run_modulated_with_source(scene, drive, &source_on, n_cycles, samples_per_cycle)
}

/// As [`run_modulated`] but with an explicit on-phase source field (used to
/// add laser heating on top of the drive).
pub fn run_modulated_with_source(
    scene: &ThermalScene,
    drive: &DriveWaveform,
    source_on: &Grid,
    n_cycles: usize,
    samples_per_cycle: usize,
) -> Result<ModulatedRun> {
    let period = drive.period();
    let sample_dt = period / samples_per_cycle as f64;
    let dt_target = 0.4 * stability_limit(scene);
    let substeps = (sample_dt / dt_target).ceil().max(1.0) as usize;
    let dt = sample_dt / substeps as f64;
    let source_off = Grid::zeros(scene.nx, scene.ny);

    let mut current = TemperatureField::zeros(scene);
    let mut scratch = TemperatureField::zeros(scene);
    let mut snapshots: Vec<TemperatureField> = Vec::new();
    let mut cycle_end_prev: Option<TemperatureField> = None;
    let mut converged_at = None;
    let mut cycles_run = 0;

    'cycles: for cycle in 0..n_cycles {
        snapshots.clear();
        for s in 0..samples_per_cycle {
            for k in 0..substeps {
                let t_in_cycle = (s as f64 + (k as f64 + 0.5) / substeps as f64) * sample_dt;
                let phase = t_in_cycle / period;
                let src = if drive.is_on(phase) { source_on } else { &source_off };
                step_in_place(&current, &mut scratch, scene, src, dt);
                scratch.timestamp = current.timestamp + dt;
                std::mem::swap(&mut current, &mut scratch);
            }
            snapshots.push(current.clone());
        }
        cycles_run = cycle + 1;
        if let Some(prev) = &cycle_end_prev {
            if current.max_abs_diff(prev) < STEADY_STATE_TOLERANCE {
                converged_at = Some(cycles_run);
                break 'cycles;
            }
        }
        cycle_end_prev = Some(current.clone());
    }

    Ok(ModulatedRun {
        cycle: ThermalCycle {
            fields: snapshots,
            sample_dt,
            period,
            duty: drive.duty,
        },
        converged_at,
        cycles_run,
        final_field: current,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermal::Material;

    fn metal() -> Material {
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

    fn isolated_scene(nx: usize, ny: usize) -> ThermalScene {
        let mut scene = ThermalScene::uniform(nx, ny, 2e-6, metal(), oxide(), 0.27, 0.0);
        scene.vertical_conductance = Some(0.0);
        scene
    }

    #[test]
    fn uniform_adiabatic_field_is_stationary() {
        let scene = isolated_scene(8, 8);
        let mut field = TemperatureField::zeros(&scene);
        field.film_dt.fill(1.5);
        field.substrate_dt.fill(0.7);
        let dt = 0.4 * stability_limit(&scene);
        let next = step(&field, &scene, &Grid::zeros(8, 8), dt).unwrap();
        assert_eq!(next.film_dt, field.film_dt);
        assert_eq!(next.substrate_dt, field.substrate_dt);
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let scene = isolated_scene(8, 8);
        let field = TemperatureField::zeros(&scene);
        let dt = 1.01 * stability_limit(&scene);
        assert!(step(&field, &scene, &Grid::zeros(8, 8), dt).is_err());
    }

    #[test]
    fn energy_audit_closed_system() {
        // Adiabatic, no vertical loss: after n steps the accumulated energy
        // must equal source power times elapsed time.
        let scene = isolated_scene(12, 10);
        let mut source = Grid::zeros(12, 10);
        source.set(5, 4, 3e12);
        source.set(6, 5, 1e12);
        let cell_volume = scene.cell_size * scene.cell_size * scene.metal.thickness;
        let power: f64 = source.as_slice().iter().sum::<f64>() * cell_volume;
        let dt = 0.4 * stability_limit(&scene);
        let mut field = TemperatureField::zeros(&scene);
        for _ in 0..1000 {
            field = step(&field, &scene, &source, dt).unwrap();
        }
        let expected = power * 1000.0 * dt;
        let actual = field.energy(&scene);
        assert!(
            (actual / expected - 1.0).abs() < 5e-3,
            "energy {actual} vs injected {expected}"
        );
    }

    #[test]
    fn slab_with_fixed_ends_reaches_textbook_parabola() {
        // 1D metal slab, uniform volumetric source, clamped ends:
        // peak dT = q L^2 / (8 k) at the center.
        let nx = 41;
        let mut scene = isolated_scene(nx, 4);
        let mut clamped = vec![false; nx * 4];
        for y in 0..4 {
            clamped[y * nx] = true;
            clamped[y * nx + nx - 1] = true;
        }
        scene.clamped = clamped;
        let q_vol = 5e11;
        let mut source = Grid::zeros(nx, 4);
        source.fill(q_vol);
        let dt = 0.4 * stability_limit(&scene);
        let mut field = TemperatureField::zeros(&scene);
        let mut prev_peak = 0.0;
        loop {
            for _ in 0..500 {
                field = step(&field, &scene, &source, dt).unwrap();
            }
            let peak = field.film_dt.get(nx / 2, 2);
            if (peak - prev_peak).abs() < 1e-9 * peak.max(1e-30) {
                break;
            }
            prev_peak = peak;
        }
        let length = (nx - 1) as f64 * scene.cell_size;
        let expected = q_vol * length * length / (8.0 * scene.metal.thermal_conductivity);
        let peak = field.film_dt.get(nx / 2, 2);
        assert!(
            (peak / expected - 1.0).abs() < 0.01,
            "peak {peak} vs parabola {expected}"
        );
    }

    #[test]
    fn doubling_source_power_doubles_temperature() {
        let mut scene = ThermalScene::uniform(10, 10, 2e-6, metal(), oxide(), 0.27, 2e5);
        scene.name = "linearity".into();
        let mut source = Grid::zeros(10, 10);
        source.set(4, 4, 2e12);
        source.set(5, 5, 7e11);
        let dt = 0.4 * stability_limit(&scene);
        let mut f1 = TemperatureField::zeros(&scene);
        let mut f2 = TemperatureField::zeros(&scene);
        let double = source.scaled(2.0);
        for _ in 0..400 {
            f1 = step(&f1, &scene, &source, dt).unwrap();
            f2 = step(&f2, &scene, &double, dt).unwrap();
        }
        for (a, b) in f1.film_dt.as_slice().iter().zip(f2.film_dt.as_slice()) {
            if *a != 0.0 {
                assert!((b / (2.0 * a) - 1.0).abs() < 1e-10, "{b} vs 2*{a}");
            }
        }
    }

    #[test]
    fn mirror_symmetric_scene_keeps_fields_symmetric() {
        let mut scene = ThermalScene::uniform(12, 9, 2e-6, metal(), oxide(), 0.27, 2e5);
        // Mirror-symmetric mask about both axes.
        for y in 0..9 {
            for x in 0..12 {
                if !(3..6).contains(&y) {
                    let i = scene.idx(x, y);
                    scene.mask[i] = Region::Substrate;
                }
            }
        }
        let source = super::super::joule_source(&scene, 0.004).unwrap();
        let dt = 0.4 * stability_limit(&scene);
        let mut field = TemperatureField::zeros(&scene);
        for _ in 0..300 {
            field = step(&field, &scene, &source, dt).unwrap();
        }
        // The Joule solve leaves ~1e-15 asymmetry in the source; the
        // stencil itself is bitwise mirror-exact.
        let peak = field.film_dt.max();
        let fx = field.film_dt.mirror_x();
        let fy = field.film_dt.mirror_y();
        for i in 0..field.film_dt.as_slice().len() {
            let v = field.film_dt.as_slice()[i];
            assert!((v - fx.as_slice()[i]).abs() <= 1e-12 * peak, "x mirror broke at {i}");
            assert!((v - fy.as_slice()[i]).abs() <= 1e-12 * peak, "y mirror broke at {i}");
        }
        let sx = field.substrate_dt.mirror_x();
        for i in 0..field.substrate_dt.as_slice().len() {
            let v = field.substrate_dt.as_slice()[i];
            assert!((v - sx.as_slice()[i]).abs() <= 1e-12 * peak);
        }
    }

    #[test]
    fn tiny_duty_yields_negligible_heating() {
        let scene = ThermalScene::uniform(10, 6, 2e-6, metal(), oxide(), 0.27, 2e5);
        let frequency = 40e3;
        let big = DriveWaveform {
            kind: DriveKind::DcSquare { amplitude_a: 0.01 },
            modulation_frequency: frequency,
            duty: 0.5,
        };
        let tiny = DriveWaveform { duty: 1e-3, ..big };
        let run_big = run_modulated(&scene, &big, 20, 50).unwrap();
        let run_tiny = run_modulated(&scene, &tiny, 20, 50).unwrap();
        let cycle_peak = |run: &ModulatedRun| {
            run.cycle.fields.iter().map(|f| f.film_dt.max()).fold(0.0, f64::max)
        };
        let peak_big = cycle_peak(&run_big);
        let peak_tiny = cycle_peak(&run_tiny);
        assert!(peak_tiny < 0.02 * peak_big, "tiny {peak_tiny} vs big {peak_big}");
    }
}
