//! Time-domain finite-difference simulation of temperature fields in
//! patterned metal films on layered substrates.
//!
//! The model is two coupled 2D layers — one film node and one substrate
//! node per cell. The film layer exists on metal cells and conducts
//! laterally with k_metal * t_metal; the substrate layer covers every
//! on-device cell and conducts laterally with k_oxide * t_oxide. The layers
//! couple vertically through the oxide (g = k_oxide / t_oxide per unit
//! area) and the substrate drains to the heat sink through a configurable
//! spreading conductance. This is the minimal model that reproduces the
//! observed double-exponential heating/cooling transients.

mod joule;
mod stepper;

pub use joule::{joule_source, laser_source, solve_current_density};
pub use stepper::{run_modulated, stability_limit, step, ModulatedRun, ThermalCycle};

use crate::error::{Error, Result};
use crate::grid::Grid;
use serde::{Deserialize, Serialize};

/// Homogeneous material slab properties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    /// W/(m K)
    pub thermal_conductivity: f64,
    /// J/(m^3 K)
    pub volumetric_heat_capacity: f64,
    /// m
    pub thickness: f64,
    /// Thermoreflective coefficient dR/R per K. May be either sign.
    pub c_tr: f64,
    /// Reflectivity at the probe wavelength, in [0, 1].
    pub base_reflectivity: f64,
}

impl Material {
    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.thermal_conductivity > 0.0) {
            return Err(Error::config(format!("{name}.thermal_conductivity must be > 0")));
        }
        if !(self.volumetric_heat_capacity > 0.0) {
            return Err(Error::config(format!("{name}.volumetric_heat_capacity must be > 0")));
        }
        if !(self.thickness > 0.0) {
            return Err(Error::config(format!("{name}.thickness must be > 0")));
        }
        if !self.c_tr.is_finite() {
            return Err(Error::config(format!("{name}.c_tr must be finite")));
        }
        if !(0.0..=1.0).contains(&self.base_reflectivity) {
            return Err(Error::config(format!("{name}.base_reflectivity must lie in [0, 1]")));
        }
        Ok(())
    }

    /// Areal heat capacity c_v * t, J/(m^2 K).
    pub fn areal_heat_capacity(&self) -> f64 {
        self.volumetric_heat_capacity * self.thickness
    }

    /// Lateral sheet conductance k * t, W/K per square.
    pub fn sheet_thermal_conductance(&self) -> f64 {
        self.thermal_conductivity * self.thickness
    }
}

/// Per-cell region label of the lateral grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Metal film over the substrate stack.
    Metal,
    /// Substrate stack with no film on top.
    Substrate,
    /// Outside the device; carries no thermal nodes and reflects nothing.
    OffDevice,
}

/// Axis along which the drive current enters and leaves the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TerminalAxis {
    #[default]
    X,
    Y,
}

/// Lateral scene: grid geometry, region mask, material stack and electrical
/// sheet properties.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalScene {
    pub nx: usize,
    pub ny: usize,
    /// Lateral cell size, m.
    pub cell_size: f64,
    pub mask: Vec<Region>,
    pub metal: Material,
    pub oxide: Material,
    /// K; temperature fields are expressed as deltas above this.
    pub sink_temperature: f64,
    /// Ohm/sq per cell; meaningful on metal cells.
    pub sheet_resistance: Vec<f64>,
    /// Substrate-to-sink spreading conductance, W/(m^2 K).
    pub sink_conductance: f64,
    /// Film-substrate coupling override, W/(m^2 K). Defaults to
    /// k_oxide / t_oxide when absent.
    pub vertical_conductance: Option<f64>,
    /// Cells pinned to the sink temperature (Dirichlet), for verification
    /// scenes with fixed-temperature ends. Empty = none.
    pub clamped: Vec<bool>,
    pub terminal_axis: TerminalAxis,
    pub name: String,
}

impl ThermalScene {
    /// Uniform-sheet scene builder; the mask starts all-metal.
    pub fn uniform(
        nx: usize,
        ny: usize,
        cell_size: f64,
        metal: Material,
        oxide: Material,
        sheet_resistance: f64,
        sink_conductance: f64,
    ) -> Self {
        ThermalScene {
            nx,
            ny,
            cell_size,
            mask: vec![Region::Metal; nx * ny],
            metal,
            oxide,
            sink_temperature: 295.0,
            sheet_resistance: vec![sheet_resistance; nx * ny],
            sink_conductance,
            vertical_conductance: None,
            clamped: vec![false; nx * ny],
            terminal_axis: TerminalAxis::X,
            name: "uniform".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 4 || self.ny < 4 {
            return Err(Error::config(format!(
                "scene grid must be at least 4x4, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.cell_size > 0.0) {
            return Err(Error::config("scene.cell_size must be > 0"));
        }
        let n = self.nx * self.ny;
        if self.mask.len() != n {
            return Err(Error::config(format!(
                "scene.mask has {} entries, expected {}",
                self.mask.len(),
                n
            )));
        }
        if self.sheet_resistance.len() != n {
            return Err(Error::config("scene.sheet_resistance length mismatch"));
        }
        if !self.clamped.is_empty() && self.clamped.len() != n {
            return Err(Error::config("scene.clamped length mismatch"));
        }
        if self.sink_conductance < 0.0 {
            return Err(Error::config("scene.sink_conductance must be >= 0"));
        }
        self.metal.validate("scene.metal")?;
        self.oxide.validate("scene.oxide")?;
        for (i, r) in self.sheet_resistance.iter().enumerate() {
            if self.mask[i] == Region::Metal && !(*r > 0.0) {
                return Err(Error::config("scene.sheet_resistance must be > 0 on metal cells"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.nx + x
    }

    #[inline]
    pub fn region(&self, x: usize, y: usize) -> Region {
        self.mask[self.idx(x, y)]
    }

    #[inline]
    pub fn is_clamped(&self, i: usize) -> bool {
        !self.clamped.is_empty() && self.clamped[i]
    }

    /// Film-substrate coupling conductance per unit area, W/(m^2 K).
    pub fn coupling_conductance(&self) -> f64 {
        self.vertical_conductance
            .unwrap_or(self.oxide.thermal_conductivity / self.oxide.thickness)
    }

    /// Physical x-coordinate of a cell center, window centered at 0.
    pub fn x_of(&self, ix: usize) -> f64 {
        (ix as f64 + 0.5 - self.nx as f64 / 2.0) * self.cell_size
    }

    pub fn y_of(&self, iy: usize) -> f64 {
        (iy as f64 + 0.5 - self.ny as f64 / 2.0) * self.cell_size
    }

    /// Cell containing the physical point, if inside the window.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = x / self.cell_size + self.nx as f64 / 2.0;
        let fy = y / self.cell_size + self.ny as f64 / 2.0;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        (ix < self.nx && iy < self.ny).then_some((ix, iy))
    }
}

/// Temperature deltas above the sink for both layers at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureField {
    pub film_dt: Grid,
    pub substrate_dt: Grid,
    /// Seconds since the start of the run.
    pub timestamp: f64,
}

impl TemperatureField {
    pub fn zeros(scene: &ThermalScene) -> Self {
        TemperatureField {
            film_dt: Grid::zeros(scene.nx, scene.ny),
            substrate_dt: Grid::zeros(scene.nx, scene.ny),
            timestamp: 0.0,
        }
    }

    /// Total thermal energy above the sink, J.
    pub fn energy(&self, scene: &ThermalScene) -> f64 {
        let cell_area = scene.cell_size * scene.cell_size;
        let cf = scene.metal.areal_heat_capacity() * cell_area;
        let cs = scene.oxide.areal_heat_capacity() * cell_area;
        let mut e = 0.0;
        for i in 0..scene.nx * scene.ny {
            match scene.mask[i] {
                Region::Metal => {
                    e += cf * self.film_dt.as_slice()[i] + cs * self.substrate_dt.as_slice()[i];
                }
                Region::Substrate => e += cs * self.substrate_dt.as_slice()[i],
                Region::OffDevice => {}
            }
        }
        e
    }

    pub fn max_abs_diff(&self, other: &TemperatureField) -> f64 {
        let d1 = self
            .film_dt
            .as_slice()
            .iter()
            .zip(other.film_dt.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let d2 = self
            .substrate_dt
            .as_slice()
            .iter()
            .zip(other.substrate_dt.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        d1.max(d2)
    }
}

/// Modulated drive applied to the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriveKind {
    /// Square-wave current injection, amperes during the on phase.
    DcSquare { amplitude_a: f64 },
    /// Square-modulated RF tone; only the absorbed-power envelope (W,
    /// spread uniformly over the current-carrying strip) is resolved.
    RfSquare { absorbed_power_w: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveWaveform {
    #[serde(flatten)]
    pub kind: DriveKind,
    /// Hz
    pub modulation_frequency: f64,
    /// On fraction of each cycle, in (0, 1).
    pub duty: f64,
}

impl DriveWaveform {
    pub fn validate(&self) -> Result<()> {
        if !(self.modulation_frequency > 0.0) {
            return Err(Error::config("drive.modulation_frequency must be > 0"));
        }
        if !(self.duty > 0.0 && self.duty < 1.0) {
            return Err(Error::config("drive.duty must lie in (0, 1)"));
        }
        let amp = match self.kind {
            DriveKind::DcSquare { amplitude_a } => amplitude_a,
            DriveKind::RfSquare { absorbed_power_w } => absorbed_power_w,
        };
        if amp < 0.0 {
            return Err(Error::config("drive amplitude must be >= 0"));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.modulation_frequency
    }

    /// True while the drive is on at cycle phase `phase` in [0, 1).
    pub fn is_on(&self, phase: f64) -> bool {
        phase < self.duty
    }
}
