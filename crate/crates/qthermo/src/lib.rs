//! Desk-scale digital twin of squeezed-light thermoreflective imaging.
//!
//! The simulation chain mirrors a real quantum imaging bench:
//!
//! 1. **Source** ([`source`]): a seeded four-wave-mixing cell emits a bright
//!    probe/conjugate twin-beam pair whose intensity-difference noise sits
//!    below the shot-noise limit. The analytic variance model with losses,
//!    its optimizer, and a Monte-Carlo trace generator live here.
//! 2. **Sample** ([`thermal`]): a patterned metal film on a layered substrate
//!    is heated by a modulated electrical or RF drive (plus weak laser
//!    heating). An explicit two-layer finite-difference solver produces the
//!    periodic temperature field.
//! 3. **Detection** ([`detection`]): temperature modulates reflectivity
//!    (ΔR/R = C_TR·ΔT), the reflected probe is differenced against the
//!    conjugate on a balanced detector, and hot/cold frames are demodulated
//!    into per-pixel temperature estimates with calibrated uncertainty.
//! 4. **Imaging** ([`scan`]): a raster scan runs the full pipeline per pixel
//!    and assembles heat-map images with an acquisition-time budget.
//! 5. **Analysis** ([`fitting`]): cycle-resolved transients, double
//!    exponential fits, normalized-variance transients, and the
//!    resolution-vs-averaging law.
//!
//! The [`cli`] module wires everything to the `qthermo` binary; [`config`]
//! holds the run-configuration schema and the shipped scene/source presets.

pub mod cli;
pub mod config;
pub mod detection;
pub mod error;
pub mod fitting;
pub mod grid;
pub mod report;
pub mod rng;
pub mod scan;
pub mod source;
pub mod thermal;

pub use error::{Error, Result};
