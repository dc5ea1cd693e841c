//! Seeded four-wave-mixing twin-beam source.
//!
//! A bright probe seed is amplified with gain `G`; the process emits a
//! correlated conjugate beam. After transmissions `eta_p` / `eta_c` the
//! normalized intensity-difference variance (1 = shot-noise limit) is
//!
//! ```text
//! V = 1 + 2(G-1) * [eta_p^2 G - 2 eta_p eta_c G + eta_c^2 (G-1)]
//!               / [eta_p G + eta_c (G-1)]
//! ```
//!
//! Bright beams are modeled as jointly Gaussian photon-count fluctuations
//! with moments matched to that variance; loss is Gaussian-approximated
//! binomial thinning. Both are excellent at the >= 1e4 photons/bin regime
//! this module enforces.

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

/// Four-wave-mixing source parameters.
///
/// `excess_noise_p` / `excess_noise_c` are uncorrelated technical noise
/// variances added to each detected beam, expressed relative to that beam's
/// shot noise (0 = quantum limited). They are ignored by the pure analytic
/// model [`variance_with_loss`] and included by [`total_normalized_variance`]
/// and the Monte-Carlo sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FwmParams {
    /// FWM gain, G >= 1.
    pub gain: f64,
    /// Probe transmission (includes sample reflection and path losses).
    pub eta_p: f64,
    /// Conjugate transmission.
    pub eta_c: f64,
    /// Seed photon flux at the cell input, photons/s.
    pub seed_flux: f64,
    #[serde(default)]
    pub excess_noise_p: f64,
    #[serde(default)]
    pub excess_noise_c: f64,
}

impl FwmParams {
    pub fn new(gain: f64, eta_p: f64, eta_c: f64, seed_flux: f64) -> Self {
        FwmParams { gain, eta_p, eta_c, seed_flux, excess_noise_p: 0.0, excess_noise_c: 0.0 }
    }

    /// A transmission may be 0 (beam fully lost) but a source with both
    /// output beams dead carries no light to normalize against.
    pub fn validate(&self) -> Result<()> {
        if !self.gain.is_finite() || self.gain < 1.0 {
            return Err(Error::domain(format!("gain must be >= 1, got {}", self.gain)));
        }
        for (name, eta) in [("eta_p", self.eta_p), ("eta_c", self.eta_c)] {
            if !eta.is_finite() || !(0.0..=1.0).contains(&eta) {
                return Err(Error::domain(format!("{name} must lie in [0, 1], got {eta}")));
            }
        }
        if self.eta_p == 0.0 && (self.eta_c == 0.0 || self.gain == 1.0) {
            return Err(Error::domain("no transmitted light: both beams are dark"));
        }
        if !(self.seed_flux > 0.0) {
            return Err(Error::domain(format!("seed_flux must be > 0, got {}", self.seed_flux)));
        }
        for (name, e) in [("excess_noise_p", self.excess_noise_p), ("excess_noise_c", self.excess_noise_c)] {
            if !e.is_finite() || e < 0.0 {
                return Err(Error::domain(format!("{name} must be >= 0, got {e}")));
            }
        }
        Ok(())
    }

    /// Mean transmitted probe flux, photons/s.
    pub fn probe_flux(&self) -> f64 {
        self.eta_p * self.gain * self.seed_flux
    }

    /// Mean transmitted conjugate flux, photons/s.
    pub fn conjugate_flux(&self) -> f64 {
        self.eta_c * (self.gain - 1.0) * self.seed_flux
    }
}

/// Normalized intensity-difference variance after gain and loss (1 = shot
/// noise). Pure analytic model; excess-noise fields are ignored.
pub fn variance_with_loss(params: &FwmParams) -> Result<f64> {
    params.validate()?;
    let g = params.gain;
    if g == 1.0 {
        // No gain: a transmitted coherent pair is exactly shot-noise limited.
        return Ok(1.0);
    }
    let (ep, ec) = (params.eta_p, params.eta_c);
    let num = ep * ep * g - 2.0 * ep * ec * g + ec * ec * (g - 1.0);
    let den = ep * g + ec * (g - 1.0);
    Ok(1.0 + 2.0 * (g - 1.0) * num / den)
}

/// Normalized differential variance including the configured per-beam excess
/// technical noise. Excess noise enters after loss, each beam contributing
/// `excess * <N_beam>` of extra variance.
pub fn total_normalized_variance(params: &FwmParams) -> Result<f64> {
    let v = variance_with_loss(params)?;
    let mu_p = params.probe_flux();
    let mu_c = params.conjugate_flux();
    let total = mu_p + mu_c;
    Ok(v + (params.excess_noise_p * mu_p + params.excess_noise_c * mu_c) / total)
}

/// Relative noise in decibels; 0 dB = shot-noise limit.
pub fn squeezing_db(v: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::domain(format!("variance must be > 0 to express in dB, got {v}")));
    }
    Ok(10.0 * v.log10())
}

/// Conjugate transmission minimizing the differential variance at fixed gain
/// and probe transmission, with the minimizer located to 1e-6 and ties broken
/// toward `eta_c = 1`.
///
/// The variance is unimodal in `eta_c` on (0, inf) (its derivative has a
/// single positive root), so a golden-section search over (0, 1] suffices.
pub fn optimize_conjugate_loss(gain: f64, eta_p: f64) -> Result<(f64, f64)> {
    let probe = FwmParams::new(gain, eta_p, 1.0, 1.0);
    probe.validate()?;
    if eta_p == 0.0 {
        return Err(Error::domain("eta_p must be > 0 to optimize the conjugate"));
    }
    let v_of = |ec: f64| {
        variance_with_loss(&FwmParams::new(gain, eta_p, ec, 1.0)).expect("validated params")
    };

    let (mut lo, mut hi) = (1e-9, 1.0);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (v_of(x1), v_of(x2));
    while hi - lo > 1e-9 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = v_of(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = v_of(x2);
        }
    }
    let eta_star = 0.5 * (lo + hi);
    let v_star = v_of(eta_star);
    let v_boundary = v_of(1.0);
    // Boundary optimum or a flat landscape (G = 1) resolves toward eta_c = 1.
    if v_boundary <= v_star + 1e-12 * v_star.abs().max(1.0) {
        Ok((1.0, v_boundary))
    } else {
        Ok((eta_star, v_star))
    }
}

/// Photon counts per sample bin for a correlated probe/conjugate pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinBeamTrace {
    pub probe_counts: Vec<f64>,
    pub conjugate_counts: Vec<f64>,
    /// Duration of one sample bin, seconds.
    pub bin_duration: f64,
    pub rng_seed: u64,
    pub rng_stream: u64,
}

impl TwinBeamTrace {
    pub fn len(&self) -> usize {
        self.probe_counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probe_counts.is_empty()
    }

    pub fn differential(&self) -> Vec<f64> {
        self.probe_counts
            .iter()
            .zip(&self.conjugate_counts)
            .map(|(p, c)| p - c)
            .collect()
    }

    /// Empirical Var(N_p - N_c) / (<N_p> + <N_c>).
    pub fn normalized_differential_variance(&self) -> f64 {
        let n = self.len() as f64;
        let (mut sp, mut sc) = (0.0, 0.0);
        for i in 0..self.len() {
            sp += self.probe_counts[i];
            sc += self.conjugate_counts[i];
        }
        let mean_d = (sp - sc) / n;
        let mut ss = 0.0;
        for i in 0..self.len() {
            let d = self.probe_counts[i] - self.conjugate_counts[i] - mean_d;
            ss += d * d;
        }
        let var = ss / (n - 1.0);
        var / ((sp + sc) / n)
    }
}

/// Photons/bin below which the Gaussian bright-beam approximation is not
/// trusted; sampling requests under it are rejected.
pub const MIN_PHOTONS_PER_BIN: f64 = 1e4;

fn check_sampling_args(n_bins: usize, bin_duration: f64) -> Result<()> {
    if n_bins == 0 {
        return Err(Error::domain("n_bins must be >= 1"));
    }
    if !(bin_duration > 0.0) {
        return Err(Error::domain(format!("bin_duration must be > 0, got {bin_duration}")));
    }
    Ok(())
}

/// Monte-Carlo realization of the twin-beam statistics.
///
/// Per bin the pre-loss pair is drawn jointly Gaussian with the bright-beam
/// moments (seed photons N per bin):
/// mean_p = G N, Var_p = G(2G-1) N, mean_c = (G-1) N,
/// Var_c = (G-1)(2G-1) N, Cov = 2G(G-1) N.
/// Each beam is then thinned to its transmission (adding binomial variance
/// eta(1-eta)n) and receives its configured excess technical noise. The
/// normalized differential variance of the result converges to
/// [`total_normalized_variance`].
pub fn sample_twin_beams(
    params: &FwmParams,
    n_bins: usize,
    bin_duration: f64,
    seed: u64,
    stream: u64,
) -> Result<TwinBeamTrace> {
    params.validate()?;
    check_sampling_args(n_bins, bin_duration)?;
    let n_seed = params.seed_flux * bin_duration;
    if n_seed < MIN_PHOTONS_PER_BIN {
        return Err(Error::domain(format!(
            "seed_flux*bin_duration = {n_seed:.3e} photons/bin is below the Gaussian-statistics \
             regime ({MIN_PHOTONS_PER_BIN:.0e}); use a larger bin or brighter seed",
        )));
    }
    let g = params.gain;
    let mean_p = g * n_seed;
    let mean_c = (g - 1.0) * n_seed;
    let var_p = g * (2.0 * g - 1.0) * n_seed;
    let var_c = (g - 1.0) * (2.0 * g - 1.0) * n_seed;
    let cov = 2.0 * g * (g - 1.0) * n_seed;
    // Cholesky factor of the 2x2 covariance.
    let sig_p = var_p.sqrt();
    let c10 = if sig_p > 0.0 { cov / sig_p } else { 0.0 };
    let c11 = (var_c - c10 * c10).max(0.0).sqrt();

    let mut rng = stream_rng(seed, stream);
    let mut probe = Vec::with_capacity(n_bins);
    let mut conj = Vec::with_capacity(n_bins);
    for _ in 0..n_bins {
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let np = (mean_p + sig_p * z0).max(0.0);
        let nc = (mean_c + c10 * z0 + c11 * z1).max(0.0);
        let np = thin(np, params.eta_p, &mut rng);
        let nc = thin(nc, params.eta_c, &mut rng);
        let np = add_excess(np, params.excess_noise_p, &mut rng);
        let nc = add_excess(nc, params.excess_noise_c, &mut rng);
        probe.push(np);
        conj.push(nc);
    }
    Ok(TwinBeamTrace { probe_counts: probe, conjugate_counts: conj, bin_duration, rng_seed: seed, rng_stream: stream })
}

/// Gaussian-approximated binomial thinning: mean eta*n, added variance
/// eta(1-eta)n. Draws one normal even when the factor is trivial so that
/// the stream position does not depend on parameter values.
#[inline]
fn thin<R: Rng>(n: f64, eta: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    if eta >= 1.0 {
        return n;
    }
    if eta <= 0.0 {
        return 0.0;
    }
    (eta * n + (eta * (1.0 - eta) * n).sqrt() * z).max(0.0)
}

#[inline]
fn add_excess<R: Rng>(n: f64, excess: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    if excess <= 0.0 {
        return n;
    }
    (n + (excess * n).sqrt() * z).max(0.0)
}

/// Which statistics the source emits for a given parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceMode {
    /// Correlated twin beams per the gain/loss model.
    Squeezed,
    /// Independent Poisson pair at the same transmitted fluxes (the
    /// shot-noise-limited reference).
    Coherent,
}

/// Sample either the squeezed pair or its equal-flux coherent reference.
pub fn sample_pair(
    params: &FwmParams,
    mode: SourceMode,
    n_bins: usize,
    bin_duration: f64,
    seed: u64,
    stream: u64,
) -> Result<TwinBeamTrace> {
    match mode {
        SourceMode::Squeezed => sample_twin_beams(params, n_bins, bin_duration, seed, stream),
        SourceMode::Coherent => {
            params.validate()?;
            sample_coherent_pair(
                params.probe_flux(),
                params.conjugate_flux(),
                n_bins,
                bin_duration,
                seed,
                stream,
            )
        }
    }
}

/// Shot-noise reference: two independent Poisson beams at the given fluxes.
pub fn sample_coherent_pair(
    flux_p: f64,
    flux_c: f64,
    n_bins: usize,
    bin_duration: f64,
    seed: u64,
    stream: u64,
) -> Result<TwinBeamTrace> {
    if flux_p < 0.0 || flux_c < 0.0 {
        return Err(Error::domain("fluxes must be >= 0"));
    }
    if flux_p == 0.0 && flux_c == 0.0 {
        return Err(Error::domain("at least one beam must carry light"));
    }
    check_sampling_args(n_bins, bin_duration)?;
    let mut rng = stream_rng(seed, stream);
    let lambda_p = flux_p * bin_duration;
    let lambda_c = flux_c * bin_duration;
    let pois_p = (lambda_p > 0.0).then(|| Poisson::new(lambda_p).expect("positive lambda"));
    let pois_c = (lambda_c > 0.0).then(|| Poisson::new(lambda_c).expect("positive lambda"));
    let mut probe = Vec::with_capacity(n_bins);
    let mut conj = Vec::with_capacity(n_bins);
    for _ in 0..n_bins {
        probe.push(pois_p.as_ref().map_or(0.0, |p| p.sample(&mut rng)));
        conj.push(pois_c.as_ref().map_or(0.0, |p| p.sample(&mut rng)));
    }
    Ok(TwinBeamTrace { probe_counts: probe, conjugate_counts: conj, bin_duration, rng_seed: seed, rng_stream: stream })
}

/// Relative intensity noise at one frequency, in dB: a 1/f^2 technical term
/// that crosses the shot-noise level at `corner_hz`, over the squeezing floor
/// set by the source (including excess noise).
pub fn noise_at(params: &FwmParams, corner_hz: f64, f_hz: f64) -> Result<f64> {
    if !(corner_hz > 0.0) || !(f_hz > 0.0) {
        return Err(Error::domain("frequencies must be > 0"));
    }
    let floor = total_normalized_variance(params)?;
    let technical = (corner_hz / f_hz).powi(2);
    squeezing_db(floor + technical)
}

/// Qualitative intensity-noise spectrum: log-spaced points from two decades
/// below the technical corner up to `f_max`.
pub fn noise_spectrum(
    params: &FwmParams,
    technical_corner_hz: f64,
    f_max: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(technical_corner_hz > 0.0) {
        return Err(Error::domain("technical_corner_hz must be > 0"));
    }
    if f_max <= technical_corner_hz {
        return Err(Error::domain("f_max must exceed the technical corner"));
    }
    let f_min = technical_corner_hz / 100.0;
    let n = 400;
    let mut out = Vec::with_capacity(n + 1);
    let log_span = (f_max / f_min).ln();
    for i in 0..=n {
        let f = if i == n { f_max } else { f_min * (log_span * i as f64 / n as f64).exp() };
        out.push((f, noise_at(params, technical_corner_hz, f)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(v: f64) -> f64 {
        10.0 * v.log10()
    }

    #[test]
    fn gain_one_is_shot_noise_limited() {
        let v = variance_with_loss(&FwmParams::new(1.0, 0.5, 0.9, 1.0)).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn unit_transmission_reduces_to_inverse_two_g_minus_one() {
        let v = variance_with_loss(&FwmParams::new(5.0, 1.0, 1.0, 1.0)).unwrap();
        assert!((v - 1.0 / 9.0).abs() < 1e-15, "v = {v}");
        assert!((db(v) + 9.54).abs() < 0.01);
    }

    #[test]
    fn equal_loss_closed_form() {
        // V = 1 - 2(G-1) eta / (2G-1) at eta_p = eta_c = eta.
        let v = variance_with_loss(&FwmParams::new(5.0, 0.75, 0.75, 1.0)).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15, "v = {v}");
        assert!((db(v) + 4.77).abs() < 0.01);
    }

    #[test]
    fn fully_lost_probe_leaves_conjugate_excess_noise() {
        let v = variance_with_loss(&FwmParams::new(5.0, 0.0, 1.0, 1.0)).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_parameters_are_domain_errors() {
        assert!(variance_with_loss(&FwmParams::new(0.5, 0.8, 0.8, 1.0)).is_err());
        assert!(variance_with_loss(&FwmParams::new(2.0, 1.2, 0.8, 1.0)).is_err());
        assert!(variance_with_loss(&FwmParams::new(2.0, 0.8, -0.1, 1.0)).is_err());
        assert!(variance_with_loss(&FwmParams::new(2.0, 0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn squeezing_db_examples() {
        assert_eq!(squeezing_db(1.0).unwrap(), 0.0);
        assert!((squeezing_db(0.25).unwrap() + 6.0206).abs() < 1e-3);
        assert!((squeezing_db(1.0 / 3.0).unwrap() + 4.7712).abs() < 1e-3);
        assert!(squeezing_db(0.0).is_err());
        assert!(squeezing_db(-1.0).is_err());
    }

    /// Dense-grid oracle for the conjugate-loss optimizer.
    fn grid_search_conjugate(gain: f64, eta_p: f64) -> (f64, f64) {
        let mut best = (1.0, f64::INFINITY);
        let steps = 10_000;
        // Scan downward so ties resolve toward eta_c = 1.
        for i in (1..=steps).rev() {
            let ec = i as f64 / steps as f64;
            let v = variance_with_loss(&FwmParams::new(gain, eta_p, ec, 1.0)).unwrap();
            if v < best.1 {
                best = (ec, v);
            }
        }
        best
    }

    #[test]
    fn optimizer_boundary_case_unit_probe() {
        let (ec, v) = optimize_conjugate_loss(5.0, 1.0).unwrap();
        assert_eq!(ec, 1.0);
        assert!((v - 1.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn optimizer_matches_pre_build_oracle_at_paper_operating_point() {
        let (ec, v) = optimize_conjugate_loss(5.0, 0.75).unwrap();
        let (ec_oracle, v_oracle) = grid_search_conjugate(5.0, 0.75);
        assert!((ec - ec_oracle).abs() < 1e-3, "{ec} vs oracle {ec_oracle}");
        assert!((ec - 0.890).abs() < 1e-3);
        assert!((v - v_oracle).abs() < 1e-6);
        assert!((db(v) + 6.19).abs() < 0.05, "v_min = {} dB", db(v));
    }

    #[test]
    fn optimizer_flat_landscape_ties_toward_unity() {
        let (ec, v) = optimize_conjugate_loss(1.0, 0.6).unwrap();
        assert_eq!(ec, 1.0);
        assert_eq!(v, 1.0);
    }

    #[test]
    fn twin_beam_means_match_gain_and_loss() {
        let params = FwmParams::new(3.0, 0.8, 0.9, 1e12);
        let trace = sample_twin_beams(&params, 20_000, 1e-7, 11, 0).unwrap();
        let mp: f64 = trace.probe_counts.iter().sum::<f64>() / trace.len() as f64;
        let mc: f64 = trace.conjugate_counts.iter().sum::<f64>() / trace.len() as f64;
        let exp_p = params.probe_flux() * trace.bin_duration;
        let exp_c = params.conjugate_flux() * trace.bin_duration;
        assert!((mp / exp_p - 1.0).abs() < 5e-3, "probe mean {mp} vs {exp_p}");
        assert!((mc / exp_c - 1.0).abs() < 5e-3, "conj mean {mc} vs {exp_c}");
    }

    #[test]
    fn monte_carlo_variance_tracks_analytic_model() {
        // Lossless G = 2 pair: V = 1/3, tolerance 0.05 dB over 1e6 bins.
        let params = FwmParams::new(2.0, 1.0, 1.0, 1e11);
        let trace = sample_twin_beams(&params, 1_000_000, 1e-7, 42, 0).unwrap();
        let v = trace.normalized_differential_variance();
        assert!((db(v) - db(1.0 / 3.0)).abs() < 0.05, "measured {} dB", db(v));
    }

    #[test]
    fn monte_carlo_with_dead_probe_shows_conjugate_excess() {
        let params = FwmParams::new(5.0, 0.0, 1.0, 1e11);
        let trace = sample_twin_beams(&params, 1_000_000, 1e-7, 7, 0).unwrap();
        let v = trace.normalized_differential_variance();
        assert!((db(v) - db(9.0)).abs() < 0.1, "measured {} dB", db(v));
    }

    #[test]
    fn sampling_is_deterministic_for_seed_and_stream() {
        let params = FwmParams::new(4.0, 0.7, 0.8, 1e12);
        let a = sample_twin_beams(&params, 512, 1e-7, 3, 9).unwrap();
        let b = sample_twin_beams(&params, 512, 1e-7, 3, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_rejects_dim_bins() {
        let params = FwmParams::new(2.0, 1.0, 1.0, 1e6);
        let err = sample_twin_beams(&params, 10, 1e-9, 0, 0).unwrap_err();
        assert!(err.to_string().contains("Gaussian-statistics regime"));
    }

    #[test]
    fn coherent_pair_sits_at_shot_noise() {
        let trace = sample_coherent_pair(1e11, 1e11, 1_000_000, 1e-7, 5, 0).unwrap();
        let v = trace.normalized_differential_variance();
        assert!(db(v).abs() < 0.05, "measured {} dB", db(v));
    }

    #[test]
    fn coherent_pair_probe_only_is_unit_variance() {
        let trace = sample_coherent_pair(1e11, 0.0, 200_000, 1e-7, 5, 0).unwrap();
        let v = trace.normalized_differential_variance();
        assert!(db(v).abs() < 0.1, "measured {} dB", db(v));
        assert!(trace.conjugate_counts.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn coherent_pair_is_deterministic() {
        let a = sample_coherent_pair(1e11, 9e10, 256, 1e-7, 12, 1).unwrap();
        let b = sample_coherent_pair(1e11, 9e10, 256, 1e-7, 12, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spectrum_floor_matches_configured_squeezing() {
        let params = FwmParams::new(5.0, 0.75, 0.75, 1e12);
        let at_40k = noise_at(&params, 1e3, 40e3).unwrap();
        assert!((at_40k - (-4.7712)).abs() < 0.1, "{at_40k} dB");
        // Flat 0 dB floor when there is no gain.
        let flat = FwmParams::new(1.0, 0.9, 0.9, 1e12);
        assert!(noise_at(&flat, 1e3, 40e3).unwrap().abs() < 0.01);
        // Approaches the floor from above as f -> infinity.
        let far = noise_at(&params, 1e3, 1e9).unwrap();
        let floor = squeezing_db(total_normalized_variance(&params).unwrap()).unwrap();
        assert!(far >= floor && far - floor < 1e-6);
    }

    #[test]
    fn spectrum_is_monotone_decreasing() {
        let params = FwmParams::new(5.0, 0.75, 0.9, 1e12);
        let spec = noise_spectrum(&params, 2e3, 100e3).unwrap();
        assert!(spec.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));
        assert_eq!(spec.last().unwrap().0, 100e3);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Eq. 1 reduction at unit transmission: V = 1/(2G-1).
            #[test]
            fn unit_transmission_reduction(g in 1.0f64..50.0) {
                let v = variance_with_loss(&FwmParams::new(g, 1.0, 1.0, 1.0)).unwrap();
                prop_assert!((v - 1.0 / (2.0 * g - 1.0)).abs() < 1e-12);
            }

            /// At equal loss, V decreases with gain and increases as eta drops.
            #[test]
            fn monotone_in_gain_and_loss(
                g in 1.01f64..20.0,
                eta in 0.05f64..0.999,
            ) {
                let v = variance_with_loss(&FwmParams::new(g, eta, eta, 1.0)).unwrap();
                let v_more_gain = variance_with_loss(&FwmParams::new(g + 0.5, eta, eta, 1.0)).unwrap();
                let v_more_loss = variance_with_loss(&FwmParams::new(g, eta * 0.9, eta * 0.9, 1.0)).unwrap();
                prop_assert!(v_more_gain < v);
                prop_assert!(v_more_loss > v);
            }

            /// Optimizer agrees with a dense-grid oracle.
            #[test]
            fn optimizer_matches_grid_oracle(
                g in 1.1f64..15.0,
                eta_p in 0.2f64..1.0,
            ) {
                let (ec, v) = optimize_conjugate_loss(g, eta_p).unwrap();
                let (ec_oracle, v_oracle) = tests::grid_search_conjugate(g, eta_p);
                prop_assert!((ec - ec_oracle).abs() < 1e-3,
                    "opt {ec} vs oracle {ec_oracle} at G={g}, eta_p={eta_p}");
                prop_assert!(v <= v_oracle + 1e-9);
            }

            /// V(eta_c) has a unique interior or boundary minimum; at
            /// eta_p = 1 the minimum sits on the eta_c = 1 boundary.
            #[test]
            fn unique_minimum_structure(g in 1.1f64..15.0, eta_p in 0.2f64..1.0) {
                let (ec_opt, v_opt) = optimize_conjugate_loss(g, eta_p).unwrap();
                // Strictly decreasing before, strictly increasing after.
                let probe = |e: f64| variance_with_loss(&FwmParams::new(g, eta_p, e, 1.0)).unwrap();
                let mut prev = probe(0.01);
                let mut crossed = false;
                for i in 2..=100 {
                    let e = i as f64 / 100.0;
                    let v = probe(e);
                    if v > prev + 1e-14 {
                        crossed = true;
                    } else if crossed {
                        prop_assert!(false, "second descent after minimum at G={g} eta_p={eta_p}");
                    }
                    prev = v;
                }
                prop_assert!(v_opt <= probe(ec_opt.min(0.999)) + 1e-9);
            }

            #[test]
            fn boundary_minimum_at_unit_probe(g in 1.1f64..15.0) {
                let (ec, _) = optimize_conjugate_loss(g, 1.0).unwrap();
                prop_assert_eq!(ec, 1.0);
            }
        }
    }
}
