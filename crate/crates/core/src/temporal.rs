//! Time-domain observables at a fixed pair of emission directions: the
//! two-photon temporal amplitude and the Hong-Ou-Mandel coincidence
//! profile.
//!
//! With a cw pump the spectral amplitude lives on the line
//! ω_i = ω_p⁰ - ω_s, so the temporal amplitude reduces to a 1D transform in
//! τ = τ_s - τ_i up to a global phase, and the HOM interference term needs
//! the amplitude with exchanged frequencies at unchanged angles — evaluated
//! here by caching φ on a frequency grid symmetric about ω_p⁰/2 so the swap
//! is an index lookup.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::biphoton::{BiphotonContext, BiphotonError};
use crate::consts::{C, EPS_0, HBAR};
use crate::numerics::CompensatedSum;

/// 8-point Gauss-Legendre nodes/weights on [-1, 1].
const GL8_X: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_W: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// One cached spectral sample.
#[derive(Debug, Clone, Copy)]
pub struct SpectralNode {
    pub omega_s: f64,
    /// Quadrature weight in ω_s.
    pub weight: f64,
    /// φ(ω_s, ϑ_s, ψ_s, ω_i, ϑ_i, ψ_i).
    pub phi: Complex64,
    /// φ(ω_i, ϑ_s, ψ_s, ω_s, ϑ_i, ψ_i): frequencies exchanged, angles kept.
    pub phi_swapped: Complex64,
}

/// Spectral amplitude cached at fixed directions, ready for temporal and
/// HOM transforms.
#[derive(Debug, Clone)]
pub struct SpectralCache {
    pub omega_p: f64,
    pub theta_s: f64,
    pub theta_i: f64,
    pub nodes: Vec<SpectralNode>,
}

/// A narrow spectral feature to resolve when building the cache.
#[derive(Debug, Clone, Copy)]
pub struct SpectralSeed {
    pub omega: f64,
    pub width: f64,
}

/// Errors from temporal evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum TemporalError {
    Biphoton(BiphotonError),
    /// The cached spectrum carries no weight (no pairs at these directions).
    EmptySpectrum,
}

impl From<BiphotonError> for TemporalError {
    fn from(e: BiphotonError) -> Self {
        TemporalError::Biphoton(e)
    }
}

impl core::fmt::Display for TemporalError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TemporalError::Biphoton(e) => write!(f, "{e}"),
            TemporalError::EmptySpectrum => write!(f, "spectral norm vanishes at these directions"),
        }
    }
}

fn symmetric_cuts(omega_p: f64, range: (f64, f64), seeds: &[SpectralSeed]) -> Vec<f64> {
    let (lo, hi) = range;
    let mut cuts = vec![lo, hi];
    let mut push_shells = |center: f64, width: f64| {
        let w = width.abs().max((hi - lo) * 1e-12);
        let mut half = 0.5 * w;
        while half < (hi - lo) {
            for x in [center - half, center + half] {
                if x > lo && x < hi {
                    cuts.push(x);
                }
            }
            half *= 2.0;
        }
    };
    for s in seeds {
        push_shells(s.omega, s.width);
        // Mirror image about ω_p/2 keeps the node set swap-symmetric.
        push_shells(omega_p - s.omega, s.width);
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * omega_p);
    cuts
}

impl SpectralCache {
    /// Samples φ of `ctx` at fixed directions over `omega_range`
    /// (made symmetric about ω_p⁰/2 internally), grading panels around the
    /// seeded needles. `background_panels` controls the coarse partition of
    /// the remaining range.
    pub fn build(
        ctx: &BiphotonContext<'_>,
        theta_s: f64,
        psi_s: f64,
        theta_i: f64,
        psi_i: f64,
        omega_range: (f64, f64),
        seeds: &[SpectralSeed],
        background_panels: usize,
    ) -> Result<Self, TemporalError> {
        let omega_p = ctx.pump.omega0;
        // Symmetrize the range about ω_p/2.
        let lo = omega_range.0.min(omega_p - omega_range.1).max(1e-6 * omega_p);
        let hi = omega_p - lo;

        let mut cuts = symmetric_cuts(omega_p, (lo, hi), seeds);
        // Background partition.
        let n_bg = background_panels.max(8);
        for i in 1..n_bg {
            cuts.push(lo + (hi - lo) * i as f64 / n_bg as f64);
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-13 * omega_p);

        let mut nodes = Vec::with_capacity(8 * (cuts.len() - 1));
        for pair in cuts.windows(2) {
            let mid = 0.5 * (pair[0] + pair[1]);
            let half = 0.5 * (pair[1] - pair[0]);
            for k in 0..8 {
                let w = mid + half * GL8_X[k];
                let phi = ctx.amplitude(w, theta_s, psi_s, theta_i, psi_i)?;
                nodes.push(SpectralNode {
                    omega_s: w,
                    weight: half * GL8_W[k],
                    phi,
                    phi_swapped: Complex64::new(0.0, 0.0),
                });
            }
        }
        // Swap partner: φ at the mirrored frequency; the symmetric panel
        // construction makes it another node's φ up to rounding, and it is
        // re-evaluated only when the mirror lookup fails.
        let sorted: Vec<(f64, Complex64)> = nodes.iter().map(|n| (n.omega_s, n.phi)).collect();
        for i in 0..nodes.len() {
            let target = omega_p - nodes[i].omega_s;
            let j = sorted.partition_point(|(w, _)| *w < target);
            let mut found = None;
            for cand in j.saturating_sub(1)..(j + 2).min(sorted.len()) {
                if (sorted[cand].0 - target).abs() <= 1e-9 * omega_p {
                    found = Some(sorted[cand].1);
                    break;
                }
            }
            nodes[i].phi_swapped = match found {
                Some(phi) => phi,
                None => ctx.amplitude(target, theta_s, psi_s, theta_i, psi_i)?,
            };
        }
        Ok(SpectralCache {
            omega_p,
            theta_s,
            theta_i,
            nodes,
        })
    }

    /// Builds a cache directly from a sampled function (synthetic spectra,
    /// tests) on `panels` uniform panels over `omega_range` as given; the
    /// swap partner is evaluated from the same function at the mirrored
    /// frequency, so no range symmetrization is needed.
    pub fn from_function<F: FnMut(f64) -> Complex64>(
        omega_p: f64,
        theta_s: f64,
        theta_i: f64,
        omega_range: (f64, f64),
        panels: usize,
        mut phi: F,
    ) -> Self {
        let (lo, hi) = omega_range;
        let mut nodes = Vec::with_capacity(8 * panels);
        for p in 0..panels {
            let a = lo + (hi - lo) * p as f64 / panels as f64;
            let b = lo + (hi - lo) * (p + 1) as f64 / panels as f64;
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a);
            for k in 0..8 {
                let w = mid + half * GL8_X[k];
                nodes.push(SpectralNode {
                    omega_s: w,
                    weight: half * GL8_W[k],
                    phi: phi(w),
                    phi_swapped: phi(omega_p - w),
                });
            }
        }
        SpectralCache {
            omega_p,
            theta_s,
            theta_i,
            nodes,
        }
    }

    /// Spectral norm ∫ ω_s³ ω_i³ |φ|² dω_s over the cached support.
    pub fn weighted_norm(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        for n in &self.nodes {
            let wi = self.omega_p - n.omega_s;
            acc.add(n.weight * n.omega_s.powi(3) * wi.powi(3) * n.phi.norm_sqr());
        }
        acc.value()
    }

    /// Idler spectral photon-number density at the fixed directions,
    /// normalized so its integral over the cached range is 1. Returns
    /// (ω_i, density) pairs sorted by ω_i.
    pub fn idler_spectral_density(&self) -> Result<Vec<(f64, f64)>, TemporalError> {
        let meas = |n: &SpectralNode| {
            let wi = self.omega_p - n.omega_s;
            (self.theta_s.sin() * self.theta_i.sin()).abs()
                * n.omega_s
                * n.omega_s
                * wi
                * wi
                / (C * C * C * C)
                * n.phi.norm_sqr()
        };
        let mut norm = CompensatedSum::new();
        for n in &self.nodes {
            norm.add(n.weight * meas(n));
        }
        let total = norm.value();
        if total <= 0.0 {
            return Err(TemporalError::EmptySpectrum);
        }
        let mut out: Vec<(f64, f64)> = self
            .nodes
            .iter()
            .map(|n| (self.omega_p - n.omega_s, meas(n) / total))
            .collect();
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Ok(out)
    }
}

/// Two-photon temporal amplitude reduced to τ = τ_s - τ_i:
/// 𝒜(τ) = K ∫ dω_s √(ω_s³ ω_i³) φ(ω_s) e^{-i ω_s τ}, with the global
/// detection-phase e^{-i ω_p τ_i} dropped and
/// K = √|sin ϑ_s sin ϑ_i| ħ/(4π ε₀ c³).
pub fn temporal_amplitude(cache: &SpectralCache, tau: f64) -> Complex64 {
    let k = (cache.theta_s.sin() * cache.theta_i.sin()).abs().sqrt() * HBAR
        / (4.0 * core::f64::consts::PI * EPS_0 * C * C * C);
    let mut re = CompensatedSum::new();
    let mut im = CompensatedSum::new();
    for n in &cache.nodes {
        let wi = cache.omega_p - n.omega_s;
        let amp = (n.omega_s.powi(3) * wi.powi(3)).sqrt();
        let phase = Complex64::new(0.0, -n.omega_s * tau).exp();
        let v = n.phi * phase * (n.weight * amp);
        re.add(v.re);
        im.add(v.im);
    }
    Complex64::new(re.value(), im.value()) * k
}

/// Conditional idler detection-time density p_i(τ_i) given τ_s = 0,
/// normalized to unit integral over the requested window. Returns
/// (τ_i, p_i) samples on a uniform grid.
pub fn conditional_time_density(
    cache: &SpectralCache,
    tau_window: (f64, f64),
    samples: usize,
) -> Result<Vec<(f64, f64)>, TemporalError> {
    let n = samples.max(8);
    let dt = (tau_window.1 - tau_window.0) / (n - 1) as f64;
    let mut vals = Vec::with_capacity(n);
    let mut total = 0.0;
    for i in 0..n {
        let tau_i = tau_window.0 + dt * i as f64;
        // τ = τ_s - τ_i with τ_s = 0.
        let a = temporal_amplitude(cache, -tau_i);
        let p = a.norm_sqr();
        total += p;
        vals.push((tau_i, p));
    }
    let norm = total * dt;
    if norm <= 0.0 {
        return Err(TemporalError::EmptySpectrum);
    }
    for v in &mut vals {
        v.1 /= norm;
    }
    Ok(vals)
}

/// One point of the normalized Hong-Ou-Mandel coincidence profile:
/// R(τ_l) = 1 - ρ(τ_l) with
/// ρ = Re ∫ ω_s³ ω_i³ φ*(ω_s) φ_swapped(ω_s) e^{i(ω_s-ω_i)τ_l} dω_s / R₀.
/// Returns (R, ρ).
pub fn hom_rate(cache: &SpectralCache, tau_l: f64) -> Result<(f64, f64), TemporalError> {
    let r0 = cache.weighted_norm();
    if r0 <= 0.0 {
        return Err(TemporalError::EmptySpectrum);
    }
    Ok(hom_rate_with_norm(cache, tau_l, r0))
}

fn hom_rate_with_norm(cache: &SpectralCache, tau_l: f64, r0: f64) -> (f64, f64) {
    let mut acc = CompensatedSum::new();
    for n in &cache.nodes {
        let wi = cache.omega_p - n.omega_s;
        let w3 = n.omega_s.powi(3) * wi.powi(3);
        let phase = Complex64::new(0.0, (n.omega_s - wi) * tau_l).exp();
        acc.add((n.phi.conj() * n.phi_swapped * phase).re * n.weight * w3);
    }
    let rho = acc.value() / r0;
    (1.0 - rho, rho)
}

/// HOM profile over a uniform delay grid: (τ_l, R, ρ) triples.
pub fn hom_profile(
    cache: &SpectralCache,
    tau_range: (f64, f64),
    samples: usize,
) -> Result<Vec<(f64, f64, f64)>, TemporalError> {
    let r0 = cache.weighted_norm();
    if r0 <= 0.0 {
        return Err(TemporalError::EmptySpectrum);
    }
    let n = samples.max(2);
    let dt = (tau_range.1 - tau_range.0) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            let tau = tau_range.0 + dt * i as f64;
            let (r, rho) = hom_rate_with_norm(cache, tau, r0);
            (tau, r, rho)
        })
        .collect())
}

/// Mean oscillation period of ρ(τ) extracted from its zero crossings on a
/// uniform fine grid; `None` when fewer than four crossings are present.
pub fn oscillation_period(profile: &[(f64, f64, f64)]) -> Option<f64> {
    let mut crossings = Vec::new();
    for w in profile.windows(2) {
        let (t0, _, r0) = w[0];
        let (t1, _, r1) = w[1];
        if r0 == 0.0 {
            continue;
        }
        if (r0 > 0.0) != (r1 > 0.0) {
            // Linear interpolation of the crossing.
            crossings.push(t0 + (t1 - t0) * r0 / (r0 - r1));
        }
    }
    if crossings.len() < 4 {
        return None;
    }
    // Average spacing between consecutive crossings = half period.
    let spacing =
        (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64;
    Some(2.0 * spacing)
}
