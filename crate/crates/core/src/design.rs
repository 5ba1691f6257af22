//! Structure-design machinery: pump transmission maps over layer
//! thicknesses, extraction of the first-transmission-band ridge, location
//! and refinement of the narrow emission peaks, and maximization of the
//! relative signal density along the one-parameter ridge family.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::biphoton::{BiphotonContext, BiphotonError, Channel, ReferenceContext};
use crate::materials::{MaterialId, MaterialSet};
use crate::numerics::{golden_section_max, locate_peaks_1d, PeakSeed};
use crate::pump::PumpSpec;
use crate::stack::{
    locate_resonances, polish_resonance, transmittance, Layer, LayeredStructure, Pol, Resonance,
    SphericalMode, StackError,
};

/// Slot of an alternating-template position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Diel,
    Metal,
}

/// Two-material template: an ordered slot pattern instantiated with
/// dielectric/metal thicknesses.
#[derive(Debug, Clone)]
pub struct StackTemplate {
    pub ambient: MaterialId,
    pub diel: MaterialId,
    pub metal: MaterialId,
    pub pattern: Vec<Slot>,
}

impl StackTemplate {
    /// N dielectric layers interleaved with N-1 metal layers
    /// (D M D ... M D).
    pub fn alternating(ambient: MaterialId, diel: MaterialId, metal: MaterialId, n_diel: usize) -> Self {
        let mut pattern = Vec::new();
        for i in 0..(2 * n_diel).saturating_sub(1) {
            pattern.push(if i % 2 == 0 { Slot::Diel } else { Slot::Metal });
        }
        StackTemplate {
            ambient,
            diel,
            metal,
            pattern,
        }
    }

    /// Metal-mirror resonator: M D M.
    pub fn resonator(ambient: MaterialId, diel: MaterialId, metal: MaterialId) -> Self {
        StackTemplate {
            ambient,
            diel,
            metal,
            pattern: vec![Slot::Metal, Slot::Diel, Slot::Metal],
        }
    }

    pub fn build(&self, d_diel: f64, d_metal: f64) -> LayeredStructure {
        let layers = self
            .pattern
            .iter()
            .map(|slot| match slot {
                Slot::Diel => Layer {
                    material: self.diel,
                    thickness: d_diel,
                },
                Slot::Metal => Layer {
                    material: self.metal,
                    thickness: d_metal,
                },
            })
            .collect();
        LayeredStructure::new(self.ambient, self.ambient, layers)
    }
}

/// Pump transmission/absorption over a thickness grid.
#[derive(Debug, Clone)]
pub struct TransmissionMap {
    pub d_diel: Vec<f64>,
    pub d_metal: Vec<f64>,
    /// `t[i][j]` at (d_diel[i], d_metal[j]); same layout for `a`.
    pub t: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
}

/// Computes the pump intensity transmission and absorption over a
/// (d_diel, d_metal) grid.
pub fn transmission_map(
    template: &StackTemplate,
    materials: &MaterialSet,
    pump_mode: &SphericalMode,
    d_diel_range: (f64, f64),
    n_diel: usize,
    d_metal_range: (f64, f64),
    n_metal: usize,
) -> Result<TransmissionMap, StackError> {
    let d_diel: Vec<f64> = (0..n_diel)
        .map(|i| d_diel_range.0 + (d_diel_range.1 - d_diel_range.0) * i as f64 / (n_diel.max(2) - 1) as f64)
        .collect();
    let d_metal: Vec<f64> = (0..n_metal)
        .map(|j| d_metal_range.0 + (d_metal_range.1 - d_metal_range.0) * j as f64 / (n_metal.max(2) - 1) as f64)
        .collect();
    let mut t = vec![vec![0.0; d_metal.len()]; d_diel.len()];
    let mut a = vec![vec![0.0; d_metal.len()]; d_diel.len()];
    for (i, &dd) in d_diel.iter().enumerate() {
        for (j, &dm) in d_metal.iter().enumerate() {
            let s = template.build(dd, dm);
            let (ti, _, ai) = transmittance(&s, materials, pump_mode)?;
            t[i][j] = ti;
            a[i][j] = ai;
        }
    }
    Ok(TransmissionMap {
        d_diel,
        d_metal,
        t,
        a,
    })
}

/// Counts transmission bands: local maxima of T along d_diel at fixed
/// d_metal.
pub fn band_count(
    template: &StackTemplate,
    materials: &MaterialSet,
    pump_mode: &SphericalMode,
    d_diel_range: (f64, f64),
    d_metal: f64,
    samples: usize,
) -> Result<usize, StackError> {
    let mut err = None;
    let mut f = |d: f64| match transmittance(&template.build(d, d_metal), materials, pump_mode) {
        Ok((t, _, _)) => t,
        Err(e) => {
            err = Some(e);
            0.0
        }
    };
    let peaks = locate_peaks_1d(&mut f, d_diel_range.0, d_diel_range.1, samples, 0.05, 1e-9);
    match err {
        Some(e) => Err(e),
        None => Ok(peaks.len()),
    }
}

/// One point of the first-band ridge.
#[derive(Debug, Clone, Copy)]
pub struct RidgePoint {
    pub d_diel: f64,
    pub d_metal: f64,
    pub t_pump: f64,
    pub a_pump: f64,
}

/// Selects the first-band fringe at a reference metal thickness: fringe
/// maxima of T(d_diel) cluster into bands separated by forbidden gaps, and
/// the design family is the first fringe above the widest gap (for
/// single-cavity templates with uniformly spaced fringes the first fringe
/// itself).
fn first_band_seed(
    template: &StackTemplate,
    materials: &MaterialSet,
    pump_mode: &SphericalMode,
    d_diel_range: (f64, f64),
    d_metal_ref: f64,
) -> Result<f64, StackError> {
    let mut err = None;
    let mut f = |dd: f64| match transmittance(&template.build(dd, d_metal_ref), materials, pump_mode)
    {
        Ok((t, _, _)) => t,
        Err(e) => {
            err = Some(e);
            0.0
        }
    };
    let fringes = locate_peaks_1d(&mut f, d_diel_range.0, d_diel_range.1, 700, 0.15, 1e-10);
    if let Some(e) = err {
        return Err(e);
    }
    if fringes.is_empty() {
        return Err(StackError::SingularChain);
    }
    if fringes.len() < 3 {
        return Ok(fringes[0].position);
    }
    let mut spacings: Vec<f64> = fringes.windows(2).map(|w| w[1].position - w[0].position).collect();
    let mut sorted = spacings.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    let (idx, &widest) = spacings
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    spacings.clear();
    if widest > 1.6 * median {
        Ok(fringes[idx + 1].position)
    } else {
        Ok(fringes[0].position)
    }
}

/// Traces the first transmission band: for each metal thickness the
/// dielectric thickness of the band fringe, tracked by continuation from
/// the fringe selected at a reference metal thickness (see
/// [`first_band_seed`]).
pub fn first_band_ridge(
    template: &StackTemplate,
    materials: &MaterialSet,
    pump_mode: &SphericalMode,
    d_diel_range: (f64, f64),
    d_metal_range: (f64, f64),
    n_metal: usize,
) -> Result<Vec<RidgePoint>, StackError> {
    let dm_ref = d_metal_range.0 + 0.7 * (d_metal_range.1 - d_metal_range.0);
    let seed0 = first_band_seed(template, materials, pump_mode, d_diel_range, dm_ref)?;

    let n_metal = n_metal.max(2);
    let dm_at = |j: usize| {
        d_metal_range.0 + (d_metal_range.1 - d_metal_range.0) * j as f64 / (n_metal - 1) as f64
    };
    // Continuation outward from the reference thickness in both directions;
    // the fringe position drifts slowly with the metal thickness, so a
    // narrow refinement window avoids hopping to neighboring fringes.
    let j_ref = (0..n_metal)
        .min_by(|&a, &b| {
            (dm_at(a) - dm_ref)
                .abs()
                .partial_cmp(&(dm_at(b) - dm_ref).abs())
                .unwrap()
        })
        .unwrap();

    let mut err: Option<StackError> = None;
    let mut track = |order: &mut dyn Iterator<Item = usize>, seed0: f64| -> Vec<(usize, RidgePoint)> {
        let mut seed = seed0;
        let mut out = Vec::new();
        for j in order {
            let dm = dm_at(j);
            let mut f = |dd: f64| match transmittance(&template.build(dd, dm), materials, pump_mode)
            {
                Ok((t, _, _)) => t,
                Err(e) => {
                    err = Some(e);
                    0.0
                }
            };
            let w = 6e-9_f64.max(0.06 * seed);
            let (pos, _) = golden_section_max(
                &mut f,
                (seed - w).max(d_diel_range.0),
                (seed + w).min(d_diel_range.1),
                1e-10,
            );
            match transmittance(&template.build(pos, dm), materials, pump_mode) {
                Ok((t, _, a)) => out.push((
                    j,
                    RidgePoint {
                        d_diel: pos,
                        d_metal: dm,
                        t_pump: t,
                        a_pump: a,
                    },
                )),
                Err(e) => err = Some(e),
            }
            seed = pos;
        }
        out
    };

    let mut points = track(&mut (j_ref..n_metal), seed0);
    points.extend(track(&mut (0..j_ref).rev(), seed0));
    if let Some(e) = err {
        return Err(e);
    }
    points.sort_by_key(|(j, _)| *j);
    Ok(points.into_iter().map(|(_, p)| p).collect())
}

/// Finds the ridge point with thickness ratio d_metal/d_diel = `ratio` by
/// linear interpolation along the traced ridge.
pub fn ridge_point_at_ratio(ridge: &[RidgePoint], ratio: f64) -> Option<RidgePoint> {
    for w in ridge.windows(2) {
        let r0 = w[0].d_metal / w[0].d_diel;
        let r1 = w[1].d_metal / w[1].d_diel;
        if (r0 - ratio) * (r1 - ratio) <= 0.0 && r0 != r1 {
            let t = (ratio - r0) / (r1 - r0);
            return Some(RidgePoint {
                d_diel: w[0].d_diel + t * (w[1].d_diel - w[0].d_diel),
                d_metal: w[0].d_metal + t * (w[1].d_metal - w[0].d_metal),
                t_pump: w[0].t_pump + t * (w[1].t_pump - w[0].t_pump),
                a_pump: w[0].a_pump + t * (w[1].a_pump - w[0].a_pump),
            });
        }
    }
    None
}

/// Which photon of the pair carries the narrow resonance of a located peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResonantSide {
    Signal,
    Idler,
}

/// A located emission peak of the joint density map in signal coordinates.
#[derive(Debug, Clone)]
pub struct EmissionPeak {
    pub channel: Channel,
    pub omega_s: f64,
    pub theta_s: f64,
    /// Matched idler direction (ϑ_i, ψ_i).
    pub theta_i: f64,
    pub psi_i: f64,
    /// Peak signal photon-number density.
    pub n_s: f64,
    /// The structure resonance pinned under the peak.
    pub resonance: Resonance,
    pub side: ResonantSide,
    /// Resonant angle of the narrow side (equals ϑ_s or |ϑ_i|).
    pub resonant_angle: f64,
}

/// Scan controls for emission-peak location.
#[derive(Debug, Clone)]
pub struct ScanSettings {
    /// Signal wavelength window, nm.
    pub lambda_range_nm: (f64, f64),
    /// Angular scan step over the resonant-side angle, deg.
    pub angle_step_deg: f64,
    pub angle_range_deg: (f64, f64),
    /// Coarse points per resonance funnel scan.
    pub coarse_points: usize,
    /// Relative width above which chain zeros are ignored.
    pub max_rel_width: f64,
    /// Quadrature tolerance for candidate ranking.
    pub rank_tol: f64,
    /// Candidates refined per channel.
    pub refine_top: usize,
    /// Golden-section iterations tolerance (radians) for the family angle.
    pub refine_tol: f64,
}

impl Default for ScanSettings {
    fn default() -> Self {
        ScanSettings {
            lambda_range_nm: (560.0, 1100.0),
            angle_step_deg: 2.0,
            angle_range_deg: (2.0, 88.0),
            coarse_points: 1200,
            max_rel_width: 2e-2,
            rank_tol: 3e-3,
            refine_top: 3,
            refine_tol: 2e-5,
        }
    }
}

/// Polishes the resonant angle at which the chain zero of `pol` crosses the
/// target frequency; returns the angle, the polished zero and the angular
/// slope dω₀/dϑ.
pub fn resonant_angle(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    pol: Pol,
    omega_target: f64,
    theta_guess: f64,
) -> Option<(f64, Resonance, f64)> {
    let step0 = 2e-4;
    let zero_at = |theta: f64| -> Option<Resonance> {
        polish_resonance(
            structure,
            materials,
            pol,
            theta,
            0.0,
            omega_target,
            omega_target * 1e-4,
        )
    };
    let mut th = theta_guess.abs();
    let mut r = zero_at(th)?;
    let mut slope = 0.0;
    for _ in 0..40 {
        let h = step0.max(1e-6);
        let r_p = zero_at(th + h)?;
        slope = (r_p.omega - r.omega) / h;
        if slope == 0.0 {
            return None;
        }
        let dth = (omega_target - r.omega) / slope;
        let dth = dth.clamp(-0.05, 0.05);
        th += dth;
        if !(0.0..core::f64::consts::FRAC_PI_2).contains(&th) {
            return None;
        }
        r = zero_at(th)?;
        if (r.omega - omega_target).abs() < 1e-10 * omega_target {
            return Some((th, r, slope));
        }
    }
    ((r.omega - omega_target).abs() < 1e-7 * omega_target).then_some((th, r, slope))
}

/// Signal-density evaluation with the idler-side resonance seeded when the
/// narrow factor sits in the idler slot.
#[allow(clippy::too_many_arguments)]
pub fn seeded_signal_density(
    ctx: &BiphotonContext<'_>,
    omega_s: f64,
    theta_s: f64,
    psi_s: f64,
    side: ResonantSide,
    resonant_theta_guess: f64,
    tol: f64,
) -> Result<f64, BiphotonError> {
    let mut seeds: Vec<PeakSeed> = Vec::new();
    if side == ResonantSide::Idler {
        let omega_i = ctx.idler_omega(omega_s);
        if let Some((th, r, slope)) = resonant_angle(
            ctx.structure,
            ctx.materials,
            ctx.channel.pol_i,
            omega_i,
            resonant_theta_guess,
        ) {
            let width_theta = if slope.abs() > 0.0 {
                (r.gamma / slope.abs()).max(1e-9)
            } else {
                1e-6
            };
            // The matched idler sits at negative ϑ in this convention.
            seeds.push(PeakSeed {
                position: -th,
                width: width_theta,
            });
        }
    }
    Ok(ctx
        .signal_density(omega_s, theta_s, psi_s, tol, &seeds)?
        .value)
}

fn signal_coords_for_idler_zero(
    omega_p: f64,
    zero: &Resonance,
    theta_i: f64,
) -> Option<(f64, f64)> {
    let omega_s = omega_p - zero.omega;
    if omega_s <= 0.0 {
        return None;
    }
    let sin_s = zero.omega * theta_i.sin().abs() / omega_s;
    if sin_s >= 1.0 {
        return None;
    }
    Some((omega_s, sin_s.asin()))
}

/// Locates the dominant emission peaks of one output channel by scanning
/// the chain zeros of both photons' polarizations over the angular range,
/// mapping each candidate into signal coordinates and ranking by the
/// seeded signal density; the best candidates are refined by golden-section
/// search along the resonance family.
pub fn locate_emission_peaks(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    pump: PumpSpec,
    channel: Channel,
    scan: &ScanSettings,
) -> Result<Vec<EmissionPeak>, BiphotonError> {
    let ctx = BiphotonContext::new(structure, materials, pump, channel);
    let omega_hi = crate::consts::omega_from_lambda_nm(scan.lambda_range_nm.0);
    let omega_lo = crate::consts::omega_from_lambda_nm(scan.lambda_range_nm.1);
    let omega_p = pump.omega0;

    struct Candidate {
        omega_s: f64,
        theta_s: f64,
        side: ResonantSide,
        zero: Resonance,
        resonant_angle: f64,
        n_s: f64,
    }
    let mut candidates: Vec<Candidate> = Vec::new();

    let mut theta_deg = scan.angle_range_deg.0;
    while theta_deg <= scan.angle_range_deg.1 {
        let th = theta_deg.to_radians();
        // Idler-side needles: zeros of the idler polarization within the
        // idler band matching the signal wavelength window.
        let i_lo = (omega_p - omega_hi).max(omega_p * 0.05);
        let i_hi = (omega_p - omega_lo).min(omega_p * 0.95);
        if i_hi > i_lo {
            if let Ok(zeros) = locate_resonances(
                structure,
                materials,
                channel.pol_i,
                th,
                0.0,
                (i_lo, i_hi),
                scan.coarse_points,
                scan.max_rel_width,
            ) {
                for z in zeros {
                    if let Some((ws, ts)) = signal_coords_for_idler_zero(omega_p, &z, th) {
                        candidates.push(Candidate {
                            omega_s: ws,
                            theta_s: ts,
                            side: ResonantSide::Idler,
                            zero: z,
                            resonant_angle: th,
                            n_s: 0.0,
                        });
                    }
                }
            }
        }
        // Signal-side needles: zeros of the signal polarization.
        if let Ok(zeros) = locate_resonances(
            structure,
            materials,
            channel.pol_s,
            th,
            0.0,
            (omega_lo, omega_hi),
            scan.coarse_points,
            scan.max_rel_width,
        ) {
            for z in zeros {
                // Partner must be kinematically reachable.
                let omega_i = omega_p - z.omega;
                if omega_i <= 0.0 {
                    continue;
                }
                let sin_i = z.omega * th.sin() / omega_i;
                if sin_i.abs() >= 1.0 {
                    continue;
                }
                candidates.push(Candidate {
                    omega_s: z.omega,
                    theta_s: th,
                    side: ResonantSide::Signal,
                    zero: z,
                    resonant_angle: th,
                    n_s: 0.0,
                });
            }
        }
        theta_deg += scan.angle_step_deg;
    }

    // Rank candidates by the (cheaply evaluated) seeded signal density.
    for c in &mut candidates {
        c.n_s = seeded_signal_density(
            &ctx,
            c.omega_s,
            c.theta_s,
            0.0,
            c.side,
            c.resonant_angle,
            scan.rank_tol,
        )
        .unwrap_or(0.0);
    }
    candidates.sort_by(|a, b| b.n_s.partial_cmp(&a.n_s).unwrap());
    candidates.truncate(scan.refine_top);

    // Refine each survivor along its resonance family: the family is
    // parameterized by the resonant-side angle.
    let mut peaks: Vec<EmissionPeak> = Vec::new();
    for c in candidates {
        if c.n_s <= 0.0 {
            continue;
        }
        let step = scan.angle_step_deg.to_radians();
        let mut eval = |theta_res: f64| -> f64 {
            let theta_res = theta_res.abs();
            match c.side {
                ResonantSide::Idler => {
                    let Some(zero) = polish_resonance(
                        structure,
                        materials,
                        channel.pol_i,
                        theta_res,
                        0.0,
                        c.zero.omega,
                        c.zero.omega * 1e-5,
                    ) else {
                        return 0.0;
                    };
                    let Some((ws, ts)) = signal_coords_for_idler_zero(omega_p, &zero, theta_res)
                    else {
                        return 0.0;
                    };
                    seeded_signal_density(&ctx, ws, ts, 0.0, c.side, theta_res, scan.rank_tol)
                        .unwrap_or(0.0)
                }
                ResonantSide::Signal => {
                    let Some(zero) = polish_resonance(
                        structure,
                        materials,
                        channel.pol_s,
                        theta_res,
                        0.0,
                        c.zero.omega,
                        c.zero.omega * 1e-5,
                    ) else {
                        return 0.0;
                    };
                    seeded_signal_density(&ctx, zero.omega, theta_res, 0.0, c.side, theta_res, scan.rank_tol)
                        .unwrap_or(0.0)
                }
            }
        };
        let (best_angle, _) = golden_section_max(
            &mut eval,
            (c.resonant_angle - step).max(1e-3),
            (c.resonant_angle + step).min(core::f64::consts::FRAC_PI_2 - 1e-3),
            scan.refine_tol,
        );

        // Re-derive the exact peak coordinates at the refined angle.
        let refined = match c.side {
            ResonantSide::Idler => polish_resonance(
                structure,
                materials,
                channel.pol_i,
                best_angle,
                0.0,
                c.zero.omega,
                c.zero.omega * 1e-5,
            ),
            ResonantSide::Signal => polish_resonance(
                structure,
                materials,
                channel.pol_s,
                best_angle,
                0.0,
                c.zero.omega,
                c.zero.omega * 1e-5,
            ),
        };
        let Some(zero) = refined else { continue };
        let (omega_s, theta_s) = match c.side {
            ResonantSide::Idler => {
                let Some(x) = signal_coords_for_idler_zero(omega_p, &zero, best_angle) else {
                    continue;
                };
                x
            }
            ResonantSide::Signal => (zero.omega, best_angle),
        };
        let n_s =
            seeded_signal_density(&ctx, omega_s, theta_s, 0.0, c.side, best_angle, scan.rank_tol)
                .unwrap_or(0.0);
        let Some((theta_i, psi_i)) = ctx.matched_idler_direction(omega_s, theta_s, 0.0) else {
            continue;
        };
        peaks.push(EmissionPeak {
            channel,
            omega_s,
            theta_s,
            theta_i,
            psi_i,
            n_s,
            resonance: zero,
            side: c.side,
            resonant_angle: best_angle,
        });
    }

    // Collapse duplicates that refined to the same point.
    peaks.sort_by(|a, b| b.n_s.partial_cmp(&a.n_s).unwrap());
    let mut unique: Vec<EmissionPeak> = Vec::new();
    for p in peaks {
        let dup = unique.iter().any(|q| {
            (q.omega_s - p.omega_s).abs() < 1e-4 * p.omega_s
                && (q.theta_s - p.theta_s).abs() < 2e-3
        });
        if !dup {
            unique.push(p);
        }
    }
    Ok(unique)
}

/// Full width at half maximum of the signal density through a peak along
/// the signal wavelength at fixed angle; returns nm.
pub fn peak_fwhm_lambda(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    pump: PumpSpec,
    peak: &EmissionPeak,
    tol: f64,
) -> Result<f64, BiphotonError> {
    let ctx = BiphotonContext::new(structure, materials, pump, peak.channel);
    let mut f = |omega: f64| -> f64 {
        seeded_signal_density(
            &ctx,
            omega,
            peak.theta_s,
            0.0,
            peak.side,
            peak.resonant_angle,
            tol,
        )
        .unwrap_or(0.0)
    };
    let half = 0.5 * peak.n_s;
    // The frequency width of the underlying zero sets the probe scale.
    let scale = peak.resonance.gamma.max(1e-9 * peak.omega_s);
    let mut lo = peak.omega_s;
    let mut k = 0;
    while f(lo) > half && k < 60 {
        lo -= scale;
        k += 1;
    }
    let mut hi = peak.omega_s;
    k = 0;
    while f(hi) > half && k < 60 {
        hi += scale;
        k += 1;
    }
    let w_lo = crate::numerics::bisect_crossing(&mut f, lo, peak.omega_s, half, 60);
    let w_hi = crate::numerics::bisect_crossing(&mut f, hi, peak.omega_s, half, 60);
    let lam_lo = crate::consts::lambda_nm_from_omega(w_hi);
    let lam_hi = crate::consts::lambda_nm_from_omega(w_lo);
    Ok((lam_hi - lam_lo).abs())
}

/// Angular FWHM of the signal density through a peak at fixed wavelength;
/// returns degrees.
pub fn peak_fwhm_theta(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    pump: PumpSpec,
    peak: &EmissionPeak,
    tol: f64,
) -> Result<f64, BiphotonError> {
    let ctx = BiphotonContext::new(structure, materials, pump, peak.channel);
    let mut f = |theta: f64| -> f64 {
        seeded_signal_density(
            &ctx,
            peak.omega_s,
            theta,
            0.0,
            peak.side,
            peak.resonant_angle,
            tol,
        )
        .unwrap_or(0.0)
    };
    let half = 0.5 * peak.n_s;
    let scale = 2e-4;
    let mut lo = peak.theta_s;
    let mut k = 0;
    while f(lo) > half && k < 80 {
        lo -= scale;
        k += 1;
    }
    let mut hi = peak.theta_s;
    k = 0;
    while f(hi) > half && k < 80 {
        hi += scale;
        k += 1;
    }
    let w_lo = crate::numerics::bisect_crossing(&mut f, lo, peak.theta_s, half, 60);
    let w_hi = crate::numerics::bisect_crossing(&mut f, hi, peak.theta_s, half, 60);
    Ok((w_hi - w_lo).abs().to_degrees())
}

/// Grid maximum of a channel's signal density over a smooth window
/// (no needle seeding); used for structures without sharp resonances.
pub fn max_signal_density_grid(
    ctx: &BiphotonContext<'_>,
    omega_range: (f64, f64),
    theta_range: (f64, f64),
    grid: (usize, usize),
    tol: f64,
) -> Result<(f64, f64, f64), BiphotonError> {
    let (nw, nt) = (grid.0.max(3), grid.1.max(3));
    let mut best = (0.0f64, omega_range.0, theta_range.0);
    for i in 0..nw {
        let w = omega_range.0 + (omega_range.1 - omega_range.0) * i as f64 / (nw - 1) as f64;
        for j in 0..nt {
            let t = theta_range.0 + (theta_range.1 - theta_range.0) * j as f64 / (nt - 1) as f64;
            let v = ctx.signal_density(w, t, 0.0, tol, &[])?.value;
            if v > best.0 {
                best = (v, w, t);
            }
        }
    }
    // Coordinate-descent refinement until the maximum stabilizes.
    let mut dw = (omega_range.1 - omega_range.0) / (nw - 1) as f64;
    let mut dt = (theta_range.1 - theta_range.0) / (nt - 1) as f64;
    let (mut w0, mut t0) = (best.1, best.2);
    let mut prev = best.0;
    for round in 0..12 {
        let mut fw = |w: f64| ctx.signal_density(w, t0, 0.0, tol, &[]).map(|r| r.value).unwrap_or(0.0);
        let (w1, _) = golden_section_max(&mut fw, (w0 - dw).max(omega_range.0), (w0 + dw).min(omega_range.1), 1e-8);
        w0 = w1;
        let mut ft = |t: f64| ctx.signal_density(w0, t, 0.0, tol, &[]).map(|r| r.value).unwrap_or(0.0);
        let (t1, v) = golden_section_max(&mut ft, (t0 - dt).max(theta_range.0), (t0 + dt).min(theta_range.1), 1e-8);
        t0 = t1;
        best = (v, w0, t0);
        if round > 0 && (v - prev).abs() <= 1e-3 * v.abs() {
            break;
        }
        prev = v;
        dw *= 0.7;
        dt *= 0.7;
    }
    Ok(best)
}

/// One sample of the η(L) ridge-family optimization.
#[derive(Debug, Clone)]
pub struct EtaSample {
    pub ratio: f64,
    pub d_diel: f64,
    pub d_metal: f64,
    pub eta_max: f64,
    pub best_peak: Option<EmissionPeak>,
}

/// Maximum relative signal density of one structure: the strongest located
/// emission peak over both cross-polarized channels divided by the maximum
/// of the boundary-free reference over the scan window.
pub fn eta_max_for_structure(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    pump: PumpSpec,
    scan: &ScanSettings,
    reference_grid: (usize, usize),
) -> Result<(f64, Option<EmissionPeak>), BiphotonError> {
    let mut best: Option<EmissionPeak> = None;
    for channel in [
        Channel::forward(Pol::Te, Pol::Tm),
        Channel::forward(Pol::Tm, Pol::Te),
    ] {
        for p in locate_emission_peaks(structure, materials, pump, channel, scan)? {
            if best.as_ref().map(|b| p.n_s > b.n_s).unwrap_or(true) {
                best = Some(p);
            }
        }
    }
    let reference = ReferenceContext::new(structure, materials, pump);
    let omega_hi = crate::consts::omega_from_lambda_nm(scan.lambda_range_nm.0);
    let omega_lo = crate::consts::omega_from_lambda_nm(scan.lambda_range_nm.1);
    let (ref_max, _, _) = reference.max_signal_density(
        (omega_lo, omega_hi),
        (
            scan.angle_range_deg.0.to_radians(),
            scan.angle_range_deg.1.to_radians(),
        ),
        0.0,
        reference_grid,
        1e-5,
    )?;
    let eta = match (&best, ref_max > 0.0) {
        (Some(p), true) => p.n_s / ref_max,
        _ => 0.0,
    };
    Ok((eta, best))
}

/// Scans η_s^max along the first-band ridge over an interval of the
/// thickness ratio L = d_metal/d_diel.
pub fn optimize_eta(
    template: &StackTemplate,
    materials: &MaterialSet,
    pump: PumpSpec,
    ridge: &[RidgePoint],
    ratios: &[f64],
    scan: &ScanSettings,
    reference_grid: (usize, usize),
) -> Result<Vec<EtaSample>, BiphotonError> {
    let mut out = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let Some(point) = ridge_point_at_ratio(ridge, ratio) else {
            continue;
        };
        let structure = template.build(point.d_diel, point.d_metal);
        let (eta_max, best_peak) =
            eta_max_for_structure(&structure, materials, pump, scan, reference_grid)?;
        out.push(EtaSample {
            ratio,
            d_diel: point.d_diel,
            d_metal: point.d_metal,
            eta_max,
            best_peak,
        });
    }
    Ok(out)
}
