//! The cw pump model: monochromatic temporal spectrum, Gaussian transverse
//! spatial spectrum and the classical in-structure pump amplitudes.
//!
//! The squared frequency delta arising from cw pumping is regularized as
//! δ²(ω) → 2T/(2π) δ(ω) for fields defined on (-T, T); all densities in this
//! crate are reported per unit time, i.e. divided by 2T, which leaves a
//! global factor 1/(2π) and otherwise eliminates ω_i = ω_p⁰ - ω_s
//! analytically in every downstream integral.

use num_complex::Complex64;
#[allow(unused_imports)] use num_traits::Float;

use crate::materials::MaterialSet;
use crate::stack::{
    solve_incident, FieldSolution, LayeredStructure, Pol, SphericalMode, StackError,
};

/// Per-unit-time factor left over from the δ² regularization.
pub const DELTA_SQ_PER_UNIT_TIME: f64 = 1.0 / (2.0 * core::f64::consts::PI);

/// Parameters of the cw pump beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpSpec {
    /// Central angular frequency ω_p⁰, rad/s.
    pub omega0: f64,
    /// Spectral amplitude ξ_p (arbitrary units; all absolute rates scale
    /// as |ξ_p|²).
    pub amplitude: Complex64,
    /// Transverse beam radius r_p, m.
    pub radius: f64,
    pub pol: Pol,
    /// Nominal incidence angles.
    pub theta: f64,
    pub psi: f64,
}

impl PumpSpec {
    pub fn normal_incidence(omega0: f64, radius: f64, pol: Pol) -> Self {
        PumpSpec {
            omega0,
            amplitude: Complex64::new(1.0, 0.0),
            radius,
            pol,
            theta: 0.0,
            psi: 0.0,
        }
    }

    /// Gaussian transverse spectral amplitude
    /// (r_p/√(2π)) exp(-r_p²(k_x² + k_y²)/4), normalized to
    /// ∫∫ |E^tr|² dk_x dk_y = 1. The arguments are measured relative to the
    /// nominal pump transverse wave vector.
    pub fn transverse_spectrum(&self, kx: f64, ky: f64) -> f64 {
        let r2 = self.radius * self.radius;
        self.radius / (2.0 * core::f64::consts::PI).sqrt()
            * (-r2 * (kx * kx + ky * ky) / 4.0).exp()
    }

    /// The pump mode at its nominal incidence direction.
    pub fn nominal_mode(&self) -> SphericalMode {
        SphericalMode::new(self.omega0, self.theta, self.psi, self.pol)
    }
}

/// Classical pump field solution: unit incident amplitude scaled by ξ_p,
/// solved through the stack at the nominal pump direction. The per-layer
/// forward/backward amplitudes of the returned solution are the
/// A_p^{(l)} factors consumed by the two-photon layer sum.
pub fn pump_solution(
    spec: &PumpSpec,
    structure: &LayeredStructure,
    materials: &MaterialSet,
) -> Result<FieldSolution, StackError> {
    solve_incident(
        structure,
        materials,
        &spec.nominal_mode(),
        spec.amplitude,
        Complex64::new(0.0, 0.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consts::omega_from_lambda_nm;
    use crate::materials::MaterialSet;
    use crate::numerics::integrate;
    use crate::stack::{Layer, LayeredStructure};
    use alloc::vec;

    fn spec() -> PumpSpec {
        PumpSpec::normal_incidence(omega_from_lambda_nm(400.0), 1e-3, Pol::Te)
    }

    #[test]
    fn transverse_spectrum_peak_and_falloff() {
        let p = spec();
        let peak = p.transverse_spectrum(0.0, 0.0);
        assert!((peak - p.radius / (2.0 * core::f64::consts::PI).sqrt()).abs() < 1e-18);
        // At k² = 4/r_p² the amplitude is 1/e of the peak.
        let k = 2.0 / p.radius;
        assert!((p.transverse_spectrum(k, 0.0) / peak - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn transverse_spectrum_normalization_integral() {
        // 2D Gaussian integral oracle, radial reduction:
        // ∫∫ |E|² dkx dky = ∫_0^∞ 2π k |E(k)|² dk = 1.
        let p = spec();
        let r = integrate(
            |k| {
                let e = p.transverse_spectrum(k, 0.0);
                2.0 * core::f64::consts::PI * k * e * e
            },
            0.0,
            40.0 / p.radius,
            1e-10,
        );
        assert!(r.converged);
        assert!((r.value - 1.0).abs() < 1e-6, "norm {}", r.value);
    }

    #[test]
    fn pump_solution_in_vacuum_is_uniform_and_linear_in_amplitude() {
        let set = MaterialSet::defaults();
        let vac = set.by_name("vacuum").unwrap();
        let s = LayeredStructure::new(vac, vac, vec![Layer { material: vac, thickness: 1e-7 }]);
        let mut p = spec();
        p.amplitude = Complex64::new(0.7, 0.2);
        let sol = pump_solution(&p, &s, &set).unwrap();
        // Uniform plane wave: every region carries the ξ_p-scaled unit
        // amplitude (the rear reference plane only adds the free phase).
        for l in 0..3 {
            assert!((sol.amps[l].f.norm() - p.amplitude.norm()).abs() < 1e-14);
            assert!(sol.amps[l].b.norm() < 1e-14);
        }
        assert!((sol.amps[1].f - p.amplitude).norm() < 1e-14);
        for i in 0..10 {
            let z = -5e-8 + i as f64 * 2e-8;
            let e = sol.field_at(z);
            let norm = (e[0].norm_sqr() + e[1].norm_sqr() + e[2].norm_sqr()).sqrt();
            assert!((norm - p.amplitude.norm()).abs() < 1e-13);
        }
        // Doubling ξ_p doubles every internal amplitude exactly.
        let mut p2 = p;
        p2.amplitude = p.amplitude * 2.0;
        let sol2 = pump_solution(&p2, &s, &set).unwrap();
        for l in 0..3 {
            assert!((sol2.amps[l].f - sol.amps[l].f * 2.0).norm() < 1e-14 * p.amplitude.norm());
        }
    }
}
