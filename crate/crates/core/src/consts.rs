//! Physical constants (SI).

/// Speed of light in vacuum, m/s.
pub const C: f64 = 299_792_458.0;

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Vacuum permittivity, F/m.
pub const EPS_0: f64 = 8.854_187_812_8e-12;

/// Vacuum permeability, H/m.
pub const MU_0: f64 = 1.256_637_062_12e-6;

/// Elementary charge, C.
pub const E_CHARGE: f64 = 1.602_176_634e-19;

/// Electron mass, kg.
pub const M_ELECTRON: f64 = 9.109_383_701_5e-31;

/// Converts a vacuum wavelength in nm to an angular frequency in rad/s.
pub fn omega_from_lambda_nm(lambda_nm: f64) -> f64 {
    2.0 * core::f64::consts::PI * C / (lambda_nm * 1e-9)
}

/// Converts an angular frequency in rad/s to a vacuum wavelength in nm.
pub fn lambda_nm_from_omega(omega: f64) -> f64 {
    2.0 * core::f64::consts::PI * C / omega * 1e9
}
