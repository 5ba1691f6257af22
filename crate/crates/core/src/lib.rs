//! Simulation of spontaneous parametric down-conversion in lossy
//! metal-dielectric 1D layered structures.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`] — adaptive quadrature, peak/zero location, small complex
//!   linear solves shared by everything above,
//! * [`materials`] — complex refractive indices and second-order
//!   susceptibility tensors (including the free-electron metal tensor),
//! * [`stack`] — transfer-matrix linear optics of the layered structure:
//!   kinematics, per-layer field amplitudes, transmission/reflection/
//!   absorption bookkeeping, field profiles and resonance location,
//! * [`pump`] — the cw pump model with a Gaussian transverse spectrum,
//! * [`biphoton`] — the two-photon spectral amplitude assembled from
//!   per-layer contributions and all intensity observables derived from it,
//! * [`temporal`] — two-photon temporal amplitude and Hong-Ou-Mandel
//!   coincidence profiles,
//! * [`noise`] — per-layer photon injection solves, transmission/absorption
//!   coefficients and noise photon-number densities from broken pairs,
//! * [`design`] — thickness sweeps, transmission-band ridge extraction and
//!   relative-density optimization of alternating stacks.
//!
//! The crate is `no_std` (with `alloc`) so the solver core stays free of
//! platform dependencies; IO, file formats and the CLI live in the
//! companion `spdc-cli` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod biphoton;
pub mod consts;
pub mod design;
pub mod materials;
pub mod noise;
pub mod numerics;
pub mod pump;
pub mod stack;
pub mod temporal;

pub use num_complex::Complex64;
