//! Linear optics of the layered structure: kinematics, boundary and
//! propagation matrices, per-layer field amplitudes for prescribed incident
//! or outgoing waves, energy bookkeeping and field profiles.
//!
//! Conventions (fixed across the crate):
//!
//! * Layers are numbered 0..=N+1; 0 and N+1 are the semi-infinite ambient
//!   media. Boundary j sits at `z_j`, j = 0..=N; layer l (1..=N) occupies
//!   `z_{l-1} <= z < z_l`.
//! * Per-layer amplitudes are electric-field amplitudes of the forward (F)
//!   and backward (B) waves referenced at the layer's left edge (layer 0 is
//!   referenced at `z_0`): E ∝ A_F e^{i k_z z'} + A_B e^{-i k_z z'}.
//! * `k_z` carries the forward branch with Im(k_z) >= 0 (decaying forward
//!   wave); the backward wave uses `-k_z`.
//! * TE unit vector: (cos ψ, sin ψ, 0), independent of layer and direction.
//!   TM unit vectors: e_TE × k̂, i.e. (±cos ϑ' sin ψ, ∓cos ϑ' cos ψ, sin ϑ')
//!   for F/B. Both satisfy e·e = 1 (analytic normalization for complex
//!   angles).
//! * Transverse wave-vector components k_x = -(ω/c) n₀ sin ψ sin ϑ,
//!   k_y = (ω/c) n₀ cos ψ sin ϑ are conserved across all layers.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
#[allow(unused_imports)] use num_traits::Float;

use crate::consts::C;
use crate::materials::{MaterialError, MaterialId, MaterialSet};
use crate::numerics::complex_secant;

/// Field polarization relative to the plane of incidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pol {
    Te,
    Tm,
}

/// Propagation direction along z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dir {
    F,
    B,
}

impl Dir {
    pub fn sign(self) -> f64 {
        match self {
            Dir::F => 1.0,
            Dir::B => -1.0,
        }
    }
}

/// A monochromatic plane-wave mode labelled by frequency, radial and
/// azimuthal propagation angles, and polarization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalMode {
    /// Angular frequency, rad/s.
    pub omega: f64,
    /// Radial propagation angle in the front ambient medium, rad,
    /// in (-π/2, π/2). Negative values address the opposite transverse
    /// half-plane.
    pub theta: f64,
    /// Azimuthal angle, rad.
    pub psi: f64,
    pub pol: Pol,
}

impl SphericalMode {
    pub fn new(omega: f64, theta: f64, psi: f64, pol: Pol) -> Self {
        Self {
            omega,
            theta,
            psi,
            pol,
        }
    }
}

/// One physical layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layer {
    pub material: MaterialId,
    /// Thickness in m (zero is tolerated so degenerate layers can be used
    /// in consistency tests; real structures use strictly positive values).
    pub thickness: f64,
}

/// Ordered stack of layers between two semi-infinite ambient media.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredStructure {
    pub front: MaterialId,
    pub rear: MaterialId,
    pub layers: Vec<Layer>,
}

/// Errors from the stack solvers.
#[derive(Debug, Clone, PartialEq)]
pub enum StackError {
    Material(MaterialError),
    /// Ambient media must be lossless for the mode bookkeeping to be exact.
    LossyAmbient,
    /// Zero transmission denominator at a boundary.
    SingularBoundary { boundary: usize },
    /// The transfer chain produced a non-finite or degenerate solution.
    SingularChain,
    InvalidMode,
    NegativeThickness,
}

impl From<MaterialError> for StackError {
    fn from(e: MaterialError) -> Self {
        StackError::Material(e)
    }
}

impl core::fmt::Display for StackError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            StackError::Material(e) => write!(f, "material error: {e}"),
            StackError::LossyAmbient => write!(f, "ambient media must be lossless"),
            StackError::SingularBoundary { boundary } => {
                write!(f, "singular boundary matrix at boundary {boundary}")
            }
            StackError::SingularChain => write!(f, "singular transfer chain"),
            StackError::InvalidMode => write!(f, "invalid mode parameters"),
            StackError::NegativeThickness => write!(f, "layer thickness must be non-negative"),
        }
    }
}

impl LayeredStructure {
    pub fn new(front: MaterialId, rear: MaterialId, layers: Vec<Layer>) -> Self {
        Self {
            front,
            rear,
            layers,
        }
    }

    /// Number of finite layers N.
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Boundary positions z_0..z_N with z_0 = 0.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.layers.len() + 1);
        let mut acc = 0.0;
        z.push(0.0);
        for layer in &self.layers {
            acc += layer.thickness;
            z.push(acc);
        }
        z
    }

    /// Total stack length z_N - z_0.
    pub fn total_length(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness).sum()
    }

    /// Material of region index 0..=N+1 (0 = front ambient, N+1 = rear).
    pub fn region_material(&self, l: usize) -> MaterialId {
        if l == 0 {
            self.front
        } else if l <= self.layers.len() {
            self.layers[l - 1].material
        } else {
            self.rear
        }
    }
}

/// Transverse wave-vector components (k_x, k_y) of a mode in 1/m.
pub fn transverse_k(mode: &SphericalMode, n_ambient: f64) -> (f64, f64) {
    let k = n_ambient * mode.omega / C * mode.theta.sin();
    (-mode.psi.sin() * k, mode.psi.cos() * k)
}

/// Per-layer kinematic data for one mode.
#[derive(Debug, Clone)]
pub struct LayerKin {
    pub n: Complex64,
    /// Forward-branch longitudinal wave number, Im >= 0.
    pub kz: Complex64,
    pub cos_theta: Complex64,
    pub sin_theta: Complex64,
}

/// Kinematics of one mode across the whole structure.
#[derive(Debug, Clone)]
pub struct ModeKinematics {
    pub mode: SphericalMode,
    pub kx: f64,
    pub ky: f64,
    /// Snell invariant n₀ sin ϑ₀ (real; ambient media are lossless).
    pub snell: f64,
    /// Region data for l = 0..=N+1.
    pub regions: Vec<LayerKin>,
    /// Boundary positions z_0..z_N.
    pub z: Vec<f64>,
    /// Layer thicknesses L_1..L_N.
    pub thickness: Vec<f64>,
}

impl ModeKinematics {
    pub fn n_layers(&self) -> usize {
        self.thickness.len()
    }

    /// Obliquity factor q used in Poynting bookkeeping: n cos ϑ' for TE and
    /// n* cos ϑ' for TM (they coincide in lossless media).
    pub fn obliquity(&self, region: usize) -> Complex64 {
        let kin = &self.regions[region];
        match self.mode.pol {
            Pol::Te => kin.n * kin.cos_theta,
            Pol::Tm => kin.n.conj() * kin.cos_theta,
        }
    }

    /// Polarization unit vector in a region for a propagation direction.
    pub fn pol_vector(&self, region: usize, dir: Dir) -> [Complex64; 3] {
        let kin = &self.regions[region];
        let (cp, sp) = (self.mode.psi.cos(), self.mode.psi.sin());
        match self.mode.pol {
            Pol::Te => [
                Complex64::new(cp, 0.0),
                Complex64::new(sp, 0.0),
                Complex64::new(0.0, 0.0),
            ],
            Pol::Tm => {
                let ct = kin.cos_theta * dir.sign();
                [ct * sp, -ct * cp, kin.sin_theta]
            }
        }
    }

    /// Signed k_z of a directed wave in a region.
    pub fn kz_directed(&self, region: usize, dir: Dir) -> Complex64 {
        self.regions[region].kz * dir.sign()
    }
}

/// Resolves the Snell chain for a mode: in-layer angles and longitudinal
/// wave numbers, complex-capable (evanescent regions allowed).
pub fn kinematics(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    mode: &SphericalMode,
) -> Result<ModeKinematics, StackError> {
    if !(mode.omega > 0.0) || !(mode.theta.abs() < core::f64::consts::FRAC_PI_2) {
        return Err(StackError::InvalidMode);
    }
    if structure.layers.iter().any(|l| l.thickness < 0.0) {
        return Err(StackError::NegativeThickness);
    }
    let n_front = materials.refractive_index(structure.front, mode.omega)?;
    let n_rear = materials.refractive_index(structure.rear, mode.omega)?;
    if n_front.im.abs() > 1e-12 || n_rear.im.abs() > 1e-12 {
        return Err(StackError::LossyAmbient);
    }

    let snell = n_front.re * mode.theta.sin();
    let k0 = mode.omega / C;
    let mut regions = Vec::with_capacity(structure.layers.len() + 2);
    for l in 0..structure.layers.len() + 2 {
        let n = materials.refractive_index(structure.region_material(l), mode.omega)?;
        // n cos ϑ' = sqrt(n² - s²), branch with Im >= 0 (Re >= 0 on ties).
        let mut ncos = (n * n - Complex64::new(snell * snell, 0.0)).sqrt();
        if ncos.im < 0.0 || (ncos.im == 0.0 && ncos.re < 0.0) {
            ncos = -ncos;
        }
        regions.push(LayerKin {
            n,
            kz: ncos * k0,
            cos_theta: ncos / n,
            sin_theta: Complex64::new(snell, 0.0) / n,
        });
    }

    let (kx, ky) = transverse_k(mode, n_front.re);
    Ok(ModeKinematics {
        mode: *mode,
        kx,
        ky,
        snell,
        regions,
        z: structure.boundaries(),
        thickness: structure.layers.iter().map(|l| l.thickness).collect(),
    })
}

/// 2x2 complex matrix acting on (A_F, A_B) amplitude pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub m11: Complex64,
    pub m12: Complex64,
    pub m21: Complex64,
    pub m22: Complex64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        m11: Complex64::new(1.0, 0.0),
        m12: Complex64::new(0.0, 0.0),
        m21: Complex64::new(0.0, 0.0),
        m22: Complex64::new(1.0, 0.0),
    };

    pub fn mul(&self, rhs: &Mat2) -> Mat2 {
        Mat2 {
            m11: self.m11 * rhs.m11 + self.m12 * rhs.m21,
            m12: self.m11 * rhs.m12 + self.m12 * rhs.m22,
            m21: self.m21 * rhs.m11 + self.m22 * rhs.m21,
            m22: self.m21 * rhs.m12 + self.m22 * rhs.m22,
        }
    }

    pub fn apply(&self, v: Vec2) -> Vec2 {
        Vec2 {
            f: self.m11 * v.f + self.m12 * v.b,
            b: self.m21 * v.f + self.m22 * v.b,
        }
    }

    pub fn det(&self) -> Complex64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d.norm() == 0.0 {
            return None;
        }
        Some(Mat2 {
            m11: self.m22 / d,
            m12: -self.m12 / d,
            m21: -self.m21 / d,
            m22: self.m11 / d,
        })
    }
}

/// Forward/backward amplitude pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2 {
    pub f: Complex64,
    pub b: Complex64,
}

impl Vec2 {
    pub fn zero() -> Self {
        Vec2 {
            f: Complex64::new(0.0, 0.0),
            b: Complex64::new(0.0, 0.0),
        }
    }
}

/// Boundary transfer matrix 𝒯 relating amplitudes on the left side of a
/// boundary to amplitudes on its right side (both referenced at the
/// boundary): v_right = 𝒯 v_left.
pub fn boundary_matrix(
    kin: &ModeKinematics,
    boundary: usize,
) -> Result<Mat2, StackError> {
    let a = &kin.regions[boundary];
    let b = &kin.regions[boundary + 1];
    let half = Complex64::new(0.5, 0.0);
    match kin.mode.pol {
        Pol::Te => {
            if b.kz.norm() == 0.0 {
                return Err(StackError::SingularBoundary { boundary });
            }
            let ratio = a.kz / b.kz;
            let sum = half * (Complex64::new(1.0, 0.0) + ratio);
            let dif = half * (Complex64::new(1.0, 0.0) - ratio);
            Ok(Mat2 {
                m11: sum,
                m12: dif,
                m21: dif,
                m22: sum,
            })
        }
        Pol::Tm => {
            if b.n.norm() == 0.0 || b.cos_theta.norm() == 0.0 {
                return Err(StackError::SingularBoundary { boundary });
            }
            let rn = a.n / b.n;
            let rc = a.cos_theta / b.cos_theta;
            Ok(Mat2 {
                m11: half * (rn + rc),
                m12: half * (rn - rc),
                m21: half * (rn - rc),
                m22: half * (rn + rc),
            })
        }
    }
}

/// Propagation matrix 𝒫 across a homogeneous layer of thickness `len`:
/// diag(e^{i k_z L}, e^{-i k_z L}), mapping left-edge to right-edge
/// amplitudes. Zero thickness gives the identity.
pub fn propagation_matrix(kz: Complex64, len: f64) -> Mat2 {
    let phase = Complex64::new(0.0, 1.0) * kz * len;
    Mat2 {
        m11: phase.exp(),
        m12: Complex64::new(0.0, 0.0),
        m21: Complex64::new(0.0, 0.0),
        m22: (-phase).exp(),
    }
}

/// Result of a one-directional renormalized sweep: per-region direction
/// vectors `v[l]` with true amplitudes v[l] * exp(log_scale[l]) up to one
/// global constant.
struct Sweep {
    v: Vec<Vec2>,
    log_scale: Vec<f64>,
}

fn renorm(v: &mut Vec2, log_scale: &mut f64) {
    let m = v.f.norm().max(v.b.norm());
    if m > 0.0 && m.is_finite() {
        v.f /= m;
        v.b /= m;
        *log_scale += m.ln();
    }
}

fn sweep_from_front(kin: &ModeKinematics, v0: Vec2) -> Result<Sweep, StackError> {
    let n = kin.n_layers();
    let mut v = vec![Vec2::zero(); n + 2];
    let mut ls = vec![0.0f64; n + 2];
    v[0] = v0;
    let mut cur = v0;
    let mut cur_ls = 0.0;
    for l in 0..=n {
        let t = boundary_matrix(kin, l)?;
        let mut next = t.apply(if l == 0 {
            cur
        } else {
            propagation_matrix(kin.regions[l].kz, kin.thickness[l - 1]).apply(cur)
        });
        let mut next_ls = cur_ls;
        renorm(&mut next, &mut next_ls);
        v[l + 1] = next;
        ls[l + 1] = next_ls;
        cur = next;
        cur_ls = next_ls;
        if !cur.f.re.is_finite() || !cur.b.re.is_finite() {
            return Err(StackError::SingularChain);
        }
    }
    Ok(Sweep { v, log_scale: ls })
}

fn sweep_from_rear(kin: &ModeKinematics, v_rear: Vec2) -> Result<Sweep, StackError> {
    let n = kin.n_layers();
    let mut v = vec![Vec2::zero(); n + 2];
    let mut ls = vec![0.0f64; n + 2];
    v[n + 1] = v_rear;
    let mut cur = v_rear;
    let mut cur_ls = 0.0;
    for l in (0..=n).rev() {
        let t_inv = boundary_matrix(kin, l)?
            .inverse()
            .ok_or(StackError::SingularBoundary { boundary: l })?;
        let w = t_inv.apply(cur);
        let mut next = if l == 0 {
            w
        } else {
            propagation_matrix(kin.regions[l].kz, kin.thickness[l - 1])
                .inverse()
                .expect("propagation matrices are invertible")
                .apply(w)
        };
        let mut next_ls = cur_ls;
        renorm(&mut next, &mut next_ls);
        v[l] = next;
        ls[l] = next_ls;
        cur = next;
        cur_ls = next_ls;
        if !cur.f.re.is_finite() || !cur.b.re.is_finite() {
            return Err(StackError::SingularChain);
        }
    }
    Ok(Sweep { v, log_scale: ls })
}

/// Adds `sweep` scaled so that the selected component of region `at`
/// equals `target` into `out`.
fn accumulate_scaled(
    out: &mut [Vec2],
    sweep: &Sweep,
    at: usize,
    pick_f: bool,
    target: Complex64,
) -> Result<(), StackError> {
    let pivot = if pick_f { sweep.v[at].f } else { sweep.v[at].b };
    if pivot.norm() == 0.0 {
        return Err(StackError::SingularChain);
    }
    let c = target / pivot;
    let ls_ref = sweep.log_scale[at];
    for (o, (v, ls)) in out
        .iter_mut()
        .zip(sweep.v.iter().zip(sweep.log_scale.iter()))
    {
        let scale = (ls - ls_ref).exp();
        o.f += v.f * c * scale;
        o.b += v.b * c * scale;
    }
    Ok(())
}

/// Per-mode field solution: amplitudes in every region plus global
/// intensity coefficients.
#[derive(Debug, Clone)]
pub struct FieldSolution {
    pub kin: ModeKinematics,
    /// Left-edge-referenced amplitudes for regions 0..=N+1 (region 0 is
    /// referenced at z_0).
    pub amps: Vec<Vec2>,
    /// Fraction of the total incoming flux leaving through the rear.
    pub t: f64,
    /// Fraction leaving through the front.
    pub r: f64,
    /// Fraction dissipated inside the layers, integrated per layer from the
    /// Poynting flux differences (independent of `t` and `r`).
    pub a_abs: f64,
}

impl FieldSolution {
    /// Flux-normalized closure residual (T + R + A_abs - 1).
    pub fn closure_residual(&self) -> f64 {
        self.t + self.r + self.a_abs - 1.0
    }

    /// Largest field amplitude magnitude inside the finite layers.
    pub fn max_internal_amplitude(&self) -> f64 {
        let n = self.kin.n_layers();
        let mut best = 0.0f64;
        for l in 1..=n {
            best = best
                .max(self.amps[l].f.norm())
                .max(self.amps[l].b.norm());
        }
        best
    }

    /// Electric-field vector at position z (m).
    pub fn field_at(&self, z: f64) -> [Complex64; 3] {
        self.field_in_region(self.region_of(z), z)
    }

    /// Electric-field vector at position z evaluated with region `l`'s
    /// amplitudes (useful exactly on a boundary, where both adjacent
    /// regions are valid).
    pub fn field_in_region(&self, l: usize, z: f64) -> [Complex64; 3] {
        let z_ref = if l == 0 { self.kin.z[0] } else { self.kin.z[l - 1] };
        let zp = z - z_ref;
        let kz = self.kin.regions[l].kz;
        let phase_f = (Complex64::new(0.0, 1.0) * kz * zp).exp();
        let phase_b = (Complex64::new(0.0, -1.0) * kz * zp).exp();
        let ef = self.kin.pol_vector(l, Dir::F);
        let eb = self.kin.pol_vector(l, Dir::B);
        let a = &self.amps[l];
        [
            a.f * phase_f * ef[0] + a.b * phase_b * eb[0],
            a.f * phase_f * ef[1] + a.b * phase_b * eb[1],
            a.f * phase_f * ef[2] + a.b * phase_b * eb[2],
        ]
    }

    /// Region index containing z.
    pub fn region_of(&self, z: f64) -> usize {
        let zb = &self.kin.z;
        if z < zb[0] {
            return 0;
        }
        match zb.iter().position(|&b| z < b) {
            Some(j) => j, // z in [z_{j-1}, z_j) -> layer j
            None => zb.len(), // beyond z_N -> rear ambient
        }
    }

    /// z-component of the (relative) Poynting flux inside region `l` at
    /// local coordinate `zp` measured from the region's reference plane.
    /// Exact for complex k_z, including forward/backward cross terms.
    pub fn poynting_z(&self, l: usize, zp: f64) -> f64 {
        let q = self.kin.obliquity(l);
        let kz = self.kin.regions[l].kz;
        let a = &self.amps[l];
        let att = (-2.0 * kz.im * zp).exp();
        let fwd = a.f.norm_sqr() * att;
        let bwd = if att > 0.0 { a.b.norm_sqr() / att } else { 0.0 };
        let cross = a.f
            * a.b.conj()
            * (Complex64::new(0.0, 2.0 * kz.re * zp)).exp();
        q.re * (fwd - bwd) - 2.0 * q.im * cross.im
    }

    /// Power dissipated in layer l (1..=N) per unit incident flux scale.
    pub fn dissipation(&self, l: usize) -> f64 {
        let len = self.kin.thickness[l - 1];
        self.poynting_z(l, 0.0) - self.poynting_z(l, len)
    }
}

fn finish_solution(kin: ModeKinematics, amps: Vec<Vec2>) -> FieldSolution {
    let n = kin.thickness.len();
    let q0 = kin.obliquity(0).re;
    let qn = kin.obliquity(n + 1).re;
    let p_in = q0 * amps[0].f.norm_sqr() + qn * amps[n + 1].b.norm_sqr();
    let p_front = q0 * amps[0].b.norm_sqr();
    let p_rear = qn * amps[n + 1].f.norm_sqr();

    let mut sol = FieldSolution {
        kin,
        amps,
        t: 0.0,
        r: 0.0,
        a_abs: 0.0,
    };
    if p_in > 0.0 {
        sol.t = p_rear / p_in;
        sol.r = p_front / p_in;
        let mut diss = 0.0;
        for l in 1..=n {
            diss += sol.dissipation(l);
        }
        sol.a_abs = diss / p_in;
    }
    sol
}

/// Solves the structure for prescribed *incident* amplitudes: `a_f0`
/// entering from the front and `a_b_rear` entering from the rear.
pub fn solve_incident(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    mode: &SphericalMode,
    a_f0: Complex64,
    a_b_rear: Complex64,
) -> Result<FieldSolution, StackError> {
    let kin = kinematics(structure, materials, mode)?;
    let n = kin.n_layers();
    let mut amps = vec![Vec2::zero(); n + 2];
    if a_f0.norm() > 0.0 {
        // No incoming wave at the rear: direction vector (1, 0) there.
        let sweep = sweep_from_rear(
            &kin,
            Vec2 {
                f: Complex64::new(1.0, 0.0),
                b: Complex64::new(0.0, 0.0),
            },
        )?;
        accumulate_scaled(&mut amps, &sweep, 0, true, a_f0)?;
    }
    if a_b_rear.norm() > 0.0 {
        // No incoming wave at the front: direction vector (0, 1) there.
        let sweep = sweep_from_front(
            &kin,
            Vec2 {
                f: Complex64::new(0.0, 0.0),
                b: Complex64::new(1.0, 0.0),
            },
        )?;
        accumulate_scaled(&mut amps, &sweep, n + 1, false, a_b_rear)?;
    }
    Ok(finish_solution(kin, amps))
}

/// Solves the structure for prescribed *outgoing* amplitudes: `out_f`
/// leaving through the rear (A_F at N+1) and `out_b` leaving through the
/// front (A_B at 0). This is the boundary condition under which the
/// internal signal/idler mode weights are defined.
pub fn solve_outgoing(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    mode: &SphericalMode,
    out_f: Complex64,
    out_b: Complex64,
) -> Result<FieldSolution, StackError> {
    let kin = kinematics(structure, materials, mode)?;
    let n = kin.n_layers();
    let mut amps = vec![Vec2::zero(); n + 2];
    if out_f.norm() > 0.0 {
        // Nothing leaves through the front: (A_B = 0) at region 0.
        let sweep = sweep_from_front(
            &kin,
            Vec2 {
                f: Complex64::new(1.0, 0.0),
                b: Complex64::new(0.0, 0.0),
            },
        )?;
        accumulate_scaled(&mut amps, &sweep, n + 1, true, out_f)?;
    }
    if out_b.norm() > 0.0 {
        // Nothing leaves through the rear: (A_F = 0) at region N+1.
        let sweep = sweep_from_rear(
            &kin,
            Vec2 {
                f: Complex64::new(0.0, 0.0),
                b: Complex64::new(1.0, 0.0),
            },
        )?;
        accumulate_scaled(&mut amps, &sweep, 0, false, out_b)?;
    }
    Ok(finish_solution(kin, amps))
}

/// Intensity transmission/reflection/absorption for unit front incidence.
pub fn transmittance(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    mode: &SphericalMode,
) -> Result<(f64, f64, f64), StackError> {
    let sol = solve_incident(
        structure,
        materials,
        mode,
        Complex64::new(1.0, 0.0),
        Complex64::new(0.0, 0.0),
    )?;
    Ok((sol.t, sol.r, sol.a_abs))
}

/// Raw (unnormalized, analytic in ω) chain value whose zeros mark the
/// structure's leaky resonances for the given angle/polarization: the rear
/// forward amplitude produced by the front boundary condition A_B(0) = 0.
pub fn resonance_indicator(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    pol: Pol,
    theta: f64,
    psi: f64,
    omega: Complex64,
) -> Result<Complex64, StackError> {
    // Complex ω enters only through k0 and the material indices evaluated at
    // Re(ω); for the narrow resonances of interest the index variation over
    // Im(ω) is negligible and the analytic continuation in k0 suffices.
    let mode = SphericalMode::new(omega.re, theta, psi, pol);
    let kin = kinematics(structure, materials, &mode)?;
    let n = kin.n_layers();
    let scale = omega / omega.re;
    let mut cur = Vec2 {
        f: Complex64::new(1.0, 0.0),
        b: Complex64::new(0.0, 0.0),
    };
    for l in 0..=n {
        if l > 0 {
            let kz = kin.regions[l].kz * scale;
            cur = propagation_matrix(kz, kin.thickness[l - 1]).apply(cur);
        }
        cur = boundary_matrix(&kin, l)?.apply(cur);
        if !cur.f.re.is_finite() || !cur.b.re.is_finite() {
            return Err(StackError::SingularChain);
        }
    }
    Ok(cur.f)
}

/// A leaky resonance: real center frequency and full width (both rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resonance {
    pub omega: f64,
    pub gamma: f64,
}

/// Polishes a resonance from a seed frequency by secant iteration on the
/// complex zero of [`resonance_indicator`].
pub fn polish_resonance(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    pol: Pol,
    theta: f64,
    psi: f64,
    omega_seed: f64,
    step: f64,
) -> Option<Resonance> {
    let mut f = |z: Complex64| {
        resonance_indicator(structure, materials, pol, theta, psi, z)
            .unwrap_or(Complex64::new(f64::NAN, f64::NAN))
    };
    let z = complex_secant(&mut f, Complex64::new(omega_seed, 0.0), step, 1e-13, 80)?;
    if !z.re.is_finite() || z.re <= 0.0 {
        return None;
    }
    Some(Resonance {
        omega: z.re,
        gamma: 2.0 * z.im.abs(),
    })
}

/// Locates leaky resonances in `omega_range` by a coarse scan of the chain
/// indicator followed by complex secant polishing. `max_rel_width` discards
/// broad features (gamma/omega above it).
pub fn locate_resonances(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    pol: Pol,
    theta: f64,
    psi: f64,
    omega_range: (f64, f64),
    coarse_points: usize,
    max_rel_width: f64,
) -> Result<Vec<Resonance>, StackError> {
    let (lo, hi) = omega_range;
    let n = coarse_points.max(16);
    let step = (hi - lo) / (n - 1) as f64;
    let mut mags = Vec::with_capacity(n);
    for i in 0..n {
        let w = lo + step * i as f64;
        let h = resonance_indicator(
            structure,
            materials,
            pol,
            theta,
            psi,
            Complex64::new(w, 0.0),
        )?;
        mags.push(h.norm());
    }

    let mut found: Vec<Resonance> = Vec::new();
    for i in 1..n - 1 {
        if mags[i] < mags[i - 1] && mags[i] < mags[i + 1] {
            let seed = lo + step * i as f64;
            if let Some(res) = polish_resonance(structure, materials, pol, theta, psi, seed, 0.25 * step)
            {
                if res.omega < lo - step || res.omega > hi + step {
                    continue;
                }
                if res.gamma / res.omega > max_rel_width {
                    continue;
                }
                let dup = found
                    .iter()
                    .any(|r| (r.omega - res.omega).abs() < 0.5 * (r.gamma + res.gamma).max(1e-9 * res.omega));
                if !dup {
                    found.push(res);
                }
            }
        }
    }
    found.sort_by(|a, b| a.omega.partial_cmp(&b.omega).unwrap());
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consts::omega_from_lambda_nm;
    use crate::materials::{ChiModel, DispersionModel, Material, MaterialSet};
    use alloc::string::String;

    fn glass_air_set() -> (MaterialSet, MaterialId, MaterialId) {
        let mut set = MaterialSet::new();
        let vac = set.register(Material {
            name: String::from("vacuum"),
            dispersion: DispersionModel::Vacuum,
            chi2: ChiModel::None,
        });
        let glass = set.register(Material {
            name: String::from("glass"),
            dispersion: DispersionModel::Constant {
                n: Complex64::new(1.5, 0.0),
            },
            chi2: ChiModel::None,
        });
        (set, vac, glass)
    }

    #[test]
    fn transverse_k_trivials() {
        let w = omega_from_lambda_nm(800.0);
        let m = SphericalMode::new(w, 0.0, 0.3, Pol::Te);
        let (kx, ky) = transverse_k(&m, 1.0);
        assert_eq!((kx, ky), (0.0, 0.0));

        let m = SphericalMode::new(w, core::f64::consts::FRAC_PI_6, 0.0, Pol::Te);
        let (kx, ky) = transverse_k(&m, 1.0);
        assert!(kx.abs() < 1e-20);
        assert!((ky - w * 0.5 / C).abs() < 1e-9 * w / C);

        let m = SphericalMode::new(w, 0.4, core::f64::consts::FRAC_PI_2, Pol::Te);
        let (kx, ky) = transverse_k(&m, 1.0);
        assert!((kx + w / C * 0.4f64.sin()).abs() < 1e-9 * w / C);
        assert!(ky.abs() < 1e-6 * w / C);
    }

    #[test]
    fn snell_chain_and_kz() {
        let (set, vac, glass) = glass_air_set();
        let s = LayeredStructure::new(vac, vac, vec![Layer { material: glass, thickness: 1e-6 }]);
        let w = omega_from_lambda_nm(800.0);
        let theta = core::f64::consts::FRAC_PI_4;
        let kin = kinematics(&s, &set, &SphericalMode::new(w, theta, 0.0, Pol::Te)).unwrap();
        // Snell: sin(theta_glass) = sin(45°)/1.5.
        let expect = (theta.sin() / 1.5).asin();
        assert!((kin.regions[1].sin_theta.re - expect.sin()).abs() < 1e-14);
        // kz = n w/c cos(theta_l).
        let kz = kin.regions[1].kz;
        assert!((kz.re - 1.5 * w / C * expect.cos()).abs() < 1e-2);
        assert!(kz.im.abs() < 1e-12);
        // Normal incidence: kz = n w / c in every layer.
        let kin0 = kinematics(&s, &set, &SphericalMode::new(w, 0.0, 0.0, Pol::Te)).unwrap();
        assert!((kin0.regions[1].kz.re - 1.5 * w / C).abs() < 1e-2);
    }

    #[test]
    fn boundary_matrix_same_index_is_identity() {
        let (set, vac, _) = glass_air_set();
        let s = LayeredStructure::new(vac, vac, vec![Layer { material: vac, thickness: 1e-7 }]);
        let w = omega_from_lambda_nm(633.0);
        for pol in [Pol::Te, Pol::Tm] {
            let kin = kinematics(&s, &set, &SphericalMode::new(w, 0.7, 0.2, pol)).unwrap();
            let t = boundary_matrix(&kin, 0).unwrap();
            assert!((t.m11 - Complex64::new(1.0, 0.0)).norm() < 1e-15);
            assert!(t.m12.norm() < 1e-15);
            assert!(t.m21.norm() < 1e-15);
            assert!((t.m22 - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn boundary_matrix_encodes_normal_incidence_fresnel() {
        let (set, vac, glass) = glass_air_set();
        let s = LayeredStructure::new(vac, vac, vec![Layer { material: glass, thickness: 1e-7 }]);
        let w = omega_from_lambda_nm(633.0);
        let kin = kinematics(&s, &set, &SphericalMode::new(w, 0.0, 0.0, Pol::Te)).unwrap();
        let t = boundary_matrix(&kin, 0).unwrap();
        // One-sided incidence: r = -t21/t22 reproduces (n1-n2)/(n1+n2).
        let r = -(t.m21 / t.m22);
        let expect = (1.0 - 1.5) / (1.0 + 1.5);
        assert!((r - Complex64::new(expect, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn tm_brewster_reflection_vanishes() {
        let (set, vac, glass) = glass_air_set();
        let s = LayeredStructure::new(vac, glass, vec![]);
        let w = omega_from_lambda_nm(633.0);
        let brewster = 1.5f64.atan();
        let sol = solve_incident(
            &s,
            &set,
            &SphericalMode::new(w, brewster, 0.0, Pol::Tm),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        )
        .unwrap();
        assert!(sol.r < 1e-20, "R at Brewster = {}", sol.r);
        assert!((sol.t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_structure_transmits_unit_amplitude() {
        let (set, vac, _) = glass_air_set();
        let s = LayeredStructure::new(vac, vac, vec![]);
        let w = omega_from_lambda_nm(500.0);
        for pol in [Pol::Te, Pol::Tm] {
            let sol = solve_incident(
                &s,
                &set,
                &SphericalMode::new(w, 0.3, 0.1, pol),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
            )
            .unwrap();
            assert!((sol.t - 1.0).abs() < 1e-14);
            assert!(sol.r < 1e-28);
            assert!((sol.amps[1].f - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn outgoing_solve_on_empty_structure_matches_prescription() {
        let (set, vac, _) = glass_air_set();
        let s = LayeredStructure::new(vac, vac, vec![]);
        let w = omega_from_lambda_nm(500.0);
        let sol = solve_outgoing(
            &s,
            &set,
            &SphericalMode::new(w, 0.2, 0.0, Pol::Tm),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        )
        .unwrap();
        for l in 0..2 {
            assert!((sol.amps[l].f - Complex64::new(1.0, 0.0)).norm() < 1e-14);
            assert!(sol.amps[l].b.norm() < 1e-14);
        }
    }

    #[test]
    fn single_film_matches_airy_oracle() {
        // Independent analytic oracle for a lossless film between two
        // ambient media, standard Fresnel/Airy composition.
        let (set, vac, glass) = glass_air_set();
        let film = 0.73e-6;
        let s = LayeredStructure::new(vac, vac, vec![Layer { material: glass, thickness: film }]);
        let w = omega_from_lambda_nm(633.0);
        for (pol, theta) in [
            (Pol::Te, 0.0),
            (Pol::Te, 0.62),
            (Pol::Tm, 0.35),
            (Pol::Tm, 1.1),
        ] {
            let sol = solve_incident(
                &s,
                &set,
                &SphericalMode::new(w, theta, 0.0, pol),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
            )
            .unwrap();

            let n0 = 1.0;
            let n1 = 1.5;
            let c0 = theta.cos();
            let st1 = n0 * theta.sin() / n1;
            let c1 = (1.0 - st1 * st1).sqrt();
            let (r01, r12, t01, t12) = match pol {
                Pol::Te => {
                    let r01 = (n0 * c0 - n1 * c1) / (n0 * c0 + n1 * c1);
                    let t01 = 2.0 * n0 * c0 / (n0 * c0 + n1 * c1);
                    let r12 = (n1 * c1 - n0 * c0) / (n1 * c1 + n0 * c0);
                    let t12 = 2.0 * n1 * c1 / (n1 * c1 + n0 * c0);
                    (r01, r12, t01, t12)
                }
                Pol::Tm => {
                    let r01 = (n1 * c0 - n0 * c1) / (n1 * c0 + n0 * c1);
                    let t01 = 2.0 * n0 * c0 / (n1 * c0 + n0 * c1);
                    let r12 = (n0 * c1 - n1 * c0) / (n0 * c1 + n1 * c0);
                    let t12 = 2.0 * n1 * c1 / (n0 * c1 + n1 * c0);
                    (r01, r12, t01, t12)
                }
            };
            let beta = n1 * w / C * c1 * film;
            let phase = Complex64::new(0.0, 2.0 * beta).exp();
            let denom = Complex64::new(1.0, 0.0) + r01 * r12 * phase;
            let r = (Complex64::new(r01, 0.0) + r12 * phase) / denom;
            let t = t01 * t12 * Complex64::new(0.0, beta).exp() / denom;
            let t_int = t.norm_sqr();
            let r_int = r.norm_sqr();

            assert!(
                (sol.t - t_int).abs() < 1e-10,
                "{pol:?} theta={theta}: T {} vs oracle {}",
                sol.t,
                t_int
            );
            assert!((sol.r - r_int).abs() < 1e-10);
            assert!((sol.t + sol.r - 1.0).abs() < 1e-10);
            assert!(sol.a_abs.abs() < 1e-10);
        }
    }

    #[test]
    fn te_and_tm_coincide_at_normal_incidence() {
        let set = MaterialSet::defaults();
        let gan = set.by_name("GaN").unwrap();
        let ag = set.by_name("Ag").unwrap();
        let vac = set.by_name("vacuum").unwrap();
        let s = LayeredStructure::new(
            vac,
            vac,
            vec![
                Layer { material: gan, thickness: 101.752e-9 },
                Layer { material: ag, thickness: 18.083e-9 },
                Layer { material: gan, thickness: 101.752e-9 },
            ],
        );
        let w = omega_from_lambda_nm(400.0);
        let te = transmittance(&s, &set, &SphericalMode::new(w, 0.0, 0.0, Pol::Te)).unwrap();
        let tm = transmittance(&s, &set, &SphericalMode::new(w, 0.0, 0.0, Pol::Tm)).unwrap();
        assert!((te.0 - tm.0).abs() < 1e-9);
        assert!((te.1 - tm.1).abs() < 1e-9);
        assert!((te.2 - tm.2).abs() < 1e-9);
    }

    #[test]
    fn field_profile_in_vacuum_is_flat_and_tangential_field_is_continuous() {
        let set = MaterialSet::defaults();
        let vac = set.by_name("vacuum").unwrap();
        let gan = set.by_name("GaN").unwrap();
        let ag = set.by_name("Ag").unwrap();

        // Vacuum everywhere, unit forward wave: |E| = 1 at every z.
        let empty = LayeredStructure::new(vac, vac, vec![Layer { material: vac, thickness: 3e-7 }]);
        let w = omega_from_lambda_nm(800.0);
        let sol = solve_incident(
            &empty,
            &set,
            &SphericalMode::new(w, 0.35, 0.4, Pol::Tm),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        )
        .unwrap();
        for i in 0..40 {
            let z = -1e-7 + i as f64 * 1.5e-8;
            let e = sol.field_at(z);
            let norm = (e[0].norm_sqr() + e[1].norm_sqr() + e[2].norm_sqr()).sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }

        // Mixed lossy stack: tangential components continuous across every
        // boundary to 1e-9 relative.
        let s = LayeredStructure::new(
            vac,
            vac,
            vec![
                Layer { material: gan, thickness: 95e-9 },
                Layer { material: ag, thickness: 12e-9 },
                Layer { material: gan, thickness: 80e-9 },
            ],
        );
        for pol in [Pol::Te, Pol::Tm] {
            let sol = solve_incident(
                &s,
                &set,
                &SphericalMode::new(w, 0.9, 0.3, pol),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
            )
            .unwrap();
            let mut scale = 0.0f64;
            for (j, &zb) in sol.kin.z.iter().enumerate() {
                let e = sol.field_in_region(j + 1, zb);
                scale = scale.max(e[0].norm().max(e[1].norm()));
            }
            for (j, &zb) in sol.kin.z.iter().enumerate() {
                let below = sol.field_in_region(j, zb);
                let above = sol.field_in_region(j + 1, zb);
                // Tangential components are x and y.
                for comp in 0..2 {
                    let diff = (below[comp] - above[comp]).norm();
                    assert!(diff < 1e-9 * scale, "{pol:?} boundary at {zb}: {diff}");
                }
            }
        }
    }

    #[test]
    fn zero_thickness_layer_insertion_is_inert() {
        let set = MaterialSet::defaults();
        let vac = set.by_name("vacuum").unwrap();
        let gan = set.by_name("GaN").unwrap();
        let ag = set.by_name("Ag").unwrap();
        let w = omega_from_lambda_nm(520.0);
        let mode = SphericalMode::new(w, 0.42, 0.0, Pol::Tm);

        let base = LayeredStructure::new(
            vac,
            vac,
            vec![
                Layer { material: gan, thickness: 120e-9 },
                Layer { material: ag, thickness: 15e-9 },
            ],
        );
        let with_zero = LayeredStructure::new(
            vac,
            vac,
            vec![
                Layer { material: gan, thickness: 120e-9 },
                Layer { material: ag, thickness: 0.0 },
                Layer { material: ag, thickness: 15e-9 },
            ],
        );
        let a = transmittance(&base, &set, &mode).unwrap();
        let b = transmittance(&with_zero, &set, &mode).unwrap();
        assert!((a.0 - b.0).abs() < 1e-10);
        assert!((a.1 - b.1).abs() < 1e-10);
        assert!((a.2 - b.2).abs() < 1e-10);
    }

    #[test]
    fn sweep_solution_matches_composed_transfer_chain() {
        // Direct matrix composition reproduces the stabilized sweep on a
        // small random-ish stack.
        let set = MaterialSet::defaults();
        let vac = set.by_name("vacuum").unwrap();
        let gan = set.by_name("GaN").unwrap();
        let ag = set.by_name("Ag").unwrap();
        let s = LayeredStructure::new(
            vac,
            vac,
            vec![
                Layer { material: gan, thickness: 88e-9 },
                Layer { material: ag, thickness: 21e-9 },
                Layer { material: gan, thickness: 133e-9 },
                Layer { material: ag, thickness: 9e-9 },
            ],
        );
        let w = omega_from_lambda_nm(700.0);
        for pol in [Pol::Te, Pol::Tm] {
            let mode = SphericalMode::new(w, 0.5, 0.2, pol);
            let sol = solve_incident(
                &s,
                &set,
                &mode,
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
            )
            .unwrap();
            let kin = kinematics(&s, &set, &mode).unwrap();
            // v_{l+1} = T_l P_l ... T_0 v_0, checked per region.
            let mut m = Mat2::IDENTITY;
            let v0 = sol.amps[0];
            for l in 0..=kin.n_layers() {
                if l > 0 {
                    m = propagation_matrix(kin.regions[l].kz, kin.thickness[l - 1]).mul(&m);
                }
                m = boundary_matrix(&kin, l).unwrap().mul(&m);
                let direct = m.apply(v0);
                let got = sol.amps[l + 1];
                let scale = direct.f.norm().max(direct.b.norm()).max(1e-300);
                assert!((direct.f - got.f).norm() / scale < 1e-8);
                assert!((direct.b - got.b).norm() / scale < 1e-8);
            }
        }
    }

    #[test]
    fn lossless_outgoing_solve_closes_energy() {
        let (set, vac, glass) = glass_air_set();
        let s = LayeredStructure::new(vac, vac, vec![Layer { material: glass, thickness: 420e-9 }]);
        let w = omega_from_lambda_nm(633.0);
        let sol = solve_outgoing(
            &s,
            &set,
            &SphericalMode::new(w, 0.3, 0.0, Pol::Te),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        )
        .unwrap();
        assert!(sol.max_internal_amplitude().is_finite());
        assert!((sol.t + sol.r - 1.0).abs() < 1e-10);
        assert!(sol.a_abs.abs() < 1e-10);
    }

    #[test]
    fn finds_high_q_resonance_of_a_metal_resonator() {
        let set = MaterialSet::defaults();
        let vac = set.by_name("vacuum").unwrap();
        let gan = set.by_name("GaN").unwrap();
        let ag = set.by_name("Ag").unwrap();
        let s = LayeredStructure::new(
            vac,
            vac,
            vec![
                Layer { material: ag, thickness: 40e-9 },
                Layer { material: gan, thickness: 160e-9 },
                Layer { material: ag, thickness: 40e-9 },
            ],
        );
        let lo = omega_from_lambda_nm(1000.0);
        let hi = omega_from_lambda_nm(600.0);
        let found = locate_resonances(&s, &set, Pol::Te, 0.1, 0.0, (lo, hi), 400, 0.05).unwrap();
        assert!(!found.is_empty());
        for r in &found {
            // The outgoing-prescribed solve at the resonance center shows a
            // strong internal enhancement.
            let sol = solve_outgoing(
                &s,
                &set,
                &SphericalMode::new(r.omega, 0.1, 0.0, Pol::Te),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
            )
            .unwrap();
            assert!(sol.max_internal_amplitude() > 3.0);
            assert!(r.gamma > 0.0);
        }
    }
}
