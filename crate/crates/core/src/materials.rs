//! Material optical data: complex refractive indices and second-order
//! susceptibility tensors.
//!
//! Dispersion models are deliberately swappable: default GaN/AlN use
//! Sellmeier-type analytic fits and Ag uses a Drude fit with documented
//! parameters; a tabulated model with linear interpolation (and explicit
//! extrapolation refusal) can override any of them from the material
//! database file handled by the companion crate.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::consts;

/// Free-electron (Drude) parameters of a metal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrudeParams {
    /// Plasma frequency in rad/s.
    pub omega_p: f64,
    /// Collision factor in rad/s.
    pub gamma: f64,
    /// Background permittivity (bound-electron contribution).
    pub eps_background: f64,
}

impl DrudeParams {
    /// Electron density implied by the plasma frequency, 1/m^3.
    pub fn electron_density(&self) -> f64 {
        self.omega_p * self.omega_p * consts::EPS_0 * consts::M_ELECTRON
            / (consts::E_CHARGE * consts::E_CHARGE)
    }

    /// Relative permittivity at angular frequency `omega`.
    pub fn permittivity(&self, omega: f64) -> Complex64 {
        let denom = Complex64::new(omega * omega, self.gamma * omega);
        Complex64::new(self.eps_background, 0.0)
            - Complex64::new(self.omega_p * self.omega_p, 0.0) / denom
    }
}

/// Frequency dependence of a complex refractive index.
#[derive(Debug, Clone, PartialEq)]
pub enum DispersionModel {
    /// Exactly 1 + 0i at every frequency.
    Vacuum,
    /// Frequency-independent complex index (useful for synthetic tests).
    Constant { n: Complex64 },
    /// n^2 = a0 + sum_i b_i λ² / (λ² − c_i²) with λ in µm. Lossless by
    /// construction; validity limited to `range_nm`.
    Sellmeier {
        a0: f64,
        terms: Vec<(f64, f64)>,
        range_nm: (f64, f64),
    },
    /// Free-electron metal: ε(ω) = ε_b − Ω_p²/(ω² + iγω).
    Drude(DrudeParams),
    /// (wavelength_nm, n_re, n_im) rows, sorted by wavelength; linear
    /// interpolation, no extrapolation.
    Tabulated { rows: Vec<(f64, f64, f64)> },
}

/// Errors from material lookups and evaluations.
#[derive(Debug, Clone, PartialEq)]
pub enum MaterialError {
    UnknownMaterial(String),
    /// Requested frequency falls outside the tabulated/fitted validity range.
    OutOfRange {
        lambda_nm: f64,
        min_nm: f64,
        max_nm: f64,
    },
    NonPositiveFrequency,
    /// The material has no χ⁽²⁾ data registered.
    NoChi2(String),
}

impl core::fmt::Display for MaterialError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            MaterialError::UnknownMaterial(name) => write!(f, "unknown material: {name}"),
            MaterialError::OutOfRange {
                lambda_nm,
                min_nm,
                max_nm,
            } => write!(
                f,
                "wavelength {lambda_nm} nm outside data range [{min_nm}, {max_nm}] nm"
            ),
            MaterialError::NonPositiveFrequency => write!(f, "frequency must be positive"),
            MaterialError::NoChi2(name) => write!(f, "material {name} has no chi2 data"),
        }
    }
}

impl DispersionModel {
    /// Complex refractive index at angular frequency `omega` (rad/s).
    ///
    /// The branch is the principal square root of the permittivity with
    /// Im(n) >= 0 (passive medium, decaying forward waves).
    pub fn refractive_index(&self, omega: f64) -> Result<Complex64, MaterialError> {
        if omega <= 0.0 {
            return Err(MaterialError::NonPositiveFrequency);
        }
        let lambda_nm = consts::lambda_nm_from_omega(omega);
        let n = match self {
            DispersionModel::Vacuum => Complex64::new(1.0, 0.0),
            DispersionModel::Constant { n } => *n,
            DispersionModel::Sellmeier { a0, terms, range_nm } => {
                if lambda_nm < range_nm.0 || lambda_nm > range_nm.1 {
                    return Err(MaterialError::OutOfRange {
                        lambda_nm,
                        min_nm: range_nm.0,
                        max_nm: range_nm.1,
                    });
                }
                let l2 = (lambda_nm * 1e-3) * (lambda_nm * 1e-3);
                let mut n2 = *a0;
                for &(b, c_um) in terms {
                    n2 += b * l2 / (l2 - c_um * c_um);
                }
                Complex64::new(n2, 0.0).sqrt()
            }
            DispersionModel::Drude(p) => p.permittivity(omega).sqrt(),
            DispersionModel::Tabulated { rows } => {
                let first = rows.first().ok_or(MaterialError::OutOfRange {
                    lambda_nm,
                    min_nm: 0.0,
                    max_nm: 0.0,
                })?;
                let last = rows.last().unwrap();
                if lambda_nm < first.0 || lambda_nm > last.0 {
                    return Err(MaterialError::OutOfRange {
                        lambda_nm,
                        min_nm: first.0,
                        max_nm: last.0,
                    });
                }
                let idx = rows
                    .partition_point(|r| r.0 <= lambda_nm)
                    .clamp(1, rows.len() - 1);
                let (l0, re0, im0) = rows[idx - 1];
                let (l1, re1, im1) = rows[idx];
                let t = if l1 > l0 { (lambda_nm - l0) / (l1 - l0) } else { 0.0 };
                Complex64::new(re0 + t * (re1 - re0), im0 + t * (im1 - im0))
            }
        };
        // Passivity: flip to the Im >= 0 branch if the principal root (or a
        // user-supplied table row) strays below the axis by rounding.
        Ok(if n.im < 0.0 { -n } else { n })
    }
}

/// Rank-3 susceptibility tensor, entries in m/V.
///
/// Index convention: `entry(j, k, m)` contracts the pump field on `j`, the
/// signal on `k` and the idler on `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiTensor {
    entries: [Complex64; 27],
}

impl ChiTensor {
    pub const ZERO: ChiTensor = ChiTensor {
        entries: [Complex64::new(0.0, 0.0); 27],
    };

    pub fn entry(&self, j: usize, k: usize, m: usize) -> Complex64 {
        self.entries[9 * j + 3 * k + m]
    }

    pub fn set(&mut self, j: usize, k: usize, m: usize, value: Complex64) {
        self.entries[9 * j + 3 * k + m] = value;
    }

    pub fn add_assign(&mut self, other: &ChiTensor) {
        for (a, b) in self.entries.iter_mut().zip(other.entries.iter()) {
            *a += *b;
        }
    }

    pub fn max_element(&self) -> f64 {
        self.entries.iter().fold(0.0f64, |m, e| m.max(e.norm()))
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| e.norm() == 0.0)
    }

    /// Contracts with pump/signal/idler polarization vectors:
    /// sum_jkm chi_jkm e_p[j] e_s[k] e_i[m].
    pub fn contract(&self, e_p: &[Complex64; 3], e_s: &[Complex64; 3], e_i: &[Complex64; 3]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..3 {
            if e_p[j].norm() == 0.0 {
                continue;
            }
            for k in 0..3 {
                let pj_sk = e_p[j] * e_s[k];
                if pj_sk.norm() == 0.0 {
                    continue;
                }
                for m in 0..3 {
                    let chi = self.entries[9 * j + 3 * k + m];
                    if chi.norm() != 0.0 {
                        acc += chi * pj_sk * e_i[m];
                    }
                }
            }
        }
        acc
    }
}

/// χ⁽²⁾ model attached to a material.
#[derive(Debug, Clone, PartialEq)]
pub enum ChiModel {
    /// No second-order response registered.
    None,
    /// Frequency-independent tensor (dielectrics).
    Constant(ChiTensor),
    /// Free-electron tensor derived from the Lorentz force; depends on
    /// frequencies and complex wave vectors of all three fields.
    DrudeMetal(DrudeParams),
}

/// A registered material.
#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub name: String,
    pub dispersion: DispersionModel,
    pub chi2: ChiModel,
}

/// Handle into a [`MaterialSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MaterialId(pub usize);

/// Immutable registry of materials; all evaluations are pure and safe for
/// unrestricted parallel use.
#[derive(Debug, Clone, Default)]
pub struct MaterialSet {
    materials: Vec<Material>,
}

impl MaterialSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, material: Material) -> MaterialId {
        self.materials.push(material);
        MaterialId(self.materials.len() - 1)
    }

    pub fn get(&self, id: MaterialId) -> &Material {
        &self.materials[id.0]
    }

    pub fn len(&self) -> usize {
        self.materials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.materials.is_empty()
    }

    pub fn by_name(&self, name: &str) -> Result<MaterialId, MaterialError> {
        self.materials
            .iter()
            .position(|m| m.name == name)
            .map(MaterialId)
            .ok_or_else(|| MaterialError::UnknownMaterial(String::from(name)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (MaterialId, &Material)> {
        self.materials
            .iter()
            .enumerate()
            .map(|(i, m)| (MaterialId(i), m))
    }

    /// Complex refractive index of material `id` at `omega`.
    pub fn refractive_index(&self, id: MaterialId, omega: f64) -> Result<Complex64, MaterialError> {
        self.get(id).dispersion.refractive_index(omega)
    }

    /// Constant dielectric tensor of material `id`.
    pub fn chi2_dielectric(&self, id: MaterialId) -> Result<&ChiTensor, MaterialError> {
        match &self.get(id).chi2 {
            ChiModel::Constant(t) => Ok(t),
            _ => Err(MaterialError::NoChi2(self.get(id).name.clone())),
        }
    }

    /// The default registry: vacuum, GaN, AlN and Ag.
    ///
    /// Sources of the shipped fits (all replaceable through the material
    /// database file):
    /// * GaN ordinary ray: Barker & Ilegems Sellmeier fit,
    ///   n² = 3.60 + 1.75 λ²/(λ² − 0.256²) + 4.1 λ²/(λ² − 17.86²), λ in µm.
    /// * AlN ordinary ray: Pastrňák & Roskovcová fit,
    ///   n² = 3.1399 + 1.3786 λ²/(λ² − 0.1715²) + 3.861 λ²/(λ² − 15.03²).
    /// * Ag: Drude fit with ħΩ_p = 9.01 eV, ε_b = 3.7 and an effective
    ///   thin-film collision rate ħγ = 0.065 eV. Bulk single-crystal fits
    ///   (Johnson & Christy) give ħγ ≈ 0.02 eV; films around 18 nm show
    ///   several times that from surface and grain-boundary scattering,
    ///   which is the regime this crate targets.
    pub fn defaults() -> Self {
        let mut set = Self::new();
        set.register(Material {
            name: String::from("vacuum"),
            dispersion: DispersionModel::Vacuum,
            chi2: ChiModel::None,
        });
        set.register(Material {
            name: String::from("GaN"),
            dispersion: DispersionModel::Sellmeier {
                a0: 3.60,
                terms: vec![(1.75, 0.256), (4.1, 17.86)],
                range_nm: (330.0, 5000.0),
            },
            chi2: ChiModel::Constant(gan_chi2()),
        });
        set.register(Material {
            name: String::from("AlN"),
            dispersion: DispersionModel::Sellmeier {
                a0: 3.1399,
                terms: vec![(1.3786, 0.1715), (3.861, 15.03)],
                range_nm: (250.0, 5000.0),
            },
            chi2: ChiModel::None,
        });
        set.register(Material {
            name: String::from("Ag"),
            dispersion: DispersionModel::Drude(AG_DRUDE),
            chi2: ChiModel::DrudeMetal(AG_DRUDE),
        });
        set
    }
}

/// Default Ag Drude parameters: ħΩ_p = 9.01 eV, ε_b = 3.7, effective
/// thin-film collision rate ħγ = 0.065 eV (see [`MaterialSet::defaults`]).
pub const AG_DRUDE: DrudeParams = DrudeParams {
    omega_p: 1.369e16,
    gamma: 9.876e13,
    eps_background: 3.7,
};

/// The wurtzite GaN constant χ⁽²⁾ tensor: seven nonzero elements,
/// χ_xxz = χ_xzx = χ_yyz = χ_yzy = χ_zxx = χ_zyy = 10 pm/V, χ_zzz = −20 pm/V.
pub fn gan_chi2() -> ChiTensor {
    const PM_PER_V: f64 = 1e-12;
    let mut t = ChiTensor::ZERO;
    let ten = Complex64::new(10.0 * PM_PER_V, 0.0);
    const X: usize = 0;
    const Y: usize = 1;
    const Z: usize = 2;
    t.set(X, X, Z, ten);
    t.set(X, Z, X, ten);
    t.set(Y, Y, Z, ten);
    t.set(Y, Z, Y, ten);
    t.set(Z, X, X, ten);
    t.set(Z, Y, Y, ten);
    t.set(Z, Z, Z, Complex64::new(-20.0 * PM_PER_V, 0.0));
    t
}

fn lorentz_l(p: &DrudeParams, omega: f64) -> Complex64 {
    Complex64::new(p.omega_p * p.omega_p, 0.0)
        / Complex64::new(omega * omega, p.gamma * omega)
}

/// One addend of the free-electron χ⁽²⁾: c · (kappa[j] δ_km − kappa[k'] δ_j m)
/// patterns; see `chi2_metal_terms` for the six concrete instances.
fn rank3_pattern(
    c: Complex64,
    kappa: &[Complex64; 3],
    // (slot carrying kappa, slot paired with delta) for the two addends
    plus: (usize, usize, usize),
    minus: (usize, usize, usize),
) -> ChiTensor {
    // plus/minus encode: chi[idx] += c*kappa[free at position .0] when the
    // remaining two indices (.1, .2) are equal; the caller supplies both
    // Kronecker patterns of a contracted double Levi-Civita product.
    let mut t = ChiTensor::ZERO;
    for a in 0..3 {
        for b in 0..3 {
            let mut idx = [0usize; 3];
            idx[plus.0] = a;
            idx[plus.1] = b;
            idx[plus.2] = b;
            let v = t.entry(idx[0], idx[1], idx[2]) + c * kappa[a];
            t.set(idx[0], idx[1], idx[2], v);

            let mut idx = [0usize; 3];
            idx[minus.0] = a;
            idx[minus.1] = b;
            idx[minus.2] = b;
            let v = t.entry(idx[0], idx[1], idx[2]) - c * kappa[a];
            t.set(idx[0], idx[1], idx[2], v);
        }
    }
    t
}

/// The six raw terms of the free-electron χ⁽²⁾ tensor, exposed separately
/// for inspection; their sum is [`chi2_metal`].
///
/// Tensor slots are (j, k, m) = (pump, signal, idler); the second term is
/// implemented with its first Levi-Civita index read as j, the only reading
/// under which all three free indices occur exactly once.
#[allow(clippy::too_many_arguments)]
pub fn chi2_metal_terms(
    p: &DrudeParams,
    omega_p: f64,
    omega_s: f64,
    omega_i: f64,
    k_p: &[Complex64; 3],
    k_s: &[Complex64; 3],
    k_i: &[Complex64; 3],
) -> [ChiTensor; 6] {
    let n = p.electron_density();
    let prefactor = Complex64::new(0.0, -1.0) * consts::EPS_0
        / (2.0 * core::f64::consts::PI * n * consts::E_CHARGE);

    let lp = lorentz_l(p, omega_p);
    let ls = lorentz_l(p, omega_s);
    let li = lorentz_l(p, omega_i);
    let a = |w1: f64, w2: f64| Complex64::new(w1 / w2, 0.0);

    let ks_conj = [k_s[0].conj(), k_s[1].conj(), k_s[2].conj()];
    let ki_conj = [k_i[0].conj(), k_i[1].conj(), k_i[2].conj()];
    let kp_raw = *k_p;

    // Σ_o ε_{abo} ε_{oqm} k_q = k_a δ_{bm} − k_b δ_{am}; each printed term
    // reduces to one such difference with (j,k,m) = (pump, signal, idler).
    [
        // + L*(ωp) L*(ωs) A(ωs,ωi) ε_{jko} ε_{oqm} k*_{i,q}
        rank3_pattern(
            prefactor * lp.conj() * ls.conj() * a(omega_s, omega_i),
            &ki_conj,
            (0, 1, 2),
            (1, 0, 2),
        ),
        // + L*(ωp) L*(ωi) A(ωi,ωs) ε_{jmo} ε_{oqk} k*_{s,q}
        rank3_pattern(
            prefactor * lp.conj() * li.conj() * a(omega_i, omega_s),
            &ks_conj,
            (0, 2, 1),
            (2, 0, 1),
        ),
        // + L(ωi) L*(ωs) A(ωs,ωp) ε_{mko} ε_{oqj} k_{p,q}
        rank3_pattern(
            prefactor * li * ls.conj() * a(omega_s, omega_p),
            &kp_raw,
            (2, 1, 0),
            (1, 2, 0),
        ),
        // − L(ωi) L(ωp) A(ωp,ωs) ε_{mjo} ε_{oqk} k*_{s,q}
        rank3_pattern(
            -prefactor * li * lp * a(omega_p, omega_s),
            &ks_conj,
            (2, 0, 1),
            (0, 2, 1),
        ),
        // − L(ωs) L(ωp) A(ωp,ωi) ε_{kjo} ε_{oqm} k*_{i,q}
        rank3_pattern(
            -prefactor * ls * lp * a(omega_p, omega_i),
            &ki_conj,
            (1, 0, 2),
            (0, 1, 2),
        ),
        // + L(ωs) L*(ωi) A(ωi,ωp) ε_{kmo} ε_{oqj} k_{p,q}
        rank3_pattern(
            prefactor * ls * li.conj() * a(omega_i, omega_p),
            &kp_raw,
            (1, 2, 0),
            (2, 1, 0),
        ),
    ]
}

/// Free-electron χ⁽²⁾ tensor of a Drude metal for the three-wave context
/// ω_p = ω_s + ω_i with complex in-medium wave vectors (1/m).
#[allow(clippy::too_many_arguments)]
pub fn chi2_metal(
    p: &DrudeParams,
    omega_p: f64,
    omega_s: f64,
    omega_i: f64,
    k_p: &[Complex64; 3],
    k_s: &[Complex64; 3],
    k_i: &[Complex64; 3],
) -> Result<ChiTensor, MaterialError> {
    if omega_p <= 0.0 || omega_s <= 0.0 || omega_i <= 0.0 {
        return Err(MaterialError::NonPositiveFrequency);
    }
    let mut total = ChiTensor::ZERO;
    for t in chi2_metal_terms(p, omega_p, omega_s, omega_i, k_p, k_s, k_i) {
        total.add_assign(&t);
    }
    Ok(total)
}
