//! Loss bookkeeping and noise photons from broken pairs: per-layer photon
//! injections solved through the transfer chain, intensity transmission and
//! absorption coefficients, and the noise photon-number densities obtained
//! by weighting per-layer pair densities with those coefficients.
//!
//! Pairs are counted as generated in the lossless χ⁽²⁾ layers only; the
//! injected-photon power bookkeeping below is exact for lossless host
//! layers, which is the regime in which it is used.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::biphoton::{joint_density_from_phi, BiphotonContext, BiphotonError, Channel};
use crate::materials::{ChiModel, MaterialSet};
use crate::numerics::{integrate_adaptive, solve_complex, solve_complex_full_pivot, PeakSeed, QuadratureResult};
use crate::pump::PumpSpec;
use crate::stack::{
    boundary_matrix, kinematics, propagation_matrix, Dir, LayeredStructure, Mat2, ModeKinematics,
    Pol, SphericalMode, StackError,
};

/// Pivot-ratio threshold beyond which the 4x4 solve is repeated with
/// complete pivoting and flagged.
pub const CONDITION_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseError {
    Stack(StackError),
    Biphoton(BiphotonError),
    /// The injection system is singular even under complete pivoting.
    SingularInjection { layer: usize },
}

impl From<StackError> for NoiseError {
    fn from(e: StackError) -> Self {
        NoiseError::Stack(e)
    }
}

impl From<BiphotonError> for NoiseError {
    fn from(e: BiphotonError) -> Self {
        NoiseError::Biphoton(e)
    }
}

impl core::fmt::Display for NoiseError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            NoiseError::Stack(e) => write!(f, "{e}"),
            NoiseError::Biphoton(e) => write!(f, "{e}"),
            NoiseError::SingularInjection { layer } => {
                write!(f, "singular injection system in layer {layer}")
            }
        }
    }
}

/// Ordered products of boundary/propagation matrices to the left and right
/// of layer l: ℒ maps front-ambient amplitudes to the left edge of layer l,
/// ℛ maps the right edge of layer l to the rear ambient.
pub fn left_right_matrices(
    kin: &ModeKinematics,
    layer: usize,
) -> Result<(Mat2, Mat2), StackError> {
    let n = kin.n_layers();
    debug_assert!(layer >= 1 && layer <= n);
    let mut left = boundary_matrix(kin, 0)?;
    for j in 1..layer {
        let p = propagation_matrix(kin.regions[j].kz, kin.thickness[j - 1]);
        left = boundary_matrix(kin, j)?.mul(&p.mul(&left));
    }
    let mut right = boundary_matrix(kin, layer)?;
    for j in layer + 1..=n {
        let p = propagation_matrix(kin.regions[j].kz, kin.thickness[j - 1]);
        right = boundary_matrix(kin, j)?.mul(&p.mul(&right));
    }
    Ok((left, right))
}

/// Solution of one internal photon injection.
#[derive(Debug, Clone)]
pub struct InjectionSolution {
    pub layer: usize,
    /// Internal propagation direction of the injected photon.
    pub direction: Dir,
    /// Rear outgoing amplitude A_F^(N+1).
    pub a_out_rear: Complex64,
    /// Right-edge backward amplitude B_B^(l) of the injection layer.
    pub b_back: Complex64,
    /// Left-edge forward amplitude A_F^(l) of the injection layer.
    pub a_fwd: Complex64,
    /// Front outgoing amplitude A_B^(0).
    pub a_out_front: Complex64,
    /// Injected power per the Poynting bookkeeping.
    pub power_in: f64,
    /// Power leaving beyond the rear end.
    pub power_rear: f64,
    /// Power leaving in front of the structure.
    pub power_front: f64,
    /// Dissipated remainder.
    pub power_dissipated: f64,
    /// Pivot-ratio conditioning proxy of the linear solve.
    pub pivot_ratio: f64,
    /// Whether the complete-pivoting fallback was used.
    pub repivoted: bool,
}

impl InjectionSolution {
    /// Probability of leaving through the rear (T_{m,F a'}).
    pub fn t_rear(&self) -> f64 {
        self.power_rear / self.power_in
    }

    /// Probability of leaving through the front (T_{m,B a'}).
    pub fn t_front(&self) -> f64 {
        self.power_front / self.power_in
    }

    /// Absorption probability (D_{m,a'}).
    pub fn absorbed(&self) -> f64 {
        self.power_dissipated / self.power_in
    }
}

struct InjectionOperator {
    kin: ModeKinematics,
    left: Mat2,
    right: Mat2,
    p11: Complex64,
    p22_conj: Complex64,
    matrix: [[Complex64; 4]; 4],
}

fn injection_operator(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    mode: &SphericalMode,
    layer: usize,
) -> Result<InjectionOperator, NoiseError> {
    let kin = kinematics(structure, materials, mode)?;
    let (left, right) = left_right_matrices(&kin, layer)?;
    let p = propagation_matrix(kin.regions[layer].kz, kin.thickness[layer - 1]);
    let zero = Complex64::new(0.0, 0.0);
    let m_one = Complex64::new(-1.0, 0.0);
    // Unknowns x = (A_F^(N+1), B_B^(l), A_F^(l), A_B^(0)).
    let matrix = [
        [zero, zero, m_one, left.m12],
        [zero, -p.m22.conj(), zero, left.m22],
        [m_one, right.m12, right.m11 * p.m11, zero],
        [zero, -right.m22, -right.m21 * p.m11, zero],
    ];
    Ok(InjectionOperator {
        kin,
        left,
        right,
        p11: p.m11,
        p22_conj: p.m22.conj(),
        matrix,
    })
}

fn solve_injection(
    op: &InjectionOperator,
    rhs: [Complex64; 4],
    layer: usize,
    direction: Dir,
) -> Result<InjectionSolution, NoiseError> {
    let mut repivoted = false;
    let sol = match solve_complex(&op.matrix, &rhs) {
        Ok(s) if s.pivot_ratio <= CONDITION_THRESHOLD => s,
        first => {
            repivoted = true;
            match solve_complex_full_pivot(&op.matrix, &rhs) {
                Ok(s) => s,
                Err(_) => {
                    return Err(first
                        .err()
                        .map(|_| NoiseError::SingularInjection { layer })
                        .unwrap_or(NoiseError::SingularInjection { layer }))
                }
            }
        }
    };
    let [a_out_rear, b_back, a_fwd, a_out_front] = sol.x;

    let q_l = op.kin.obliquity(layer).re;
    let n = op.kin.n_layers();
    let q_front = op.kin.obliquity(0).re;
    let q_rear = op.kin.obliquity(n + 1).re;

    let one = Complex64::new(1.0, 0.0);
    let power_in = match direction {
        // Backward injection, unit A^ext at the left edge.
        Dir::B => {
            q_l * ((one + op.p22_conj * b_back).norm_sqr() + (op.p11 * a_fwd).norm_sqr()
                - a_fwd.norm_sqr()
                - b_back.norm_sqr())
        }
        // Forward injection, unit B^ext at the right edge.
        Dir::F => {
            q_l * ((one + op.p11 * a_fwd).norm_sqr() + (op.p22_conj * b_back).norm_sqr()
                - b_back.norm_sqr()
                - a_fwd.norm_sqr())
        }
    };
    let power_rear = q_rear * a_out_rear.norm_sqr();
    let power_front = q_front * a_out_front.norm_sqr();
    let power_dissipated = power_in - power_rear - power_front;

    Ok(InjectionSolution {
        layer,
        direction,
        a_out_rear,
        b_back,
        a_fwd,
        a_out_front,
        power_in,
        power_rear,
        power_front,
        power_dissipated,
        pivot_ratio: sol.pivot_ratio,
        repivoted,
    })
}

/// Injects a unit backward-propagating photon at the left edge of `layer`
/// and resolves the amplitudes leaving the structure.
pub fn inject_backward(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    mode: &SphericalMode,
    layer: usize,
) -> Result<InjectionSolution, NoiseError> {
    let op = injection_operator(structure, materials, mode, layer)?;
    let zero = Complex64::new(0.0, 0.0);
    let rhs = [zero, Complex64::new(1.0, 0.0), zero, zero];
    solve_injection(&op, rhs, layer, Dir::B)
}

/// Injects a unit forward-propagating photon at the right edge of `layer`.
pub fn inject_forward(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    mode: &SphericalMode,
    layer: usize,
) -> Result<InjectionSolution, NoiseError> {
    let op = injection_operator(structure, materials, mode, layer)?;
    let zero = Complex64::new(0.0, 0.0);
    let rhs = [zero, zero, -op.right.m11, op.right.m21];
    solve_injection(&op, rhs, layer, Dir::F)
}

/// Max-norm relative residual of an injection solution against the original
/// coupled left/right linear sets.
pub fn injection_residual(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    mode: &SphericalMode,
    sol: &InjectionSolution,
) -> Result<f64, NoiseError> {
    let op = injection_operator(structure, materials, mode, sol.layer)?;
    let zero = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let (ext_b, ext_f) = match sol.direction {
        Dir::B => (one, zero),
        Dir::F => (zero, one),
    };
    // Left set: (A_F^(l), ext_b + P22* B_B) = L (0, A_B^(0)).
    let lhs1 = [sol.a_fwd, ext_b + op.p22_conj * sol.b_back];
    let rhs1 = [
        op.left.m12 * sol.a_out_front,
        op.left.m22 * sol.a_out_front,
    ];
    // Right set: (A_F^(N+1), 0) = R (ext_f + P11 A_F^(l), B_B).
    let in_f = ext_f + op.p11 * sol.a_fwd;
    let lhs2 = [sol.a_out_rear, zero];
    let rhs2 = [
        op.right.m11 * in_f + op.right.m12 * sol.b_back,
        op.right.m21 * in_f + op.right.m22 * sol.b_back,
    ];
    let scale = [
        sol.a_fwd.norm(),
        sol.b_back.norm(),
        sol.a_out_front.norm(),
        sol.a_out_rear.norm(),
        1.0,
    ]
    .into_iter()
    .fold(0.0f64, f64::max)
        * [op.left, op.right].iter().fold(1.0f64, |m, t| {
            m.max(t.m11.norm())
                .max(t.m12.norm())
                .max(t.m21.norm())
                .max(t.m22.norm())
        });
    let mut worst = 0.0f64;
    for k in 0..2 {
        worst = worst
            .max((lhs1[k] - rhs1[k]).norm())
            .max((lhs2[k] - rhs2[k]).norm());
    }
    Ok(worst / scale)
}

/// Intensity transmission/absorption coefficients for one mode, all layers
/// and both internal directions.
#[derive(Debug, Clone)]
pub struct LossTable {
    /// `coeffs[l-1][dir]` with dir 0 = F, 1 = B: (T_rear, T_front, D).
    pub coeffs: Vec<[(f64, f64, f64); 2]>,
    /// True when any solve hit the conditioning fallback.
    pub flagged: bool,
}

impl LossTable {
    /// Probability that a photon created in `layer` moving in `internal`
    /// direction leaves through exit `out`.
    pub fn transmission(&self, layer: usize, internal: Dir, out: Dir) -> f64 {
        let c = self.coeffs[layer - 1][(internal == Dir::B) as usize];
        match out {
            Dir::F => c.0,
            Dir::B => c.1,
        }
    }

    pub fn absorption(&self, layer: usize, internal: Dir) -> f64 {
        self.coeffs[layer - 1][(internal == Dir::B) as usize].2
    }
}

/// Builds the loss table of a mode by injecting photons into every layer
/// and direction.
pub fn loss_table(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    mode: &SphericalMode,
) -> Result<LossTable, NoiseError> {
    let n = structure.n_layers();
    let mut coeffs = Vec::with_capacity(n);
    let mut flagged = false;
    for l in 1..=n {
        let f = inject_forward(structure, materials, mode, l)?;
        let b = inject_backward(structure, materials, mode, l)?;
        flagged |= f.repivoted || b.repivoted;
        coeffs.push([
            (f.t_rear(), f.t_front(), f.absorbed()),
            (b.t_rear(), b.t_front(), b.absorbed()),
        ]);
    }
    Ok(LossTable { coeffs, flagged })
}

/// Layers counted as pair sources: lossless at both pair frequencies and
/// carrying a χ⁽²⁾ model.
pub fn source_layers(
    structure: &LayeredStructure,
    materials: &MaterialSet,
    omega_s: f64,
    omega_i: f64,
) -> Result<Vec<usize>, NoiseError> {
    let mut out = Vec::new();
    for (idx, layer) in structure.layers.iter().enumerate() {
        let mat = materials.get(layer.material);
        if matches!(mat.chi2, ChiModel::None) {
            continue;
        }
        let ns = mat.dispersion.refractive_index(omega_s).map_err(StackError::from)?;
        let ni = mat.dispersion.refractive_index(omega_i).map_err(StackError::from)?;
        if ns.im.abs() < 1e-9 && ni.im.abs() < 1e-9 {
            out.push(idx + 1);
        }
    }
    Ok(out)
}

/// Pure bookkeeping core of the noise density: per-layer pair densities
/// weighted by the surviving photon's transmission and the partner's
/// absorption, summed over source layers and internal directions.
///
/// `pair_density[k][a'][b']` is the joint density of pairs born in source
/// layer k with internal directions (a', b'); `t_survivor[k][a']` the
/// monitored photon's probability of reaching its exit; `d_partner[k][b']`
/// the partner's absorption probability.
pub fn broken_pair_density(
    pair_density: &[[[f64; 2]; 2]],
    t_survivor: &[[f64; 2]],
    d_partner: &[[f64; 2]],
) -> f64 {
    let mut acc = 0.0;
    for k in 0..pair_density.len() {
        for a in 0..2 {
            for b in 0..2 {
                acc += t_survivor[k][a] * d_partner[k][b] * pair_density[k][a][b];
            }
        }
    }
    acc
}

/// Noise evaluation context: one monitored field (polarization and exit)
/// against both partner polarizations.
#[derive(Debug, Clone)]
pub struct NoiseContext<'a> {
    pub structure: &'a LayeredStructure,
    pub materials: &'a MaterialSet,
    pub pump: PumpSpec,
}

impl<'a> NoiseContext<'a> {
    pub fn new(structure: &'a LayeredStructure, materials: &'a MaterialSet, pump: PumpSpec) -> Self {
        NoiseContext {
            structure,
            materials,
            pump,
        }
    }

    /// Signal noise photon-number density d_s(Ω_s) for an α-polarized
    /// signal photon leaving through `dir_out`: pairs born in the source
    /// layers whose idler partner (either polarization) is absorbed,
    /// integrated over the partner's emission angles.
    pub fn signal_noise_density(
        &self,
        pol_s: Pol,
        dir_out: Dir,
        omega_s: f64,
        theta_s: f64,
        psi_s: f64,
        tol: f64,
        theta_seeds: &[PeakSeed],
    ) -> Result<QuadratureResult<f64>, NoiseError> {
        let omega_i = self.pump.omega0 - omega_s;
        if omega_i <= 0.0 {
            return Ok(QuadratureResult {
                value: 0.0,
                error: 0.0,
                subdivisions: 0,
                converged: true,
            });
        }
        let sources = source_layers(self.structure, self.materials, omega_s, omega_i)?;
        if sources.is_empty() {
            return Ok(QuadratureResult {
                value: 0.0,
                error: 0.0,
                subdivisions: 0,
                converged: true,
            });
        }

        // Survivor transmission at the fixed signal mode.
        let mode_s = SphericalMode::new(omega_s, theta_s, psi_s, pol_s);
        let table_s = loss_table(self.structure, self.materials, &mode_s)?;
        let t_survivor: Vec<[f64; 2]> = sources
            .iter()
            .map(|&l| {
                [
                    table_s.transmission(l, Dir::F, dir_out),
                    table_s.transmission(l, Dir::B, dir_out),
                ]
            })
            .collect();

        let contexts = [
            BiphotonContext::new(
                self.structure,
                self.materials,
                self.pump,
                Channel::forward(pol_s, Pol::Te),
            ),
            BiphotonContext::new(
                self.structure,
                self.materials,
                self.pump,
                Channel::forward(pol_s, Pol::Tm),
            ),
        ];

        let Some((ti, pi_)) = contexts[0].matched_idler_direction(omega_s, theta_s, psi_s)
        else {
            return Ok(QuadratureResult {
                value: 0.0,
                error: 0.0,
                subdivisions: 0,
                converged: true,
            });
        };
        let dk = 11.0 / self.pump.radius;
        let k_i = omega_i / crate::consts::C;
        let half_pi = core::f64::consts::FRAC_PI_2;
        let dt = (dk / (k_i * ti.cos().abs().max(1e-6))).min(half_pi);
        let sin_ti = ti.sin().abs();
        let dp = if sin_ti * k_i > dk / half_pi {
            (dk / (k_i * sin_ti)).min(half_pi)
        } else {
            half_pi
        };

        let mut unconverged_inner = false;
        let mut integrate_err: Option<NoiseError> = None;
        let mut outer2 = |theta_i: f64| -> f64 {
            if integrate_err.is_some() {
                return 0.0;
            }
            let mut tables = Vec::with_capacity(2);
            for pol_i in [Pol::Te, Pol::Tm] {
                let mode_i = SphericalMode::new(omega_i, theta_i, pi_, pol_i);
                match loss_table(self.structure, self.materials, &mode_i) {
                    Ok(t) => tables.push(t),
                    Err(e) => {
                        integrate_err = Some(e);
                        return 0.0;
                    }
                }
            }
            let d_partner: Vec<Vec<[f64; 2]>> = tables
                .iter()
                .map(|t| {
                    sources
                        .iter()
                        .map(|&l| [t.absorption(l, Dir::F), t.absorption(l, Dir::B)])
                        .collect()
                })
                .collect();

            let mut inner = |psi_i: f64| -> f64 {
                if integrate_err.is_some() {
                    return 0.0;
                }
                let mut total = 0.0;
                for (b_idx, ctx) in contexts.iter().enumerate() {
                    let parts = match ctx.amplitude_parts(omega_s, theta_s, psi_s, theta_i, psi_i)
                    {
                        Ok(Some(p)) => p,
                        Ok(None) => continue,
                        Err(e) => {
                            integrate_err = Some(e.into());
                            return 0.0;
                        }
                    };
                    for (k, &l) in sources.iter().enumerate() {
                        for (a_idx, a) in [Dir::F, Dir::B].into_iter().enumerate() {
                            for (bb_idx, b) in [Dir::F, Dir::B].into_iter().enumerate() {
                                let n_l = joint_density_from_phi(
                                    parts.layer_amplitude(l, a, b),
                                    omega_s,
                                    omega_i,
                                    theta_s,
                                    theta_i,
                                );
                                total += t_survivor[k][a_idx]
                                    * d_partner[b_idx][k][bb_idx]
                                    * n_l;
                            }
                        }
                    }
                }
                total
            };
            let r = integrate_adaptive(
                &mut inner,
                (pi_ - dp).max(-half_pi),
                (pi_ + dp).min(half_pi),
                tol * 0.3,
                &[PeakSeed {
                    position: pi_,
                    width: 0.25 * dp,
                }],
                300,
            );
            if !r.converged {
                unconverged_inner = true;
            }
            r.value
        };

        let mut seeds: Vec<PeakSeed> = vec![PeakSeed {
            position: ti,
            width: 0.25 * dt,
        }];
        seeds.extend(
            theta_seeds
                .iter()
                .filter(|s| s.position > ti - dt && s.position < ti + dt)
                .copied(),
        );
        let mut result = integrate_adaptive(
            &mut outer2,
            (ti - dt).max(-half_pi + 1e-9),
            (ti + dt).min(half_pi - 1e-9),
            tol,
            &seeds,
            600,
        );
        if let Some(e) = integrate_err {
            return Err(e);
        }
        if unconverged_inner {
            result.converged = false;
        }
        Ok(result)
    }

    /// Idler noise photon-number density d_i(Ω_i): mirror of
    /// [`Self::signal_noise_density`] with the roles of the fields swapped.
    pub fn idler_noise_density(
        &self,
        pol_i: Pol,
        dir_out: Dir,
        omega_i: f64,
        theta_i: f64,
        psi_i: f64,
        tol: f64,
        theta_seeds: &[PeakSeed],
    ) -> Result<QuadratureResult<f64>, NoiseError> {
        let omega_s = self.pump.omega0 - omega_i;
        if omega_s <= 0.0 {
            return Ok(QuadratureResult {
                value: 0.0,
                error: 0.0,
                subdivisions: 0,
                converged: true,
            });
        }
        let sources = source_layers(self.structure, self.materials, omega_s, omega_i)?;
        if sources.is_empty() {
            return Ok(QuadratureResult {
                value: 0.0,
                error: 0.0,
                subdivisions: 0,
                converged: true,
            });
        }

        let mode_i = SphericalMode::new(omega_i, theta_i, psi_i, pol_i);
        let table_i = loss_table(self.structure, self.materials, &mode_i)?;
        let t_survivor: Vec<[f64; 2]> = sources
            .iter()
            .map(|&l| {
                [
                    table_i.transmission(l, Dir::F, dir_out),
                    table_i.transmission(l, Dir::B, dir_out),
                ]
            })
            .collect();

        let contexts = [
            BiphotonContext::new(
                self.structure,
                self.materials,
                self.pump,
                Channel::forward(Pol::Te, pol_i),
            ),
            BiphotonContext::new(
                self.structure,
                self.materials,
                self.pump,
                Channel::forward(Pol::Tm, pol_i),
            ),
        ];

        // Matched signal direction for the fixed idler mode.
        let (kpx0, kpy0) =
            crate::stack::transverse_k(&self.pump.nominal_mode(), 1.0);
        let (kix, kiy) = crate::stack::transverse_k(&mode_i, 1.0);
        let Some((ts, ps)) =
            crate::biphoton::direction_from_transverse(omega_s, kpx0 - kix, kpy0 - kiy, 1.0)
        else {
            return Ok(QuadratureResult {
                value: 0.0,
                error: 0.0,
                subdivisions: 0,
                converged: true,
            });
        };
        let dk = 11.0 / self.pump.radius;
        let k_s = omega_s / crate::consts::C;
        let half_pi = core::f64::consts::FRAC_PI_2;
        let dt = (dk / (k_s * ts.cos().abs().max(1e-6))).min(half_pi);
        let sin_ts = ts.sin().abs();
        let dp = if sin_ts * k_s > dk / half_pi {
            (dk / (k_s * sin_ts)).min(half_pi)
        } else {
            half_pi
        };

        let mut unconverged_inner = false;
        let mut integrate_err: Option<NoiseError> = None;
        let mut outer = |theta_s: f64| -> f64 {
            if integrate_err.is_some() {
                return 0.0;
            }
            let mut tables = Vec::with_capacity(2);
            for pol_s in [Pol::Te, Pol::Tm] {
                let mode_s = SphericalMode::new(omega_s, theta_s, ps, pol_s);
                match loss_table(self.structure, self.materials, &mode_s) {
                    Ok(t) => tables.push(t),
                    Err(e) => {
                        integrate_err = Some(e);
                        return 0.0;
                    }
                }
            }
            let d_partner: Vec<Vec<[f64; 2]>> = tables
                .iter()
                .map(|t| {
                    sources
                        .iter()
                        .map(|&l| [t.absorption(l, Dir::F), t.absorption(l, Dir::B)])
                        .collect()
                })
                .collect();

            let mut inner = |psi_s: f64| -> f64 {
                if integrate_err.is_some() {
                    return 0.0;
                }
                let mut total = 0.0;
                for (a_pol_idx, ctx) in contexts.iter().enumerate() {
                    let parts = match ctx.amplitude_parts(omega_s, theta_s, psi_s, theta_i, psi_i)
                    {
                        Ok(Some(p)) => p,
                        Ok(None) => continue,
                        Err(e) => {
                            integrate_err = Some(e.into());
                            return 0.0;
                        }
                    };
                    for (k, &l) in sources.iter().enumerate() {
                        for (a_idx, a) in [Dir::F, Dir::B].into_iter().enumerate() {
                            for (b_idx, b) in [Dir::F, Dir::B].into_iter().enumerate() {
                                let n_l = joint_density_from_phi(
                                    parts.layer_amplitude(l, a, b),
                                    omega_s,
                                    omega_i,
                                    theta_s,
                                    theta_i,
                                );
                                total += t_survivor[k][b_idx]
                                    * d_partner[a_pol_idx][k][a_idx]
                                    * n_l;
                            }
                        }
                    }
                }
                total
            };
            let r = integrate_adaptive(
                &mut inner,
                (ps - dp).max(-half_pi),
                (ps + dp).min(half_pi),
                tol * 0.3,
                &[PeakSeed {
                    position: ps,
                    width: 0.25 * dp,
                }],
                300,
            );
            if !r.converged {
                unconverged_inner = true;
            }
            r.value
        };

        let mut seeds: Vec<PeakSeed> = vec![PeakSeed {
            position: ts,
            width: 0.25 * dt,
        }];
        seeds.extend(
            theta_seeds
                .iter()
                .filter(|s| s.position > ts - dt && s.position < ts + dt)
                .copied(),
        );
        let mut result = integrate_adaptive(
            &mut outer,
            (ts - dt).max(-half_pi + 1e-9),
            (ts + dt).min(half_pi - 1e-9),
            tol,
            &seeds,
            600,
        );
        if let Some(e) = integrate_err {
            return Err(e);
        }
        if unconverged_inner {
            result.converged = false;
        }
        Ok(result)
    }
}


/// Noise-to-pair ratio R = d / n; `None` on vanishing pair density.
pub fn noise_ratio(noise_density: f64, pair_density: f64) -> Option<f64> {
    (pair_density > 0.0).then(|| noise_density / pair_density)
}

/// Extended ratio R̃ = (d + Σ_channels n) / n_ab - 1, where the channel sum
/// runs over both partner polarizations and exits.
pub fn noise_ratio_tilde(
    noise_density: f64,
    channel_densities: &[f64; 4],
    pair_density: f64,
) -> Option<f64> {
    (pair_density > 0.0)
        .then(|| (noise_density + channel_densities.iter().sum::<f64>()) / pair_density - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consts::omega_from_lambda_nm;
    use crate::stack::Layer;

    fn defaults() -> MaterialSet {
        MaterialSet::defaults()
    }

    #[test]
    fn left_right_products_reduce_to_single_boundaries() {
        let set = defaults();
        let vac = set.by_name("vacuum").unwrap();
        let gan = set.by_name("GaN").unwrap();
        let ag = set.by_name("Ag").unwrap();
        let s = LayeredStructure::new(
            vac,
            vac,
            vec![
                Layer { material: gan, thickness: 90e-9 },
                Layer { material: ag, thickness: 15e-9 },
                Layer { material: gan, thickness: 70e-9 },
            ],
        );
        let mode = SphericalMode::new(omega_from_lambda_nm(700.0), 0.4, 0.1, Pol::Te);
        let kin = kinematics(&s, &set, &mode).unwrap();
        let (l1, _) = left_right_matrices(&kin, 1).unwrap();
        let t0 = boundary_matrix(&kin, 0).unwrap();
        assert!((l1.m11 - t0.m11).norm() < 1e-15);
        assert!((l1.m22 - t0.m22).norm() < 1e-15);
        let (_, r3) = left_right_matrices(&kin, 3).unwrap();
        let t3 = boundary_matrix(&kin, 3).unwrap();
        assert!((r3.m11 - t3.m11).norm() < 1e-15);
        assert!((r3.m12 - t3.m12).norm() < 1e-15);
    }

    #[test]
    fn chain_products_reproduce_incident_solution() {
        let set = defaults();
        let vac = set.by_name("vacuum").unwrap();
        let gan = set.by_name("GaN").unwrap();
        let ag = set.by_name("Ag").unwrap();
        let s = LayeredStructure::new(
            vac,
            vac,
            vec![
                Layer { material: gan, thickness: 120e-9 },
                Layer { material: ag, thickness: 20e-9 },
                Layer { material: gan, thickness: 85e-9 },
            ],
        );
        let mode = SphericalMode::new(omega_from_lambda_nm(650.0), 0.35, 0.0, Pol::Tm);
        let sol = crate::stack::solve_incident(
            &s,
            &set,
            &mode,
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        )
        .unwrap();
        let kin = kinematics(&s, &set, &mode).unwrap();
        for l in 1..=3 {
            let (left, right) = left_right_matrices(&kin, l).unwrap();
            let v0 = crate::stack::Vec2 { f: sol.amps[0].f, b: sol.amps[0].b };
            let vl = left.apply(v0);
            let scale = vl.f.norm().max(vl.b.norm());
            assert!((vl.f - sol.amps[l].f).norm() < 1e-10 * scale);
            assert!((vl.b - sol.amps[l].b).norm() < 1e-10 * scale);
            // Right product: right edge of layer l to the rear ambient.
            let p = propagation_matrix(kin.regions[l].kz, kin.thickness[l - 1]);
            let w = p.apply(crate::stack::Vec2 { f: sol.amps[l].f, b: sol.amps[l].b });
            let v_rear = right.apply(w);
            let n = kin.n_layers();
            let scale = v_rear.f.norm().max(1e-300);
            assert!((v_rear.f - sol.amps[n + 1].f).norm() < 1e-9 * scale);
        }
    }

    #[test]
    fn vacuum_injections_pass_straight_through() {
        let set = defaults();
        let vac = set.by_name("vacuum").unwrap();
        let s = LayeredStructure::new(vac, vac, vec![Layer { material: vac, thickness: 2e-7 }]);
        let mode = SphericalMode::new(omega_from_lambda_nm(800.0), 0.2, 0.0, Pol::Te);
        let b = inject_backward(&s, &set, &mode, 1).unwrap();
        assert!((b.t_front() - 1.0).abs() < 1e-12);
        assert!(b.t_rear().abs() < 1e-24);
        assert!(b.absorbed().abs() < 1e-12);
        let f = inject_forward(&s, &set, &mode, 1).unwrap();
        assert!((f.t_rear() - 1.0).abs() < 1e-12);
        assert!(f.t_front().abs() < 1e-24);
        assert!(f.absorbed().abs() < 1e-12);
    }

    #[test]
    fn lossless_layer_injection_conserves_power() {
        let set = defaults();
        let vac = set.by_name("vacuum").unwrap();
        let gan = set.by_name("GaN").unwrap();
        let s = LayeredStructure::new(vac, vac, vec![Layer { material: gan, thickness: 130e-9 }]);
        for pol in [Pol::Te, Pol::Tm] {
            let mode = SphericalMode::new(omega_from_lambda_nm(750.0), 0.5, 0.2, pol);
            for (dir, sol) in [
                (Dir::B, inject_backward(&s, &set, &mode, 1).unwrap()),
                (Dir::F, inject_forward(&s, &set, &mode, 1).unwrap()),
            ] {
                let closure = sol.t_rear() + sol.t_front() + sol.absorbed();
                assert!((closure - 1.0).abs() < 1e-12, "{pol:?} {dir:?}");
                assert!(sol.absorbed().abs() < 1e-9, "{pol:?} {dir:?} lossless D");
                let res = injection_residual(&s, &set, &mode, &sol).unwrap();
                assert!(res < 1e-12);
            }
        }
    }

    #[test]
    fn mirror_symmetric_stack_swaps_directions() {
        let set = defaults();
        let vac = set.by_name("vacuum").unwrap();
        let gan = set.by_name("GaN").unwrap();
        let aln = set.by_name("AlN").unwrap();
        // Symmetric lossless stack: GaN | AlN | GaN.
        let s = LayeredStructure::new(
            vac,
            vac,
            vec![
                Layer { material: gan, thickness: 80e-9 },
                Layer { material: aln, thickness: 60e-9 },
                Layer { material: gan, thickness: 80e-9 },
            ],
        );
        let mode = SphericalMode::new(omega_from_lambda_nm(820.0), 0.3, 0.0, Pol::Tm);
        let f1 = inject_forward(&s, &set, &mode, 1).unwrap();
        let b3 = inject_backward(&s, &set, &mode, 3).unwrap();
        assert!((f1.t_rear() - b3.t_front()).abs() < 1e-10);
        assert!((f1.t_front() - b3.t_rear()).abs() < 1e-10);
    }

    #[test]
    fn silver_layers_absorb_strictly() {
        let set = defaults();
        let vac = set.by_name("vacuum").unwrap();
        let gan = set.by_name("GaN").unwrap();
        let ag = set.by_name("Ag").unwrap();
        let mut layers = Vec::new();
        for i in 0..5 {
            layers.push(if i % 2 == 0 {
                Layer { material: gan, thickness: 101.752e-9 }
            } else {
                Layer { material: ag, thickness: 18.083e-9 }
            });
        }
        let s = LayeredStructure::new(vac, vac, layers);
        let mode = SphericalMode::new(omega_from_lambda_nm(740.0), 0.6, 0.0, Pol::Te);
        let table = loss_table(&s, &set, &mode).unwrap();
        // The power bookkeeping is exact for injections into the lossless
        // (GaN) host layers, where pairs are generated.
        for l in [1usize, 3, 5] {
            for dir in [Dir::F, Dir::B] {
                assert!(table.absorption(l, dir) > 0.0, "layer {l} {dir:?}");
                let closure = table.transmission(l, dir, Dir::F)
                    + table.transmission(l, dir, Dir::B)
                    + table.absorption(l, dir);
                assert!((closure - 1.0).abs() < 1e-9);
                for out in [Dir::F, Dir::B] {
                    let t = table.transmission(l, dir, out);
                    assert!((-1e-9..=1.0 + 1e-9).contains(&t));
                }
            }
        }
    }

    #[test]
    fn broken_pair_bookkeeping_matches_hand_computation() {
        // One source layer, synthetic numbers: d = Σ T_a D_b n_ab.
        let pair = [[[0.4, 0.1], [0.2, 0.3]]];
        let t = [[0.7, 0.5]];
        let d = [[0.25, 0.6]];
        let expect = 0.7 * (0.25 * 0.4 + 0.6 * 0.1) + 0.5 * (0.25 * 0.2 + 0.6 * 0.3);
        assert!((broken_pair_density(&pair, &t, &d) - expect).abs() < 1e-15);
    }

    #[test]
    fn lossless_structure_has_zero_noise_density() {
        let set = defaults();
        let vac = set.by_name("vacuum").unwrap();
        let gan = set.by_name("GaN").unwrap();
        let s = LayeredStructure::new(vac, vac, vec![Layer { material: gan, thickness: 114e-9 }]);
        let pump = PumpSpec::normal_incidence(omega_from_lambda_nm(400.0), 1e-3, Pol::Te);
        let ctx = NoiseContext::new(&s, &set, pump);
        let d = ctx
            .signal_noise_density(Pol::Te, Dir::F, omega_from_lambda_nm(760.0), 0.5, 0.0, 1e-4, &[])
            .unwrap();
        assert!(d.value.abs() < 1e-30, "lossless d = {}", d.value);
    }

    #[test]
    fn ratios_behave() {
        assert_eq!(noise_ratio(0.0, 1.0), Some(0.0));
        assert_eq!(noise_ratio(1.0, 0.0), None);
        // Single active channel, zero noise: R̃ = 0.
        let channels = [0.0, 2.5, 0.0, 0.0];
        assert_eq!(noise_ratio_tilde(0.0, &channels, 2.5), Some(0.0));
        // R̃ - R = channel_sum/n - 1 >= 0 since the sum includes n itself.
        let channels = [0.3, 2.5, 0.1, 0.4];
        let r = noise_ratio(0.7, 2.5).unwrap();
        let rt = noise_ratio_tilde(0.7, &channels, 2.5).unwrap();
        assert!(rt >= r - 1e-12);
    }
}
