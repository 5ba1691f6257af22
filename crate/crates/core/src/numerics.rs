//! Shared numerical services: adaptive Gauss-Kronrod quadrature with error
//! estimates, peak location and refinement for very narrow resonances,
//! complex root polishing, and small complex linear solves.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
#[allow(unused_imports)] use num_traits::Float;

/// 15-point Kronrod abscissae on [-1, 1] (positive half, descending).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_33,
    0.949_107_912_342_758_524_526_189_684_047_85,
    0.864_864_423_359_769_072_789_712_788_640_93,
    0.741_531_185_599_394_439_863_864_773_280_79,
    0.586_087_235_467_691_130_294_144_838_258_73,
    0.405_845_151_377_397_166_906_606_412_076_96,
    0.207_784_955_007_898_467_600_689_403_773_24,
    0.0,
];

/// Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_97,
    0.063_092_092_629_978_553_290_700_663_189_2,
    0.104_790_010_322_250_183_839_876_322_541_52,
    0.140_653_259_715_525_918_745_189_590_510_24,
    0.169_004_726_639_267_902_826_583_426_598_55,
    0.190_350_578_064_785_409_913_256_402_421_01,
    0.204_432_940_075_298_892_414_161_999_234_65,
    0.209_482_141_084_727_828_012_999_174_891_71,
];

/// 7-point Gauss weights (for the even-indexed Kronrod abscissae).
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_08,
    0.279_705_391_489_276_667_901_467_771_423_78,
    0.381_830_050_505_118_944_950_369_775_488_97,
    0.417_959_183_673_469_387_755_102_040_816_33,
];

/// Value types the quadrature engine can accumulate.
pub trait QuadValue: Copy {
    fn zero() -> Self;
    fn add(self, other: Self) -> Self;
    fn scale(self, s: f64) -> Self;
    fn norm(self) -> f64;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn add(self, other: Self) -> Self {
        self + other
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn norm(self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn add(self, other: Self) -> Self {
        self + other
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn norm(self) -> f64 {
        self.norm()
    }
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureResult<V> {
    pub value: V,
    /// Absolute error estimate.
    pub error: f64,
    /// Number of interval subdivisions performed.
    pub subdivisions: usize,
    /// Whether the requested tolerance was met. An unconverged result still
    /// carries the best value and its (honest) error estimate.
    pub converged: bool,
}

struct Panel<V> {
    a: f64,
    b: f64,
    value: V,
    error: f64,
}

/// One Gauss-Kronrod 15(7) rule application on [a, b].
fn gk15<V: QuadValue, F: FnMut(f64) -> V>(f: &mut F, a: f64, b: f64) -> (V, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);

    let f_center = f(center);
    let mut res_kronrod = f_center.scale(WGK[7]);
    let mut res_gauss = f_center.scale(WG[3]);
    let mut res_abs = f_center.norm() * WGK[7];

    let mut samples: [(V, V); 7] = [(f_center, f_center); 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        samples[j] = (f1, f2);
        let sum = f1.add(f2);
        res_kronrod = res_kronrod.add(sum.scale(WGK[j]));
        res_abs += WGK[j] * (f1.norm() + f2.norm());
        if j % 2 == 1 {
            res_gauss = res_gauss.add(sum.scale(WG[j / 2]));
        }
    }

    // QUADPACK-style rescaled error estimate.
    let mean = res_kronrod.scale(0.5);
    let mut res_asc = WGK[7] * f_center.add(mean.scale(-2.0)).norm() * 0.5;
    for j in 0..7 {
        let (f1, f2) = samples[j];
        res_asc +=
            WGK[j] * 0.5 * (f1.add(mean.scale(-2.0)).norm() + f2.add(mean.scale(-2.0)).norm());
    }
    res_asc *= half.abs() * 2.0;
    res_abs *= half.abs();

    let raw_err = res_kronrod.add(res_gauss.scale(-1.0)).norm() * half.abs();
    let mut err = raw_err;
    if res_asc != 0.0 && err != 0.0 {
        let scale = (200.0 * err / res_asc).powf(1.5);
        err = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }

    (res_kronrod.scale(half), err)
}

/// A known sharp feature inside an integration interval: the adaptive engine
/// pre-splits geometrically around it so features far narrower than the
/// interval are not stepped over by the coarse rule.
#[derive(Debug, Clone, Copy)]
pub struct PeakSeed {
    pub position: f64,
    pub width: f64,
}

/// Adaptively integrates `f` over `[a, b]`.
///
/// `tol` is interpreted relative to the accumulated result magnitude with an
/// absolute floor of `tol * 1e-300`; convergence means the summed panel error
/// estimate dropped below `tol * max(|value|, floor)`. Non-convergence is
/// reported through the `converged` flag, never silently.
pub fn integrate_adaptive<V: QuadValue, F: FnMut(f64) -> V>(
    f: &mut F,
    a: f64,
    b: f64,
    tol: f64,
    seeds: &[PeakSeed],
    max_subdivisions: usize,
) -> QuadratureResult<V> {
    if a == b {
        return QuadratureResult {
            value: V::zero(),
            error: 0.0,
            subdivisions: 0,
            converged: true,
        };
    }

    // Initial partition: interval endpoints plus geometric shells around
    // every seeded feature that lies inside the interval.
    let mut cuts: Vec<f64> = vec![a, b];
    for seed in seeds {
        if seed.position <= a || seed.position >= b {
            continue;
        }
        let w = seed.width.abs().max((b - a).abs() * 1e-15);
        let mut half_extent = 0.5 * w;
        while half_extent < (b - a).abs() {
            let lo = seed.position - half_extent;
            let hi = seed.position + half_extent;
            if lo > a {
                cuts.push(lo);
            }
            if hi < b {
                cuts.push(hi);
            }
            half_extent *= 4.0;
        }
    }
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();

    let mut panels: Vec<Panel<V>> = Vec::with_capacity(cuts.len().max(16));
    for pair in cuts.windows(2) {
        let (value, error) = gk15(f, pair[0], pair[1]);
        panels.push(Panel {
            a: pair[0],
            b: pair[1],
            value,
            error,
        });
    }

    let mut subdivisions = 0usize;
    loop {
        let mut total = V::zero();
        let mut total_err = 0.0;
        let mut worst = 0usize;
        let mut worst_err = -1.0;
        for (i, p) in panels.iter().enumerate() {
            total = total.add(p.value);
            total_err += p.error;
            if p.error > worst_err {
                worst_err = p.error;
                worst = i;
            }
        }
        let target = tol * total.norm().max(1e-300);
        if total_err <= target {
            return QuadratureResult {
                value: total,
                error: total_err,
                subdivisions,
                converged: true,
            };
        }
        if subdivisions >= max_subdivisions {
            return QuadratureResult {
                value: total,
                error: total_err,
                subdivisions,
                converged: false,
            };
        }

        let Panel { a: pa, b: pb, .. } = panels[worst];
        let mid = 0.5 * (pa + pb);
        if mid <= pa || mid >= pb {
            // Interval exhausted to machine precision.
            return QuadratureResult {
                value: total,
                error: total_err,
                subdivisions,
                converged: false,
            };
        }
        let (v1, e1) = gk15(f, pa, mid);
        let (v2, e2) = gk15(f, mid, pb);
        panels[worst] = Panel {
            a: pa,
            b: mid,
            value: v1,
            error: e1,
        };
        panels.push(Panel {
            a: mid,
            b: pb,
            value: v2,
            error: e2,
        });
        subdivisions += 1;
    }
}

/// Convenience wrapper for unseeded real integration.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> QuadratureResult<f64> {
    integrate_adaptive(&mut f, a, b, tol, &[], 2000)
}

/// A located peak of a sampled scalar field.
#[derive(Debug, Clone, Copy)]
pub struct Peak {
    pub position: f64,
    /// Full width at half maximum.
    pub width: f64,
    pub height: f64,
}

/// Golden-section maximization of `f` on a bracket `[lo, hi]`.
pub fn golden_section_max<F: FnMut(f64) -> f64>(
    f: &mut F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (hi - lo).abs() > tol * (lo.abs() + hi.abs() + 1e-300) {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    let x = 0.5 * (lo + hi);
    let fx = f(x);
    if fx >= f1 && fx >= f2 {
        (x, fx)
    } else if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Bisects for the point where `f` crosses `target`, assuming
/// `f(a) >= target >= f(b)` or the reverse.
pub fn bisect_crossing<F: FnMut(f64) -> f64>(
    f: &mut F,
    mut a: f64,
    mut b: f64,
    target: f64,
    iters: usize,
) -> f64 {
    let mut fa = f(a) - target;
    for _ in 0..iters {
        let mid = 0.5 * (a + b);
        let fm = f(mid) - target;
        if (fm > 0.0) == (fa > 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Locates peaks of a scalar function on `[lo, hi]` by a uniform coarse scan
/// followed by golden-section refinement; widths are measured by half-maximum
/// bisection on each flank.
///
/// `min_rel_height` discards maxima below that fraction of the strongest one.
/// A constant field yields no strict local maxima and an empty list.
pub fn locate_peaks_1d<F: FnMut(f64) -> f64>(
    f: &mut F,
    lo: f64,
    hi: f64,
    coarse_points: usize,
    min_rel_height: f64,
    refine_tol: f64,
) -> Vec<Peak> {
    let n = coarse_points.max(8);
    let step = (hi - lo) / (n - 1) as f64;
    let values: Vec<f64> = (0..n).map(|i| f(lo + step * i as f64)).collect();

    let mut candidates: Vec<usize> = Vec::new();
    for i in 1..n - 1 {
        if values[i] > values[i - 1] && values[i] > values[i + 1] {
            candidates.push(i);
        }
    }
    if candidates.is_empty() {
        return Vec::new();
    }

    let mut peaks: Vec<Peak> = Vec::new();
    for &i in &candidates {
        let (pos, height) = golden_section_max(
            f,
            lo + step * (i - 1) as f64,
            lo + step * (i + 1) as f64,
            refine_tol,
        );
        let half = 0.5 * height;
        // Walk out until the flanks drop below half maximum.
        let mut left = pos - step;
        let mut k = 0;
        while f(left) > half && left > lo && k < 60 {
            left -= step;
            k += 1;
        }
        let mut right = pos + step;
        k = 0;
        while f(right) > half && right < hi && k < 60 {
            right += step;
            k += 1;
        }
        let wl = bisect_crossing(f, left.max(lo), pos, half, 60);
        let wr = bisect_crossing(f, right.min(hi), pos, half, 60);
        peaks.push(Peak {
            position: pos,
            width: (wr - wl).abs(),
            height,
        });
    }

    let max_h = peaks.iter().fold(0.0f64, |m, p| m.max(p.height));
    peaks.retain(|p| p.height >= min_rel_height * max_h);
    // Merge refinements that converged to the same maximum.
    peaks.sort_by(|a, b| a.position.partial_cmp(&b.position).unwrap());
    let mut merged: Vec<Peak> = Vec::new();
    for p in peaks {
        match merged.last() {
            Some(last)
                if (p.position - last.position).abs()
                    < 0.25 * (p.width + last.width).max(step * 1e-6) =>
            {
                if p.height > last.height {
                    *merged.last_mut().unwrap() = p;
                }
            }
            _ => merged.push(p),
        }
    }
    merged
}

/// Secant iteration for a root of an analytic complex function.
///
/// `step0` sets the scale of the first probe; convergence is declared when
/// the update falls below `tol_rel * |z|`. Returns `None` when the iteration
/// diverges or exhausts `max_iter`.
pub fn complex_secant<F: FnMut(Complex64) -> Complex64>(
    f: &mut F,
    z0: Complex64,
    step0: f64,
    tol_rel: f64,
    max_iter: usize,
) -> Option<Complex64> {
    let mut z_prev = z0;
    let mut f_prev = f(z_prev);
    let mut z = z0 + Complex64::new(step0, 0.0);
    let mut f_cur = f(z);
    for _ in 0..max_iter {
        let denom = f_cur - f_prev;
        if denom.norm() == 0.0 {
            return None;
        }
        let dz = f_cur * (z - z_prev) / denom;
        z_prev = z;
        f_prev = f_cur;
        z -= dz;
        if !z.re.is_finite() || !z.im.is_finite() {
            return None;
        }
        if dz.norm() <= tol_rel * z.norm() {
            return Some(z);
        }
        f_cur = f(z);
    }
    None
}

/// Error from the dense complex solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingularMatrix;

impl core::fmt::Display for SingularMatrix {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "singular linear system")
    }
}

/// Solution of a small dense complex system together with a pivot-ratio
/// conditioning proxy.
#[derive(Debug, Clone)]
pub struct LinearSolution<const N: usize> {
    pub x: [Complex64; N],
    /// max |pivot| / min |pivot| over the elimination; a cheap condition
    /// indicator for flagging near-resonant degeneracies.
    pub pivot_ratio: f64,
}

/// Gaussian elimination with partial pivoting.
pub fn solve_complex<const N: usize>(
    a: &[[Complex64; N]; N],
    b: &[Complex64; N],
) -> Result<LinearSolution<N>, SingularMatrix> {
    solve_complex_impl(a, b, false)
}

/// Gaussian elimination with complete pivoting; slower but more robust on
/// badly scaled systems.
pub fn solve_complex_full_pivot<const N: usize>(
    a: &[[Complex64; N]; N],
    b: &[Complex64; N],
) -> Result<LinearSolution<N>, SingularMatrix> {
    solve_complex_impl(a, b, true)
}

fn solve_complex_impl<const N: usize>(
    a: &[[Complex64; N]; N],
    b: &[Complex64; N],
    full_pivot: bool,
) -> Result<LinearSolution<N>, SingularMatrix> {
    let mut m = *a;
    let mut rhs = *b;
    let mut col_perm: [usize; N] = [0; N];
    for (i, c) in col_perm.iter_mut().enumerate() {
        *c = i;
    }

    let mut max_piv = 0.0f64;
    let mut min_piv = f64::INFINITY;

    for k in 0..N {
        let mut pr = k;
        let mut pc = k;
        let mut best = 0.0;
        for r in k..N {
            let cols = if full_pivot { k..N } else { k..k + 1 };
            for c in cols {
                let mag = m[r][col_perm[c]].norm();
                if mag > best {
                    best = mag;
                    pr = r;
                    pc = c;
                }
            }
        }
        if best == 0.0 {
            return Err(SingularMatrix);
        }
        if pr != k {
            m.swap(pr, k);
            rhs.swap(pr, k);
        }
        if pc != k {
            col_perm.swap(pc, k);
        }
        let piv = m[k][col_perm[k]];
        max_piv = max_piv.max(best);
        min_piv = min_piv.min(best);
        for r in k + 1..N {
            let factor = m[r][col_perm[k]] / piv;
            if factor.norm() == 0.0 {
                continue;
            }
            for c in k..N {
                let v = m[k][col_perm[c]] * factor;
                m[r][col_perm[c]] -= v;
            }
            let v = rhs[k] * factor;
            rhs[r] -= v;
        }
    }

    let mut x = [Complex64::new(0.0, 0.0); N];
    for k in (0..N).rev() {
        let mut acc = rhs[k];
        for c in k + 1..N {
            acc -= m[k][col_perm[c]] * x[col_perm[c]];
        }
        x[col_perm[k]] = acc / m[k][col_perm[k]];
    }

    Ok(LinearSolution {
        x,
        pivot_ratio: max_piv / min_piv,
    })
}

/// Neumaier compensated accumulator; keeps long fixed-order reductions
/// reproducible and accurate.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}
