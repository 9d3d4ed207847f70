//! Canonical Hamiltonian systems `JΘ' = zHΘ`, `J = [[0,−1],[1,0]]`, with piecewise
//! data: transfer matrices, eikonal `T`, the determinant-sum Szegő criterion and the
//! Weyl–Titchmarsh function.

use crate::error::{invalid, Result};
use crate::linalg::{
    cidentity, cmax_abs, cmul, cscale, expm_real_traceless, expm_traceless, inv_unimodular, mul, to_complex, Sym2, CM2,
    M2,
};
use crate::num::sinhc;
use crate::piecewise::MonotoneIntegral;
use crate::report::{SzegoReport, Verdict};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// One piece of a Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    /// Constant symmetric matrix.
    Constant(Sym2),
    /// `H = Nᵀ N` where `JN' + QN = 0` with constant `Q = [[q1, q2], [q2, −q1]]` on the
    /// cell and `N = n0` at the left end.
    Dirac { q1: f64, q2: f64, n0: M2 },
}

impl Cell {
    /// `JQ = [[−q2, q1], [q1, q2]]`, the generator of `N`.
    fn jq(q1: f64, q2: f64) -> M2 {
        [[-q2, q1], [q1, q2]]
    }

    /// `N(s) = exp(JQ s) n0`.
    fn n_at(q1: f64, q2: f64, n0: &M2, s: f64) -> M2 {
        mul(&expm_real_traceless(&Self::jq(q1, q2), s), n0)
    }

    pub fn value_at(&self, s: f64) -> Sym2 {
        match self {
            Cell::Constant(h) => *h,
            Cell::Dirac { q1, q2, n0 } => {
                let n = Self::n_at(*q1, *q2, n0, s);
                Sym2::new(1.0, 1.0, 0.0).congruence(&n)
            }
        }
    }

    /// `∫_{s0}^{s1} H` in local offsets.
    pub fn integral(&self, s0: f64, s1: f64) -> Sym2 {
        let d = s1 - s0;
        match self {
            Cell::Constant(h) => h.scale(d),
            Cell::Dirac { q1, q2, n0 } => {
                let k = q1.hypot(*q2);
                let c = d * sinhc(2.0 * k * d);
                let sk = sinhc(k * d);
                let s = d * d * sk * sk;
                let jq = Self::jq(*q1, *q2);
                let inner = Sym2::new(c + s * jq[0][0], c + s * jq[1][1], s * jq[0][1]);
                inner.congruence(&Self::n_at(*q1, *q2, n0, s0))
            }
        }
    }

    pub fn sqrt_det(&self) -> f64 {
        match self {
            Cell::Constant(h) => h.det().max(0.0).sqrt(),
            Cell::Dirac { .. } => 1.0,
        }
    }

    /// Largest `|Re s|` growth exponent per unit length at spectral parameter `z`.
    fn growth_rate(&self, z: Complex64) -> f64 {
        match self {
            Cell::Constant(h) => (-(z * z) * h.det()).sqrt().re.abs() + 1e-300,
            Cell::Dirac { q1, q2, .. } => {
                let k2 = q1 * q1 + q2 * q2;
                (Complex64::new(k2, 0.0) - z * z).sqrt().re.abs() + q1.hypot(*q2)
            }
        }
    }

    /// Transfer matrix from offset `s0` to `s1`: `Θ(s1) = T Θ(s0)`.
    pub fn transfer(&self, s0: f64, s1: f64, z: Complex64) -> CM2 {
        let d = s1 - s0;
        let cz = |x: f64| Complex64::new(x, 0.0);
        match self {
            Cell::Constant(h) => {
                // −zJH d
                let a = [[z * h.h * d, z * h.h2 * d], [-z * h.h1 * d, -z * h.h * d]];
                expm_traceless(&a)
            }
            Cell::Dirac { q1, q2, n0 } => {
                let jq = Self::jq(*q1, *q2);
                // J(Q − z) d = (JQ − zJ) d
                let a = [[cz(jq[0][0] * d), (cz(jq[0][1]) + z) * d], [(cz(jq[1][0]) - z) * d, cz(jq[1][1] * d)]];
                let n_s0 = Self::n_at(*q1, *q2, n0, s0);
                let n_s1 = Self::n_at(*q1, *q2, n0, s1);
                cmul(&to_complex(&inv_unimodular(&n_s1)), &cmul(&expm_traceless(&a), &to_complex(&n_s0)))
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HamiltonianJson {
    breaks: Vec<f64>,
    cells: Vec<Cell>,
    tau_max: f64,
}

/// Piecewise Hamiltonian on `[0, tau_max]`; the last cell is the declared tail and is
/// assumed to continue beyond `tau_max`.
#[derive(Clone, Debug)]
pub struct Hamiltonian {
    breaks: Vec<f64>,
    cells: Vec<Cell>,
    tau_max: f64,
    eikonal: MonotoneIntegral,
}

impl Serialize for Hamiltonian {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        HamiltonianJson { breaks: self.breaks.clone(), cells: self.cells.clone(), tau_max: self.tau_max }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Hamiltonian {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = HamiltonianJson::deserialize(d)?;
        Hamiltonian::new(raw.breaks, raw.cells, raw.tau_max).map_err(serde::de::Error::custom)
    }
}

impl Hamiltonian {
    pub fn new(breaks: Vec<f64>, cells: Vec<Cell>, tau_max: f64) -> Result<Self> {
        if breaks.is_empty() || breaks.len() != cells.len() {
            return invalid("need one cell per breakpoint");
        }
        if breaks[0] != 0.0 {
            return invalid("breakpoints must start at 0");
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("breakpoints must be strictly increasing");
        }
        if !(tau_max > *breaks.last().unwrap()) || !tau_max.is_finite() {
            return invalid("tau_max must exceed the last breakpoint");
        }
        for (i, c) in cells.iter().enumerate() {
            match c {
                Cell::Constant(h) => {
                    if !(h.h1.is_finite() && h.h2.is_finite() && h.h.is_finite()) {
                        return invalid(format!("cell {i} is not finite"));
                    }
                    if !(h.trace() > 0.0) {
                        return invalid(format!("cell {i} has nonpositive trace"));
                    }
                    if h.h1 < 0.0 || h.h2 < 0.0 || h.det() < -1e-14 * h.trace() * h.trace() {
                        return invalid(format!("cell {i} is not positive semidefinite"));
                    }
                }
                Cell::Dirac { q1, q2, n0 } => {
                    if !(q1.is_finite() && q2.is_finite()) || n0.iter().flatten().any(|x| !x.is_finite()) {
                        return invalid(format!("cell {i} is not finite"));
                    }
                    if (crate::linalg::det(n0) - 1.0).abs() > 1e-9 {
                        return invalid(format!("cell {i}: det N must be 1"));
                    }
                }
            }
        }
        let constant_rank_one = cells.iter().all(|c| match c {
            Cell::Constant(h) => h.det() == 0.0,
            _ => false,
        });
        if constant_rank_one {
            let dir = |h: &Sym2| (h.h1 / h.trace(), h.h / h.trace());
            let first = match cells[0] {
                Cell::Constant(h) => dir(&h),
                _ => unreachable!(),
            };
            let same = cells.iter().all(|c| match c {
                Cell::Constant(h) => {
                    let d = dir(h);
                    (d.0 - first.0).abs() < 1e-12 && (d.1 - first.1).abs() < 1e-12
                }
                _ => false,
            });
            if same {
                return invalid("Hamiltonian is a rank-one constant-direction multiple everywhere");
            }
        }
        let rates = cells.iter().map(|c| c.sqrt_det()).collect();
        let eikonal = MonotoneIntegral::new(breaks.clone(), rates, tau_max);
        Ok(Hamiltonian { breaks, cells, tau_max, eikonal })
    }

    /// Constant Hamiltonian `h` on `[0, tau_max]`.
    pub fn constant(h: Sym2, tau_max: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![Cell::Constant(h)], tau_max)
    }

    pub fn identity(tau_max: f64) -> Self {
        Self::constant(Sym2::diag(1.0, 1.0), tau_max).expect("identity is valid")
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    fn cell_index(&self, tau: f64) -> usize {
        self.breaks.partition_point(|&b| b <= tau).saturating_sub(1)
    }

    fn cell_end(&self, i: usize) -> f64 {
        if i + 1 < self.breaks.len() {
            self.breaks[i + 1]
        } else {
            f64::INFINITY
        }
    }

    /// `H(τ)` (tail continued past `tau_max`).
    pub fn value_at(&self, tau: f64) -> Sym2 {
        let i = self.cell_index(tau);
        self.cells[i].value_at(tau - self.breaks[i])
    }

    /// `∫_a^b H`, summed cell by cell.
    pub fn integral(&self, a: f64, b: f64) -> Sym2 {
        let mut acc = Sym2::default();
        let mut i = self.cell_index(a);
        let mut lo = a;
        while lo < b {
            let hi = self.cell_end(i).min(b);
            acc = acc.add(&self.cells[i].integral(lo - self.breaks[i], hi - self.breaks[i]));
            lo = hi;
            i += 1;
        }
        acc
    }

    /// `T(τ) = ∫₀^τ √det H`.
    pub fn eikonal(&self, tau: f64) -> Result<f64> {
        if !(0.0..=self.tau_max).contains(&tau) {
            return invalid(format!("τ = {tau} outside [0, {}]", self.tau_max));
        }
        Ok(self.eikonal.eval(tau))
    }

    /// `L_η = min{τ : T(τ) = η}`; `None` stands for `+∞` (not reached before `tau_max`).
    pub fn eikonal_inverse(&self, eta: f64) -> Option<f64> {
        self.eikonal.inverse(eta)
    }

    pub fn eikonal_total(&self) -> f64 {
        self.eikonal.total()
    }

    /// Whether `√det H` is integrable under the tail assumption.
    pub fn sqrt_det_integrable(&self) -> bool {
        self.cells.last().unwrap().sqrt_det() == 0.0
    }

    /// Multiplies the fundamental matrix through `[from, to]`; with `renormalize` the
    /// matrix is rescaled to keep entries bounded (ratios survive, the Wronskian not).
    fn propagate(&self, m: &mut CM2, from: f64, to: f64, z: Complex64, renormalize: bool) {
        let mut i = self.cell_index(from);
        let mut lo = from;
        while lo < to {
            let hi = self.cell_end(i).min(to);
            let cell = &self.cells[i];
            let rate = cell.growth_rate(z);
            let pieces = ((rate * (hi - lo)) / 20.0).ceil().max(1.0) as usize;
            let step = (hi - lo) / pieces as f64;
            for p in 0..pieces {
                let s0 = lo + p as f64 * step - self.breaks[i];
                let s1 = if p + 1 == pieces { hi - self.breaks[i] } else { s0 + step };
                *m = cmul(&cell.transfer(s0, s1, z), m);
                if renormalize {
                    let n = cmax_abs(m);
                    if !(1e-100..=1e100).contains(&n) {
                        *m = cscale(m, 1.0 / n);
                    }
                }
            }
            lo = hi;
            i += 1;
        }
    }

    fn ratio(m: &CM2) -> Complex64 {
        m[1][1] / m[1][0]
    }
}

/// Solutions `Θ` (`Θ(0) = (1,0)`) and `Φ` (`Φ(0) = (0,1)`) at one point.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TransferState {
    pub theta: [Complex64; 2],
    pub phi: [Complex64; 2],
    pub tau: f64,
    pub z: Complex64,
}

impl TransferState {
    pub fn wronskian(&self) -> Complex64 {
        self.theta[0] * self.phi[1] - self.theta[1] * self.phi[0]
    }
}

/// Fundamental solutions at each stop (stops are visited in the order given, each must be
/// within `[0, tau_max]`).
pub fn integrate_transfer(h: &Hamiltonian, z: Complex64, stops: &[f64]) -> Result<Vec<TransferState>> {
    let mut m = cidentity();
    let mut at = 0.0;
    let mut out = Vec::with_capacity(stops.len());
    for &tau in stops {
        if !(0.0..=h.tau_max).contains(&tau) {
            return invalid(format!("stop {tau} outside [0, {}]", h.tau_max));
        }
        if tau < at {
            m = cidentity();
            at = 0.0;
        }
        h.propagate(&mut m, at, tau, z, false);
        at = tau;
        out.push(TransferState { theta: [m[0][0], m[1][0]], phi: [m[0][1], m[1][1]], tau, z });
    }
    Ok(out)
}

/// Result of a Weyl-function evaluation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WeylValue {
    pub value: Complex64,
    /// `|r(X) − r(X/2)| / max(1, |r(X)|)` at the final truncation `X`.
    pub residual: f64,
    pub converged: bool,
    pub truncation: f64,
}

pub const WEYL_TOL: f64 = 1e-6;
pub const WEYL_MAX_DOUBLINGS: u32 = 16;

/// `m(z) = lim Φ⁻/Θ⁻`, doubling the truncation through the tail until the ratio settles.
pub fn weyl_m(h: &Hamiltonian, z: Complex64) -> Result<WeylValue> {
    if !(z.im > 0.0) {
        return Err(crate::KwError::Domain(format!("Im z must be positive, got {z}")));
    }
    let x0 = h.tau_max;
    let mut m = cidentity();
    h.propagate(&mut m, 0.0, 0.5 * x0, z, true);
    let mut prev = Hamiltonian::ratio(&m);
    h.propagate(&mut m, 0.5 * x0, x0, z, true);
    let mut cur = Hamiltonian::ratio(&m);
    let mut x = x0;
    let mut residual = (cur - prev).norm() / cur.norm().max(1.0);
    let mut k = 0;
    while !(residual < WEYL_TOL) && k < WEYL_MAX_DOUBLINGS {
        h.propagate(&mut m, x, 2.0 * x, z, true);
        x *= 2.0;
        prev = cur;
        cur = Hamiltonian::ratio(&m);
        residual = (cur - prev).norm() / cur.norm().max(1.0);
        k += 1;
    }
    if !cur.is_finite() {
        return Err(crate::KwError::Numerical(format!("Weyl ratio overflowed at z = {z}")));
    }
    let converged = residual < WEYL_TOL;
    if !converged {
        log::warn!("weyl_m at z = {z}: residual {residual:.2e} after truncation {x}");
    }
    Ok(WeylValue { value: cur, residual, converged, truncation: x })
}

/// Checks a partition: strictly increasing with spacing bounded away from 0 and ∞.
pub(crate) fn check_partition(p: &[f64]) -> Result<()> {
    if p.len() < 3 {
        return invalid("partition needs at least three points");
    }
    let gaps: Vec<f64> = p.windows(2).map(|w| w[1] - w[0]).collect();
    let lo = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = gaps.iter().cloned().fold(0.0, f64::max);
    if !(lo > 0.0) || !hi.is_finite() || hi / lo > 1e6 {
        return invalid(format!("partition spacing must lie in [C₁, C₂] with C₁ > 0; got [{lo}, {hi}]"));
    }
    Ok(())
}

/// The default partition `α_n = n` covering the reachable eikonal.
pub fn default_partition(h: &Hamiltonian) -> Vec<f64> {
    let n = h.eikonal_total().floor() as usize;
    (0..=n).map(|k| k as f64).collect()
}

/// Terms `det ∫_{L_{α_n}}^{L_{α_{n+2}}} H − (α_{n+2} − α_n)²` and the convergence verdict.
pub fn szego_sum(h: &Hamiltonian, partition: &[f64]) -> Result<SzegoReport> {
    check_partition(partition)?;
    let mut notes = vec![format!("truncation τ_max = {}; last cell assumed to continue (∫trace H = ∞)", h.tau_max)];
    let mut terms = Vec::new();
    let ls: Vec<Option<f64>> = partition.iter().map(|&a| h.eikonal_inverse(a)).collect();
    for n in 0..partition.len() - 2 {
        let (Some(a), Some(b)) = (ls[n], ls[n + 2]) else {
            break;
        };
        let d = partition[n + 2] - partition[n];
        terms.push(h.integral(a, b).det() - d * d);
    }
    let used = terms.len() + 2;
    if used < partition.len() {
        notes.push(format!("partition truncated to {used} points: L_α beyond τ_max for α > {}", partition[used - 1]));
    }
    let report = SzegoReport::from_terms(terms, partition[..used.min(partition.len())].to_vec(), notes);
    if h.sqrt_det_integrable() && used < partition.len() {
        return Ok(report.forced(Verdict::NotSzego, "√det H ∈ L¹ on window"));
    }
    Ok(report)
}

/// [`szego_sum`] on the default partition `α_n = n`.
pub fn szego_sum_default(h: &Hamiltonian) -> Result<SzegoReport> {
    szego_sum(h, &default_partition(h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identity_hamiltonian_gives_trig_solutions() {
        let h = Hamiltonian::identity(10.0);
        let z = c(0.7, 0.2);
        let st = integrate_transfer(&h, z, &[1.0, 3.5, 10.0]).unwrap();
        for s in st {
            let th = [(s.tau * z).cos(), -(s.tau * z).sin()];
            assert!((s.theta[0] - th[0]).norm() < 1e-12);
            assert!((s.theta[1] - th[1]).norm() < 1e-12);
            assert!((s.phi[0] - (s.tau * z).sin()).norm() < 1e-12);
            assert!((s.wronskian() - 1.0).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_spectral_parameter_is_trivial() {
        let h = Hamiltonian::new(
            vec![0.0, 1.0],
            vec![Cell::Constant(Sym2::new(2.0, 1.0, 0.5)), Cell::Constant(Sym2::diag(1.0, 0.0))],
            3.0,
        )
        .unwrap();
        let st = integrate_transfer(&h, c(0.0, 0.0), &[2.5]).unwrap();
        assert_eq!(st[0].theta, [c(1.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(st[0].phi, [c(0.0, 0.0), c(1.0, 0.0)]);
    }

    #[test]
    fn singular_prefix_shifts_inverse_eikonal() {
        let h = Hamiltonian::new(
            vec![0.0, 5.0],
            vec![Cell::Constant(Sym2::diag(1.0, 0.0)), Cell::Constant(Sym2::diag(1.0, 1.0))],
            20.0,
        )
        .unwrap();
        for eta in [0.5, 1.0, 7.25] {
            assert_relative_eq!(h.eikonal_inverse(eta).unwrap(), eta + 5.0, epsilon = 1e-14);
        }
        assert_eq!(h.eikonal(3.0).unwrap(), 0.0);
        assert!(h.eikonal_inverse(16.0).is_none());
    }

    #[test]
    fn identity_terms_vanish() {
        let r = szego_sum_default(&Hamiltonian::identity(600.0)).unwrap();
        assert!(r.terms.iter().all(|&t| t == 0.0));
        assert_eq!(r.verdict, Verdict::Szego);
    }

    #[test]
    fn weyl_of_identity_is_i() {
        let h = Hamiltonian::identity(10.0);
        for z in [c(0.0, 1.0), c(2.0, 0.5), c(-1.0, 0.1)] {
            let w = weyl_m(&h, z).unwrap();
            assert!(w.converged);
            assert!((w.value - c(0.0, 1.0)).norm() < 1e-6, "{z} {:?}", w);
        }
    }

    #[test]
    fn dirac_cell_matches_closed_form() {
        // antidiagonal q: N = diag(e^{-g}, e^{g}), H = diag(e^{-2g}, e^{2g})
        let q = 0.4;
        let cell = Cell::Dirac { q1: 0.0, q2: q, n0: crate::linalg::I2 };
        let hv = cell.value_at(1.3);
        assert_relative_eq!(hv.h1, (-2.0 * q * 1.3f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(hv.h2, (2.0 * q * 1.3f64).exp(), max_relative = 1e-14);
        let int = cell.integral(0.5, 2.0);
        let e = |a: f64| ((2.0 * q * 2.0 * a).exp() - (2.0 * q * 0.5 * a).exp()) / (2.0 * q * a);
        assert_relative_eq!(int.h2, e(1.0), max_relative = 1e-13);
        assert_relative_eq!(int.h1, e(-1.0), max_relative = 1e-13);
        assert!(int.h.abs() < 1e-15);
    }
}
