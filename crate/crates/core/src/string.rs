//! Krein strings `[M, L]` with piecewise-constant density and point masses: the
//! bijection with diagonal Hamiltonians, the optical metric, the string Szegő sum,
//! transfer matrices `φ`, `ψ`, the Titchmarsh–Weyl function `q` and spectral estimates.

use crate::canonical::{check_partition, Cell, Hamiltonian, WeylValue, WEYL_MAX_DOUBLINGS, WEYL_TOL};
use crate::error::{invalid, KwError, Result};
use crate::linalg::{cidentity, cmax_abs, cmul, cscale, Sym2, CM2};
use crate::measures::{SpectralMeasure, Support};
use crate::num::{csinc, gauss8};
use crate::piecewise::MonotoneIntegral;
use crate::report::{SzegoReport, Verdict};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub xi: f64,
    pub m: f64,
}

#[derive(Serialize, Deserialize)]
struct DensityPiece {
    to: f64,
    rho: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Length {
    Finite(f64),
    Infinite,
}

impl Serialize for Length {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Length::Finite(x) => s.serialize_f64(*x),
            Length::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Length {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) if s == "inf" => Ok(Length::Infinite),
            serde_json::Value::Number(n) => Ok(Length::Finite(n.as_f64().unwrap_or(f64::NAN))),
            other => Err(serde::de::Error::custom(format!("L must be a number or \"inf\", got {other}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StringJson {
    density: Vec<DensityPiece>,
    #[serde(default)]
    atoms: Vec<Atom>,
    #[serde(rename = "L", default = "infinite")]
    length: Length,
    xi_max: f64,
}

fn infinite() -> Length {
    Length::Infinite
}

/// A string with density `rho[i]` on `[breaks[i], breaks[i+1])`, atoms, infinite length,
/// and computational truncation `xi_max`. The last density value continues past
/// `xi_max` (declared tail).
#[derive(Clone, Debug)]
pub struct MassDistribution {
    breaks: Vec<f64>,
    rho: Vec<f64>,
    atoms: Vec<Atom>,
    xi_max: f64,
    optical: MonotoneIntegral,
    ac_mass: MonotoneIntegral,
    atom_prefix: Vec<f64>,
}

impl Serialize for MassDistribution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let density = (0..self.rho.len()).map(|i| DensityPiece { to: self.piece_end(i), rho: self.rho[i] }).collect();
        StringJson { density, atoms: self.atoms.clone(), length: Length::Infinite, xi_max: self.xi_max }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MassDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = StringJson::deserialize(d)?;
        Self::from_json_parts(raw).map_err(serde::de::Error::custom)
    }
}

impl MassDistribution {
    fn from_json_parts(raw: StringJson) -> Result<Self> {
        if let Length::Finite(l) = raw.length {
            return invalid(format!("finite length L = {l} with finite mass is not a proper pair; use \"inf\""));
        }
        let mut breaks = Vec::with_capacity(raw.density.len());
        let mut rho = Vec::with_capacity(raw.density.len());
        let mut start = 0.0;
        for p in &raw.density {
            if !(p.to > start) {
                return invalid("density pieces must have increasing \"to\" values");
            }
            breaks.push(start);
            rho.push(p.rho);
            start = p.to;
        }
        Self::new(breaks, rho, raw.atoms, raw.xi_max)
    }

    /// `breaks` are left ends starting at 0; pieces starting at or beyond `xi_max` are dropped.
    pub fn new(breaks: Vec<f64>, rho: Vec<f64>, mut atoms: Vec<Atom>, xi_max: f64) -> Result<Self> {
        if breaks.is_empty() || breaks.len() != rho.len() {
            return invalid("need one density value per piece");
        }
        if breaks[0] != 0.0 {
            return invalid("density breakpoints must start at 0");
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("density breakpoints must be strictly increasing");
        }
        if !(xi_max > 0.0) || !xi_max.is_finite() {
            return invalid("xi_max must be positive and finite");
        }
        if rho.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return invalid("densities must be finite and nonnegative");
        }
        let keep = breaks.partition_point(|&b| b < xi_max);
        let (breaks, rho) = (breaks[..keep].to_vec(), rho[..keep].to_vec());
        for a in &atoms {
            if !(a.m > 0.0 && a.m.is_finite()) {
                return invalid(format!("atom at {} has nonpositive mass", a.xi));
            }
            if !(a.xi >= 0.0 && a.xi < xi_max) {
                return invalid(format!("atom at {} lies outside [0, xi_max)", a.xi));
            }
        }
        atoms.sort_by(|a, b| a.xi.partial_cmp(&b.xi).unwrap());
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.last_mut() {
                Some(last) if last.xi == a.xi => last.m += a.m,
                _ => merged.push(a),
            }
        }
        if rho[0] == 0.0 && !merged.first().is_some_and(|a| a.xi == 0.0) {
            return invalid("left end is not heavy: M(ξ) = 0 near 0");
        }
        if *rho.last().unwrap() == 0.0 {
            return invalid("right end is not heavy: tail density must be positive");
        }
        let optical = MonotoneIntegral::new(breaks.clone(), rho.iter().map(|r| r.sqrt()).collect(), xi_max);
        let ac_mass = MonotoneIntegral::new(breaks.clone(), rho.clone(), xi_max);
        let mut acc = 0.0;
        let atom_prefix = std::iter::once(0.0)
            .chain(merged.iter().map(|a| {
                acc += a.m;
                acc
            }))
            .collect();
        Ok(MassDistribution { breaks, rho, atoms: merged, xi_max, optical, ac_mass, atom_prefix })
    }

    pub fn homogeneous(rho: f64, xi_max: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![rho], vec![], xi_max)
    }

    /// Unit cells `[n, n+1)` made of a density-`b` piece of length `δ_n` at the left end
    /// and density `a` elsewhere; `xi_max = δ.len()`.
    pub fn two_material(a: f64, b: f64, delta: &[f64]) -> Result<Self> {
        let mut breaks = Vec::with_capacity(2 * delta.len());
        let mut rho = Vec::with_capacity(2 * delta.len());
        for (n, &d) in delta.iter().enumerate() {
            if !(0.0..=1.0).contains(&d) {
                return invalid(format!("δ_{n} = {d} outside [0, 1]"));
            }
            let x = n as f64;
            if d > 0.0 {
                breaks.push(x);
                rho.push(b);
            }
            if d < 1.0 {
                breaks.push(x + d);
                rho.push(a);
            }
        }
        Self::new(breaks, rho, vec![], delta.len() as f64)
    }

    pub fn with_atoms(&self, atoms: Vec<Atom>) -> Result<Self> {
        let mut all = self.atoms.clone();
        all.extend(atoms);
        Self::new(self.breaks.clone(), self.rho.clone(), all, self.xi_max)
    }

    pub fn xi_max(&self) -> f64 {
        self.xi_max
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn densities(&self) -> &[f64] {
        &self.rho
    }

    fn piece_end(&self, i: usize) -> f64 {
        if i + 1 < self.breaks.len() {
            self.breaks[i + 1]
        } else {
            self.xi_max
        }
    }

    fn piece_index(&self, xi: f64) -> usize {
        self.breaks.partition_point(|&b| b <= xi).saturating_sub(1)
    }

    /// `ρ(ξ)` (right-continuous, tail continued).
    pub fn rho_at(&self, xi: f64) -> f64 {
        self.rho[self.piece_index(xi)]
    }

    pub fn tail_rho(&self) -> f64 {
        *self.rho.last().unwrap()
    }

    /// `∫₀^ξ ρ`.
    pub fn ac_mass(&self, xi: f64) -> f64 {
        self.ac_mass.eval(xi)
    }

    /// Total atom mass in `[0, ξ]`.
    pub fn atom_mass(&self, xi: f64) -> f64 {
        self.atom_prefix[self.atoms.partition_point(|a| a.xi <= xi)]
    }

    /// Atom mass in `[a, b)`.
    pub fn atom_mass_in(&self, a: f64, b: f64) -> f64 {
        let i = self.atoms.partition_point(|x| x.xi < a);
        let j = self.atoms.partition_point(|x| x.xi < b);
        self.atom_prefix[j] - self.atom_prefix[i]
    }

    /// `M(ξ) = m([0, ξ])`, right-continuous.
    pub fn mass(&self, xi: f64) -> f64 {
        self.ac_mass(xi) + self.atom_mass(xi)
    }

    /// `T(ξ) = ∫₀^ξ √ρ`.
    pub fn eikonal(&self, xi: f64) -> Result<f64> {
        if !(0.0..=self.xi_max).contains(&xi) {
            return invalid(format!("ξ = {xi} outside [0, {}]", self.xi_max));
        }
        Ok(self.optical.eval(xi))
    }

    /// `L_η = inf{ξ : T(ξ) = η}`; `None` if not reached before `xi_max`.
    pub fn eikonal_inverse(&self, eta: f64) -> Option<f64> {
        self.optical.inverse(eta)
    }

    pub fn eikonal_total(&self) -> f64 {
        self.optical.total()
    }

    /// Events (piece starts and atoms) in `ξ` order up to `end`: the propagation backbone.
    fn segments(&self, end: f64) -> Vec<Segment> {
        let mut out = Vec::with_capacity(self.breaks.len() + 2 * self.atoms.len());
        let mut ai = 0;
        for i in 0..self.breaks.len() {
            let a = self.breaks[i];
            if a >= end {
                break;
            }
            let b = if i + 1 < self.breaks.len() { self.breaks[i + 1].min(end) } else { end };
            let mut lo = a;
            while ai < self.atoms.len() && self.atoms[ai].xi < b {
                let at = self.atoms[ai];
                if at.xi > lo {
                    out.push(Segment::Piece { from: lo, to: at.xi, rho: self.rho[i] });
                }
                out.push(Segment::Atom(at));
                lo = at.xi.max(lo);
                ai += 1;
            }
            if b > lo {
                out.push(Segment::Piece { from: lo, to: b, rho: self.rho[i] });
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
enum Segment {
    Piece { from: f64, to: f64, rho: f64 },
    Atom(Atom),
}

/// Diagonal Hamiltonian `diag(h₂, h₁)` of the string: `τ = ξ + M(ξ)`, `h₁ = dξ/dτ`,
/// `h₂ = dM/dτ`. An atom becomes a cell `diag(1, 0)` of length `m`.
pub fn string_to_hamiltonian(m: &MassDistribution) -> Hamiltonian {
    let mut breaks = Vec::new();
    let mut cells = Vec::new();
    let mut tau = 0.0;
    for seg in m.segments(m.xi_max) {
        match seg {
            Segment::Piece { from, to, rho } => {
                breaks.push(tau);
                cells.push(Cell::Constant(Sym2::diag(rho / (1.0 + rho), 1.0 / (1.0 + rho))));
                tau += (1.0 + rho) * (to - from);
            }
            Segment::Atom(a) => {
                breaks.push(tau);
                cells.push(Cell::Constant(Sym2::diag(1.0, 0.0)));
                tau += a.m;
            }
        }
    }
    Hamiltonian::new(breaks, cells, tau).expect("a proper string gives a proper Hamiltonian")
}

/// Inverse of [`string_to_hamiltonian`]: `ξ = ∫h₁`, `M = ∫h₂`.
pub fn hamiltonian_to_string(h: &Hamiltonian) -> Result<MassDistribution> {
    let mut breaks: Vec<f64> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();
    let mut atoms: Vec<Atom> = Vec::new();
    let mut xi = 0.0;
    let n = h.cells().len();
    for (i, cell) in h.cells().iter().enumerate() {
        let Cell::Constant(s) = cell else {
            return invalid(format!("cell {i} is not constant"));
        };
        if s.h != 0.0 {
            return invalid(format!("cell {i} is not diagonal"));
        }
        if (s.trace() - 1.0).abs() > 1e-12 {
            return invalid(format!("cell {i} does not have unit trace"));
        }
        let end = if i + 1 < n { h.breaks()[i + 1] } else { h.tau_max() };
        let dt = end - h.breaks()[i];
        let (h2, h1) = (s.h1, s.h2);
        if h1 > 0.0 {
            let r = h2 / h1;
            let same = rho.last().is_some_and(|&last| (last - r).abs() <= 1e-12 * last.max(r));
            if !same {
                breaks.push(xi);
                rho.push(r);
            }
            xi += h1 * dt;
        } else {
            match atoms.last_mut() {
                Some(a) if a.xi == xi => a.m += dt,
                _ => atoms.push(Atom { xi, m: dt }),
            }
        }
    }
    if breaks.is_empty() {
        return invalid("Hamiltonian has no density part");
    }
    if atoms.last().is_some_and(|a| a.xi >= xi) {
        return invalid("terminal indivisible interval: the string would end with an atom");
    }
    MassDistribution::new(breaks, rho, atoms, xi)
}

/// Predicted wavefront `L_{T(f₀) + t}`; `None` when beyond the truncation.
pub fn wavefront(m: &MassDistribution, front0: f64, t: f64) -> Result<Option<f64>> {
    if t < 0.0 {
        return invalid("t must be nonnegative");
    }
    Ok(m.eikonal_inverse(m.eikonal(front0)? + t))
}

/// The literal reading `L_{f₀ + t}`, reported alongside for comparison.
pub fn wavefront_literal(m: &MassDistribution, front0: f64, t: f64) -> Option<f64> {
    m.eikonal_inverse(front0 + t)
}

/// Terms `(ξ_{n+2} − ξ_n)(M(ξ_{n+2}) − M(ξ_n)) − (η_{n+2} − η_n)²` with `ξ_n = L_{η_n}`.
pub fn string_szego_criterion(m: &MassDistribution, eta: &[f64]) -> Result<SzegoReport> {
    check_partition(eta)?;
    let mut notes = vec![format!("truncation ξ_max = {}; density {} assumed beyond", m.xi_max, m.tail_rho())];
    let xs: Vec<Option<f64>> = eta.iter().map(|&e| m.eikonal_inverse(e)).collect();
    let mut terms = Vec::new();
    for n in 0..eta.len() - 2 {
        let (Some(a), Some(b)) = (xs[n], xs[n + 2]) else {
            break;
        };
        let d = eta[n + 2] - eta[n];
        let dm = m.mass(b) - m.mass(a);
        terms.push((b - a) * dm - d * d);
    }
    let used = terms.len() + 2;
    if used < eta.len() {
        notes.push(format!("η-grid truncated at η = {}", eta[used - 1]));
    }
    let report = SzegoReport::from_terms(terms, eta[..used].to_vec(), notes);
    if m.tail_rho() == 0.0 && used < eta.len() {
        return Ok(report.forced(Verdict::NotSzego, "√ρ ∈ L¹ on window"));
    }
    Ok(report)
}

/// Default `η_n = n` over the reachable optical length.
pub fn default_eta_grid(m: &MassDistribution) -> Vec<f64> {
    let n = m.eikonal_total().floor() as usize;
    (0..=n).map(|k| k as f64).collect()
}

/// Rows `(n, ξ_n, M(ξ_n), term, partial sum)` for CSV export.
pub fn criterion_table(m: &MassDistribution, report: &SzegoReport) -> Vec<(usize, f64, f64, f64, f64)> {
    report
        .terms
        .iter()
        .zip(&report.partial_sums)
        .enumerate()
        .map(|(n, (&t, &s))| {
            let xi = m.eikonal_inverse(report.partition[n]).unwrap_or(f64::INFINITY);
            (n, xi, m.mass(xi), t, s)
        })
        .collect()
}

/// Closed-form terms `(√a − √b)²(2 − δ_n − δ_{n+1})(δ_n + δ_{n+1})` of a two-material string.
pub fn two_material_terms(a: f64, b: f64, delta: &[f64]) -> Vec<f64> {
    let c = (a.sqrt() - b.sqrt()).powi(2);
    delta
        .windows(2)
        .map(|d| {
            let s = d[0] + d[1];
            c * (2.0 - s) * s
        })
        .collect()
}

/// `φ`, `ψ` and their left derivatives at a point.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StringTransfer {
    pub xi: f64,
    pub phi: Complex64,
    pub dphi: Complex64,
    pub psi: Complex64,
    pub dpsi: Complex64,
}

impl StringTransfer {
    pub fn wronskian(&self) -> Complex64 {
        self.phi * self.dpsi - self.psi * self.dphi
    }
}

/// Cell matrix acting on `(f, f')` across length `d` of density `rho`.
fn piece_matrix(rho: f64, d: f64, z: Complex64) -> CM2 {
    let x = (z * rho).sqrt() * d;
    let c = x.cos();
    let s = csinc(x);
    [[c, s * d], [-z * rho * d * s, c]]
}

fn atom_matrix(mass: f64, z: Complex64) -> CM2 {
    let one = Complex64::new(1.0, 0.0);
    [[one, Complex64::new(0.0, 0.0)], [-z * mass, one]]
}

fn apply_piece(p: &mut CM2, rho: f64, d: f64, z: Complex64, renormalize: bool) {
    let growth = ((z * rho).sqrt().im.abs() * d / 20.0).ceil().max(1.0) as usize;
    let step = d / growth as f64;
    for _ in 0..growth {
        *p = cmul(&piece_matrix(rho, step, z), p);
        if renormalize {
            let n = cmax_abs(p);
            if !(1e-100..=1e100).contains(&n) {
                *p = cscale(p, 1.0 / n);
            }
        }
    }
}

/// Propagates `[[φ, ψ], [φ', ψ']]` from 0 to `end`; atoms at `end` are not applied
/// (left derivatives).
fn propagate(m: &MassDistribution, end: f64, z: Complex64, renormalize: bool) -> CM2 {
    let mut p = cidentity();
    for seg in m.segments(end.min(m.xi_max)) {
        match seg {
            Segment::Piece { from, to, rho } => apply_piece(&mut p, rho, to - from, z, renormalize),
            Segment::Atom(a) => p = cmul(&atom_matrix(a.m, z), &p),
        }
    }
    if end > m.xi_max {
        apply_piece(&mut p, m.tail_rho(), end - m.xi_max, z, renormalize);
    }
    p
}

/// `φ(ξ, z)`, `ψ(ξ, z)` and left derivatives.
pub fn string_transfer(m: &MassDistribution, xi: f64, z: Complex64) -> Result<StringTransfer> {
    if !(0.0..=m.xi_max).contains(&xi) {
        return invalid(format!("ξ = {xi} outside [0, {}]", m.xi_max));
    }
    let p = propagate(m, xi, z, false);
    Ok(StringTransfer { xi, phi: p[0][0], dphi: p[1][0], psi: p[0][1], dpsi: p[1][1] })
}

/// `q(z) = lim ψ/φ`, with the truncation doubled through the tail until it settles.
pub fn string_tw_function(m: &MassDistribution, z: Complex64) -> Result<WeylValue> {
    let dist = if z.re >= 0.0 { z.im.abs() } else { z.norm() };
    if !(dist > 0.0) {
        return Err(KwError::Domain(format!("z = {z} lies on [0, ∞)")));
    }
    let x0 = m.xi_max;
    let mut p = propagate(m, 0.5 * x0, z, true);
    let ratio = |p: &CM2| p[0][1] / p[0][0];
    let mut prev = ratio(&p);
    // continue from x0/2 to x0 along the string itself
    let mut rest = cidentity();
    for seg in m.segments(x0) {
        match seg {
            Segment::Piece { from, to, rho } => {
                let lo = from.max(0.5 * x0);
                if to > lo {
                    apply_piece(&mut rest, rho, to - lo, z, true);
                }
            }
            Segment::Atom(a) if a.xi >= 0.5 * x0 => rest = cmul(&atom_matrix(a.m, z), &rest),
            Segment::Atom(_) => {}
        }
    }
    p = cmul(&rest, &p);
    let mut cur = ratio(&p);
    let mut x = x0;
    let mut residual = (cur - prev).norm() / cur.norm().max(1.0);
    let mut k = 0;
    while !(residual < WEYL_TOL) && k < WEYL_MAX_DOUBLINGS {
        apply_piece(&mut p, m.tail_rho(), x, z, true);
        x *= 2.0;
        prev = cur;
        cur = ratio(&p);
        residual = (cur - prev).norm() / cur.norm().max(1.0);
        k += 1;
    }
    if !cur.is_finite() {
        return Err(KwError::Numerical(format!("q ratio overflowed at z = {z}")));
    }
    let converged = residual < WEYL_TOL;
    if !converged {
        log::warn!("q at z = {z}: residual {residual:.2e} after truncation {x}");
    }
    Ok(WeylValue { value: cur, residual, converged, truncation: x })
}

/// Smoothed spectral density `Im q(λ + iε)/π` on a positive grid.
#[derive(Clone, Debug)]
pub struct DensityEstimate {
    pub measure: SpectralMeasure,
    pub residuals: Vec<f64>,
    pub warnings: Vec<String>,
}

pub fn spectral_density_estimate(m: &MassDistribution, lambda: &[f64], eps: f64) -> Result<DensityEstimate> {
    if lambda.iter().any(|&l| !(l > 0.0)) {
        return invalid("λ-grid must be positive");
    }
    if !(eps > 0.0) {
        return invalid("ε must be positive");
    }
    let vals: Vec<Result<WeylValue>> =
        lambda.par_iter().map(|&l| string_tw_function(m, Complex64::new(l, eps))).collect();
    let mut density = Vec::with_capacity(lambda.len());
    let mut residuals = Vec::with_capacity(lambda.len());
    let mut warnings = Vec::new();
    for (v, &l) in vals.into_iter().zip(lambda) {
        let v = v?;
        let d = v.value.im / std::f64::consts::PI;
        if d < -1e-8 {
            warnings.push(format!("negative density {d:.3e} at λ = {l}"));
        }
        if !v.converged {
            warnings.push(format!("q not settled at λ = {l} (residual {:.2e})", v.residual));
        }
        density.push(d.max(0.0));
        residuals.push(v.residual);
    }
    for i in 1..density.len().saturating_sub(1) {
        if density[i] > 10.0 * density[i - 1].max(density[i + 1]) && density[i] > 0.0 {
            warnings.push(format!("unresolved peak near λ = {} (atom below ε resolution?)", lambda[i]));
        }
    }
    let measure = SpectralMeasure::new(Support::HalfLine, lambda.to_vec(), density, vec![], None)?.with_fitted_tail();
    Ok(DensityEstimate { measure, residuals, warnings })
}

/// `q(z)` for `Im z ≥ 0` from the declared homogeneous tail: past `ξ_max` only the
/// wave `e^{ikξ}`, `k = √(zρ)`, is kept. Real `z > 0` gives `q(z + i0)`.
pub fn string_q_outgoing(m: &MassDistribution, z: Complex64) -> Result<Complex64> {
    if !(z.im >= 0.0) || z.norm() == 0.0 {
        return invalid(format!("need Im z ≥ 0 and z ≠ 0, got {z}"));
    }
    let rho = m.tail_rho();
    let p = propagate(m, m.xi_max, z, true);
    let ik = Complex64::new(0.0, 1.0) * (z * rho).sqrt();
    let q = (ik * p[0][1] - p[1][1]) / (ik * p[0][0] - p[1][0]);
    if !q.is_finite() {
        return Err(KwError::Numerical(format!("q not finite at z = {z}")));
    }
    Ok(q)
}

/// `σ'(λ) = Im q(λ + i0)/π` for `λ > 0`.
pub fn spectral_density_boundary(m: &MassDistribution, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return invalid("λ must be positive");
    }
    Ok(string_q_outgoing(m, Complex64::new(lambda, 0.0))?.im.max(0.0) / std::f64::consts::PI)
}

/// `φ(ξ_i, λ)` at sorted points for real `λ ≥ 0`.
pub fn phi_at_points(m: &MassDistribution, points: &[f64], lambda: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let (mut f, mut df) = (1.0f64, 0.0f64);
    let mut at = 0.0;
    let mut pi = 0;
    let advance = |f: &mut f64, df: &mut f64, rho: f64, d: f64| {
        if d <= 0.0 {
            return;
        }
        let w = (lambda * rho).sqrt();
        let x = w * d;
        let (c, s) = (x.cos(), if x.abs() < 1e-8 { d } else { x.sin() / w });
        let nf = c * *f + s * *df;
        let ndf = -lambda * rho * s * *f + c * *df;
        *f = nf;
        *df = ndf;
    };
    let end = points.last().copied().unwrap_or(0.0);
    let segs = m.segments(end.min(m.xi_max));
    let mut push_until = |f: &mut f64, df: &mut f64, at: &mut f64, limit: f64, rho: f64, pi: &mut usize| {
        while *pi < points.len() && points[*pi] <= limit {
            advance(f, df, rho, points[*pi] - *at);
            *at = points[*pi];
            out.push(*f);
            *pi += 1;
        }
        advance(f, df, rho, limit - *at);
        *at = limit;
    };
    for seg in segs {
        match seg {
            Segment::Piece { to, rho, .. } => push_until(&mut f, &mut df, &mut at, to, rho, &mut pi),
            Segment::Atom(a) => df -= lambda * a.m * f,
        }
    }
    if pi < points.len() {
        let tail = m.tail_rho();
        push_until(&mut f, &mut df, &mut at, *points.last().unwrap(), tail, &mut pi);
    }
    out
}

/// `g(λ) = ∫ v φ(·, λ) dm` for a callable `v` supported in `[0, support_end]`; `kinks` are
/// points where `v` is not smooth.
pub fn generalized_fourier_fn<F: Fn(f64) -> f64 + Sync>(
    m: &MassDistribution,
    v: F,
    support_end: f64,
    kinks: &[f64],
    lambda: &[f64],
) -> Vec<f64> {
    let rule = gauss8();
    let mut cuts: Vec<f64> = kinks.iter().cloned().filter(|&k| k > 0.0 && k < support_end).collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lambda
        .par_iter()
        .map(|&l| {
            let (mut f, mut df) = (1.0f64, 0.0f64);
            let mut total = 0.0;
            for seg in m.segments(support_end) {
                match seg {
                    Segment::Atom(a) => {
                        total += v(a.xi) * f * a.m;
                        df -= l * a.m * f;
                    }
                    Segment::Piece { from, to, rho } => {
                        let mut pts = vec![from];
                        pts.extend(cuts.iter().filter(|&&c| c > from && c < to));
                        pts.push(to);
                        let w = (l * rho).sqrt();
                        for win in pts.windows(2) {
                            let (a, b) = (win[0], win[1]);
                            let pieces = ((w * (b - a)) / 1.0).ceil().max(1.0) as usize;
                            let h = (b - a) / pieces as f64;
                            for p in 0..pieces {
                                let x0 = a + p as f64 * h;
                                if rho > 0.0 {
                                    for (&t, &wt) in rule.nodes.iter().zip(&rule.weights) {
                                        let s = 0.5 * h * (t + 1.0);
                                        let (c, sn) = trig(w, s);
                                        let phi = c * f + sn * df;
                                        total += 0.5 * h * wt * v(x0 + s) * phi * rho;
                                    }
                                }
                                let (c, sn) = trig(w, h);
                                let nf = c * f + sn * df;
                                df = -l * rho * sn * f + c * df;
                                f = nf;
                            }
                        }
                    }
                }
            }
            total
        })
        .collect()
}

/// `(cos(ws), sin(ws)/w)` with the `w → 0` limit.
fn trig(w: f64, s: f64) -> (f64, f64) {
    let x = w * s;
    if x.abs() < 1e-8 {
        (1.0, s)
    } else {
        (x.cos(), x.sin() / w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn homogeneous_bijection() {
        let m = MassDistribution::homogeneous(1.0, 10.0).unwrap();
        let h = string_to_hamiltonian(&m);
        assert_eq!(h.tau_max(), 20.0);
        assert_eq!(h.value_at(3.0), Sym2::diag(0.5, 0.5));
        let m4 = MassDistribution::homogeneous(4.0, 1.0).unwrap();
        let h4 = string_to_hamiltonian(&m4);
        assert_relative_eq!(h4.value_at(0.1).h2, 0.2);
        assert_relative_eq!(h4.value_at(0.1).h1, 0.8);
    }

    #[test]
    fn atom_becomes_indivisible_interval() {
        let m = MassDistribution::homogeneous(1.0, 4.0).unwrap().with_atoms(vec![Atom { xi: 1.0, m: 3.0 }]).unwrap();
        let h = string_to_hamiltonian(&m);
        assert_eq!(h.breaks(), &[0.0, 2.0, 5.0]);
        assert_eq!(h.value_at(3.0), Sym2::diag(1.0, 0.0));
        let back = hamiltonian_to_string(&h).unwrap();
        assert_eq!(back.atoms(), &[Atom { xi: 1.0, m: 3.0 }]);
        assert_eq!(back.densities(), &[1.0]);
    }

    #[test]
    fn diagonal_hamiltonians_to_strings() {
        let h = Hamiltonian::constant(Sym2::diag(0.8, 0.2), 5.0).unwrap();
        let m = hamiltonian_to_string(&h).unwrap();
        assert_relative_eq!(m.densities()[0], 4.0, max_relative = 1e-14);
        let h = Hamiltonian::constant(Sym2::diag(0.5, 0.5), 8.0).unwrap();
        let m = hamiltonian_to_string(&h).unwrap();
        assert_eq!(m.densities(), &[1.0]);
        assert_eq!(m.xi_max(), 4.0);
        assert!(hamiltonian_to_string(&Hamiltonian::constant(Sym2::new(0.5, 0.5, 0.1), 1.0).unwrap()).is_err());
        assert!(hamiltonian_to_string(&Hamiltonian::identity(1.0)).is_err());
    }

    #[test]
    fn optical_metric() {
        let m = MassDistribution::homogeneous(4.0, 10.0).unwrap();
        assert_eq!(m.eikonal(3.0).unwrap(), 6.0);
        assert_eq!(m.eikonal_inverse(5.0), Some(2.5));
        assert_eq!(wavefront(&m, 1.0, 4.0).unwrap(), Some(3.0));
        let one = MassDistribution::homogeneous(1.0, 100.0).unwrap();
        assert_eq!(wavefront(&one, 2.5, 7.0).unwrap(), Some(9.5));
        assert_eq!(wavefront(&one, 2.5, 0.0).unwrap(), Some(2.5));
    }

    #[test]
    fn homogeneous_transfer_is_cosine() {
        let m = MassDistribution::homogeneous(1.0, 10.0).unwrap();
        let z = c(2.0, 0.3);
        let t = string_transfer(&m, 3.0, z).unwrap();
        let k = z.sqrt();
        assert!((t.phi - (3.0 * k).cos()).norm() < 1e-12);
        assert!((t.psi - (3.0 * k).sin() / k).norm() < 1e-12);
        assert!((t.wronskian() - 1.0).norm() < 1e-12);
        let t0 = string_transfer(&m, 2.0, c(0.0, 0.0)).unwrap();
        assert_eq!(t0.phi, c(1.0, 0.0));
        assert_eq!(t0.psi, c(2.0, 0.0));
    }

    #[test]
    fn atom_jump_in_derivative() {
        // density 1 on [0,1) to make the left end heavy, then an atom at 1 and near-zero density
        let m = MassDistribution::new(vec![0.0, 1.0], vec![1.0, 1e-300], vec![Atom { xi: 1.0, m: 2.0 }], 3.0).unwrap();
        let z = c(0.5, 0.0);
        let before = string_transfer(&m, 1.0, z).unwrap();
        let after = string_transfer(&m, 2.0, z).unwrap();
        let slope = before.dphi - z * 2.0 * before.phi;
        assert!((after.phi - (before.phi + slope)).norm() < 1e-12);
        assert!((after.dphi - slope).norm() < 1e-12);
    }

    #[test]
    fn q_of_homogeneous_string() {
        let m = MassDistribution::homogeneous(1.0, 50.0).unwrap();
        let q = string_tw_function(&m, c(-1.0, 0.0)).unwrap();
        assert!((q.value - 1.0).norm() < 1e-9);
        let z = c(1.5, 0.7);
        let q = string_tw_function(&m, z).unwrap();
        assert!((q.value - Complex64::i() / z.sqrt()).norm() < 1e-6);
    }

    #[test]
    fn two_material_terms_vanish_for_equal_materials() {
        assert!(two_material_terms(2.0, 2.0, &[0.3, 0.5, 0.1]).iter().all(|&t| t == 0.0));
    }

    #[test]
    fn fourier_of_indicator() {
        let m = MassDistribution::homogeneous(1.0, 5.0).unwrap();
        let lam = [0.5, 2.0, 10.0];
        let g = generalized_fourier_fn(&m, |x| if x < 1.0 { 1.0 } else { 0.0 }, 1.0, &[], &lam);
        for (gi, l) in g.iter().zip(lam) {
            assert_relative_eq!(*gi, l.sqrt().sin() / l.sqrt(), max_relative = 1e-12);
        }
    }

    #[test]
    fn phi_at_points_matches_transfer() {
        let m = MassDistribution::new(vec![0.0, 0.7, 1.9], vec![1.0, 3.0, 0.5], vec![Atom { xi: 1.2, m: 0.4 }], 4.0)
            .unwrap();
        let pts = [0.1, 0.7, 1.2, 1.5, 3.9, 5.0];
        let lam = 2.3;
        let v = phi_at_points(&m, &pts, lam);
        for (p, val) in pts.iter().zip(v) {
            if *p <= 4.0 {
                let t = string_transfer(&m, *p, c(lam, 0.0)).unwrap();
                assert!((t.phi.re - val).abs() < 1e-12, "{p}");
            }
        }
    }

    #[test]
    fn boundary_density_matches_smoothed_q() {
        let h = MassDistribution::homogeneous(4.0, 3.0).unwrap();
        for l in [0.5, 2.0, 9.0] {
            let d = spectral_density_boundary(&h, l).unwrap();
            assert_relative_eq!(d, 1.0 / (std::f64::consts::PI * (4.0 * l).sqrt()), max_relative = 1e-12);
        }
        let m = MassDistribution::two_material(1.0, 2.0, &[0.5, 0.25, 0.1, 0.0]).unwrap();
        let m = m.with_atoms(vec![Atom { xi: 1.5, m: 0.2 }]).unwrap();
        let z = c(3.0, 0.5);
        let q = string_tw_function(&m, z).unwrap();
        assert!((string_q_outgoing(&m, z).unwrap() - q.value).norm() < 1e-8);
    }
}
