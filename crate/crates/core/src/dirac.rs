//! Dirac systems `JN' + QN = 0`, `Q = [[q₁, q₂], [q₂, −q₁]]`, on the half-line.
//!
//! `N₀` reduces the system to the canonical one with `H = N₀ᵀN₀`, `det H = 1`. For a
//! diagonal or antidiagonal `Q` with scalar `q` both forms give the same determinant
//! sums `∫h ∫h⁻¹ − 4`, `h = e^{2g}`, `g = ∫₀^τ q`, which are evaluated here without
//! cancellation: with `f` the mean-zero part of `2g` on a window of length 2,
//! `∫eᶠ∫e⁻ᶠ − 4 = 2(A + B) + AB` where `A = ∫(eᶠ − 1 − f)` and `B = ∫(e⁻ᶠ − 1 + f)`.

use crate::canonical::{Cell, Hamiltonian};
use crate::error::{invalid, KwError, Result};
use crate::linalg::{det, expm_real_traceless, mul, transpose, Sym2, I2, M2};
use crate::num::{expm1_minus_x, gauss8, i0m1, sinhc_m1};
use crate::report::{SzegoReport, Verdict};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Sub-cells advance the WvN phase `τ^α` by at most this much.
pub const MAX_SUBCELL_PHASE: f64 = PI / 8.0;

/// Unit intervals whose phase advance exceeds this (512 sub-cells) are averaged
/// over the oscillation instead of resolved, when `α > 1`.
pub const HOMOGENIZE_PHASE: f64 = 64.0 * PI;

/// Window sums stop once a term exceeds this.
pub const BLOWUP: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Diagonal,
    Antidiagonal,
    General,
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    /// `values[i]` on `[breaks[i], breaks[i+1])`, the last value continuing; `g` holds
    /// `∫₀ q` at each break.
    Pc { breaks: Vec<f64>, values: Vec<f64>, g: Vec<f64> },
    /// `sin(τ^α)/τ^β` for `τ ≥ τ₀`, constant `q(τ₀)` below.
    Wvn { alpha: f64, beta: f64, tau0: f64 },
}

/// A scalar potential `q` on `[0, ∞)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScalarJson", into = "ScalarJson")]
pub struct ScalarPotential {
    kind: Kind,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ScalarJson {
    Pc {
        breaks: Vec<f64>,
        values: Vec<f64>,
    },
    Wvn {
        alpha: f64,
        beta: f64,
        #[serde(default = "one")]
        tau0: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl TryFrom<ScalarJson> for ScalarPotential {
    type Error = KwError;
    fn try_from(j: ScalarJson) -> Result<Self> {
        match j {
            ScalarJson::Pc { breaks, values } => ScalarPotential::piecewise(breaks, values),
            ScalarJson::Wvn { alpha, beta, tau0 } => ScalarPotential::wvn(alpha, beta, tau0),
        }
    }
}

impl From<ScalarPotential> for ScalarJson {
    fn from(q: ScalarPotential) -> Self {
        match q.kind {
            Kind::Pc { breaks, values, .. } => ScalarJson::Pc { breaks, values },
            Kind::Wvn { alpha, beta, tau0 } => ScalarJson::Wvn { alpha, beta, tau0 },
        }
    }
}

impl ScalarPotential {
    pub fn piecewise(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breaks.is_empty() || breaks.len() != values.len() {
            return invalid("piecewise potential needs one value per break");
        }
        if breaks[0] != 0.0 || breaks.windows(2).any(|b| !(b[1] > b[0])) || breaks.iter().any(|b| !b.is_finite()) {
            return invalid("breaks must start at 0 and increase strictly");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("potential values must be finite");
        }
        let mut g = Vec::with_capacity(breaks.len());
        let mut acc = 0.0;
        g.push(0.0);
        for i in 1..breaks.len() {
            acc += values[i - 1] * (breaks[i] - breaks[i - 1]);
            g.push(acc);
        }
        Ok(ScalarPotential { kind: Kind::Pc { breaks, values, g } })
    }

    pub fn wvn(alpha: f64, beta: f64, tau0: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite()) {
            return invalid("α and β must be finite");
        }
        if !(tau0 > 0.0 && tau0.is_finite()) {
            return invalid("τ₀ must be positive");
        }
        Ok(ScalarPotential { kind: Kind::Wvn { alpha, beta, tau0 } })
    }

    pub fn zero() -> Self {
        ScalarPotential::piecewise(vec![0.0], vec![0.0]).unwrap()
    }

    pub fn constant(c: f64) -> Result<Self> {
        ScalarPotential::piecewise(vec![0.0], vec![c])
    }

    /// Midpoint samples of `f` on cells of width `h` up to `tau_max`; zero beyond.
    pub fn sampled(f: impl Fn(f64) -> f64, tau_max: f64, h: f64) -> Result<Self> {
        if !(h > 0.0 && tau_max > 0.0) {
            return invalid("sampling needs h > 0 and τ_max > 0");
        }
        let n = (tau_max / h).ceil() as usize;
        let mut breaks: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        let mut values: Vec<f64> = breaks.iter().map(|&t| f(t + 0.5 * h)).collect();
        breaks.push(n as f64 * h);
        values.push(0.0);
        ScalarPotential::piecewise(breaks, values)
    }

    /// `(α, β, τ₀)` of a WvN potential.
    pub fn as_wvn(&self) -> Option<(f64, f64, f64)> {
        match self.kind {
            Kind::Wvn { alpha, beta, tau0 } => Some((alpha, beta, tau0)),
            _ => None,
        }
    }

    pub fn is_piecewise(&self) -> bool {
        matches!(self.kind, Kind::Pc { .. })
    }

    pub fn value(&self, tau: f64) -> f64 {
        match &self.kind {
            Kind::Pc { breaks, values, .. } => values[cell_of(breaks, tau)],
            Kind::Wvn { alpha, beta, tau0 } => wvn_q(*alpha, *beta, *tau0, tau),
        }
    }

    /// `∫_a^b q`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match &self.kind {
            Kind::Pc { breaks, values, g } => {
                let at = |t: f64| {
                    let i = cell_of(breaks, t);
                    g[i] + values[i] * (t - breaks[i])
                };
                at(b) - at(a)
            }
            Kind::Wvn { alpha, beta, tau0 } => {
                let (a, b, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };
                let mut acc = 0.0;
                for (lo, hi) in wvn_pieces(*tau0, a, b) {
                    let m = wvn_subcells(*alpha, *tau0, lo, hi);
                    acc += crate::num::integrate(|t| wvn_q(*alpha, *beta, *tau0, t), lo, hi, m);
                }
                sign * acc
            }
        }
    }

    /// Breaks of a piecewise potential, `None` for WvN.
    fn breaks(&self) -> Option<&[f64]> {
        match &self.kind {
            Kind::Pc { breaks, .. } => Some(breaks),
            _ => None,
        }
    }
}

fn cell_of(breaks: &[f64], tau: f64) -> usize {
    breaks.partition_point(|&b| b <= tau).saturating_sub(1)
}

fn wvn_q(alpha: f64, beta: f64, tau0: f64, tau: f64) -> f64 {
    let t = tau.max(tau0);
    t.powf(alpha).sin() / t.powf(beta)
}

/// `[a, b]` split at `τ₀`.
fn wvn_pieces(tau0: f64, a: f64, b: f64) -> Vec<(f64, f64)> {
    if a < tau0 && tau0 < b {
        vec![(a, tau0), (tau0, b)]
    } else {
        vec![(a, b)]
    }
}

/// Sub-cell count on `[a, b]` so that the phase `τ^α` advances by at most `π/8`.
fn wvn_subcells(alpha: f64, tau0: f64, a: f64, b: f64) -> usize {
    if b <= tau0 {
        return 1;
    }
    let a = a.max(tau0);
    let phase = (b.powf(alpha) - a.powf(alpha)).abs();
    let by_phase = (phase / MAX_SUBCELL_PHASE).ceil() as usize;
    let by_amplitude = (4.0 * (b - a) / a).ceil() as usize;
    by_phase.max(by_amplitude).max(1)
}

/// A Dirac potential truncated at `tau_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DiracJson", into = "DiracJson")]
pub struct DiracPotential {
    form: Form,
    q1: ScalarPotential,
    q2: ScalarPotential,
    tau_max: f64,
}

#[derive(Serialize, Deserialize)]
struct DiracJson {
    form: Form,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<ScalarPotential>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q1: Option<ScalarPotential>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q2: Option<ScalarPotential>,
    tau_max: f64,
}

impl TryFrom<DiracJson> for DiracPotential {
    type Error = KwError;
    fn try_from(j: DiracJson) -> Result<Self> {
        match (j.form, j.q, j.q1, j.q2) {
            (Form::General, None, q1, q2) => DiracPotential::general(
                q1.unwrap_or_else(ScalarPotential::zero),
                q2.unwrap_or_else(ScalarPotential::zero),
                j.tau_max,
            ),
            (Form::General, Some(_), _, _) => invalid("general form takes \"q1\" and \"q2\""),
            (form, Some(q), None, None) => DiracPotential::scalar(form, q, j.tau_max),
            _ => invalid("diagonal and antidiagonal forms take a single \"q\""),
        }
    }
}

impl From<DiracPotential> for DiracJson {
    fn from(p: DiracPotential) -> Self {
        let tau_max = p.tau_max;
        match p.form {
            Form::General => DiracJson { form: p.form, q: None, q1: Some(p.q1), q2: Some(p.q2), tau_max },
            Form::Diagonal => DiracJson { form: p.form, q: Some(p.q1), q1: None, q2: None, tau_max },
            Form::Antidiagonal => DiracJson { form: p.form, q: Some(p.q2), q1: None, q2: None, tau_max },
        }
    }
}

impl DiracPotential {
    /// `Q = q·diag(1, −1)` (diagonal) or `Q = q·[[0, 1], [1, 0]]` (antidiagonal).
    pub fn scalar(form: Form, q: ScalarPotential, tau_max: f64) -> Result<Self> {
        check_tau_max(tau_max)?;
        match form {
            Form::Diagonal => Ok(DiracPotential { form, q1: q, q2: ScalarPotential::zero(), tau_max }),
            Form::Antidiagonal => Ok(DiracPotential { form, q1: ScalarPotential::zero(), q2: q, tau_max }),
            Form::General => invalid("use DiracPotential::general for two components"),
        }
    }

    pub fn general(q1: ScalarPotential, q2: ScalarPotential, tau_max: f64) -> Result<Self> {
        check_tau_max(tau_max)?;
        Ok(DiracPotential { form: Form::General, q1, q2, tau_max })
    }

    pub fn form(&self) -> Form {
        self.form
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn q1(&self) -> &ScalarPotential {
        &self.q1
    }

    pub fn q2(&self) -> &ScalarPotential {
        &self.q2
    }

    /// The scalar `q` of a diagonal or antidiagonal potential.
    pub fn scalar_part(&self) -> Option<&ScalarPotential> {
        match self.form {
            Form::Diagonal => Some(&self.q1),
            Form::Antidiagonal => Some(&self.q2),
            Form::General => None,
        }
    }

    /// `JQ(τ) = [[−q₂, q₁], [q₁, q₂]]`.
    fn jq(&self, tau: f64) -> M2 {
        let (a, b) = (self.q1.value(tau), self.q2.value(tau));
        [[-b, a], [a, b]]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn check_tau_max(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return invalid("τ_max must be positive and finite");
    }
    Ok(())
}

/// Closed form of `N₀` from `g = ∫₀^τ q`.
fn n0_closed(form: Form, g: f64) -> M2 {
    match form {
        Form::Diagonal => [[g.cosh(), g.sinh()], [g.sinh(), g.cosh()]],
        _ => [[(-g).exp(), 0.0], [0.0, g.exp()]],
    }
}

/// `N₀(τ)` at each stop: closed forms for diagonal and antidiagonal `Q`, RK4 with
/// step `10⁻³` otherwise.
pub fn transfer_n0(q: &DiracPotential, stops: &[f64]) -> Result<Vec<M2>> {
    check_stops(q, stops)?;
    match q.scalar_part() {
        Some(s) => Ok(stops.iter().map(|&t| n0_closed(q.form, s.integral(0.0, t))).collect()),
        None => {
            let mut order: Vec<usize> = (0..stops.len()).collect();
            order.sort_by(|&a, &b| stops[a].total_cmp(&stops[b]));
            let sorted: Vec<f64> = order.iter().map(|&i| stops[i]).collect();
            let vals = transfer_n0_rk4(q, &sorted, 1e-3)?;
            let mut out = vec![I2; stops.len()];
            for (k, &i) in order.iter().enumerate() {
                out[i] = vals[k];
            }
            Ok(out)
        }
    }
}

fn check_stops(q: &DiracPotential, stops: &[f64]) -> Result<()> {
    if let Some(t) = stops.iter().find(|t| !(0.0..=q.tau_max).contains(*t)) {
        return invalid(format!("stop τ = {t} outside [0, {}]", q.tau_max));
    }
    Ok(())
}

/// Breaks of the merged piecewise structure of `q₁` and `q₂` inside `[a, b]`.
fn merged_breaks(q: &DiracPotential, a: f64, b: f64) -> Vec<f64> {
    let mut pts = vec![a, b];
    for s in [&q.q1, &q.q2] {
        match s.breaks() {
            Some(br) => pts.extend(br.iter().copied().filter(|&t| t > a && t < b)),
            None => {
                if let Some((_, _, tau0)) = s.as_wvn() {
                    if tau0 > a && tau0 < b {
                        pts.push(tau0);
                    }
                }
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// RK4 for `N' = JQ N` with steps of at most `h`, aligned to the breaks of `Q`.
pub fn transfer_n0_rk4(q: &DiracPotential, stops: &[f64], h: f64) -> Result<Vec<M2>> {
    check_stops(q, stops)?;
    if stops.windows(2).any(|s| s[1] < s[0]) {
        return invalid("RK4 stops must be nondecreasing");
    }
    if !(h > 0.0) {
        return invalid("step must be positive");
    }
    let mut out = Vec::with_capacity(stops.len());
    let mut n = I2;
    let mut at = 0.0;
    for &stop in stops {
        n = rk4_advance(q, n, at, stop, h);
        at = stop;
        out.push(n);
    }
    Ok(out)
}

fn rk4_advance(q: &DiracPotential, mut n: M2, a: f64, b: f64, h: f64) -> M2 {
    if b <= a {
        return n;
    }
    let pts = merged_breaks(q, a, b);
    let f = |t: f64, n: &M2| mul(&q.jq(t), n);
    let axpy = |n: &M2, k: &M2, s: f64| -> M2 {
        [[n[0][0] + s * k[0][0], n[0][1] + s * k[0][1]], [n[1][0] + s * k[1][0], n[1][1] + s * k[1][1]]]
    };
    for w in pts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let steps = ((hi - lo) / h).ceil().max(1.0) as usize;
        let dt = (hi - lo) / steps as f64;
        for i in 0..steps {
            // sample strictly inside the piece so piecewise data take the piece's value
            let t0 = lo + i as f64 * dt;
            let t1 = if i + 1 == steps { hi } else { t0 + dt };
            let inner = |t: f64| t.clamp(lo + 1e-12 * dt, hi - 1e-12 * dt);
            let k1 = f(inner(t0), &n);
            let k2 = f(inner(t0 + 0.5 * dt), &axpy(&n, &k1, 0.5 * dt));
            let k3 = f(inner(t0 + 0.5 * dt), &axpy(&n, &k2, 0.5 * dt));
            let k4 = f(inner(t1), &axpy(&n, &k3, dt));
            for r in 0..2 {
                for c in 0..2 {
                    n[r][c] += dt / 6.0 * (k1[r][c] + 2.0 * k2[r][c] + 2.0 * k3[r][c] + k4[r][c]);
                }
            }
        }
    }
    n
}

/// The canonical Hamiltonian `H = N₀ᵀN₀` of a piecewise-constant potential.
pub fn dirac_hamiltonian(q: &DiracPotential) -> Result<Hamiltonian> {
    if !(q.q1.is_piecewise() && q.q2.is_piecewise()) {
        return invalid("the canonical reduction is built for piecewise-constant potentials");
    }
    let pts = merged_breaks(q, 0.0, q.tau_max);
    let mut breaks = Vec::new();
    let mut cells = Vec::new();
    let mut n = I2;
    for w in pts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let (q1, q2) = (q.q1.value(mid), q.q2.value(mid));
        breaks.push(w[0]);
        cells.push(Cell::Dirac { q1, q2, n0: n });
        n = mul(&expm_real_traceless(&[[-q2, q1], [q1, q2]], w[1] - w[0]), &n);
    }
    Hamiltonian::new(breaks, cells, q.tau_max)
}

// ---------------------------------------------------------------------------
// window sums

/// Per-window quantities on `[n, n + 2]`.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct WindowStats {
    /// `∫h ∫h⁻¹ − 4`.
    pub product: f64,
    /// `∫ g̃ₙ²` with `g̃ₙ` the mean-zero part of `gₙ = 2∫ₙ^τ q`.
    pub dispersion: f64,
    /// `sup |gₙ|` on the window.
    pub sup_g: f64,
    /// Whether the window was averaged over the oscillation.
    pub homogenized: bool,
}

/// Accumulates `A`, `B`, `∫f²` from node values of `f` with weights.
#[derive(Default)]
struct Sums {
    a: f64,
    b: f64,
    f2: f64,
}

impl Sums {
    fn stats(&self, sup_g: f64, homogenized: bool) -> WindowStats {
        WindowStats { product: 2.0 * (self.a + self.b) + self.a * self.b, dispersion: self.f2, sup_g, homogenized }
    }
}

/// Window statistics of a piecewise potential, with `g` piecewise linear.
fn pc_window(q: &ScalarPotential, n: f64) -> WindowStats {
    let Kind::Pc { breaks, values, .. } = &q.kind else { unreachable!() };
    let (a, b) = (n, n + 2.0);
    let mut pts = vec![(a, 0.0)];
    let mut i = cell_of(breaks, a);
    let mut t = a;
    let mut g = 0.0;
    while t < b {
        let end = if i + 1 < breaks.len() { breaks[i + 1].min(b) } else { b };
        g += values[i] * (end - t);
        pts.push((end, g));
        t = end;
        i += 1;
    }
    let mean: f64 = pts.windows(2).map(|p| 0.5 * (p[1].0 - p[0].0) * (p[0].1 + p[1].1)).sum::<f64>() / 2.0;
    let mut s = Sums::default();
    let mut sup = 0.0f64;
    for p in pts.windows(2) {
        let len = p[1].0 - p[0].0;
        let (f0, f1) = (2.0 * (p[0].1 - mean), 2.0 * (p[1].1 - mean));
        let (m, half) = (0.5 * (f0 + f1), 0.5 * (f1 - f0));
        let sm = sinhc_m1(half);
        s.a += len * (expm1_minus_x(m) + m.exp() * sm);
        s.b += len * (expm1_minus_x(-m) + (-m).exp() * sm);
        s.f2 += len * (f0 * f0 + f0 * f1 + f1 * f1) / 3.0;
        sup = sup.max(2.0 * p[1].1.abs());
    }
    s.stats(sup, false)
}

/// GL nodes on one unit interval `[k, k + 1]` of a WvN potential, with
/// `∫_k^τ q` at the nodes.
struct Resolved {
    w: Vec<f64>,
    g: Vec<f64>,
    dg: f64,
}

/// Oscillation-averaged data on `[k, k + 1]`: amplitudes `R` of `f` at GL8 nodes.
struct Averaged {
    w: Vec<f64>,
    r: Vec<f64>,
}

fn wvn_resolved(alpha: f64, beta: f64, tau0: f64, k: f64) -> Resolved {
    let rule = gauss8();
    let mut w = Vec::new();
    let mut g = Vec::new();
    let mut acc = 0.0;
    let mut qv = [0.0; 8];
    for (lo, hi) in wvn_pieces(tau0, k, k + 1.0) {
        let m = wvn_subcells(alpha, tau0, lo, hi);
        let h = (hi - lo) / m as f64;
        for c in 0..m {
            let mid = lo + (c as f64 + 0.5) * h;
            for (j, &x) in rule.nodes.iter().enumerate() {
                qv[j] = wvn_q(alpha, beta, tau0, mid + 0.5 * h * x);
            }
            for i in 0..8 {
                let part: f64 = rule.cumulative[i].iter().zip(&qv).map(|(s, q)| s * q).sum();
                g.push(acc + 0.5 * h * part);
                w.push(0.5 * h * rule.weights[i]);
            }
            acc += 0.5 * h * rule.weights.iter().zip(&qv).map(|(w, q)| w * q).sum::<f64>();
        }
    }
    Resolved { w, g, dg: acc }
}

/// Amplitude of `2g − mean` for `α > 1`: with `y = τ^α`, `γ = (α + β − 1)/α`,
/// `∫ sin(y) y^{−γ} dy = −c₁ cos y − c₂ sin y` by repeated integration by parts.
fn wvn_amplitude(alpha: f64, beta: f64, tau: f64) -> f64 {
    let y = tau.powf(alpha);
    let gamma = (alpha + beta - 1.0) / alpha;
    let (mut c1, mut c2) = (0.0f64, 0.0f64);
    let mut rising = 1.0f64;
    let mut pow = 1.0f64;
    let mut last = f64::INFINITY;
    for m in 0..12 {
        let t = rising * pow;
        if t.abs() > last {
            break;
        }
        last = t.abs();
        let sign = if (m / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if m % 2 == 0 {
            c1 += sign * t;
        } else {
            c2 += sign * t;
        }
        rising *= gamma + m as f64;
        pow /= y;
        if last < 1e-17 {
            break;
        }
    }
    2.0 / alpha * y.powf(-gamma) * c1.hypot(c2)
}

fn wvn_averaged(alpha: f64, beta: f64, k: f64) -> Averaged {
    let rule = gauss8();
    let w = rule.weights.iter().map(|w| 0.5 * w).collect();
    let r = rule.nodes.iter().map(|x| wvn_amplitude(alpha, beta, k + 0.5 + 0.5 * x)).collect();
    Averaged { w, r }
}

fn unit_phase(alpha: f64, k: f64) -> f64 {
    ((k + 1.0).powf(alpha) - k.powf(alpha)).abs()
}

fn resolved_window(first: &Resolved, second: &Resolved) -> WindowStats {
    let g_rel = |i: usize| if i < first.g.len() { first.g[i] } else { first.dg + second.g[i - first.g.len()] };
    let w: Vec<f64> = first.w.iter().chain(&second.w).copied().collect();
    let mean: f64 = w.iter().enumerate().map(|(i, w)| w * g_rel(i)).sum::<f64>() / 2.0;
    let mut s = Sums::default();
    let mut sup = 0.0f64;
    for (i, &wt) in w.iter().enumerate() {
        let g = g_rel(i);
        let f = 2.0 * (g - mean);
        s.a += wt * expm1_minus_x(f);
        s.b += wt * expm1_minus_x(-f);
        s.f2 += wt * f * f;
        sup = sup.max(2.0 * g.abs());
    }
    s.stats(sup, false)
}

fn averaged_window(first: &Averaged, second: &Averaged) -> WindowStats {
    let mut a = 0.0;
    let mut f2 = 0.0;
    let mut rmax = 0.0f64;
    for part in [first, second] {
        for (w, r) in part.w.iter().zip(&part.r) {
            a += w * i0m1(*r);
            f2 += w * 0.5 * r * r;
            rmax = rmax.max(*r);
        }
    }
    WindowStats { product: 4.0 * a + a * a, dispersion: f2, sup_g: 2.0 * rmax, homogenized: true }
}

/// Window statistics for `n = 0, 1, …, n_terms − 1`, stopping after a blow-up.
pub fn scalar_windows(q: &ScalarPotential, n_terms: usize) -> Vec<WindowStats> {
    let mut out = Vec::with_capacity(n_terms);
    match q.kind {
        Kind::Pc { .. } => {
            for n in 0..n_terms {
                let s = pc_window(q, n as f64);
                let stop = !(s.product.is_finite() && s.product <= BLOWUP);
                out.push(s);
                if stop {
                    break;
                }
            }
        }
        Kind::Wvn { alpha, beta, tau0 } => {
            let averaged = |k: usize| alpha > 1.0 && unit_phase(alpha, k as f64) > HOMOGENIZE_PHASE && k as f64 >= tau0;
            let mut prev: Option<Resolved> = None;
            let mut prev_avg: Option<Averaged> = None;
            for n in 0..n_terms {
                let s = if averaged(n) {
                    let first = prev_avg.take().unwrap_or_else(|| wvn_averaged(alpha, beta, n as f64));
                    let second = wvn_averaged(alpha, beta, n as f64 + 1.0);
                    let s = averaged_window(&first, &second);
                    prev_avg = Some(second);
                    s
                } else {
                    let first = prev.take().unwrap_or_else(|| wvn_resolved(alpha, beta, tau0, n as f64));
                    let second = wvn_resolved(alpha, beta, tau0, n as f64 + 1.0);
                    let s = resolved_window(&first, &second);
                    prev = Some(second);
                    s
                };
                let stop = !(s.product.is_finite() && s.product <= BLOWUP);
                out.push(s);
                if stop {
                    break;
                }
            }
        }
    }
    out
}

fn window_notes(q: &ScalarPotential, stats: &[WindowStats], n_terms: usize) -> Vec<String> {
    let mut notes = Vec::new();
    if stats.len() < n_terms {
        notes.push(format!("stopped after {} windows: term above {BLOWUP:.0e}", stats.len()));
    }
    if let Some(k) = stats.iter().position(|s| s.homogenized) {
        notes.push(format!("windows n ≥ {k} averaged over the oscillation (phase per unit > {HOMOGENIZE_PHASE:.0})"));
    }
    if let Some((alpha, _, _)) = q.as_wvn() {
        if alpha > 3.0 {
            let msg = format!(
                "α = {alpha} > 3: oscillation period below unit sub-cell resolution near the switch to averaging"
            );
            log::warn!("{msg}");
            notes.push(msg);
        }
    }
    notes
}

fn window_partition(len: usize) -> Vec<f64> {
    (0..len + 2).map(|n| n as f64).collect()
}

/// `∫ₙ^{n+2} h ∫ₙ^{n+2} h⁻¹ − 4`, `h = e^{2∫q}`, for `n < n_terms`.
pub fn dirac_special_criterion(q: &ScalarPotential, form: Form, n_terms: usize) -> Result<SzegoReport> {
    if form == Form::General {
        return invalid("the scalar criterion needs a diagonal or antidiagonal form");
    }
    let stats = scalar_windows(q, n_terms);
    let notes = window_notes(q, &stats, n_terms);
    let terms: Vec<f64> = stats.iter().map(|s| s.product).collect();
    Ok(SzegoReport::from_terms(terms, window_partition(stats.len()), notes))
}

/// `det ∫ₙ^{n+2} N₀ᵀN₀ − 4` for every window inside `[0, τ_max]`, from the relative
/// transfer matrix restarted at each `n`.
pub fn dirac_szego_sum(q: &DiracPotential) -> Result<SzegoReport> {
    let n_terms = (q.tau_max.floor() as usize).saturating_sub(1);
    let mut terms = Vec::with_capacity(n_terms);
    let mut notes = vec![format!("windows [n, n+2] ⊂ [0, {}]", q.tau_max)];
    let piecewise = q.q1.is_piecewise() && q.q2.is_piecewise();
    for n in 0..n_terms {
        let (a, b) = (n as f64, n as f64 + 2.0);
        let t = if piecewise {
            pc_matrix_window(q, a, b)
        } else if let Some(s) = q.scalar_part() {
            let (alpha, _, _) = s.as_wvn().expect("non-piecewise scalar is WvN");
            if alpha > 1.0 && unit_phase(alpha, a) > HOMOGENIZE_PHASE {
                if !notes.iter().any(|m| m.contains("averaged")) {
                    notes.push(format!("windows n ≥ {n} averaged over the oscillation"));
                }
                scalar_windows_at(s, n).product
            } else {
                wvn_matrix_window(q.form, s, a)
            }
        } else {
            rk4_matrix_window(q, a, b)
        };
        let stop = !(t.is_finite() && t <= BLOWUP);
        terms.push(t);
        if stop {
            notes.push(format!("stopped at window {n}: term above {BLOWUP:.0e}"));
            break;
        }
    }
    let len = terms.len();
    Ok(SzegoReport::from_terms(terms, window_partition(len), notes))
}

fn scalar_windows_at(q: &ScalarPotential, n: usize) -> WindowStats {
    let Some((alpha, beta, _)) = q.as_wvn() else { return pc_window(q, n as f64) };
    averaged_window(&wvn_averaged(alpha, beta, n as f64), &wvn_averaged(alpha, beta, n as f64 + 1.0))
}

fn pc_matrix_window(q: &DiracPotential, a: f64, b: f64) -> f64 {
    let pts = merged_breaks(q, a, b);
    let mut r = I2;
    let mut m = Sym2::default();
    for w in pts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let (q1, q2) = (q.q1.value(mid), q.q2.value(mid));
        let cell = Cell::Dirac { q1, q2, n0: r };
        m = m.add(&cell.integral(0.0, w[1] - w[0]));
        r = mul(&expm_real_traceless(&[[-q2, q1], [q1, q2]], w[1] - w[0]), &r);
    }
    m.det() - 4.0
}

fn gram(n: &M2) -> M2 {
    mul(&transpose(n), n)
}

fn wvn_matrix_window(form: Form, s: &ScalarPotential, a: f64) -> f64 {
    let (alpha, beta, tau0) = s.as_wvn().unwrap();
    let first = wvn_resolved(alpha, beta, tau0, a);
    let second = wvn_resolved(alpha, beta, tau0, a + 1.0);
    let mut m = [[0.0; 2]; 2];
    let nodes = first
        .w
        .iter()
        .zip(&first.g)
        .map(|(w, g)| (*w, *g))
        .chain(second.w.iter().zip(&second.g).map(|(w, g)| (*w, first.dg + g)));
    for (w, g) in nodes {
        let h = gram(&n0_closed(form, g));
        for r in 0..2 {
            for c in 0..2 {
                m[r][c] += w * h[r][c];
            }
        }
    }
    det(&m) - 4.0
}

fn rk4_matrix_window(q: &DiracPotential, a: f64, b: f64) -> f64 {
    // Simpson on a fine uniform grid of the relative solution
    let steps = 2000usize;
    let h = (b - a) / steps as f64;
    let mut n = I2;
    let mut m = [[0.0; 2]; 2];
    for i in 0..=steps {
        let t = a + i as f64 * h;
        if i > 0 {
            n = rk4_advance(q, n, t - h, t, h);
        }
        let wt = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let g = gram(&n);
        for r in 0..2 {
            for c in 0..2 {
                m[r][c] += wt * h / 3.0 * g[r][c];
            }
        }
    }
    det(&m) - 4.0
}

/// Dispersion form of the criterion.
#[derive(Clone, Debug, Serialize)]
pub struct DispersionReport {
    pub report: SzegoReport,
    /// `max sup |gₙ|` over the last half of the windows.
    pub tail_sup_g: f64,
    /// Whether `sup |gₙ|` is small enough (`< 0.2`) on the tail for the criterion to apply.
    pub applicable: bool,
}

pub const DISPERSION_SUP: f64 = 0.2;

/// Terms `∫ₙ^{n+2} g̃ₙ²`.
pub fn dispersion_criterion(q: &ScalarPotential, n_terms: usize) -> DispersionReport {
    let stats = scalar_windows(q, n_terms);
    let mut notes = window_notes(q, &stats, n_terms);
    let half = stats.len() / 2;
    let tail_sup_g = stats[half..].iter().map(|s| s.sup_g).fold(0.0, f64::max);
    let applicable = stats.len() == n_terms && tail_sup_g < DISPERSION_SUP;
    let terms: Vec<f64> = stats.iter().map(|s| s.dispersion).collect();
    let mut report = SzegoReport::from_terms(terms, window_partition(stats.len()), vec![]);
    if !applicable {
        notes.push(format!("sup |gₙ| = {tail_sup_g:.3} on the tail: not small, criterion not applicable"));
        report = report.forced(Verdict::Inconclusive, format!("not applicable: sup |gₙ| = {tail_sup_g:.3e}"));
    }
    report.notes = notes;
    DispersionReport { report, tail_sup_g, applicable }
}

// ---------------------------------------------------------------------------
// Wigner–von Neumann region

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    A1,
    A2,
    A3,
    Outside,
    Boundary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionVerdict {
    pub region: Region,
    /// `None` on the boundary.
    pub in_szego_class: Option<bool>,
}

impl RegionVerdict {
    pub fn verdict(&self) -> Verdict {
        match self.in_szego_class {
            Some(true) => Verdict::Szego,
            Some(false) => Verdict::NotSzego,
            None => Verdict::Inconclusive,
        }
    }
}

/// Lower edge `β = φ(α)` of the Szegő region.
fn region_edge(alpha: f64) -> f64 {
    if alpha <= 0.0 {
        0.5 + alpha
    } else if alpha < 1.0 {
        0.5
    } else {
        1.5 - alpha
    }
}

/// Exact membership of `(α, β)` in `A₁ ∪ A₂ ∪ A₃`; points on the edge are `Boundary`.
pub fn wvn_region(alpha: f64, beta: f64) -> RegionVerdict {
    let edge = region_edge(alpha);
    if (beta - edge).abs() <= 1e-12 {
        return RegionVerdict { region: Region::Boundary, in_szego_class: None };
    }
    if beta < edge {
        return RegionVerdict { region: Region::Outside, in_szego_class: Some(false) };
    }
    let region = if alpha <= 0.0 {
        Region::A1
    } else if alpha < 1.0 {
        Region::A2
    } else {
        Region::A3
    };
    RegionVerdict { region, in_szego_class: Some(true) }
}

/// Euclidean distance from `(α, β)` to the edge and to the lines `α = 0`, `α = 1`.
pub fn wvn_margin(alpha: f64, beta: f64) -> f64 {
    let seg = |p: (f64, f64), q: (f64, f64)| -> f64 {
        let (dx, dy) = (q.0 - p.0, q.1 - p.1);
        let t = (((alpha - p.0) * dx + (beta - p.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
        (alpha - p.0 - t * dx).hypot(beta - p.1 - t * dy)
    };
    let far = 1e6;
    [
        seg((-far, 0.5 - far), (0.0, 0.5)),
        seg((0.0, 0.5), (1.0, 0.5)),
        seg((1.0, 0.5), (far, 1.5 - far)),
        alpha.abs(),
        (alpha - 1.0).abs(),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

/// Scalar criterion for `q = sin(τ^α)/τ^β` (`τ₀ = 1`) with `n_max` windows,
/// annotated with the exact region.
pub fn wvn_numeric_check(alpha: f64, beta: f64, n_max: usize) -> Result<SzegoReport> {
    let q = ScalarPotential::wvn(alpha, beta, 1.0)?;
    let mut r = dirac_special_criterion(&q, Form::Diagonal, n_max)?;
    let region = wvn_region(alpha, beta);
    let agree = region.verdict() == r.verdict;
    r.notes.push(format!(
        "region {:?} ({}); numeric verdict {} {}",
        region.region,
        region.verdict(),
        r.verdict,
        if agree { "agrees" } else { "differs" }
    ));
    Ok(r)
}

/// `wvn_numeric_check` over a grid of `(α, β)` in parallel.
pub fn wvn_sweep(points: &[(f64, f64)], n_max: usize) -> Vec<Result<SzegoReport>> {
    points.par_iter().map(|&(a, b)| wvn_numeric_check(a, b, n_max)).collect()
}

// ---------------------------------------------------------------------------
// Korey estimate

#[derive(Clone, Copy, Debug, Serialize)]
pub struct KoreyResult {
    /// `⟨eᶠ⟩⟨e⁻ᶠ⟩ − 1`.
    pub eps: f64,
    /// `⟨|f − ⟨f⟩|⟩`.
    pub lhs: f64,
    /// `lhs/√ε`, `None` when `ε = 0` or `ε > 1`.
    pub ratio: Option<f64>,
    /// `ε ∈ [0, 1]`.
    pub in_range: bool,
}

/// Averages by the trapezoid rule over equally spaced samples of `f` on an interval.
pub fn korey_check(samples: &[f64]) -> Result<KoreyResult> {
    if samples.len() < 2 || samples.iter().any(|f| !f.is_finite()) {
        return invalid("need at least two finite samples");
    }
    let n = samples.len() - 1;
    let wt = |i: usize| if i == 0 || i == n { 0.5 / n as f64 } else { 1.0 / n as f64 };
    let mean: f64 = samples.iter().enumerate().map(|(i, f)| wt(i) * f).sum();
    let (mut a, mut b, mut lhs) = (0.0, 0.0, 0.0);
    for (i, f) in samples.iter().enumerate() {
        let d = f - mean;
        a += wt(i) * expm1_minus_x(d);
        b += wt(i) * expm1_minus_x(-d);
        lhs += wt(i) * d.abs();
    }
    let eps = a + b + a * b;
    let in_range = eps <= 1.0;
    let ratio = (in_range && eps > 0.0).then(|| lhs / eps.sqrt());
    Ok(KoreyResult { eps, lhs, ratio, in_range })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pc(breaks: &[f64], values: &[f64]) -> ScalarPotential {
        ScalarPotential::piecewise(breaks.to_vec(), values.to_vec()).unwrap()
    }

    #[test]
    fn zero_potential_has_identity_transfer() {
        let q = DiracPotential::scalar(Form::Diagonal, ScalarPotential::zero(), 5.0).unwrap();
        for n in transfer_n0(&q, &[0.0, 2.5, 5.0]).unwrap() {
            assert_eq!(n, I2);
        }
        let r = dirac_szego_sum(&q).unwrap();
        assert!(r.terms.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn closed_forms_for_unit_potential() {
        let q = pc(&[0.0, 1.0], &[1.0, 0.0]);
        let anti = DiracPotential::scalar(Form::Antidiagonal, q.clone(), 3.0).unwrap();
        let n = transfer_n0(&anti, &[1.0]).unwrap()[0];
        assert_relative_eq!(n[0][0], (-1f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(n[1][1], 1f64.exp(), max_relative = 1e-15);
        let diag = DiracPotential::scalar(Form::Diagonal, q, 3.0).unwrap();
        let n = transfer_n0(&diag, &[1.0]).unwrap()[0];
        assert_relative_eq!(n[0][0], 1f64.cosh(), max_relative = 1e-15);
        assert_relative_eq!(n[0][1], 1f64.sinh(), max_relative = 1e-15);
    }

    #[test]
    fn rk4_agrees_with_closed_forms() {
        let q = pc(&[0.0, 0.7, 1.9], &[0.4, -1.1, 0.3]);
        for form in [Form::Diagonal, Form::Antidiagonal] {
            let scalar = DiracPotential::scalar(form, q.clone(), 4.0).unwrap();
            let closed = transfer_n0(&scalar, &[1.0, 4.0]).unwrap();
            let rk = transfer_n0_rk4(&scalar, &[1.0, 4.0], 1e-3).unwrap();
            for (c, r) in closed.iter().zip(&rk) {
                for i in 0..2 {
                    for j in 0..2 {
                        assert!((c[i][j] - r[i][j]).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn general_rk4_keeps_unit_determinant() {
        let q = DiracPotential::general(
            ScalarPotential::constant(0.1).unwrap(),
            ScalarPotential::constant(0.1).unwrap(),
            10.0,
        )
        .unwrap();
        let n = transfer_n0(&q, &[10.0]).unwrap()[0];
        assert!((det(&n) - 1.0).abs() < 1e-9);
        let coarse = transfer_n0_rk4(&q, &[10.0], 2e-3).unwrap()[0];
        assert!((coarse[0][0] - n[0][0]).abs() < 1e-10);
        // exact: exp(JQ·10) with κ = 0.1√2
        let exact = expm_real_traceless(&[[-0.1, 0.1], [0.1, 0.1]], 10.0);
        assert!((exact[0][1] - n[0][1]).abs() < 1e-12);
    }

    #[test]
    fn constant_potential_terms() {
        // (∫₀² e^{2cτ})(∫₀² e^{−2cτ}) − 4 = sinh²(2c)/c² − 4
        let c = 0.3;
        let q = ScalarPotential::constant(c).unwrap();
        let r = dirac_special_criterion(&q, Form::Diagonal, 600).unwrap();
        let exact = (2.0 * c).sinh().powi(2) / (c * c) - 4.0;
        for t in &r.terms {
            assert_relative_eq!(*t, exact, max_relative = 1e-13);
        }
        assert_eq!(r.verdict, Verdict::NotSzego);
    }

    #[test]
    fn matrix_and_scalar_routes_agree() {
        let q = pc(&[0.0, 0.5, 1.0, 2.2, 3.0], &[0.3, -0.8, 1.2, 0.05, 0.0]);
        let scalar = dirac_special_criterion(&q, Form::Diagonal, 8).unwrap();
        for form in [Form::Diagonal, Form::Antidiagonal] {
            let m = dirac_szego_sum(&DiracPotential::scalar(form, q.clone(), 10.0).unwrap()).unwrap();
            assert_eq!(m.terms.len(), 9);
            for (a, b) in m.terms.iter().zip(&scalar.terms) {
                assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-4), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn square_integrable_potential_is_szego() {
        let q = ScalarPotential::sampled(|t| 1.0 / (1.0 + t), 10_050.0, 0.05).unwrap();
        let r = dirac_special_criterion(&q, Form::Diagonal, 10_000).unwrap();
        assert_eq!(r.verdict, Verdict::Szego, "{}", r.reason);
        let d = dispersion_criterion(&q, 10_000);
        assert!(d.applicable);
        assert_eq!(d.report.verdict, Verdict::Szego);
    }

    #[test]
    fn regions() {
        assert_eq!(wvn_region(-1.0, 0.0).region, Region::A1);
        assert_eq!(wvn_region(0.5, 1.0).region, Region::A2);
        assert_eq!(wvn_region(1.0, 0.5).region, Region::Boundary);
        assert_eq!(wvn_region(2.0, -0.4).region, Region::A3);
        assert_eq!(wvn_region(0.0, 1.0).region, Region::A1);
        assert_eq!(wvn_region(0.5, 0.4), RegionVerdict { region: Region::Outside, in_szego_class: Some(false) });
        assert!((wvn_margin(0.5, 0.7) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn wvn_resolved_matches_plain_quadrature() {
        let (a, b) = (1.7, 0.6);
        let r = wvn_resolved(a, b, 1.0, 7.0);
        let q = ScalarPotential::wvn(a, b, 1.0).unwrap();
        assert_relative_eq!(r.dg, q.integral(7.0, 8.0), max_relative = 1e-12);
        let plain = crate::num::integrate(|t| wvn_q(a, b, 1.0, t), 7.0, 8.0, 400);
        assert_relative_eq!(r.dg, plain, max_relative = 1e-10);
    }

    #[test]
    fn averaged_windows_match_resolved_ones() {
        // near the switch both treatments are available
        let (a, b) = (2.0, 0.2);
        let n = 110.0;
        let res = resolved_window(&wvn_resolved(a, b, 1.0, n), &wvn_resolved(a, b, 1.0, n + 1.0));
        let avg = averaged_window(&wvn_averaged(a, b, n), &wvn_averaged(a, b, n + 1.0));
        assert_relative_eq!(res.product, avg.product, max_relative = 0.02);
        assert_relative_eq!(res.dispersion, avg.dispersion, max_relative = 0.02);
    }

    #[test]
    fn wvn_examples() {
        for (a, b, want) in [(0.0, 1.0, Verdict::Szego), (1.0, 0.4, Verdict::NotSzego), (0.3, 0.7, Verdict::Szego)] {
            let r = wvn_numeric_check(a, b, 20_000).unwrap();
            assert_eq!(r.verdict, want, "({a}, {b}): {}", r.reason);
        }
    }

    #[test]
    fn dispersion_flags_outside_point() {
        let q = ScalarPotential::wvn(0.5, 0.4, 1.0).unwrap();
        let d = dispersion_criterion(&q, 20_000);
        assert_ne!(d.report.verdict, Verdict::Szego);
    }

    #[test]
    fn korey_examples() {
        let k = korey_check(&[0.7; 11]).unwrap();
        assert_eq!(k.eps, 0.0);
        assert_eq!(k.lhs, 0.0);
        for f in [|x: f64| 0.1 * (2.0 * PI * x).sin(), |x: f64| 0.05 * x] {
            let s: Vec<f64> = (0..=2000).map(|i| f(i as f64 / 2000.0)).collect();
            let k = korey_check(&s).unwrap();
            assert!(k.in_range && k.ratio.unwrap() <= 4.0);
        }
    }

    #[test]
    fn hamiltonian_reduction_has_unit_determinant() {
        let q = DiracPotential::scalar(Form::Diagonal, pc(&[0.0, 1.0], &[0.3, 0.0]), 6.0).unwrap();
        let h = dirac_hamiltonian(&q).unwrap();
        for t in [0.2, 0.9, 3.0] {
            assert!((h.value_at(t).det() - 1.0).abs() < 1e-12);
        }
        assert!((h.eikonal(5.0).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn json_forms() {
        let raw = r#"{"form":"diagonal","q":{"kind":"wvn","alpha":0.5,"beta":1.0},"tau_max":100}"#;
        let p = DiracPotential::from_json(raw).unwrap();
        assert_eq!(p.scalar_part().unwrap().as_wvn(), Some((0.5, 1.0, 1.0)));
        let back = DiracPotential::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p, back);
        let bad = r#"{"form":"diagonal","q":{"kind":"wvn","alpha":0.5,"beta":1.0,"tau0":0},"tau_max":100}"#;
        assert!(DiracPotential::from_json(bad).is_err());
        let pcq = r#"{"form":"general","q1":{"kind":"pc","breaks":[0,1],"values":[0.1,0]},"tau_max":3}"#;
        assert_eq!(DiracPotential::from_json(pcq).unwrap().form(), Form::General);
    }
}
