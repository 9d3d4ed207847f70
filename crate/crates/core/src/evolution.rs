//! Wave dynamics on strings: a lumped bead lattice advanced by leapfrog, a
//! spectral-synthesis solution used as its oracle, front and near-front diagnostics,
//! the traveling-wave profile `G`, the modified free dynamics, the free Dirac group and
//! Cesàro averages of the local energy.

use crate::error::{invalid, KwError, Result};
use crate::measures::{SpectralMeasure, StringSzegoFunction, Support};
use crate::num::integrate;
use crate::report::Verdict;
use crate::string::{
    default_eta_grid, generalized_fourier_fn, phi_at_points, spectral_density_boundary, string_szego_criterion,
    MassDistribution,
};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const CFL_SAFETY: f64 = 0.9;
/// Tail fraction of `‖u‖²` left beyond the detected front.
pub const FRONT_TAIL: f64 = 1e-4;
pub const CESARO_SAMPLES: usize = 256;

/// Initial displacement `A(1 − r²)³`, `r = (ξ − c)/w`, on `|r| < 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: f64,
    pub width: f64,
    #[serde(default = "unit")]
    pub amplitude: f64,
}

fn unit() -> f64 {
    1.0
}

impl Bump {
    pub fn new(center: f64, width: f64) -> Result<Self> {
        let b = Bump { center, width, amplitude: 1.0 };
        b.validate()?;
        Ok(b)
    }

    pub fn zero() -> Self {
        Bump { center: 1.0, width: 0.5, amplitude: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) || !self.center.is_finite() || !self.amplitude.is_finite() {
            return invalid("bump needs finite center and amplitude and positive width");
        }
        if self.center + self.width <= 0.0 {
            return invalid("bump support misses the half-line");
        }
        Ok(())
    }

    pub fn eval(&self, xi: f64) -> f64 {
        let r = (xi - self.center) / self.width;
        if r.abs() >= 1.0 {
            0.0
        } else {
            self.amplitude * (1.0 - r * r).powi(3)
        }
    }

    /// `𝔰[u₀]`, the right end of the support.
    pub fn front(&self) -> f64 {
        if self.amplitude == 0.0 {
            0.0
        } else {
            self.center + self.width
        }
    }

    fn kinks(&self) -> [f64; 2] {
        [self.center - self.width, self.center + self.width]
    }

    /// d'Alembert solution of the homogeneous unit-density string, `u₀` extended evenly.
    pub fn dalembert(&self, xi: f64, t: f64) -> f64 {
        0.5 * (self.eval((xi + t).abs()) + self.eval((xi - t).abs()))
    }
}

/// `‖f‖²` in `L²(m)` for `f` vanishing past `end`.
fn mass_norm_sq(m: &MassDistribution, f: impl Fn(f64) -> f64, end: f64, kinks: &[f64]) -> f64 {
    let mut pts: Vec<f64> = m.breaks().iter().chain(kinks).cloned().filter(|&x| x > 0.0 && x < end).collect();
    pts.push(0.0);
    pts.push(end);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let ac: f64 = pts
        .windows(2)
        .map(|w| {
            let rho = m.rho_at(0.5 * (w[0] + w[1]));
            if rho == 0.0 {
                0.0
            } else {
                rho * integrate(|x| f(x).powi(2), w[0], w[1], 8)
            }
        })
        .sum();
    ac + m.atoms().iter().filter(|a| a.xi <= end).map(|a| a.m * f(a.xi).powi(2)).sum::<f64>()
}

/// Bead-spring chain: nodes on a uniform grid with lumped masses, massless nodes
/// condensed away, springs `1/Δξ` between the remaining neighbours and free ends.
#[derive(Clone, Debug)]
pub struct LatticeString {
    h: f64,
    end: f64,
    xi: Vec<f64>,
    mass: Vec<f64>,
    spring: Vec<f64>,
    ac: Vec<bool>,
    cells: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// Lumps `M` on `[0, xi_max]` onto the nodes `ih`; each atom goes wholly to its nearest node.
pub fn discretize(m: &MassDistribution, h: f64, xi_max: f64) -> Result<LatticeString> {
    if !(h > 0.0) || !h.is_finite() {
        return invalid("h must be positive");
    }
    if !(xi_max >= h) || xi_max > m.xi_max() * (1.0 + 1e-12) {
        return invalid(format!("lattice end {xi_max} must lie in [h, {}]", m.xi_max()));
    }
    let xi_max = xi_max.min(m.xi_max());
    let n = (xi_max / h + 1e-9).floor() as usize;
    let mut warnings = Vec::new();
    let mut mass = Vec::with_capacity(n + 1);
    let mut cells = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let x = i as f64 * h;
        let lo = (x - 0.5 * h).max(0.0);
        let hi = if i == n { xi_max } else { x + 0.5 * h };
        mass.push(m.ac_mass(hi) - m.ac_mass(lo));
        cells.push((lo, hi));
    }
    let mut ac: Vec<bool> = mass.iter().map(|&w| w > 0.0).collect();
    let atoms: Vec<_> = m.atoms().iter().filter(|a| a.xi <= xi_max).collect();
    for w in atoms.windows(2) {
        if w[1].xi - w[0].xi < h {
            warnings.push(format!("atoms at {} and {} are closer than h = {h}", w[0].xi, w[1].xi));
        }
    }
    for a in atoms {
        let i = ((a.xi / h).round() as usize).min(n);
        mass[i] += a.m;
        ac[i] = false;
    }
    let keep: Vec<usize> = (0..=n).filter(|&i| mass[i] > 0.0).collect();
    if keep.is_empty() {
        return invalid("lattice carries no mass");
    }
    let xi: Vec<f64> = keep.iter().map(|&i| i as f64 * h).collect();
    let spring = xi.windows(2).map(|w| 1.0 / (w[1] - w[0])).collect();
    Ok(LatticeString {
        h,
        end: xi_max,
        spring,
        mass: keep.iter().map(|&i| mass[i]).collect(),
        ac: keep.iter().map(|&i| ac[i]).collect(),
        cells: keep.iter().map(|&i| cells[i]).collect(),
        xi,
        warnings,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaveState {
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl LatticeString {
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn springs(&self) -> &[f64] {
        &self.spring
    }

    /// Nodes whose cell has positive density and no atom.
    pub fn ac(&self) -> &[bool] {
        &self.ac
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Displacement `u₀` at the nodes, zero velocity.
    pub fn initial_state(&self, u0: impl Fn(f64) -> f64) -> WaveState {
        WaveState { t: 0.0, u: self.xi.iter().map(|&x| u0(x)).collect(), v: vec![0.0; self.len()] }
    }

    /// `min √(2mᵢ/(k_left + k_right))`, the Gershgorin bound on `2/ω_max`.
    pub fn stable_dt(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let kl = if i > 0 { self.spring[i - 1] } else { 0.0 };
                let kr = self.spring.get(i).copied().unwrap_or(0.0);
                (2.0 * self.mass[i] / (kl + kr)).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_dt(&self) -> f64 {
        CFL_SAFETY * self.stable_dt()
    }

    fn accel(&self, u: &[f64], a: &mut [f64]) {
        let n = u.len();
        for i in 0..n {
            let mut f = 0.0;
            if i > 0 {
                f -= self.spring[i - 1] * (u[i] - u[i - 1]);
            }
            if i + 1 < n {
                f += self.spring[i] * (u[i + 1] - u[i]);
            }
            a[i] = f / self.mass[i];
        }
    }

    /// `½Σmv² + ½Σk(Δu)²`.
    pub fn energy(&self, s: &WaveState) -> f64 {
        let kin: f64 = self.mass.iter().zip(&s.v).map(|(m, v)| m * v * v).sum();
        let pot: f64 = self.spring.iter().zip(s.u.windows(2)).map(|(k, w)| k * (w[1] - w[0]).powi(2)).sum();
        0.5 * (kin + pot)
    }

    /// `Σ mᵢuᵢ²`.
    pub fn norm_sq(&self, s: &WaveState) -> f64 {
        self.mass.iter().zip(&s.u).map(|(m, u)| m * u * u).sum()
    }

    /// `∫_{[a, b]} u² dm`, each node's mass spread evenly over its cell.
    pub fn mass_in(&self, s: &WaveState, a: f64, b: f64) -> f64 {
        self.cells
            .iter()
            .zip(self.mass.iter().zip(&s.u))
            .map(|(&(lo, hi), (m, u))| {
                let overlap = (hi.min(b) - lo.max(a)).max(0.0);
                let frac = if hi > lo {
                    overlap / (hi - lo)
                } else if (a..=b).contains(&lo) {
                    1.0
                } else {
                    0.0
                };
                frac * m * u * u
            })
            .sum()
    }

    /// Smallest `ξ` with `∫_ξ^∞ u² dm ≤ frac·‖u‖²`; `None` for `u = 0`.
    pub fn front(&self, s: &WaveState, frac: f64) -> Option<f64> {
        let total = self.norm_sq(s);
        if !(total > 0.0) {
            return None;
        }
        let thr = frac * total;
        let mut tail = 0.0;
        for j in (0..self.len()).rev() {
            let cm = self.mass[j] * s.u[j] * s.u[j];
            if tail + cm > thr {
                let (lo, hi) = self.cells[j];
                return Some(hi - (thr - tail) / cm * (hi - lo));
            }
            tail += cm;
        }
        Some(0.0)
    }
}

/// Kick–drift–kick leapfrog; velocities stay synchronized with displacements.
pub fn step_leapfrog(lat: &LatticeString, mut state: WaveState, dt: f64, n_steps: usize) -> Result<WaveState> {
    let limit = lat.max_dt();
    if !(dt.abs() <= limit) {
        return Err(KwError::Numerical(format!("dt = {dt} exceeds the stability bound; use |dt| ≤ {limit:.6e}")));
    }
    if state.u.len() != lat.len() || state.v.len() != lat.len() {
        return invalid("state does not match the lattice");
    }
    let n = lat.len();
    let mut a = vec![0.0; n];
    lat.accel(&state.u, &mut a);
    let t0 = state.t;
    for step in 0..n_steps {
        for i in 0..n {
            state.v[i] += 0.5 * dt * a[i];
            state.u[i] += dt * state.v[i];
        }
        lat.accel(&state.u, &mut a);
        for i in 0..n {
            state.v[i] += 0.5 * dt * a[i];
        }
        state.t = t0 + (step + 1) as f64 * dt;
    }
    Ok(state)
}

/// Advances to `t` in equal steps no longer than `dt`.
pub fn advance_to(lat: &LatticeString, state: WaveState, t: f64, dt: f64) -> Result<WaveState> {
    let span = t - state.t;
    if span == 0.0 {
        return Ok(state);
    }
    let n = (span.abs() / dt.abs()).ceil().max(1.0) as usize;
    let mut s = step_leapfrog(lat, state, span / n as f64, n)?;
    s.t = t;
    Ok(s)
}

/// `∫ u² dm` over `[L_{T(f₀)+t−ℓ}, L_{T(f₀)+t}]`.
pub fn near_front_mass(
    m: &MassDistribution,
    lat: &LatticeString,
    state: &WaveState,
    front0: f64,
    ell: f64,
) -> Result<f64> {
    if !(ell > 0.0) {
        return invalid("window length must be positive");
    }
    let eta = m.eikonal(front0)? + state.t;
    if eta - ell < 0.0 {
        return invalid(format!("window start η = {} is negative", eta - ell));
    }
    let (Some(a), Some(b)) = (m.eikonal_inverse(eta - ell), m.eikonal_inverse(eta)) else {
        return Err(KwError::Domain(format!("window at η = {eta} lies beyond the truncation")));
    };
    if b > lat.end() {
        return Err(KwError::Domain(format!("window end {b} lies beyond the lattice end {}", lat.end())));
    }
    Ok(lat.mass_in(state, a, b))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub h: f64,
    /// Defaults to the safety-scaled stability bound.
    pub dt: Option<f64>,
    pub t_end: f64,
    /// Number of diagnostic intervals on `[0, t_end]`.
    pub samples: usize,
    /// Near-front window length `ℓ`.
    pub ell: f64,
    /// Lattice end; defaults to the wavefront at `t_end` plus a margin.
    pub xi_max: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { h: 0.01, dt: None, t_end: 20.0, samples: 20, ell: 2.0, xi_max: None }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub t: f64,
    pub front_predicted: Option<f64>,
    pub front_detected: Option<f64>,
    pub near_front_mass: Option<f64>,
    pub energy: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub t: f64,
    pub xi: f64,
    pub u: f64,
    pub v: f64,
    pub cumulative_mass: f64,
}

pub fn snapshot_rows(lat: &LatticeString, s: &WaveState) -> Vec<SnapshotRow> {
    let mut acc = 0.0;
    (0..lat.len())
        .map(|i| {
            acc += lat.mass[i];
            SnapshotRow { t: s.t, xi: lat.xi[i], u: s.u[i], v: s.v[i], cumulative_mass: acc }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SimulationRun {
    pub lattice: LatticeString,
    pub dt: f64,
    pub diagnostics: Vec<DiagnosticRow>,
    pub snapshots: Vec<WaveState>,
    pub warnings: Vec<String>,
}

impl SimulationRun {
    pub fn final_state(&self) -> &WaveState {
        self.snapshots.last().unwrap()
    }

    pub fn initial_energy(&self) -> f64 {
        self.diagnostics[0].energy
    }

    /// `max |E(t) − E(0)| / E(0)` over the samples.
    pub fn energy_drift(&self) -> f64 {
        let e0 = self.initial_energy();
        self.diagnostics.iter().map(|d| (d.energy - e0).abs() / e0).fold(0.0, f64::max)
    }
}

fn lattice_end(m: &MassDistribution, eta: f64, margin: f64) -> (f64, Option<String>) {
    match m.eikonal_inverse(eta) {
        Some(x) => ((x + margin).min(m.xi_max()), None),
        None => (m.xi_max(), Some(format!("wavefront at η = {eta} lies beyond the truncation ξ_max = {}", m.xi_max()))),
    }
}

/// Lattice simulation from `u₀` with diagnostics at `samples + 1` equispaced times.
/// The predicted front is `L_{T(f₀)+t}` with `f₀` the detected front of the initial state;
/// the near-front window uses the exact support end of `u₀`.
pub fn simulate(m: &MassDistribution, u0: &Bump, cfg: &SimConfig) -> Result<SimulationRun> {
    u0.validate()?;
    if !(cfg.t_end >= 0.0) || cfg.samples == 0 {
        return invalid("need t_end ≥ 0 and at least one sample interval");
    }
    let front0 = u0.front().min(m.xi_max());
    let t_front0 = m.eikonal(front0)?;
    let mut warnings = Vec::new();
    let end = match cfg.xi_max {
        Some(x) => x,
        None => {
            let (x, w) = lattice_end(m, t_front0 + cfg.t_end, cfg.ell.max(1.0) + 10.0 * cfg.h);
            warnings.extend(w);
            x
        }
    };
    let lattice = discretize(m, cfg.h, end)?;
    warnings.extend(lattice.warnings.iter().cloned());
    let dt = match cfg.dt {
        Some(dt) => {
            if !(dt > 0.0) {
                return invalid("dt must be positive");
            }
            dt
        }
        None => lattice.max_dt(),
    };
    if dt > lattice.max_dt() {
        return Err(KwError::Numerical(format!(
            "dt = {dt} exceeds the stability bound; use dt ≤ {:.6e}",
            lattice.max_dt()
        )));
    }
    let mut state = lattice.initial_state(|x| u0.eval(x));
    // the detector's own reading of 𝔰[u₀] anchors the predicted front
    let t_detected0 = match lattice.front(&state, FRONT_TAIL) {
        Some(f) => m.eikonal(f)?,
        None => t_front0,
    };
    let diag = |s: &WaveState| {
        let predicted = m.eikonal_inverse(t_detected0 + s.t).filter(|&x| x <= lattice.end());
        let nfm = if u0.amplitude == 0.0 { Some(0.0) } else { near_front_mass(m, &lattice, s, front0, cfg.ell).ok() };
        DiagnosticRow {
            t: s.t,
            front_predicted: predicted,
            front_detected: lattice.front(s, FRONT_TAIL),
            near_front_mass: nfm,
            energy: lattice.energy(s),
        }
    };
    let mut diagnostics = vec![diag(&state)];
    let mut snapshots = vec![state.clone()];
    for k in 1..=cfg.samples {
        let t = cfg.t_end * k as f64 / cfg.samples as f64;
        state = advance_to(&lattice, state, t, dt)?;
        diagnostics.push(diag(&state));
        snapshots.push(state.clone());
    }
    Ok(SimulationRun { lattice, dt, diagnostics, snapshots, warnings })
}

/// Uniform grid in `k = √λ` on `[0, √λ_max]` with Simpson weights.
#[derive(Clone, Debug)]
pub struct SpectralGrid {
    pub k: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SpectralGrid {
    pub fn new(lambda_max: f64, n: usize) -> Result<Self> {
        if !(lambda_max > 0.0) || n < 3 {
            return invalid("need λ_max > 0 and at least 3 nodes");
        }
        let n = if n.is_multiple_of(2) { n + 1 } else { n };
        let dk = lambda_max.sqrt() / (n - 1) as f64;
        let k = (0..n).map(|i| i as f64 * dk).collect();
        let weights = (0..n)
            .map(|i| {
                let w = if i == 0 || i == n - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * dk / 3.0
            })
            .collect();
        Ok(SpectralGrid { k, weights })
    }

    pub fn lambda_max(&self) -> f64 {
        self.k.last().unwrap().powi(2)
    }
}

/// `g = U_M u₀` and `dσ = σ'(k²) 2k dk` on a `k`-grid, ready for synthesis.
#[derive(Clone, Debug)]
pub struct SpectralData {
    pub grid: SpectralGrid,
    /// `2k σ'(k²)`.
    pub density_k: Vec<f64>,
    pub g: Vec<f64>,
    /// `‖u₀‖²` in `L²(m)`.
    pub norm_sq: f64,
    /// `∫ g² dσ` over the grid.
    pub captured: f64,
    pub warnings: Vec<String>,
}

impl SpectralData {
    pub fn new(m: &MassDistribution, u0: &Bump, grid: SpectralGrid) -> Result<Self> {
        u0.validate()?;
        let end = u0.front().min(m.xi_max());
        let dk = grid.k[1];
        let nodes: Vec<f64> = grid.k.iter().map(|&k| if k == 0.0 { 1e-6 * dk } else { k }).collect();
        let density_k = nodes
            .par_iter()
            .map(|&k| spectral_density_boundary(m, k * k).map(|d| 2.0 * k * d))
            .collect::<Result<Vec<f64>>>()?;
        let lambda: Vec<f64> = nodes.iter().map(|k| k * k).collect();
        let g = if u0.amplitude == 0.0 {
            vec![0.0; lambda.len()]
        } else {
            generalized_fourier_fn(m, |x| u0.eval(x), end, &u0.kinks(), &lambda)
        };
        let norm_sq = mass_norm_sq(m, |x| u0.eval(x), end, &u0.kinks());
        let captured: f64 = (0..g.len()).map(|i| grid.weights[i] * density_k[i] * g[i] * g[i]).sum();
        let mut warnings = Vec::new();
        if norm_sq > 0.0 && (norm_sq - captured) > 0.01 * norm_sq {
            warnings.push(format!(
                "λ-grid up to {} holds {:.2}% of ‖g‖²; raise λ_max",
                grid.lambda_max(),
                100.0 * captured / norm_sq
            ));
        }
        Ok(SpectralData { grid, density_k, g, norm_sq, captured, warnings })
    }

    /// `u(ξ, t) = ∫ φ(ξ, λ) cos(t√λ) g(λ) dσ(λ)` at sorted `xi`.
    pub fn evolve(&self, m: &MassDistribution, t: f64, xi: &[f64]) -> Vec<f64> {
        if xi.windows(2).any(|w| w[1] < w[0]) {
            let mut idx: Vec<usize> = (0..xi.len()).collect();
            idx.sort_by(|&a, &b| xi[a].partial_cmp(&xi[b]).unwrap());
            let sorted: Vec<f64> = idx.iter().map(|&i| xi[i]).collect();
            let v = self.evolve(m, t, &sorted);
            let mut out = vec![0.0; xi.len()];
            for (j, &i) in idx.iter().enumerate() {
                out[i] = v[j];
            }
            return out;
        }
        let k = &self.grid.k;
        let idx: Vec<usize> = (0..k.len()).collect();
        // fixed chunks summed in order keep the result independent of the thread count
        let partial: Vec<Vec<f64>> = idx
            .par_chunks(64)
            .map(|chunk| {
                let mut acc = vec![0.0; xi.len()];
                for &i in chunk {
                    let c = self.grid.weights[i] * self.density_k[i] * self.g[i] * (t * k[i]).cos();
                    if c != 0.0 {
                        for (a, p) in acc.iter_mut().zip(phi_at_points(m, xi, k[i] * k[i])) {
                            *a += c * p;
                        }
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; xi.len()];
        for p in partial {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        out
    }
}

/// Spectral-synthesis solution `cos(t√S_M)u₀` at `xi`; the second value lists warnings.
pub fn evolve_spectral(
    m: &MassDistribution,
    u0: &Bump,
    t: f64,
    grid: SpectralGrid,
    xi: &[f64],
) -> Result<(Vec<f64>, Vec<String>)> {
    let data = SpectralData::new(m, u0, grid)?;
    Ok((data.evolve(m, t, xi), data.warnings))
}

/// Samples of `G_{u₀}` with the two sides of the norm identity.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TravelingWave {
    pub eta: Vec<f64>,
    pub g: Vec<f64>,
    /// `‖G‖²` over the sampled `η` range.
    pub norm_sq: f64,
    /// `2‖g‖²_{L²(σ)}` over the `λ`-grid.
    pub spectral_norm_sq: f64,
    pub notes: Vec<String>,
}

impl TravelingWave {
    /// Linear interpolation; zero outside the sampled range.
    pub fn eval(&self, eta: f64) -> f64 {
        let n = self.eta.len();
        if n == 0 || eta < self.eta[0] || eta > self.eta[n - 1] {
            return 0.0;
        }
        let j = self.eta.partition_point(|&e| e <= eta).min(n - 1).max(1);
        let (a, b) = (self.eta[j - 1], self.eta[j]);
        let s = if b > a { (eta - a) / (b - a) } else { 0.0 };
        self.g[j - 1] + s * (self.g[j] - self.g[j - 1])
    }

    pub fn relative_norm_error(&self) -> f64 {
        (self.norm_sq - self.spectral_norm_sq).abs() / self.spectral_norm_sq
    }
}

/// `G(η) = (2/π) ∫₀^∞ Re(D(k) e^{iηk}) g(k²) dk` with `D` the outer function of the
/// symmetrized spectral measure, i.e. `(1/√π) ∫ Re(D^{(S)}(α) e^{iη√α}) g(α) α^{−1/4} dα`.
pub fn traveling_wave_profile(
    m: &MassDistribution,
    u0: &Bump,
    eta: &[f64],
    grid: SpectralGrid,
) -> Result<TravelingWave> {
    if eta.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("η-grid must be increasing");
    }
    let report = string_szego_criterion(m, &default_eta_grid(m))?;
    let mut notes = report.notes.clone();
    match report.verdict {
        Verdict::NotSzego => {
            return Err(KwError::Domain(format!(
                "string is not in the Szegő class ({}); G is undefined",
                report.reason
            )))
        }
        Verdict::Inconclusive => notes.push(format!("Szegő verdict inconclusive: {}", report.reason)),
        Verdict::Szego => {}
    }
    let data = SpectralData::new(m, u0, grid)?;
    notes.extend(data.warnings.iter().cloned());
    let k = &data.grid.k;
    let lam: Vec<f64> = k[1..].iter().map(|k| k * k).collect();
    let dens: Vec<f64> = k[1..].iter().zip(&data.density_k[1..]).map(|(k, d)| d / (2.0 * k)).collect();
    let sigma = SpectralMeasure::new(Support::HalfLine, lam, dens, vec![], None)?.with_fitted_tail();
    if let Some(t) = sigma.tail() {
        notes.push(format!("σ' tail fitted as {:.4e}·λ^{:.4}", t.c, t.p));
    }
    let d = StringSzegoFunction::new(&sigma)?;
    let dk: Vec<Complex64> = k
        .par_iter()
        .map(|&x| {
            let x = if x == 0.0 { 1e-6 * k[1] } else { x };
            d.symmetric().eval(Complex64::new(x, 0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let g: Vec<f64> = eta
        .par_iter()
        .map(|&e| {
            let s: f64 = (0..k.len())
                .map(|i| data.grid.weights[i] * (dk[i] * Complex64::from_polar(1.0, e * k[i])).re * data.g[i])
                .sum();
            2.0 / std::f64::consts::PI * s
        })
        .collect();
    let norm_sq = crate::num::trapezoid(eta, &g.iter().map(|x| x * x).collect::<Vec<_>>());
    Ok(TravelingWave { eta: eta.to_vec(), g, norm_sq, spectral_norm_sq: 2.0 * data.captured, notes })
}

/// `Ṽ(ξ) = ½ ρ^{−1/4}(ξ) G(T(ξ) − t)` on a.c. points; zero at atoms and where `ρ = 0`.
pub fn modified_free_evolution(m: &MassDistribution, g: impl Fn(f64) -> f64, t: f64, xi: &[f64]) -> Vec<f64> {
    xi.iter()
        .map(|&x| {
            let rho = m.rho_at(x);
            let on_atom = m.atoms().iter().any(|a| a.xi == x);
            match m.eikonal(x) {
                Ok(tx) if rho > 0.0 && !on_atom => 0.5 * rho.powf(-0.25) * g(tx - t),
                _ => 0.0,
            }
        })
        .collect()
}

/// Two-component samples on the cells `[jh, (j+1)h)` of the half-line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiracSamples {
    pub h: f64,
    pub z1: Vec<Complex64>,
    pub z2: Vec<Complex64>,
}

impl DiracSamples {
    pub fn new(h: f64, z1: Vec<Complex64>, z2: Vec<Complex64>) -> Result<Self> {
        if !(h > 0.0) || z1.len() != z2.len() {
            return invalid("need h > 0 and equal component lengths");
        }
        Ok(DiracSamples { h, z1, z2 })
    }

    pub fn norm_sq(&self) -> f64 {
        self.h * self.z1.iter().zip(&self.z2).map(|(a, b)| a.norm_sqr() + b.norm_sqr()).sum::<f64>()
    }

    /// `𝔰[Z]`: right edge of the last cell where `Z ≠ 0`.
    pub fn front(&self) -> f64 {
        let last = (0..self.z1.len())
            .rev()
            .find(|&j| self.z1[j] != Complex64::new(0.0, 0.0) || self.z2[j] != Complex64::new(0.0, 0.0));
        last.map_or(0.0, |j| (j + 1) as f64 * self.h)
    }
}

/// `e^{itD₀}Z` by the closed formula, `z₁` extended evenly and `z₂` oddly. `t` must be a
/// whole number of cells.
pub fn free_dirac_evolution(z: &DiracSamples, t: f64) -> Result<DiracSamples> {
    let s = t / z.h;
    let shift = s.round();
    if (s - shift).abs() > 1e-9 * s.abs().max(1.0) {
        return invalid(format!("t = {t} is not a multiple of the cell size {}", z.h));
    }
    let shift = shift as i64;
    let n = z.z1.len() as i64;
    let zero = Complex64::new(0.0, 0.0);
    let get = |v: &[Complex64], j: i64, odd: bool| -> Complex64 {
        if j >= 0 {
            if j < n {
                v[j as usize]
            } else {
                zero
            }
        } else {
            let m = -j - 1;
            let x = if m < n { v[m as usize] } else { zero };
            if odd {
                -x
            } else {
                x
            }
        }
    };
    let len = (n + shift.abs()) as usize;
    let i = Complex64::new(0.0, 1.0);
    let mut z1 = Vec::with_capacity(len);
    let mut z2 = Vec::with_capacity(len);
    for j in 0..len as i64 {
        let (a_m, a_p) = (get(&z.z1, j - shift, false), get(&z.z1, j + shift, false));
        let (b_m, b_p) = (get(&z.z2, j - shift, true), get(&z.z2, j + shift, true));
        z1.push(0.5 * (a_m + a_p) + 0.5 * i * (b_m - b_p));
        z2.push(-0.5 * i * (a_m - a_p) + 0.5 * (b_m + b_p));
    }
    Ok(DiracSamples { h: z.h, z1, z2 })
}

/// `(1/T) ∫₀^T ‖u(·, t)‖²_{L²(m, [0, b])} dt` by the midpoint rule on `n_samples` times.
pub fn cesaro_localization(
    m: &MassDistribution,
    u0: &Bump,
    b: f64,
    t_total: f64,
    n_samples: usize,
    h: f64,
) -> Result<f64> {
    u0.validate()?;
    if !(b > 0.0) || !(t_total > 0.0) || n_samples == 0 {
        return invalid("need b > 0, T > 0 and at least one sample");
    }
    if u0.amplitude == 0.0 {
        return Ok(0.0);
    }
    let front0 = u0.front().min(m.xi_max());
    let need = 0.5 * (t_total + m.eikonal(front0)? + m.eikonal(b.min(m.xi_max()))?) + 1.0;
    let Some(end) = m.eikonal_inverse(need) else {
        return Err(KwError::Domain(format!(
            "truncation ξ_max = {} is too short: reflections return within T = {t_total}",
            m.xi_max()
        )));
    };
    let lat = discretize(m, h, end)?;
    let dt = lat.max_dt();
    let mut state = lat.initial_state(|x| u0.eval(x));
    let mut sum = 0.0;
    for j in 0..n_samples {
        let t = (j as f64 + 0.5) * t_total / n_samples as f64;
        state = advance_to(&lat, state, t, dt)?;
        sum += lat.mass_in(&state, 0.0, b);
    }
    Ok(sum / n_samples as f64)
}
