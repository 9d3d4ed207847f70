//! Spectral measures `μ = w dx + Σ m_j δ_{x_j}` on the line or the half-line, their
//! logarithmic integrals, Szegő (outer) functions and the entropy `log I − J`.
//!
//! Densities are piecewise linear between grid points. Logarithmic integrals use
//! product integration: `log w` is interpolated linearly on each cell and integrated
//! exactly against the weight, so smooth densities converge at second order and
//! the kernel singularity of boundary values costs nothing. Beyond the grid a power
//! law `c|x|^p` closes the integrals with convergent `1/x` series.

use crate::error::{invalid, KwError, Result};
use crate::num::{atan_diff, gauss_legendre};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Densities at or below this are exact zeros.
pub const ZERO_DENSITY: f64 = 1e-300;

/// Imaginary parts used for boundary values, coarse to fine.
pub const EPS_LADDER: [f64; 3] = [1e-1, 1e-2, 1e-3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Support {
    #[serde(rename = "line")]
    FullLine,
    #[serde(rename = "halfline")]
    HalfLine,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub x: f64,
    pub m: f64,
}

/// `w(x) ≈ c·|x|^p` beyond the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailModel {
    pub p: f64,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureJson", into = "MeasureJson")]
pub struct SpectralMeasure {
    support: Support,
    grid: Vec<f64>,
    density: Vec<f64>,
    atoms: Vec<PointMass>,
    tail: Option<TailModel>,
}

#[derive(Serialize, Deserialize)]
struct MeasureJson {
    support: Support,
    grid: Vec<f64>,
    density: Vec<f64>,
    #[serde(default)]
    atoms: Vec<PointMass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tail: Option<TailModel>,
}

impl TryFrom<MeasureJson> for SpectralMeasure {
    type Error = KwError;

    fn try_from(j: MeasureJson) -> Result<Self> {
        let fit = j.tail.is_none();
        let m = SpectralMeasure::new(j.support, j.grid, j.density, j.atoms, j.tail)?;
        Ok(if fit { m.with_fitted_tail() } else { m })
    }
}

impl From<SpectralMeasure> for MeasureJson {
    fn from(m: SpectralMeasure) -> Self {
        MeasureJson { support: m.support, grid: m.grid, density: m.density, atoms: m.atoms, tail: m.tail }
    }
}

impl SpectralMeasure {
    /// Validates and builds a measure. `tail = None` truncates every integral to the grid.
    pub fn new(
        support: Support,
        grid: Vec<f64>,
        density: Vec<f64>,
        atoms: Vec<PointMass>,
        tail: Option<TailModel>,
    ) -> Result<Self> {
        if grid.len() < 2 {
            return invalid("grid needs at least two points");
        }
        if grid.len() != density.len() {
            return invalid(format!("grid has {} points but density has {}", grid.len(), density.len()));
        }
        if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|g| g[1] <= g[0]) {
            return invalid("grid must be finite and strictly increasing");
        }
        if let Some(i) = density.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return invalid(format!("density[{i}] = {} is not a finite nonnegative number", density[i]));
        }
        if let Some(a) = atoms.iter().find(|a| !(a.m > 0.0 && a.m.is_finite() && a.x.is_finite())) {
            return invalid(format!("atom at {} has mass {}; masses must be positive", a.x, a.m));
        }
        if support == Support::HalfLine {
            if grid[0] < 0.0 {
                return invalid("half-line grid must start at λ ≥ 0");
            }
            if atoms.iter().any(|a| a.x < 0.0) {
                return invalid("half-line atoms must sit at λ ≥ 0");
            }
        }
        if let Some(t) = tail {
            check_tail(support, &grid, t)?;
        }
        Ok(SpectralMeasure { support, grid, density, atoms, tail })
    }

    /// Replaces the tail model with a power law fitted on the last decade of the grid.
    /// Leaves the tail empty when no admissible fit exists.
    pub fn with_fitted_tail(mut self) -> Self {
        self.tail = self.fit_tail();
        if self.tail.is_none() {
            log::warn!("no admissible power-law tail; integrals are truncated to the grid");
        }
        self
    }

    pub fn with_tail(mut self, tail: Option<TailModel>) -> Result<Self> {
        if let Some(t) = tail {
            check_tail(self.support, &self.grid, t)?;
        }
        self.tail = tail;
        Ok(self)
    }

    /// Least-squares fit of `log w` against `log|x|` over `|x| ≥ max|x|/10` on each open end.
    pub fn fit_tail(&self) -> Option<TailModel> {
        let (lo, hi) = (self.grid[0], *self.grid.last().unwrap());
        let mut pts = Vec::new();
        let mut take = |edge: f64| {
            for (&x, &w) in self.grid.iter().zip(&self.density) {
                if x * edge > 0.0 && x.abs() >= edge.abs() / 10.0 && w > ZERO_DENSITY {
                    pts.push((x.abs().ln(), w.ln()));
                }
            }
        };
        match self.support {
            Support::FullLine => {
                if lo < 0.0 {
                    take(lo);
                }
                if hi > 0.0 {
                    take(hi);
                }
            }
            Support::HalfLine => take(hi),
        }
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx <= 1e-12 {
            return None;
        }
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let p = sxy / sxx;
        let t = TailModel { p, c: (my - p * mx).exp() };
        check_tail(self.support, &self.grid, t).ok().map(|_| t)
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn atoms(&self) -> &[PointMass] {
        &self.atoms
    }

    pub fn tail(&self) -> Option<TailModel> {
        self.tail
    }

    pub fn add_atom(&mut self, atom: PointMass) -> Result<()> {
        if !(atom.m > 0.0 && atom.m.is_finite()) || (self.support == Support::HalfLine && atom.x < 0.0) {
            return invalid("atom must have positive mass inside the support");
        }
        self.atoms.push(atom);
        Ok(())
    }

    /// The a.c. density at `x`: linear inside the grid, the tail model outside it
    /// (zero without one), `w₀√(x₀/x)` between `0` and the first half-line grid point.
    pub fn density_at(&self, x: f64) -> f64 {
        let (lo, hi) = (self.grid[0], *self.grid.last().unwrap());
        if self.support == Support::HalfLine && (0.0..lo).contains(&x) {
            return self.density[0] * (lo / x).sqrt();
        }
        if x < lo || x > hi {
            return self.tail.map_or(0.0, |t| t.c * x.abs().powf(t.p));
        }
        let i = self.grid.partition_point(|&g| g <= x).clamp(1, self.grid.len() - 1);
        let (a, b) = (self.grid[i - 1], self.grid[i]);
        let u = (x - a) / (b - a);
        self.density[i - 1] * (1.0 - u) + self.density[i] * u
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn check_tail(support: Support, grid: &[f64], t: TailModel) -> Result<()> {
    if !(t.p.is_finite() && t.c.is_finite() && t.c > 0.0) {
        return invalid("tail needs finite p and c > 0");
    }
    let (lo, hi) = (grid[0], *grid.last().unwrap());
    match support {
        Support::FullLine => {
            if t.p >= 1.0 {
                return invalid(format!("tail exponent p = {} makes ∫dμ/(1+x²) infinite", t.p));
            }
            if lo > -2.0 || hi < 2.0 {
                return invalid("a full-line tail needs the grid to cover [-2, 2]");
            }
        }
        Support::HalfLine => {
            if t.p >= 0.0 {
                return invalid(format!("tail exponent p = {} makes ∫dσ/(1+λ) infinite", t.p));
            }
            if hi < 4.0 {
                return invalid("a half-line tail needs the grid to reach λ = 4");
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// product integration

#[derive(Clone, Copy, Debug, PartialEq)]
enum Zero {
    None,
    Left,
    Right,
}

/// `log w` on `[a, b]`: linear from `la` to `lb`, or `l + log u` with `u` the
/// normalized distance from a zero end.
#[derive(Clone, Copy, Debug)]
struct LogCell {
    a: f64,
    b: f64,
    la: f64,
    lb: f64,
    zero: Zero,
}

/// Cells of `log w`, or `None` when `w` vanishes on a cell of positive length.
fn log_cells(grid: &[f64], density: &[f64]) -> Option<Vec<LogCell>> {
    let mut out = Vec::with_capacity(grid.len());
    for i in 1..grid.len() {
        let (wa, wb) = (density[i - 1], density[i]);
        let (za, zb) = (wa <= ZERO_DENSITY, wb <= ZERO_DENSITY);
        let (a, b) = (grid[i - 1], grid[i]);
        let cell = match (za, zb) {
            (true, true) => return None,
            (false, false) => LogCell { a, b, la: wa.ln(), lb: wb.ln(), zero: Zero::None },
            (true, false) => LogCell { a, b, la: wb.ln(), lb: wb.ln(), zero: Zero::Left },
            (false, true) => LogCell { a, b, la: wa.ln(), lb: wa.ln(), zero: Zero::Right },
        };
        out.push(cell);
    }
    Some(out)
}

fn gauss16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let (x, w) = gauss_legendre(16);
        (x.iter().map(|t| 0.5 * (t + 1.0)).collect(), w.iter().map(|w| 0.5 * w).collect())
    })
}

/// `∫₀¹ log v · g(v) dv` for smooth `g`, with `g(0)` supplied. Dyadic pieces
/// toward the origin resolve `v log v`.
fn log_moment<T>(g: impl Fn(f64) -> T, g0: T) -> T
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let (x, w) = gauss16();
    let mut acc = g0 * (-1.0);
    let mut hi = 1.0;
    for _ in 0..48 {
        let lo = 0.5 * hi;
        let h = hi - lo;
        for (&t, &wt) in x.iter().zip(w) {
            let v = lo + h * t;
            acc = acc + (g(v) - g0) * (h * wt * v.ln());
        }
        hi = lo;
    }
    acc
}

/// `∫_a^b log(u) f(x) dx` where `u` is the normalized distance from the zero end;
/// the substitution `u = v²` leaves a smooth integrand.
fn zero_end_integral<T>(cell: &LogCell, f: impl Fn(f64) -> T, g0: T) -> T
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let h = cell.b - cell.a;
    match cell.zero {
        Zero::Left => log_moment(|v| f(cell.a + h * v * v) * (4.0 * h * v), g0),
        Zero::Right => log_moment(|v| f(cell.b - h * v * v) * (4.0 * h * v), g0),
        Zero::None => g0 * 0.0,
    }
}

/// Moments `∫_a^b W` and `∫_a^b (x − a) W` of a positive weight.
trait Weight {
    fn value(&self, x: f64) -> f64;
    fn moments(&self, a: f64, b: f64) -> (f64, f64);
}

/// `1/(1 + x²)`.
struct Poisson;

impl Weight for Poisson {
    fn value(&self, x: f64) -> f64 {
        1.0 / (1.0 + x * x)
    }
    fn moments(&self, a: f64, b: f64) -> (f64, f64) {
        let m0 = atan_diff(a, b);
        (m0, half_log_ratio(a, b) - a * m0)
    }
}

/// `1/(√x (1 + x))`.
struct HalfPoisson;

impl Weight for HalfPoisson {
    fn value(&self, x: f64) -> f64 {
        1.0 / (x.sqrt() * (1.0 + x))
    }
    fn moments(&self, a: f64, b: f64) -> (f64, f64) {
        let (sa, sb) = (a.sqrt(), b.sqrt());
        let m0 = 2.0 * atan_diff(sa, sb);
        (m0, 2.0 * (sb - sa) - (1.0 + a) * m0)
    }
}

/// `1/(1 + x)`.
struct Resolvent;

impl Weight for Resolvent {
    fn value(&self, x: f64) -> f64 {
        1.0 / (1.0 + x)
    }
    fn moments(&self, a: f64, b: f64) -> (f64, f64) {
        let m0 = ((b - a) / (1.0 + a)).ln_1p();
        (m0, (b - a) - (1.0 + a) * m0)
    }
}

/// `½ ln((1 + b²)/(1 + a²))`.
fn half_log_ratio(a: f64, b: f64) -> f64 {
    0.5 * ((b - a) * (b + a) / (1.0 + a * a)).ln_1p()
}

fn log_cell_integral(cell: &LogCell, w: &impl Weight) -> f64 {
    let (m0, m1) = w.moments(cell.a, cell.b);
    let beta = (cell.lb - cell.la) / (cell.b - cell.a);
    let base = cell.la * m0 + beta * m1;
    if cell.zero == Zero::None {
        return base;
    }
    // the half-line weight is singular at the origin, where 4hv·W(hv²) → 4√h
    let singular = cell.zero == Zero::Left && cell.a == 0.0 && w.value(0.0).is_infinite();
    let g0 = if singular { 4.0 * (cell.b - cell.a).sqrt() } else { 0.0 };
    base + zero_end_integral(cell, |x| w.value(x), g0)
}

fn linear_cell_integral(a: f64, b: f64, wa: f64, wb: f64, w: &impl Weight) -> f64 {
    let (m0, m1) = w.moments(a, b);
    wa * m0 + (wb - wa) / (b - a) * m1
}

/// `∫_X^∞ log x / (1 + x²) dx` for `X ≥ 2`.
fn log_poisson_tail(x: f64) -> f64 {
    let lx = x.ln();
    let mut acc = 0.0;
    let mut pow = 1.0 / x;
    let x2 = 1.0 / (x * x);
    for k in 0..200 {
        let n = (1 + 2 * k) as f64;
        let t = pow * (lx / n + 1.0 / (n * n));
        acc += if k % 2 == 0 { t } else { -t };
        if t.abs() < 1e-18 * acc.abs().max(1e-300) {
            break;
        }
        pow *= x2;
    }
    acc
}

/// `∫_X^∞ x^p / (1 + x²) dx` for `X ≥ 2`, `p < 1`.
fn power_poisson_tail(x: f64, p: f64) -> f64 {
    let mut acc = 0.0;
    let mut pow = x.powf(p - 1.0);
    let x2 = 1.0 / (x * x);
    for k in 0..200 {
        let t = pow / (1.0 + 2.0 * k as f64 - p);
        acc += if k % 2 == 0 { t } else { -t };
        if t.abs() < 1e-18 * acc.abs().max(1e-300) {
            break;
        }
        pow *= x2;
    }
    acc
}

/// `∫_X^∞ (A + p log x) / (√x (1 + x)) dx` for `X ≥ 4`.
fn log_half_tail(x: f64, a: f64, p: f64) -> f64 {
    let lx = x.ln();
    let mut acc = 2.0 * a * (1.0 / x.sqrt()).atan();
    let mut pow = x.powf(-0.5);
    for k in 0..400 {
        let nu = k as f64 + 0.5;
        let t = p * pow * (lx / nu + 1.0 / (nu * nu));
        acc += if k % 2 == 0 { t } else { -t };
        if t.abs() < 1e-18 * acc.abs().max(1e-300) {
            break;
        }
        pow /= x;
    }
    acc
}

/// `∫₀^Y log y / (1 + y²) dy`.
fn log_atan_integral(y: f64) -> f64 {
    let series = |y: f64| -> f64 {
        let (ly, y2) = (y.ln(), y * y);
        let mut acc = 0.0;
        let mut pow = y;
        for k in 0..200 {
            let n = (2 * k + 1) as f64;
            let t = pow * (ly / n - 1.0 / (n * n));
            acc += if k % 2 == 0 { t } else { -t };
            if t.abs() < 1e-18 {
                break;
            }
            pow *= y2;
        }
        acc
    };
    if y <= 0.5 {
        series(y)
    } else if y >= 2.0 {
        -log_poisson_tail(y)
    } else {
        series(0.5) + crate::num::integrate(|t| t.ln() / (1.0 + t * t), 0.5, y, 8)
    }
}

/// `∫_X^∞ x^p / (1 + x) dx` for `X ≥ 4`, `p < 0`.
fn power_resolvent_tail(x: f64, p: f64) -> f64 {
    let mut acc = 0.0;
    let mut pow = x.powf(p);
    for k in 0..400 {
        let t = pow / (k as f64 - p);
        acc += if k % 2 == 0 { t } else { -t };
        if t.abs() < 1e-18 * acc.abs().max(1e-300) {
            break;
        }
        pow /= x;
    }
    acc
}

fn require(support: Support, want: Support, op: &str) -> Result<()> {
    if support != want {
        return invalid(format!(
            "{op} needs a {} measure",
            if want == Support::FullLine { "full-line" } else { "half-line" }
        ));
    }
    Ok(())
}

/// `∫ dμ/(1 + x²)` (line) or `∫ dσ/(1 + λ)` (half-line), atoms included.
pub fn poisson_integral(mu: &SpectralMeasure) -> f64 {
    let (g, d) = (&mu.grid, &mu.density);
    let cells = |w: &dyn Fn(f64, f64, f64, f64) -> f64| -> f64 {
        (1..g.len()).map(|i| w(g[i - 1], g[i], d[i - 1], d[i])).sum()
    };
    match mu.support {
        Support::FullLine => {
            let mut total = cells(&|a, b, wa, wb| linear_cell_integral(a, b, wa, wb, &Poisson));
            if let Some(t) = mu.tail {
                total += t.c * (power_poisson_tail(-g[0], t.p) + power_poisson_tail(*g.last().unwrap(), t.p));
            }
            total + mu.atoms.iter().map(|a| a.m / (1.0 + a.x * a.x)).sum::<f64>()
        }
        Support::HalfLine => {
            let mut total = cells(&|a, b, wa, wb| linear_cell_integral(a, b, wa, wb, &Resolvent));
            total += d[0] * g[0].sqrt() * 2.0 * g[0].sqrt().atan();
            if let Some(t) = mu.tail {
                total += t.c * power_resolvent_tail(*g.last().unwrap(), t.p);
            }
            total + mu.atoms.iter().map(|a| a.m / (1.0 + a.x)).sum::<f64>()
        }
    }
}

/// `J = (1/π) ∫ log w / (1 + x²) dx`; `NEG_INFINITY` when `w` vanishes on a cell.
pub fn szego_log_integral(mu: &SpectralMeasure) -> Result<f64> {
    require(mu.support, Support::FullLine, "szego_log_integral")?;
    let Some(cells) = log_cells(&mu.grid, &mu.density) else {
        return Ok(f64::NEG_INFINITY);
    };
    let mut total: f64 = cells.iter().map(|c| log_cell_integral(c, &Poisson)).sum();
    if let Some(t) = mu.tail {
        for x in [-mu.grid[0], *mu.grid.last().unwrap()] {
            total += t.c.ln() * (1.0 / x).atan() + t.p * log_poisson_tail(x);
        }
    }
    Ok(total / PI)
}

/// `∫₀^∞ log υ(λ) / (√λ (1 + λ)) dλ`; `NEG_INFINITY` when `υ` vanishes on a cell.
pub fn szego_membership_halfline(sigma: &SpectralMeasure) -> Result<f64> {
    require(sigma.support, Support::HalfLine, "szego_membership_halfline")?;
    let Some(cells) = log_cells(&sigma.grid, &sigma.density) else {
        return Ok(f64::NEG_INFINITY);
    };
    let mut total: f64 = cells.iter().map(|c| log_cell_integral(c, &HalfPoisson)).sum();
    let g0 = sigma.grid[0];
    if g0 > 0.0 {
        if sigma.density[0] <= ZERO_DENSITY {
            return Ok(f64::NEG_INFINITY);
        }
        // υ(λ) = υ₀√(λ₀/λ) below the grid; with λ = y² the weight becomes 2dy/(1 + y²)
        let y0 = g0.sqrt();
        let l0 = sigma.density[0].ln() + y0.ln();
        total += 2.0 * l0 * y0.atan() - 2.0 * log_atan_integral(y0);
    }
    if let Some(t) = sigma.tail {
        total += log_half_tail(*sigma.grid.last().unwrap(), t.c.ln(), t.p);
    }
    Ok(total)
}

/// Entropy `K = log I − J` with `I = (1/π) ∫ dμ/(1 + x²)`.
pub fn entropy(mu: &SpectralMeasure) -> Result<f64> {
    require(mu.support, Support::FullLine, "entropy")?;
    let j = szego_log_integral(mu)?;
    if !j.is_finite() {
        return Err(KwError::Domain("measure is not in the Szegő class".into()));
    }
    Ok((poisson_integral(mu) / PI).ln() - j)
}

// ---------------------------------------------------------------------------
// outer functions

/// `log(b − z) − log(a − z)` along the real segment `[a, b]`, with the `z + i0`
/// limit when `z` is real. Vanishing distances contribute `0`; those terms cancel
/// between neighbouring cells.
fn log_ratio(a: f64, b: f64, z: Complex64) -> Complex64 {
    if z.im > 0.0 {
        return ((Complex64::new(b, 0.0) - z) / (Complex64::new(a, 0.0) - z)).ln();
    }
    let x = z.re;
    let side = |t: f64| -> (f64, f64) {
        let d = t - x;
        let arg = if d > 0.0 {
            0.0
        } else if d < 0.0 {
            -PI
        } else {
            -0.5 * PI
        };
        (if d == 0.0 { 0.0 } else { d.abs().ln() }, arg)
    };
    let (lb, ab) = side(b);
    let (la, aa) = side(a);
    Complex64::new(lb - la, ab - aa)
}

/// `∫_a^b log w(x) · (1/(x − z) − x/(1 + x²)) dx` on one cell.
fn kernel_cell(cell: &LogCell, z: Complex64) -> Complex64 {
    let (a, b) = (cell.a, cell.b);
    let l = log_ratio(a, b, z);
    let p = half_log_ratio(a, b);
    let m0 = atan_diff(a, b);
    let k0 = l - p;
    let k1 = (z - a) * l + m0 + a * p;
    let beta = (cell.lb - cell.la) / (b - a);
    let base = k0 * cell.la + k1 * beta;
    if cell.zero == Zero::None {
        return base;
    }
    base + zero_end_integral(cell, |x| 1.0 / (x - z) - x / (1.0 + x * x), Complex64::new(0.0, 0.0))
}

/// `∫_X^∞ (A + p log x)(1/(x − z) − x/(1 + x²)) dx` by the `1/x` expansion; needs `|z| ≤ X/2`.
fn kernel_tail_series(x: f64, z: Complex64, a: f64, p: f64) -> Complex64 {
    let lx = x.ln();
    let mut acc = Complex64::new(0.0, 0.0);
    let mut zp = z;
    let mut xp = 1.0 / x;
    for n in 2..600usize {
        let odd = if n % 2 == 1 {
            if (n / 2) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        } else {
            0.0
        };
        let kappa = zp - odd;
        let m = (n - 1) as f64;
        let t = kappa * (xp * (a / m + p * (lx / m + 1.0 / (m * m))));
        acc += t;
        if n > 4 && t.norm() < 1e-18 * acc.norm().max(1e-300) && (zp.norm() * xp) < 1e-18 {
            break;
        }
        zp *= z;
        xp /= x;
    }
    acc
}

/// Tail `[X, ∞)` of the kernel integral for `log w = A + p log x`; cells of ratio
/// `1.001` bridge to the point where the series converges.
fn kernel_tail(x: f64, z: Complex64, a: f64, p: f64) -> Complex64 {
    let reach = 2.0 * z.norm();
    if x >= reach {
        return kernel_tail_series(x, z, a, p);
    }
    let end = 2.0 * reach;
    let mut acc = Complex64::new(0.0, 0.0);
    let mut lo = x;
    while lo < end {
        let hi = (lo * 1.001).min(end);
        let cell = LogCell { a: lo, b: hi, la: a + p * lo.ln(), lb: a + p * hi.ln(), zero: Zero::None };
        acc += kernel_cell(&cell, z);
        lo = hi;
    }
    acc + kernel_tail_series(end, z, a, p)
}

/// The outer function `D_μ` with `|D_μ|² = w` on `ℝ` and `D_μ(i) > 0`.
#[derive(Clone, Debug)]
pub struct SzegoFunction {
    cells: Vec<LogCell>,
    tail: Option<(f64, f64, f64, f64)>,
    log_integral: f64,
}

impl SzegoFunction {
    pub fn new(mu: &SpectralMeasure) -> Result<Self> {
        require(mu.support, Support::FullLine, "szego_function")?;
        let j = szego_log_integral(mu)?;
        if !j.is_finite() {
            return Err(KwError::Domain("log w is not Poisson-integrable (w vanishes on an interval)".into()));
        }
        let cells = log_cells(&mu.grid, &mu.density).expect("finite log integral");
        let tail = mu.tail.map(|t| (t.c.ln(), t.p, -mu.grid[0], *mu.grid.last().unwrap()));
        Ok(SzegoFunction { cells, tail, log_integral: j })
    }

    /// `J`, so that `D_μ(i) = exp(J/2)`.
    pub fn log_integral(&self) -> f64 {
        self.log_integral
    }

    /// `D_μ(z)` for `Im z ≥ 0`; real `z` gives the boundary value `D_μ(z + i0)`.
    pub fn eval(&self, z: Complex64) -> Result<Complex64> {
        if !(z.im >= 0.0) || !z.re.is_finite() {
            return invalid(format!("D_μ needs Im z ≥ 0, got {z}"));
        }
        let mut acc: Complex64 = self.cells.iter().map(|c| kernel_cell(c, z)).sum();
        if let Some((a, p, xl, xr)) = self.tail {
            acc += kernel_tail(xr, z, a, p);
            // x ↦ −x maps the left tail onto the right one with z ↦ −z̄ for the i0 limit
            acc -= kernel_tail(xl, -z.conj(), a, p).conj();
        }
        let log_d = acc * Complex64::new(0.0, -0.5 / PI);
        let d = log_d.exp();
        if !d.is_finite() {
            return Err(KwError::Numerical(format!("D_μ overflowed at z = {z}")));
        }
        Ok(d)
    }
}

/// `D_μ(z)`, `Im z ≥ 0`.
pub fn szego_function(mu: &SpectralMeasure, z: Complex64) -> Result<Complex64> {
    SzegoFunction::new(mu)?.eval(z)
}

/// Boundary value of `D_μ` at a real point along the `ε` ladder.
#[derive(Clone, Debug, Serialize)]
pub struct BoundaryValue {
    pub x: f64,
    pub eps: Vec<f64>,
    pub values: Vec<Complex64>,
    /// The value at the finest `ε`.
    pub value: Complex64,
    /// First-order Richardson extrapolation of the two finest rungs.
    pub extrapolated: Complex64,
    /// `D_μ(x + i0)` from the exact limit of the quadrature.
    pub limit: Complex64,
}

pub fn szego_boundary(mu: &SpectralMeasure, x: f64) -> Result<BoundaryValue> {
    let d = SzegoFunction::new(mu)?;
    boundary_with(&d, x)
}

fn boundary_with(d: &SzegoFunction, x: f64) -> Result<BoundaryValue> {
    let values = EPS_LADDER.iter().map(|&e| d.eval(Complex64::new(x, e))).collect::<Result<Vec<_>>>()?;
    let n = values.len();
    let r = EPS_LADDER[n - 2] / EPS_LADDER[n - 1];
    let extrapolated = (values[n - 1] * r - values[n - 2]) / (r - 1.0);
    Ok(BoundaryValue {
        x,
        eps: EPS_LADDER.to_vec(),
        value: values[n - 1],
        values,
        extrapolated,
        limit: d.eval(Complex64::new(x, 0.0))?,
    })
}

/// `conj(D_μ)/D_μ` at `x + iε` for each `x`; `ε = 0` gives the boundary limit.
pub fn scattering_multiplier(mu: &SpectralMeasure, xs: &[f64], eps: f64) -> Result<Vec<Complex64>> {
    if !(eps >= 0.0) {
        return invalid("ε must be nonnegative");
    }
    let d = SzegoFunction::new(mu)?;
    xs.iter()
        .map(|&x| {
            let v = d.eval(Complex64::new(x, eps))?;
            let u = v / v.norm();
            Ok(u.conj() / u)
        })
        .collect()
}

/// The even measure `μ_{σ₁}` on the line with `μ_{σ₁}([E₁, E₂]) = (π/2) σ([E₁², E₂²])`,
/// i.e. density `π|x|σ'(x²)`.
pub fn symmetrize(sigma: &SpectralMeasure) -> Result<SpectralMeasure> {
    require(sigma.support, Support::HalfLine, "symmetrize")?;
    let pos: Vec<(f64, f64)> = sigma
        .grid
        .iter()
        .zip(&sigma.density)
        .map(|(&l, &w)| {
            let y = l.sqrt();
            (y, PI * y * w)
        })
        .collect();
    let mut grid = Vec::with_capacity(2 * pos.len());
    let mut density = Vec::with_capacity(2 * pos.len());
    for &(y, w) in pos.iter().rev() {
        if y > 0.0 {
            grid.push(-y);
            density.push(w);
        }
    }
    for &(y, w) in &pos {
        grid.push(y);
        density.push(w);
    }
    let mut atoms = Vec::new();
    for a in &sigma.atoms {
        if a.x == 0.0 {
            atoms.push(PointMass { x: 0.0, m: PI * a.m });
        } else {
            let y = a.x.sqrt();
            atoms.push(PointMass { x: -y, m: 0.5 * PI * a.m });
            atoms.push(PointMass { x: y, m: 0.5 * PI * a.m });
        }
    }
    let tail = sigma.tail.map(|t| TailModel { p: 2.0 * t.p + 1.0, c: PI * t.c });
    SpectralMeasure::new(Support::FullLine, grid, density, atoms, tail)
}

/// `D^{(S)}_σ(z) = D_{μ_{σ₁}}(√z) / (√π z^{1/4})`.
#[derive(Clone, Debug)]
pub struct StringSzegoFunction {
    inner: SzegoFunction,
}

impl StringSzegoFunction {
    pub fn new(sigma: &SpectralMeasure) -> Result<Self> {
        let mu = symmetrize(sigma)?;
        Ok(StringSzegoFunction { inner: SzegoFunction::new(&mu)? })
    }

    /// The symmetrized outer function `D_{μ_{σ₁}}`, for use in `k = √λ` variables.
    pub fn symmetric(&self) -> &SzegoFunction {
        &self.inner
    }

    /// `Im z ≥ 0`, `z ≠ 0`; real `λ > 0` gives the boundary value.
    pub fn eval(&self, z: Complex64) -> Result<Complex64> {
        if z.norm() == 0.0 || !(z.im >= 0.0) {
            return invalid(format!("D^(S) needs Im z ≥ 0 and z ≠ 0, got {z}"));
        }
        let s = z.sqrt();
        let s = if z.im == 0.0 && z.re < 0.0 { Complex64::new(0.0, (-z.re).sqrt()) } else { s };
        Ok(self.inner.eval(s)? / (PI.sqrt() * s.sqrt()))
    }
}

pub fn string_szego_function(sigma: &SpectralMeasure, z: Complex64) -> Result<Complex64> {
    StringSzegoFunction::new(sigma)?.eval(z)
}
