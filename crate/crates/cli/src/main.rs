//! `kw`: command-line front end for the Szegő-class criteria and the string wave dynamics.
//!
//! Every command reads an optional JSON run config, writes CSV (with `#` metadata
//! lines) and a JSON summary into the output directory, and exits with
//! 0 ok, 1 validation, 2 IO, 3 numerical/stability.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use clap::{Parser, Subcommand};
use kw_core::canonical::{szego_sum_default, weyl_m, Hamiltonian};
use kw_core::dirac::{
    dirac_special_criterion, dirac_szego_sum, dispersion_criterion, wvn_numeric_check, wvn_region, DiracPotential, Form,
};
use kw_core::evolution::{
    free_dirac_evolution, traveling_wave_profile, Bump, DiracSamples, SimConfig, SpectralData, SpectralGrid, FRONT_TAIL,
};
use kw_core::string::{
    criterion_table, default_eta_grid, spectral_density_boundary, spectral_density_estimate, string_szego_criterion,
    wavefront, wavefront_literal, MassDistribution,
};
use kw_core::{evolution, Complex64, KwError, SzegoReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "kw",
    version,
    about = "Szegő-class criteria and wave dynamics for strings, canonical systems and Dirac potentials"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    h: Option<f64>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long = "t-end", global = true)]
    t_end: Option<f64>,
    #[arg(long = "lambda-max", global = true)]
    lambda_max: Option<f64>,
    #[arg(long = "n-max", global = true)]
    n_max: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// String Szegő sum on the grid η_n = n.
    ClassifyString,
    /// Dirac potential: scalar window criterion (diagonal/antidiagonal) or determinant sum.
    ClassifyDirac,
    /// Canonical system determinant sum and m(i).
    ClassifyCanonical,
    /// Wigner–von Neumann region map over an (α, β) grid.
    ClassifyWvn,
    /// Lattice wave simulation with front, near-front mass and energy diagnostics.
    Simulate,
    /// Predicted wavefront L_{T(f₀)+t}.
    Front,
    /// Traveling-wave profile G of an initial bump.
    Profile,
    /// Spectral density of a string.
    Spectrum,
    /// Free Dirac evolution of lattice data.
    FreeDirac,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::ClassifyString => "classify-string",
            Command::ClassifyDirac => "classify-dirac",
            Command::ClassifyCanonical => "classify-canonical",
            Command::ClassifyWvn => "classify-wvn",
            Command::Simulate => "simulate",
            Command::Front => "front",
            Command::Profile => "profile",
            Command::Spectrum => "spectrum",
            Command::FreeDirac => "free-dirac",
        }
    }
}

#[derive(Deserialize, Serialize, Debug, Clone)]
#[serde(default, deny_unknown_fields)]
struct Resolution {
    h: f64,
    dt: Option<f64>,
    lambda_max: f64,
    n_lambda: usize,
    n_max: usize,
    eps: f64,
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution { h: 0.01, dt: None, lambda_max: 1600.0, n_lambda: 4001, n_max: 10_000, eps: 1e-2 }
    }
}

#[derive(Deserialize, Serialize, Debug, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct Span {
    start: f64,
    stop: f64,
    step: f64,
}

impl Span {
    fn points(&self) -> Result<Vec<f64>, KwError> {
        if !(self.step > 0.0) || !(self.stop >= self.start) {
            return Err(KwError::Validation("range needs step > 0 and stop ≥ start".into()));
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.start + i as f64 * self.step).collect())
    }
}

#[derive(Deserialize, Serialize, Debug, Clone)]
#[serde(deny_unknown_fields)]
struct DiracInput {
    h: f64,
    z1: Vec<f64>,
    #[serde(default)]
    z2: Vec<f64>,
}

#[derive(Deserialize, Serialize, Debug, Clone, Default)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    /// Model JSON file, relative to the config file.
    input: Option<PathBuf>,
    /// Inline model JSON.
    model: Option<serde_json::Value>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    resolution: Resolution,
    u0: Option<Bump>,
    t_end: Option<f64>,
    samples: Option<usize>,
    ell: Option<f64>,
    xi_max: Option<f64>,
    spectral_check: bool,
    alpha: Option<Vec<f64>>,
    beta: Option<Vec<f64>>,
    numeric: bool,
    eta: Option<Span>,
    lambda: Option<Vec<f64>>,
    times: Option<Vec<f64>>,
    front0: Option<f64>,
    dirac: Option<DiracInput>,
}

struct Ctx {
    command: Command,
    cfg: RunConfig,
    base: PathBuf,
    out: PathBuf,
}

impl Ctx {
    fn model<T: serde::de::DeserializeOwned>(&self, what: &str) -> Result<T, KwError> {
        if let Some(v) = &self.cfg.model {
            return serde_json::from_value(v.clone()).map_err(|e| KwError::Validation(format!("{what}: {e}")));
        }
        let Some(p) = &self.cfg.input else {
            return Err(KwError::Validation(format!(
                "{} needs a {what} (\"input\" or \"model\" in --config)",
                self.command.name()
            )));
        };
        let path = self.base.join(p);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| KwError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        serde_json::from_str(&text).map_err(|e| KwError::Validation(format!("{}: {e}", path.display())))
    }

    fn res(&self) -> &Resolution {
        &self.cfg.resolution
    }

    fn header(&self, extra: &[String]) -> Vec<String> {
        let mut h = vec![
            format!("command: {}", self.command.name()),
            format!("kw {}", env!("CARGO_PKG_VERSION")),
            format!(
                "resolution: h={} dt={} lambda_max={} n_lambda={} n_max={} eps={}",
                self.res().h,
                self.res().dt.map_or("auto".to_string(), |d| d.to_string()),
                self.res().lambda_max,
                self.res().n_lambda,
                self.res().n_max,
                self.res().eps
            ),
        ];
        h.extend(extra.iter().cloned());
        h
    }

    fn write_csv<R: Serialize>(&self, name: &str, meta: &[String], rows: &[R]) -> Result<PathBuf, KwError> {
        let path = self.out.join(name);
        let mut f = BufWriter::new(File::create(&path)?);
        for line in self.header(meta) {
            writeln!(f, "# {}", line.replace('\n', " "))?;
        }
        let mut w = csv::Writer::from_writer(f);
        for r in rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(path)
    }

    fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<PathBuf, KwError> {
        let path = self.out.join(name);
        let mut f = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut f, value)?;
        writeln!(f)?;
        f.flush()?;
        Ok(path)
    }
}

fn csv_err(e: csv::Error) -> KwError {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => KwError::Io(e),
        other => KwError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    command: &'a str,
    verdict: String,
    reason: &'a str,
    n_terms: usize,
    partial_sum: f64,
    fitted_exponent: Option<f64>,
    notes: &'a [String],
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    extra: serde_json::Map<String, serde_json::Value>,
}

fn summary<'a>(cmd: Command, r: &'a SzegoReport) -> Summary<'a> {
    Summary {
        command: cmd.name(),
        verdict: r.verdict.to_string(),
        reason: &r.reason,
        n_terms: r.terms.len(),
        partial_sum: r.total(),
        fitted_exponent: r.tail.fitted_exponent,
        notes: &r.notes,
        extra: serde_json::Map::new(),
    }
}

#[derive(Serialize)]
struct TermRow {
    n: usize,
    term: f64,
    partial_sum: f64,
}

fn term_rows(r: &SzegoReport) -> Vec<TermRow> {
    r.terms
        .iter()
        .zip(&r.partial_sums)
        .enumerate()
        .map(|(n, (&term, &partial_sum))| TermRow { n, term, partial_sum })
        .collect()
}

fn classify_string(ctx: &Ctx) -> Result<(), KwError> {
    let m: MassDistribution = ctx.model("string")?;
    let mut eta = default_eta_grid(&m);
    eta.truncate(ctx.res().n_max + 2);
    if eta.len() < 3 {
        return Err(KwError::Validation("string is too short for a single criterion term".into()));
    }
    let r = string_szego_criterion(&m, &eta)?;
    #[derive(Serialize)]
    struct Row {
        n: usize,
        xi_n: f64,
        #[serde(rename = "M_xi_n")]
        m_xi_n: f64,
        term: f64,
        partial_sum: f64,
    }
    let rows: Vec<Row> = criterion_table(&m, &r)
        .into_iter()
        .map(|(n, xi_n, m_xi_n, term, partial_sum)| Row { n, xi_n, m_xi_n, term, partial_sum })
        .collect();
    ctx.write_csv("terms.csv", &r.notes, &rows)?;
    ctx.write_json("verdict.json", &summary(ctx.command, &r))?;
    println!("{} ({})", r.verdict, r.reason);
    Ok(())
}

fn classify_dirac(ctx: &Ctx) -> Result<(), KwError> {
    let q: DiracPotential = ctx.model("Dirac potential")?;
    let n = ctx.res().n_max;
    let (r, extra) = match q.scalar_part() {
        Some(s) => {
            let r = dirac_special_criterion(s, q.form(), n)?;
            let d = dispersion_criterion(s, n);
            let mut extra = serde_json::Map::new();
            extra.insert("dispersion_verdict".into(), d.report.verdict.to_string().into());
            extra.insert("dispersion_applicable".into(), d.applicable.into());
            extra.insert("dispersion_tail_sup_g".into(), d.tail_sup_g.into());
            if let Some((a, b, _)) = s.as_wvn() {
                let reg = wvn_region(a, b);
                extra.insert("wvn_region".into(), format!("{:?}", reg.region).into());
                extra.insert("wvn_region_verdict".into(), reg.verdict().to_string().into());
            }
            (r, extra)
        }
        None => (dirac_szego_sum(&q)?, serde_json::Map::new()),
    };
    let form = match q.form() {
        Form::Diagonal => "diagonal",
        Form::Antidiagonal => "antidiagonal",
        Form::General => "general",
    };
    let mut meta = vec![format!("form: {form}; tau_max: {}", q.tau_max())];
    meta.extend(r.notes.iter().cloned());
    ctx.write_csv("terms.csv", &meta, &term_rows(&r))?;
    let mut s = summary(ctx.command, &r);
    s.extra = extra;
    ctx.write_json("verdict.json", &s)?;
    println!("{} ({})", r.verdict, r.reason);
    Ok(())
}

fn classify_canonical(ctx: &Ctx) -> Result<(), KwError> {
    let h: Hamiltonian = ctx.model("Hamiltonian")?;
    let r = szego_sum_default(&h)?;
    ctx.write_csv("terms.csv", &r.notes, &term_rows(&r))?;
    let mut s = summary(ctx.command, &r);
    match weyl_m(&h, Complex64::new(0.0, 1.0)) {
        Ok(m) => {
            s.extra.insert("m_i_re".into(), m.value.re.into());
            s.extra.insert("m_i_im".into(), m.value.im.into());
            s.extra.insert("m_i_residual".into(), m.residual.into());
        }
        Err(e) => log::warn!("m(i) unavailable: {e}"),
    }
    ctx.write_json("verdict.json", &s)?;
    println!("{} ({})", r.verdict, r.reason);
    Ok(())
}

fn default_axis(lo: f64, hi: f64) -> Vec<f64> {
    let n = ((hi - lo) / 0.25).round() as usize;
    (0..=n).map(|i| lo + 0.25 * i as f64).collect()
}

fn classify_wvn(ctx: &Ctx) -> Result<(), KwError> {
    let alpha = ctx.cfg.alpha.clone().unwrap_or_else(|| default_axis(-3.5, 4.5));
    let beta = ctx.cfg.beta.clone().unwrap_or_else(|| default_axis(-1.0, 2.5));
    if alpha.is_empty() || beta.is_empty() {
        return Err(KwError::Validation("empty (α, β) grid".into()));
    }
    if alpha.iter().chain(&beta).any(|x| !x.is_finite()) {
        return Err(KwError::Validation("grid values must be finite".into()));
    }
    let points: Vec<(f64, f64)> = alpha.iter().flat_map(|&a| beta.iter().map(move |&b| (a, b))).collect();
    let numeric: Vec<Option<String>> = if ctx.cfg.numeric {
        use rayon::prelude::*;
        points
            .par_iter()
            .map(|&(a, b)| wvn_numeric_check(a, b, ctx.res().n_max).map(|r| Some(r.verdict.to_string())))
            .collect::<Result<_, _>>()?
    } else {
        vec![None; points.len()]
    };
    #[derive(Serialize)]
    struct Row {
        alpha: f64,
        beta: f64,
        region: String,
        numeric_verdict: Option<String>,
    }
    let rows: Vec<Row> = points
        .iter()
        .zip(numeric)
        .map(|(&(alpha, beta), numeric_verdict)| Row {
            alpha,
            beta,
            region: format!("{:?}", wvn_region(alpha, beta).region),
            numeric_verdict,
        })
        .collect();
    let meta = vec!["q = sin(τ^α)/τ^β for τ ≥ 1, q(1) below".to_string()];
    ctx.write_csv("regions.csv", &meta, &rows)?;
    println!("{} points", rows.len());
    Ok(())
}

fn u0_of(ctx: &Ctx) -> Result<Bump, KwError> {
    let b = ctx.cfg.u0.unwrap_or(Bump { center: 3.0, width: 1.0, amplitude: 1.0 });
    b.validate()?;
    Ok(b)
}

fn simulate(ctx: &Ctx) -> Result<(), KwError> {
    let m: MassDistribution = ctx.model("string")?;
    let u0 = u0_of(ctx)?;
    let cfg = SimConfig {
        h: ctx.res().h,
        dt: ctx.res().dt,
        t_end: ctx.cfg.t_end.unwrap_or(20.0),
        samples: ctx.cfg.samples.unwrap_or(20),
        ell: ctx.cfg.ell.unwrap_or(2.0),
        xi_max: ctx.cfg.xi_max,
    };
    let run = evolution::simulate(&m, &u0, &cfg)?;
    for w in &run.warnings {
        log::warn!("{w}");
    }
    let mut meta = vec![
        format!("u0: bump center={} width={} amplitude={}", u0.center, u0.width, u0.amplitude),
        format!("lattice: {} nodes on [0, {}], dt={}", run.lattice.len(), run.lattice.end(), run.dt),
        format!("front: mass quantile, tail fraction {FRONT_TAIL}; window length ell={}", cfg.ell),
        format!("string truncation xi_max={}; density {} assumed beyond", m.xi_max(), m.tail_rho()),
    ];
    meta.extend(run.warnings.iter().cloned());
    ctx.write_csv("diagnostics.csv", &meta, &run.diagnostics)?;
    let snaps: Vec<_> = run.snapshots.iter().flat_map(|s| evolution::snapshot_rows(&run.lattice, s)).collect();
    ctx.write_csv("snapshots.csv", &meta, &snaps)?;
    let first = run.diagnostics[1..].iter().find_map(|d| d.near_front_mass);
    let last = run.diagnostics.last().and_then(|d| d.near_front_mass);
    let mut out = serde_json::Map::new();
    out.insert("command".into(), ctx.command.name().into());
    out.insert("energy_drift".into(), run.energy_drift().into());
    out.insert("near_front_first".into(), first.into());
    out.insert("near_front_last".into(), last.into());
    if let (Some(a), Some(b)) = (first, last) {
        out.insert("near_front_ratio".into(), (b / a).into());
    }
    if ctx.cfg.spectral_check {
        let grid = SpectralGrid::new(ctx.res().lambda_max, ctx.res().n_lambda)?;
        let data = SpectralData::new(&m, &u0, grid)?;
        let s = run.final_state();
        let spec = data.evolve(&m, s.t, run.lattice.xi());
        let w = run.lattice.mass();
        let num: f64 = (0..w.len()).map(|i| w[i] * (s.u[i] - spec[i]).powi(2)).sum();
        let den: f64 = (0..w.len()).map(|i| w[i] * spec[i].powi(2)).sum();
        out.insert("spectral_rel_l2".into(), (num / den).sqrt().into());
        out.insert("spectral_warnings".into(), data.warnings.clone().into());
    }
    out.insert("notes".into(), meta.into());
    ctx.write_json("summary.json", &out)?;
    println!("simulated to t = {} on {} nodes", cfg.t_end, run.lattice.len());
    Ok(())
}

fn front(ctx: &Ctx) -> Result<(), KwError> {
    let m: MassDistribution = ctx.model("string")?;
    let f0 = match ctx.cfg.front0 {
        Some(f) => f,
        None => u0_of(ctx)?.front(),
    };
    let times = ctx.cfg.times.clone().unwrap_or_else(|| vec![0.0, 5.0, 10.0, 20.0]);
    #[derive(Serialize)]
    struct Row {
        t: f64,
        front_predicted: Option<f64>,
        front_literal: Option<f64>,
    }
    let rows = times
        .iter()
        .map(|&t| Ok(Row { t, front_predicted: wavefront(&m, f0, t)?, front_literal: wavefront_literal(&m, f0, t) }))
        .collect::<Result<Vec<_>, KwError>>()?;
    ctx.write_csv("front.csv", &[format!("front0: {f0}")], &rows)?;
    println!("{} times", rows.len());
    Ok(())
}

fn profile(ctx: &Ctx) -> Result<(), KwError> {
    let m: MassDistribution = ctx.model("string")?;
    let u0 = u0_of(ctx)?;
    let eta = ctx.cfg.eta.unwrap_or(Span { start: -40.0, stop: 40.0, step: 0.05 }).points()?;
    let grid = SpectralGrid::new(ctx.res().lambda_max, ctx.res().n_lambda)?;
    let tw = traveling_wave_profile(&m, &u0, &eta, grid)?;
    let mut meta = vec![
        format!("u0: bump center={} width={} amplitude={}", u0.center, u0.width, u0.amplitude),
        format!("norm_sq: {}", tw.norm_sq),
        format!("spectral_norm_sq: {}", tw.spectral_norm_sq),
        format!("relative_norm_error: {}", tw.relative_norm_error()),
    ];
    meta.extend(tw.notes.iter().cloned());
    #[derive(Serialize)]
    struct Row {
        eta: f64,
        g: f64,
    }
    let rows: Vec<Row> = tw.eta.iter().zip(&tw.g).map(|(&eta, &g)| Row { eta, g }).collect();
    ctx.write_csv("profile.csv", &meta, &rows)?;
    let mut out = serde_json::Map::new();
    out.insert("command".into(), ctx.command.name().into());
    out.insert("norm_sq".into(), tw.norm_sq.into());
    out.insert("spectral_norm_sq".into(), tw.spectral_norm_sq.into());
    out.insert("relative_norm_error".into(), tw.relative_norm_error().into());
    out.insert("notes".into(), tw.notes.clone().into());
    ctx.write_json("summary.json", &out)?;
    println!("‖G‖² = {:.6e}, 2‖g‖² = {:.6e}", tw.norm_sq, tw.spectral_norm_sq);
    Ok(())
}

fn spectrum(ctx: &Ctx) -> Result<(), KwError> {
    let m: MassDistribution = ctx.model("string")?;
    let lambda = ctx.cfg.lambda.clone().unwrap_or_else(|| (1..=100).map(|i| 0.1 * i as f64).collect());
    let est = spectral_density_estimate(&m, &lambda, ctx.res().eps)?;
    for w in &est.warnings {
        log::warn!("{w}");
    }
    #[derive(Serialize)]
    struct Row {
        lambda: f64,
        density: f64,
        density_boundary: f64,
        residual: f64,
    }
    let rows = lambda
        .iter()
        .zip(est.measure.density().iter().zip(&est.residuals))
        .map(|(&l, (&density, &residual))| {
            Ok(Row { lambda: l, density, density_boundary: spectral_density_boundary(&m, l)?, residual })
        })
        .collect::<Result<Vec<_>, KwError>>()?;
    let mut meta = vec![
        format!("density = Im q(λ + iε)/π with ε = {}", ctx.res().eps),
        "density_boundary = Im q(λ + i0)/π with the homogeneous tail continued past xi_max".to_string(),
        format!("string truncation xi_max={}; density {} assumed beyond", m.xi_max(), m.tail_rho()),
    ];
    meta.extend(est.warnings.iter().cloned());
    ctx.write_csv("density.csv", &meta, &rows)?;
    println!("{} points", rows.len());
    Ok(())
}

fn free_dirac(ctx: &Ctx, seed: u64) -> Result<(), KwError> {
    let zero = Complex64::new(0.0, 0.0);
    let (z, source) = match &ctx.cfg.dirac {
        Some(d) => {
            let mut z2: Vec<Complex64> = d.z2.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            z2.resize(d.z1.len().max(z2.len()), zero);
            let mut z1: Vec<Complex64> = d.z1.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            z1.resize(z2.len(), zero);
            (DiracSamples::new(d.h, z1, z2)?, "config".to_string())
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 200;
            let mut draw = || (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), 0.0)).collect::<Vec<_>>();
            let (z1, z2) = (draw(), draw());
            (DiracSamples::new(ctx.res().h, z1, z2)?, format!("random real data, seed {seed}"))
        }
    };
    let times = ctx.cfg.times.clone().unwrap_or_else(|| vec![1.0, 10.0, 100.0]);
    #[derive(Serialize)]
    struct Row {
        t: f64,
        norm_sq: f64,
        front: f64,
        front_expected: f64,
    }
    #[derive(Serialize)]
    struct Sample {
        t: f64,
        tau: f64,
        re_z1: f64,
        im_z1: f64,
        re_z2: f64,
        im_z2: f64,
    }
    let mut rows = vec![Row { t: 0.0, norm_sq: z.norm_sq(), front: z.front(), front_expected: z.front() }];
    let mut samples = Vec::new();
    for &t in &times {
        let u = free_dirac_evolution(&z, t)?;
        rows.push(Row { t, norm_sq: u.norm_sq(), front: u.front(), front_expected: t.abs() + z.front() });
        for j in 0..u.z1.len() {
            samples.push(Sample {
                t,
                tau: (j as f64 + 0.5) * u.h,
                re_z1: u.z1[j].re,
                im_z1: u.z1[j].im,
                re_z2: u.z2[j].re,
                im_z2: u.z2[j].im,
            });
        }
    }
    let meta = vec![format!("Z: {source}; h = {}", z.h), "z1 extended evenly, z2 oddly".to_string()];
    ctx.write_csv("free_dirac_norms.csv", &meta, &rows)?;
    ctx.write_csv("free_dirac.csv", &meta, &samples)?;
    println!("{} times", times.len());
    Ok(())
}

fn load_config(path: &Path) -> Result<RunConfig, KwError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| KwError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    serde_json::from_str(&text).map_err(|e| KwError::Validation(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), KwError> {
    let (mut cfg, base) = match &cli.config {
        Some(p) => (load_config(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (RunConfig::default(), PathBuf::new()),
    };
    let r = &mut cfg.resolution;
    if let Some(h) = cli.h {
        r.h = h;
    }
    if cli.dt.is_some() {
        r.dt = cli.dt;
    }
    if let Some(l) = cli.lambda_max {
        r.lambda_max = l;
    }
    if let Some(n) = cli.n_max {
        r.n_max = n;
    }
    if !(r.h > 0.0)
        || r.dt.is_some_and(|d| !(d > 0.0))
        || !(r.lambda_max > 0.0)
        || r.n_max == 0
        || r.n_lambda < 3
        || !(r.eps > 0.0)
    {
        return Err(KwError::Validation("resolutions must be positive".into()));
    }
    if cli.t_end.is_some() {
        cfg.t_end = cli.t_end;
    }
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let out = cli.out.clone().or_else(|| cfg.out.as_ref().map(|o| base.join(o))).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;
    let ctx = Ctx { command: cli.command, cfg, base, out };
    log::info!("{} -> {}", ctx.command.name(), ctx.out.display());
    match cli.command {
        Command::ClassifyString => classify_string(&ctx),
        Command::ClassifyDirac => classify_dirac(&ctx),
        Command::ClassifyCanonical => classify_canonical(&ctx),
        Command::ClassifyWvn => classify_wvn(&ctx),
        Command::Simulate => simulate(&ctx),
        Command::Front => front(&ctx),
        Command::Profile => profile(&ctx),
        Command::Spectrum => spectrum(&ctx),
        Command::FreeDirac => free_dirac(&ctx, seed),
    }
}

fn exit_code(e: &KwError) -> u8 {
    match e {
        KwError::Validation(_) | KwError::Domain(_) | KwError::Json(_) => 1,
        KwError::Io(_) => 2,
        KwError::Numerical(_) => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KW_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kw: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
