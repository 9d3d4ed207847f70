//! Criterion reports and the finite-sample convergence detector.
//!
//! The detector groups terms into dyadic blocks `B_k = Σ_{2^k ≤ n+1 < 2^{k+1}} a_n`
//! (the increments `S_{2N} − S_N`). A series behaves like `Σ B_k`, so the local decay
//! exponent `s = −d ln B_k / d ln k` separates geometric and fast polynomial decay in
//! `k` (convergent) from `B_k ≳ 1/k` (divergent). The verdict uses the least-squares
//! slope over the last few blocks, which tolerates slowly modulated terms.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Szego,
    NotSzego,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Szego => "Szego",
            Verdict::NotSzego => "NotSzego",
            Verdict::Inconclusive => "Inconclusive",
        };
        f.write_str(s)
    }
}

/// Thresholds of the dyadic-block detector.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Detector {
    /// Convergent when the fitted exponent is at least this.
    pub convergent_exponent: f64,
    /// Divergent when the fitted exponent is at most this.
    pub divergent_exponent: f64,
    /// Any single term above this is divergent outright.
    pub term_cap: f64,
    /// Number of trailing blocks in the fit.
    pub window: usize,
    /// Block sums below this are treated as zero.
    pub floor: f64,
}

impl Default for Detector {
    fn default() -> Self {
        Detector { convergent_exponent: 1.6, divergent_exponent: 1.0, term_cap: 1e3, window: 6, floor: 1e-13 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TailDiagnostics {
    /// Dyadic block sums, index `k` covers `n + 1 ∈ [2^k, 2^{k+1})`.
    pub block_sums: Vec<f64>,
    /// `B_{k+1}/B_k`.
    pub ratios: Vec<f64>,
    /// Local exponents `s_k = −ln(B_{k+1}/B_k) / ln((k+1)/k)`.
    pub exponents: Vec<f64>,
    /// Least-squares `−d ln B / d ln k` over the trailing blocks.
    pub fitted_exponent: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SzegoReport {
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub verdict: Verdict,
    pub reason: String,
    pub tail: TailDiagnostics,
    /// The η-grid (or τ-grid) the terms were computed on.
    pub partition: Vec<f64>,
    /// Truncation and tail assumptions behind the numbers.
    pub notes: Vec<String>,
}

impl SzegoReport {
    pub fn from_terms(terms: Vec<f64>, partition: Vec<f64>, notes: Vec<String>) -> Self {
        Self::with_detector(terms, partition, notes, &Detector::default())
    }

    pub fn with_detector(terms: Vec<f64>, partition: Vec<f64>, notes: Vec<String>, det: &Detector) -> Self {
        let mut acc = 0.0;
        let partial_sums = terms
            .iter()
            .map(|t| {
                acc += t;
                acc
            })
            .collect();
        let (verdict, reason, tail) = classify(&terms, det);
        SzegoReport { terms, partial_sums, verdict, reason, tail, partition, notes }
    }

    /// Overrides the verdict, keeping the terms.
    pub fn forced(mut self, verdict: Verdict, reason: impl Into<String>) -> Self {
        self.verdict = verdict;
        self.reason = reason.into();
        self
    }

    pub fn total(&self) -> f64 {
        self.partial_sums.last().copied().unwrap_or(0.0)
    }
}

/// Dyadic block sums over complete blocks.
pub fn block_sums(terms: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let lo = (1usize << k) - 1;
        let hi = (1usize << (k + 1)) - 1;
        if hi > terms.len() {
            break;
        }
        out.push(terms[lo..hi].iter().sum());
        k += 1;
    }
    out
}

/// Runs the detector on a term sequence.
pub fn classify(terms: &[f64], det: &Detector) -> (Verdict, String, TailDiagnostics) {
    if let Some((n, t)) = terms.iter().enumerate().find(|(_, t)| !t.is_finite() || **t > det.term_cap) {
        return (
            Verdict::NotSzego,
            format!("term {n} = {t:.3e} exceeds {:.0e}", det.term_cap),
            TailDiagnostics::default(),
        );
    }
    let blocks = block_sums(terms);
    let ratios: Vec<f64> = blocks.windows(2).map(|b| b[1] / b[0]).collect();
    let exponents: Vec<f64> = blocks
        .windows(2)
        .enumerate()
        .map(|(k, b)| {
            let (b0, b1) = (b[0].max(0.0), b[1].max(0.0));
            let small0 = b0 <= det.floor;
            let small1 = b1 <= det.floor;
            match (small0, small1) {
                (_, true) => f64::INFINITY,
                (true, false) => f64::NEG_INFINITY,
                _ if k == 0 => (b0 / b1).ln() / std::f64::consts::LN_2,
                _ => (b0 / b1).ln() / ((k + 1) as f64 / k as f64).ln(),
            }
        })
        .collect();
    let mut tail = TailDiagnostics { block_sums: blocks.clone(), ratios, exponents, fitted_exponent: None };
    if blocks.len() < det.window + 2 {
        return (
            Verdict::Inconclusive,
            format!("{} terms give only {} dyadic blocks", terms.len(), blocks.len()),
            tail,
        );
    }
    let first = blocks.len() - det.window;
    let last = &blocks[first..];
    if last.iter().all(|&b| b <= det.floor) {
        return (Verdict::Szego, format!("last {} dyadic blocks vanish", det.window), tail);
    }
    let pts: Vec<(f64, f64)> =
        last.iter().enumerate().map(|(i, &b)| (((first + i) as f64).ln(), b.max(det.floor).ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let s = -sxy / sxx;
    tail.fitted_exponent = Some(s);
    let span = format!("blocks {first}..{}", blocks.len() - 1);
    if s >= det.convergent_exponent {
        (
            Verdict::Szego,
            format!("dyadic increments decay like k^{:.2} over {span} (≥ {})", -s, det.convergent_exponent),
            tail,
        )
    } else if s <= det.divergent_exponent {
        (Verdict::NotSzego, format!("dyadic increments decay like k^{:.2} over {span}, no faster than 1/k", -s), tail)
    } else {
        (Verdict::Inconclusive, format!("ambiguous decay k^{:.2} over {span}", -s), tail)
    }
}
