//! Groups examples by pair-count mass and reports mean task score per bin.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BIN_COUNT: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinSpec {
    /// Equal-width bins spanning the observed range.
    Count(usize),
    /// Bins of a fixed width starting at the observed minimum.
    Width(f64),
    /// Explicit increasing edges; they must cover every mass value.
    Edges(Vec<f64>),
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec::Count(DEFAULT_BIN_COUNT)
    }
}

/// Bin `i` covers `[edges[i], edges[i+1])`; the last bin is closed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedPerformance {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// `None` for empty bins.
    pub means: Vec<Option<f64>>,
}

impl BinnedPerformance {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count,mean_score\n");
        for i in 0..self.counts.len() {
            let mean = self.means[i].map(|m| m.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", self.edges[i], self.edges[i + 1], self.counts[i], mean);
        }
        out
    }
}

fn make_edges(lo: f64, hi: f64, spec: &BinSpec) -> Result<Vec<f64>> {
    if lo == hi && !matches!(spec, BinSpec::Edges(_)) {
        return Ok(vec![lo, hi]);
    }
    match spec {
        BinSpec::Count(k) => {
            if *k == 0 {
                return Err(Error::InvalidArgument("bin count must be positive".into()));
            }
            let w = (hi - lo) / *k as f64;
            let mut e: Vec<f64> = (0..*k).map(|i| lo + w * i as f64).collect();
            e.push(hi);
            Ok(e)
        }
        BinSpec::Width(w) => {
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::InvalidArgument(format!("bin width {w} must be positive")));
            }
            let k = ((hi - lo) / w).floor() as usize + 1;
            Ok((0..=k).map(|i| lo + w * i as f64).collect())
        }
        BinSpec::Edges(e) => {
            if e.len() < 2 || e.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
                return Err(Error::InvalidArgument("edges must be strictly increasing, at least two".into()));
            }
            if lo < e[0] || hi > e[e.len() - 1] {
                return Err(Error::InvalidArgument(format!(
                    "edges [{}, {}] do not cover masses [{lo}, {hi}]",
                    e[0],
                    e[e.len() - 1]
                )));
            }
            Ok(e.clone())
        }
    }
}

fn bin_of(edges: &[f64], v: f64) -> usize {
    let last = edges.len() - 2;
    // first edge strictly greater than v, minus one
    edges.partition_point(|&e| e <= v).saturating_sub(1).min(last)
}

pub fn bin_by_mass(masses: &[f64], scores: &[f64], spec: &BinSpec) -> Result<BinnedPerformance> {
    if masses.len() != scores.len() {
        return Err(Error::InvalidArgument(format!(
            "{} masses but {} scores",
            masses.len(),
            scores.len()
        )));
    }
    if masses.is_empty() {
        return Err(Error::Empty("no examples to bin".into()));
    }
    if masses.iter().chain(scores).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("masses and scores must be finite".into()));
    }
    let lo = masses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = masses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let edges = make_edges(lo, hi, spec)?;
    let k = edges.len() - 1;
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k];
    for (&m, &s) in masses.iter().zip(scores) {
        let b = bin_of(&edges, m);
        counts[b] += 1;
        sums[b] += s;
    }
    let means = counts
        .iter()
        .zip(&sums)
        .map(|(&c, &s)| (c > 0).then(|| s / c as f64))
        .collect();
    Ok(BinnedPerformance { edges, counts, means })
}
