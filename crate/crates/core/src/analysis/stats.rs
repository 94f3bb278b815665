//! Rank statistics: Spearman's rho with midrank ties and the normalized
//! Kendall tau distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    SpearmanRho,
    KendallDistance,
}

/// Pairs of observations tied on x, on y, or on both.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieCounts {
    pub x: u64,
    pub y: u64,
    pub joint: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub kind: StatKind,
    pub value: f64,
    /// Two-sided p-value (Spearman only).
    pub p_value: Option<f64>,
    pub sample_size: usize,
    pub ties: TieCounts,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PValueMethod {
    /// Student t approximation with n - 2 degrees of freedom.
    #[default]
    TApproximation,
    /// Exact enumeration of all permutations; n <= 10 only.
    Permutation,
}

pub const MAX_PERMUTATION_N: usize = 10;

fn check_inputs(xs: &[f64], ys: &[f64], min_n: usize) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::Statistics(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < min_n {
        return Err(Error::Statistics(format!(
            "need at least {min_n} observations, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Statistics("non-finite observation".into()));
    }
    Ok(())
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn tied_pairs(values: &[f64]) -> u64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut total = 0u64;
    let mut i = 0;
    while i < v.len() {
        let j = i + v[i..].iter().take_while(|&&x| x == v[i]).count();
        let g = (j - i) as u64;
        total += g * (g - 1) / 2;
        i = j;
    }
    total
}

fn joint_tied_pairs(xs: &[f64], ys: &[f64]) -> u64 {
    let mut v: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut total = 0u64;
    let mut i = 0;
    while i < v.len() {
        let j = i + v[i..].iter().take_while(|&&p| p == v[i]).count();
        let g = (j - i) as u64;
        total += g * (g - 1) / 2;
        i = j;
    }
    total
}

/// Pearson correlation of two rank vectors, summed in a canonical order so
/// the result does not depend on observation order.
fn rank_correlation(rx: &[f64], ry: &[f64]) -> Result<f64> {
    let mut pairs: Vec<(f64, f64)> = rx.iter().copied().zip(ry.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Statistics("degenerate ranking".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn t_p_value(rho: f64, n: usize) -> f64 {
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

fn permutation_p_value(rx: &[f64], ry: &[f64], observed: f64) -> Result<f64> {
    let n = rx.len();
    if n > MAX_PERMUTATION_N {
        return Err(Error::Statistics(format!(
            "exact permutation p-value supports n <= {MAX_PERMUTATION_N}, got {n}"
        )));
    }
    let mut perm = ry.to_vec();
    let mut extreme = 0u64;
    let mut total = 0u64;
    let threshold = observed.abs() - 1e-12;
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut visit = |p: &[f64]| -> Result<()> {
        total += 1;
        if rank_correlation(rx, p)?.abs() >= threshold {
            extreme += 1;
        }
        Ok(())
    };
    visit(&perm)?;
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm)?;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(extreme as f64 / total as f64)
}

pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
    spearman_rho_with(xs, ys, PValueMethod::TApproximation)
}

pub fn spearman_rho_with(xs: &[f64], ys: &[f64], method: PValueMethod) -> Result<CorrelationResult> {
    check_inputs(xs, ys, 3)?;
    let rx = midranks(xs);
    let ry = midranks(ys);
    let rho = rank_correlation(&rx, &ry)?;
    let p = match method {
        PValueMethod::TApproximation => t_p_value(rho, xs.len()),
        PValueMethod::Permutation => permutation_p_value(&rx, &ry, rho)?,
    };
    Ok(CorrelationResult {
        kind: StatKind::SpearmanRho,
        value: rho,
        p_value: Some(p),
        sample_size: xs.len(),
        ties: TieCounts {
            x: tied_pairs(xs),
            y: tied_pairs(ys),
            joint: joint_tied_pairs(xs, ys),
        },
    })
}

/// Fraction of observation pairs ordered oppositely by `xs` and `ys`.
/// Pairs tied on either side count as neither concordant nor discordant.
pub fn kendall_tau_distance(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
    check_inputs(xs, ys, 2)?;
    let n = xs.len();
    let (discordant, tx, ty, joint) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = (0u64, 0u64, 0u64, 0u64);
            for j in i + 1..n {
                let dx = xs[i].total_cmp(&xs[j]);
                let dy = ys[i].total_cmp(&ys[j]);
                let (x_tie, y_tie) = (xs[i] == xs[j], ys[i] == ys[j]);
                if x_tie {
                    acc.1 += 1;
                }
                if y_tie {
                    acc.2 += 1;
                }
                if x_tie && y_tie {
                    acc.3 += 1;
                }
                if !x_tie && !y_tie && dx != dy {
                    acc.0 += 1;
                }
            }
            acc
        })
        .reduce(|| (0, 0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3));
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(CorrelationResult {
        kind: StatKind::KendallDistance,
        value: discordant as f64 / pairs,
        p_value: None,
        sample_size: n,
        ties: TieCounts { x: tx, y: ty, joint },
    })
}
