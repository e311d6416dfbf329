//! Canonical-proportion measure (share of utterances with a CV or VC
//! transition) and age-binned child trajectories with bootstrap intervals.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::{PhoneClass, TargetInventory};

pub const BOOTSTRAP_REPLICATES: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum DevError {
    #[error("empty utterance set")]
    EmptySet,
    #[error("label {0} is outside the inventory")]
    UnknownLabel(usize),
}

/// True iff some adjacent pair is consonant-vowel or vowel-consonant.
pub fn is_canonical_classes(classes: &[PhoneClass]) -> bool {
    classes.windows(2).any(|w| w[0] != w[1])
}

/// Labels index `inv`; an empty decode is non-canonical.
pub fn is_canonical(labels: &[usize], inv: &TargetInventory) -> Result<bool, DevError> {
    let classes = labels
        .iter()
        .map(|&l| inv.get(l).map(|p| p.class).ok_or(DevError::UnknownLabel(l)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(is_canonical_classes(&classes))
}

pub fn canonical_proportion(utts: &[Vec<usize>], inv: &TargetInventory) -> Result<f64, DevError> {
    if utts.is_empty() {
        return Err(DevError::EmptySet);
    }
    let mut hits = 0usize;
    for u in utts {
        hits += usize::from(is_canonical(u, inv)?);
    }
    Ok(hits as f64 / utts.len() as f64)
}

/// One decoded utterance as needed for trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct AgedUtterance {
    pub child_id: String,
    pub age_months: f64,
    pub canonical: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub age_bin: u32,
    pub proportion: f64,
    pub n_utts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub child_id: String,
    pub points: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupPoint {
    pub age_bin: u32,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_children: usize,
    /// Fewer than two children in the bin, so the interval collapses.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub children: Vec<Trajectory>,
    pub group: Vec<GroupPoint>,
}

impl TrajectoryReport {
    pub fn children_tsv(&self) -> String {
        let mut out = String::from("child_id\tage_bin\tproportion\tn\n");
        for c in &self.children {
            for p in &c.points {
                out.push_str(&format!("{}\t{}\t{:.6}\t{}\n", c.child_id, p.age_bin, p.proportion, p.n_utts));
            }
        }
        out
    }

    pub fn group_tsv(&self) -> String {
        let mut out = String::from("age_bin\tmean\tci_lo\tci_hi\tn_children\tdegenerate\n");
        for g in &self.group {
            out.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\n",
                g.age_bin, g.mean, g.ci_lo, g.ci_hi, g.n_children, g.degenerate
            ));
        }
        out
    }
}

/// Independent stream for bootstrap replicate `b`.
fn replicate_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(b as u64 + 1);
    r
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Percentile interval of `stat` over child resamples, widened if needed so
/// it always contains `point`.
fn bootstrap_ci<F: Fn(&[usize]) -> Option<f64>>(n: usize, point: f64, replicates: usize, seed: u64, stat: F) -> (f64, f64) {
    let mut draws = Vec::with_capacity(replicates);
    let mut idx = vec![0usize; n];
    for b in 0..replicates {
        let mut rng = replicate_rng(seed, b);
        for slot in idx.iter_mut() {
            *slot = rng.gen_range(0..n);
        }
        if let Some(v) = stat(&idx) {
            draws.push(v);
        }
    }
    if draws.is_empty() {
        return (point, point);
    }
    draws.sort_by(f64::total_cmp);
    let lo = percentile(&draws, 0.025).min(point);
    let hi = percentile(&draws, 0.975).max(point);
    (lo, hi)
}

/// Per-child monthly proportions and the group mean curve. The group value
/// of a bin is the mean over children present in it; its interval resamples
/// those children `replicates` times.
pub fn trajectories(utts: &[AgedUtterance], replicates: usize, seed: u64) -> TrajectoryReport {
    let mut per_child: BTreeMap<&str, BTreeMap<u32, (usize, usize)>> = BTreeMap::new();
    for u in utts {
        let bin = u.age_months.max(0.0).floor() as u32;
        let e = per_child.entry(&u.child_id).or_default().entry(bin).or_default();
        e.0 += usize::from(u.canonical);
        e.1 += 1;
    }
    let children: Vec<Trajectory> = per_child
        .iter()
        .map(|(id, bins)| Trajectory {
            child_id: id.to_string(),
            points: bins
                .iter()
                .map(|(&age_bin, &(hit, n))| TrajectoryPoint {
                    age_bin,
                    proportion: hit as f64 / n as f64,
                    n_utts: n,
                })
                .collect(),
        })
        .collect();
    let mut by_bin: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for c in &children {
        for p in &c.points {
            by_bin.entry(p.age_bin).or_default().push(p.proportion);
        }
    }
    let group = by_bin
        .into_iter()
        .map(|(age_bin, vals)| {
            let m = mean(&vals);
            let degenerate = vals.len() < 2;
            let (ci_lo, ci_hi) = if degenerate {
                (m, m)
            } else {
                let bin_seed = seed ^ (age_bin as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                bootstrap_ci(vals.len(), m, replicates, bin_seed, |idx| {
                    Some(idx.iter().map(|&i| vals[i]).sum::<f64>() / idx.len() as f64)
                })
            };
            GroupPoint {
                age_bin,
                mean: m,
                ci_lo,
                ci_hi,
                n_children: vals.len(),
                degenerate,
            }
        })
        .collect();
    TrajectoryReport { children, group }
}

/// Least-squares line through all child-bin points, with child-bootstrap
/// intervals for the slope and for the fitted value at the youngest and
/// oldest bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeEstimate {
    pub slope: f64,
    pub intercept: f64,
    pub slope_ci: (f64, f64),
    pub first_bin: u32,
    pub last_bin: u32,
    pub fitted_first: f64,
    pub fitted_first_ci: (f64, f64),
    pub fitted_last: f64,
    pub fitted_last_ci: (f64, f64),
}

fn fit_line(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

pub fn group_slope(report: &TrajectoryReport, replicates: usize, seed: u64) -> Option<SlopeEstimate> {
    let per_child: Vec<Vec<(f64, f64)>> = report
        .children
        .iter()
        .map(|c| c.points.iter().map(|p| (p.age_bin as f64, p.proportion)).collect())
        .collect();
    let all: Vec<(f64, f64)> = per_child.iter().flatten().copied().collect();
    let (slope, intercept) = fit_line(&all)?;
    let first_bin = report.group.first()?.age_bin;
    let last_bin = report.group.last()?.age_bin;
    let (x0, x1) = (first_bin as f64, last_bin as f64);
    let refit = |idx: &[usize]| {
        let pts: Vec<(f64, f64)> = idx.iter().flat_map(|&i| per_child[i].iter().copied()).collect();
        fit_line(&pts)
    };
    let n = per_child.len();
    let slope_ci = bootstrap_ci(n, slope, replicates, seed, |idx| refit(idx).map(|f| f.0));
    let fitted_first = intercept + slope * x0;
    let fitted_last = intercept + slope * x1;
    let fitted_first_ci = bootstrap_ci(n, fitted_first, replicates, seed, |idx| refit(idx).map(|(s, b)| b + s * x0));
    let fitted_last_ci = bootstrap_ci(n, fitted_last, replicates, seed, |idx| refit(idx).map(|(s, b)| b + s * x1));
    Some(SlopeEstimate {
        slope,
        intercept,
        slope_ci,
        first_bin,
        last_bin,
        fitted_first,
        fitted_first_ci,
        fitted_last,
        fitted_last_ci,
    })
}
