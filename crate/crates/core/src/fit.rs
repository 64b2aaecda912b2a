//! Load/success decay profiles: `accuracy ≈ exp(-(k·load + b))`.
//!
//! Trials are binned into equal-width load intervals and the profile is fit by
//! count-weighted least squares on `ln(accuracy)`, which is linear in `(k, b)`.
//! The solution is projected onto `k >= K_MIN, b >= 0`. An optional
//! refinement maximizes the per-trial Bernoulli likelihood starting from that
//! solution.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible load sensitivity.
pub const K_MIN: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrialRecord {
    pub task_id: String,
    pub agent_id: String,
    pub success: bool,
}

/// Predicted accuracy for a load.
pub fn predict_accuracy(k: f64, b: f64, cl_total: f64) -> Result<f64> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::Domain(format!("k must be > 0, got {k}")));
    }
    if !(b.is_finite() && b >= 0.0) {
        return Err(Error::Domain(format!("b must be >= 0, got {b}")));
    }
    if !(cl_total >= 0.0) {
        return Err(Error::Domain(format!("load must be >= 0, got {cl_total}")));
    }
    Ok((-(k * cl_total + b)).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitBin {
    pub load_lo: f64,
    pub load_hi: f64,
    pub load_mid: f64,
    /// Mean load of the trials in the bin; the regression abscissa.
    pub load_mean: f64,
    pub empirical_acc: f64,
    pub n: usize,
    pub successes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    LogLinear,
    LogLinearMle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CognitiveProfile {
    pub agent_id: String,
    pub k: f64,
    pub b: f64,
    pub fit_bins: Vec<FitBin>,
    pub residual_sse: f64,
    pub n_trials: usize,
    pub overall_accuracy: f64,
    pub method: FitMethod,
}

impl CognitiveProfile {
    pub fn predict(&self, cl_total: f64) -> f64 {
        (-(self.k * cl_total.max(0.0) + self.b)).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub n_bins: usize,
    /// Bins with fewer trials are merged into their right neighbour.
    pub min_bin_count: usize,
    pub min_bins: usize,
    /// Bernoulli maximum-likelihood refinement after the log-linear fit.
    pub refine: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_bins: 10,
            min_bin_count: 5,
            min_bins: 3,
            refine: false,
        }
    }
}

/// Equal-width bins over the observed load range, sparse bins merged.
pub fn bin_trials(points: &[(f64, bool)], opts: &FitOptions) -> Result<Vec<FitBin>> {
    if points.is_empty() {
        return Err(Error::InsufficientData("no trials".into()));
    }
    if let Some((x, _)) = points.iter().find(|(x, _)| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Domain(format!("load must be finite and >= 0, got {x}")));
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        return Err(Error::DegenerateLoads(lo));
    }
    let nb = opts.n_bins.max(1);
    let width = (hi - lo) / nb as f64;

    let mut raw = vec![(0usize, 0usize, 0.0f64); nb];
    for &(x, ok) in points {
        let j = (((x - lo) / width) as usize).min(nb - 1);
        raw[j].0 += 1;
        raw[j].1 += usize::from(ok);
        raw[j].2 += x;
    }

    let edge = |j: usize| if j == nb { hi } else { lo + width * j as f64 };
    let make = |from: usize, to: usize, n: usize, s: usize, sum: f64| FitBin {
        load_lo: edge(from),
        load_hi: edge(to),
        load_mid: 0.5 * (edge(from) + edge(to)),
        load_mean: sum / n as f64,
        empirical_acc: s as f64 / n as f64,
        n,
        successes: s,
    };

    let mut bins: Vec<FitBin> = Vec::new();
    let mut starts: Vec<usize> = Vec::new();
    let mut pending: Option<(usize, usize, usize, f64)> = None;
    for (j, &(n, s, sum)) in raw.iter().enumerate() {
        let (from, pn, ps, psum) = match pending.take() {
            Some(p) => p,
            None if n == 0 => continue,
            None => (j, 0, 0, 0.0),
        };
        let (n, s, sum) = (pn + n, ps + s, psum + sum);
        if n >= opts.min_bin_count {
            starts.push(from);
            bins.push(make(from, j + 1, n, s, sum));
        } else {
            pending = Some((from, n, s, sum));
        }
    }
    if let Some((from, n, s, sum)) = pending.filter(|p| p.1 > 0) {
        match bins.last_mut() {
            Some(last) => {
                let (n2, s2, sum2) = (last.n + n, last.successes + s, last.load_mean * last.n as f64 + sum);
                *last = make(*starts.last().unwrap(), nb, n2, s2, sum2);
            }
            None => bins.push(make(from, nb, n, s, sum)),
        }
    }
    Ok(bins)
}

/// Count-weighted least squares of `ln(acc)` on load over the bins, projected
/// onto the constraint box. Returns `(k, b)`.
pub fn fit_bins(bins: &[FitBin]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64, f64)> = bins
        .iter()
        .filter(|b| b.n > 0)
        .map(|b| {
            let n = b.n as f64;
            let acc = b.empirical_acc.max(0.5 / n);
            (b.load_mean, acc.ln(), n)
        })
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData(format!("{} usable bin(s)", pts.len())));
    }
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, w) in &pts {
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let det = sw * sxx - sx * sx;
    if det.abs() <= 1e-12 * sw * sxx {
        return Err(Error::DegenerateLoads(pts[0].0));
    }
    // ln(acc) = -b - k x
    let objective = |k: f64, b: f64| pts.iter().map(|&(x, y, w)| w * (y + k * x + b).powi(2)).sum::<f64>();

    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / sw;
    let mut candidates = vec![(-slope, -intercept)];
    if sxx > 0.0 {
        candidates.push(((-sxy / sxx).max(K_MIN), 0.0));
    }
    candidates.push((K_MIN, (-(sy + K_MIN * sx) / sw).max(0.0)));
    candidates.push((K_MIN, 0.0));

    let best = candidates
        .into_iter()
        .filter(|&(k, b)| k >= K_MIN && b >= 0.0)
        .map(|(k, b)| (objective(k, b), k, b))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("corner candidate is always feasible");
    Ok((best.1, best.2))
}

fn log_likelihood(points: &[(f64, bool)], k: f64, b: f64) -> f64 {
    points
        .iter()
        .map(|&(x, ok)| {
            let eta = k * x + b;
            if ok {
                -eta
            } else {
                (-(-eta).exp_m1()).ln()
            }
        })
        .sum()
}

/// Projected Newton ascent on the Bernoulli log-likelihood.
pub fn refine_mle(points: &[(f64, bool)], k0: f64, b0: f64) -> (f64, f64) {
    let project = |k: f64, b: f64| (k.max(K_MIN), b.max(0.0));
    let (mut k, mut b) = project(k0, b0);
    let mut ll = log_likelihood(points, k, b);
    if !ll.is_finite() {
        // nudge off the boundary where a failure sits at zero load
        b = b.max(1e-3);
        ll = log_likelihood(points, k, b);
    }
    for _ in 0..200 {
        let (mut gk, mut gb, mut hkk, mut hkb, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x, ok) in points {
            let eta = k * x + b;
            let (g, h) = if ok {
                (-1.0, 0.0)
            } else {
                let em1 = eta.exp_m1();
                (1.0 / em1, -(em1 + 1.0) / (em1 * em1))
            };
            gk += g * x;
            gb += g;
            hkk += h * x * x;
            hkb += h * x;
            hbb += h;
        }
        let det = hkk * hbb - hkb * hkb;
        let (dk, db) = if det.abs() > 1e-300 && det.is_finite() {
            (-(hbb * gk - hkb * gb) / det, -(hkk * gb - hkb * gk) / det)
        } else {
            (gk * 1e-6, gb * 1e-6)
        };
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let (nk, nb) = project(k + step * dk, b + step * db);
            let nll = log_likelihood(points, nk, nb);
            if nll.is_finite() && nll >= ll {
                let moved = (nk - k).abs() + (nb - b).abs();
                improved = moved > 0.0;
                k = nk;
                b = nb;
                ll = nll;
                break;
            }
            step *= 0.5;
        }
        if !improved || (dk * step).abs() < 1e-12 && (db * step).abs() < 1e-12 {
            break;
        }
    }
    (k, b)
}

/// Fits one agent's profile. Every trial must belong to the same agent and
/// have a load.
pub fn fit_profile(
    trials: &[TrialRecord],
    loads: &HashMap<String, f64>,
    opts: &FitOptions,
) -> Result<CognitiveProfile> {
    let agent_id = match trials.first() {
        Some(t) => t.agent_id.clone(),
        None => return Err(Error::InsufficientData("no trials".into())),
    };
    if let Some(t) = trials.iter().find(|t| t.agent_id != agent_id) {
        return Err(Error::Domain(format!(
            "fit_profile got trials for `{agent_id}` and `{}`",
            t.agent_id
        )));
    }
    let points = trials
        .iter()
        .map(|t| {
            loads
                .get(&t.task_id)
                .map(|&x| (x, t.success))
                .ok_or_else(|| Error::UnmatchedTrial(t.task_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    fit_points(&agent_id, &points, opts)
}

pub fn fit_points(agent_id: &str, points: &[(f64, bool)], opts: &FitOptions) -> Result<CognitiveProfile> {
    let bins = bin_trials(points, opts)?;
    if bins.len() < opts.min_bins.max(2) {
        return Err(Error::InsufficientData(format!(
            "{} bin(s) after merging, need {}",
            bins.len(),
            opts.min_bins.max(2)
        )));
    }
    let (mut k, mut b) = fit_bins(&bins)?;
    let mut method = FitMethod::LogLinear;
    if opts.refine {
        (k, b) = refine_mle(points, k, b);
        method = FitMethod::LogLinearMle;
    }
    let residual_sse = bins
        .iter()
        .map(|bin| (bin.empirical_acc - (-(k * bin.load_mean + b)).exp()).powi(2))
        .sum();
    let successes = points.iter().filter(|p| p.1).count();
    Ok(CognitiveProfile {
        agent_id: agent_id.to_string(),
        k,
        b,
        fit_bins: bins,
        residual_sse,
        n_trials: points.len(),
        overall_accuracy: successes as f64 / points.len() as f64,
        method,
    })
}

/// One profile per agent, sorted by agent id.
pub fn fit_profiles(
    trials: &[TrialRecord],
    loads: &HashMap<String, f64>,
    opts: &FitOptions,
) -> Vec<(String, Result<CognitiveProfile>)> {
    let mut by_agent: BTreeMap<&str, Vec<TrialRecord>> = BTreeMap::new();
    for t in trials {
        by_agent.entry(&t.agent_id).or_default().push(t.clone());
    }
    let groups: Vec<(&str, Vec<TrialRecord>)> = by_agent.into_iter().collect();
    groups
        .par_iter()
        .map(|(agent, ts)| (agent.to_string(), fit_profile(ts, loads, opts)))
        .collect()
}
