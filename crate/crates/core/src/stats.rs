//! Chi-square tail probabilities, the Hosmer-Lemeshow test and calibration
//! bins.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::TrialRecord;

const EPS: f64 = 1e-15;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

/// Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // P(a, x) by its power series
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                break;
            }
        }
        (1.0 - sum * log_prefix.exp()).clamp(0.0, 1.0)
    } else {
        // Q(a, x) by continued fraction (modified Lentz)
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                break;
            }
        }
        (log_prefix.exp() * h).clamp(0.0, 1.0)
    }
}

/// Upper-tail probability of a chi-square variable with `dof` degrees of
/// freedom.
pub fn chi2_survival(x: f64, dof: u32) -> f64 {
    assert!(dof > 0, "chi-square needs at least one degree of freedom");
    if !(x > 0.0) {
        return 1.0;
    }
    gamma_q(dof as f64 / 2.0, x / 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HlGroup {
    pub n: usize,
    pub observed: usize,
    pub expected: f64,
    pub mean_prediction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HlResult {
    pub chi2: f64,
    pub dof: u32,
    pub p_value: f64,
    pub groups: Vec<HlGroup>,
}

/// Pairs each trial with its task's prediction.
pub fn pair_predictions(trials: &[TrialRecord], predictions: &HashMap<String, f64>) -> Result<Vec<(f64, bool)>> {
    trials
        .iter()
        .map(|t| {
            predictions
                .get(&t.task_id)
                .map(|&p| (p, t.success))
                .ok_or_else(|| Error::UnmatchedTrial(t.task_id.clone()))
        })
        .collect()
}

pub fn hosmer_lemeshow(trials: &[TrialRecord], predictions: &HashMap<String, f64>, groups: usize) -> Result<HlResult> {
    let mut pairs: Vec<(f64, bool, &str)> = trials
        .iter()
        .map(|t| {
            predictions
                .get(&t.task_id)
                .map(|&p| (p, t.success, t.task_id.as_str()))
                .ok_or_else(|| Error::UnmatchedTrial(t.task_id.clone()))
        })
        .collect::<Result<_>>()?;
    // stable sort keeps input order among identical (p, task) keys
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.2.cmp(b.2)));
    let sorted: Vec<(f64, bool)> = pairs.into_iter().map(|(p, y, _)| (p, y)).collect();
    hosmer_lemeshow_sorted(&sorted, groups)
}

/// Same as [`hosmer_lemeshow`] on `(prediction, outcome)` pairs.
pub fn hosmer_lemeshow_pairs(pairs: &[(f64, bool)], groups: usize) -> Result<HlResult> {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    hosmer_lemeshow_sorted(&sorted, groups)
}

fn hosmer_lemeshow_sorted(sorted: &[(f64, bool)], g: usize) -> Result<HlResult> {
    if g < 3 {
        return Err(Error::Domain(format!("need at least 3 groups, got {g}")));
    }
    let n = sorted.len();
    if n < g {
        return Err(Error::InsufficientData(format!("{n} trials for {g} groups")));
    }
    if let Some(p) = sorted.iter().map(|p| p.0).find(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Domain(format!("prediction {p} outside [0, 1]")));
    }
    let mut out = Vec::with_capacity(g);
    let mut chi2 = 0.0;
    let mut start = 0;
    for i in 0..g {
        let size = n / g + usize::from(i < n % g);
        let chunk = &sorted[start..start + size];
        start += size;
        let expected: f64 = chunk.iter().map(|p| p.0).sum();
        let observed = chunk.iter().filter(|p| p.1).count();
        let mean = expected / size as f64;
        if mean <= 0.0 || mean >= 1.0 {
            return Err(Error::DegenerateGroup { group: i, mean });
        }
        chi2 += (observed as f64 - expected).powi(2) / (expected * (1.0 - mean));
        out.push(HlGroup {
            n: size,
            observed,
            expected,
            mean_prediction: mean,
        });
    }
    let dof = (g - 2) as u32;
    Ok(HlResult {
        chi2,
        dof,
        p_value: chi2_survival(chi2, dof),
        groups: out,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub predicted_mean: f64,
    pub observed_acc: f64,
    pub n: usize,
}

/// Equal-width bins on the predicted probability; empty bins are omitted.
pub fn calibration_bins(
    trials: &[TrialRecord],
    predictions: &HashMap<String, f64>,
    n_bins: usize,
) -> Result<Vec<CalibrationBin>> {
    Ok(calibration_bins_pairs(&pair_predictions(trials, predictions)?, n_bins))
}

pub fn calibration_bins_pairs(pairs: &[(f64, bool)], n_bins: usize) -> Vec<CalibrationBin> {
    let nb = n_bins.max(1);
    let mut acc = vec![(0usize, 0usize, 0.0f64); nb];
    for &(p, y) in pairs {
        let j = ((p.clamp(0.0, 1.0) * nb as f64) as usize).min(nb - 1);
        acc[j].0 += 1;
        acc[j].1 += usize::from(y);
        acc[j].2 += p;
    }
    acc.into_iter()
        .enumerate()
        .filter(|(_, a)| a.0 > 0)
        .map(|(j, (n, s, sum))| CalibrationBin {
            bin_lo: j as f64 / nb as f64,
            bin_hi: (j + 1) as f64 / nb as f64,
            predicted_mean: sum / n as f64,
            observed_acc: s as f64 / n as f64,
            n,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_statistic_has_p_one() {
        for dof in 1..20 {
            assert_eq!(chi2_survival(0.0, dof), 1.0);
        }
    }

    #[test]
    fn closed_forms() {
        // dof 2: exp(-x/2)
        for x in [0.1, 1.0, 5.0, 30.0] {
            assert!((chi2_survival(x, 2) - (-x / 2.0).exp()).abs() < 1e-14);
        }
        // ln Γ(n) = ln (n-1)!
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn perfect_calibration() {
        // each group of 10 has prediction 0.3 and exactly 3 successes
        let sorted: Vec<(f64, bool)> = (0..10).flat_map(|_| (0..10).map(|j| (0.3, j < 3))).collect();
        let r = hosmer_lemeshow_sorted(&sorted, 10).unwrap();
        assert!(r.chi2.abs() < 1e-20);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.dof, 8);
    }

    #[test]
    fn degenerate_group() {
        let pairs: Vec<(f64, bool)> = (0..30).map(|i| (if i < 10 { 1.0 } else { 0.5 }, true)).collect();
        assert!(matches!(
            hosmer_lemeshow_pairs(&pairs, 3),
            Err(Error::DegenerateGroup { group: 2, .. })
        ));
    }

    #[test]
    fn too_few_trials() {
        let pairs = vec![(0.5, true); 5];
        assert!(matches!(hosmer_lemeshow_pairs(&pairs, 10), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn single_trial_bin() {
        let bins = calibration_bins_pairs(&[(0.5, true)], 10);
        assert_eq!(bins.len(), 1);
        assert_eq!((bins[0].predicted_mean, bins[0].observed_acc, bins[0].n), (0.5, 1.0, 1));
    }
}
