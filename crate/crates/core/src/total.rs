//! Tercile bucketing, accuracy drops, omega_e calibration and the combined
//! total load.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::TrialRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Low,
    Medium,
    High,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Low, Bucket::Medium, Bucket::High];

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Low => "low",
            Bucket::Medium => "medium",
            Bucket::High => "high",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadDimension {
    Cli,
    Cle,
    ClTotal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucketing {
    pub dimension: LoadDimension,
    /// Largest load in the Low bucket and in the Medium bucket.
    pub boundaries: [f64; 2],
    pub assignment: BTreeMap<String, Bucket>,
}

impl Bucketing {
    pub fn sizes(&self) -> [usize; 3] {
        let mut s = [0; 3];
        for b in self.assignment.values() {
            s[*b as usize] += 1;
        }
        s
    }
}

/// Splits tasks into equal thirds by ascending load (ties broken by task id).
/// When the count is not a multiple of three the extra tasks go to Low, then
/// Medium.
pub fn tercile_buckets(loads: &[(String, f64)], dimension: LoadDimension) -> Result<Bucketing> {
    let n = loads.len();
    if n < 3 {
        return Err(Error::TooFewTasks(n));
    }
    let mut sorted: Vec<&(String, f64)> = loads.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));

    let base = n / 3;
    let low = base + usize::from(n % 3 >= 1);
    let medium = base + usize::from(n % 3 >= 2);
    let assignment = sorted
        .iter()
        .enumerate()
        .map(|(i, (id, _))| {
            let b = if i < low {
                Bucket::Low
            } else if i < low + medium {
                Bucket::Medium
            } else {
                Bucket::High
            };
            (id.clone(), b)
        })
        .collect();
    Ok(Bucketing {
        dimension,
        boundaries: [sorted[low - 1].1, sorted[low + medium - 1].1],
        assignment,
    })
}

/// Mean success per bucket, with the number of trials behind each.
pub fn bucket_accuracy(trials: &[TrialRecord], buckets: &Bucketing) -> Result<[(f64, usize); 3]> {
    let mut succ = [0usize; 3];
    let mut n = [0usize; 3];
    for t in trials {
        let b = *buckets
            .assignment
            .get(&t.task_id)
            .ok_or_else(|| Error::UnmatchedTrial(t.task_id.clone()))?;
        n[b as usize] += 1;
        succ[b as usize] += usize::from(t.success);
    }
    let mut out = [(0.0, 0); 3];
    for b in Bucket::ALL {
        let i = b as usize;
        if n[i] == 0 {
            return Err(Error::EmptyBucket(b.name()));
        }
        out[i] = (succ[i] as f64 / n[i] as f64, n[i]);
    }
    Ok(out)
}

/// Low-bucket accuracy minus High-bucket accuracy.
pub fn accuracy_drop(trials: &[TrialRecord], buckets: &Bucketing) -> Result<f64> {
    let acc = bucket_accuracy(trials, buckets)?;
    Ok(acc[Bucket::Low as usize].0 - acc[Bucket::High as usize].0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaCalibration {
    pub agent_id: String,
    pub omega_e: f64,
    pub drop_cli: f64,
    pub drop_cle: f64,
    /// Set when a negative extraneous drop was floored to `omega_e = 0`.
    pub clamped: bool,
    pub bucket_boundaries: BucketBoundaries,
    pub tercile_accuracy: TercileAccuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketBoundaries {
    pub cli: [f64; 2],
    pub cle: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TercileAccuracy {
    pub cli: [f64; 3],
    pub cle: [f64; 3],
}

/// Ratio of the accuracy drop across CL_E terciles to the drop across CL_I
/// terciles. Only tasks that appear in `trials` are bucketed.
pub fn calibrate_omega(
    agent_id: &str,
    trials: &[TrialRecord],
    cli_loads: &HashMap<String, f64>,
    cle_loads: &HashMap<String, f64>,
) -> Result<OmegaCalibration> {
    let cli = tercile_buckets(&loads_for(trials, cli_loads)?, LoadDimension::Cli)?;
    let cle = tercile_buckets(&loads_for(trials, cle_loads)?, LoadDimension::Cle)?;
    let acc_i = bucket_accuracy(trials, &cli)?;
    let acc_e = bucket_accuracy(trials, &cle)?;
    let drop_cli = acc_i[0].0 - acc_i[2].0;
    let drop_cle = acc_e[0].0 - acc_e[2].0;
    if drop_cli <= 0.0 {
        return Err(Error::DegenerateCalibration { drop_cli });
    }
    let ratio = drop_cle / drop_cli;
    Ok(OmegaCalibration {
        agent_id: agent_id.to_string(),
        omega_e: ratio.max(0.0),
        drop_cli,
        drop_cle,
        clamped: ratio < 0.0,
        bucket_boundaries: BucketBoundaries {
            cli: cli.boundaries,
            cle: cle.boundaries,
        },
        tercile_accuracy: TercileAccuracy {
            cli: acc_i.map(|a| a.0),
            cle: acc_e.map(|a| a.0),
        },
    })
}

fn loads_for(trials: &[TrialRecord], loads: &HashMap<String, f64>) -> Result<Vec<(String, f64)>> {
    let mut out = BTreeMap::new();
    for t in trials {
        let l = loads
            .get(&t.task_id)
            .ok_or_else(|| Error::UnmatchedTrial(t.task_id.clone()))?;
        out.insert(t.task_id.clone(), *l);
    }
    Ok(out.into_iter().collect())
}

/// `cl_i + omega_e * cl_e`.
pub fn total_load(cl_i: f64, cl_e: f64, omega_e: f64) -> f64 {
    cl_i + omega_e * cl_e
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotalLoadRecord {
    pub task_id: String,
    pub cl_i: f64,
    pub cl_e: f64,
    pub cl_total: f64,
}

impl TotalLoadRecord {
    pub fn new(task_id: impl Into<String>, cl_i: f64, cl_e: f64, omega_e: f64) -> Self {
        Self {
            task_id: task_id.into(),
            cl_i,
            cl_e,
            cl_total: total_load(cl_i, cl_e, omega_e),
        }
    }
}
