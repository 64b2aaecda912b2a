//! Monte Carlo simulation of agents whose per-call success probability decays
//! exponentially with the call's load, and whose task success is the product
//! over calls.
//!
//! With a per-call baseline `b_node` the task succeeds with probability
//! `exp(-(k·CL_I + n·b_node))` for `n` calls. The task-level generator
//! ([`simulate_task_level`]) instead draws directly from
//! `exp(-(k·CL + b))` with a single baseline. Both are kept so the gap
//! between the two forms can be measured.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::TrialRecord;
use crate::graph::ensure_valid;
use crate::intrinsic::{intrinsic_load, IntrinsicParams};
use crate::rng::{derive_key, draw_f64, fnv1a};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimAgent {
    pub k: f64,
    /// Baseline paid once per function call.
    pub b_node: f64,
    pub seed: u64,
}

impl SimAgent {
    pub fn new(k: f64, b_node: f64, seed: u64) -> Result<Self> {
        if !(k.is_finite() && k >= 0.0 && b_node.is_finite() && b_node >= 0.0) {
            return Err(Error::Domain(format!("agent needs finite k >= 0 and b_node >= 0, got ({k}, {b_node})")));
        }
        Ok(Self { k, b_node, seed })
    }
}

pub fn node_success_prob(agent: &SimAgent, node_load: f64) -> f64 {
    (-(agent.k * node_load.max(0.0) + agent.b_node)).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRoll {
    pub node_id: String,
    pub p_succ: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub task_id: String,
    pub success: bool,
    pub per_node_rolls: Vec<NodeRoll>,
}

/// Precomputed per-call success probabilities for one (agent, task) pair.
#[derive(Clone, Debug)]
pub struct TaskSimulator {
    task_id: String,
    key: u64,
    nodes: Vec<(String, f64)>,
    cl_i: f64,
}

impl TaskSimulator {
    pub fn new(agent: &SimAgent, task: &crate::model::TaskInstance, p: IntrinsicParams) -> Result<Self> {
        ensure_valid(task)?;
        let report = intrinsic_load(task, p)?;
        let order = crate::graph::function_nodes(&task.graph)?;
        let nodes = order
            .into_iter()
            .map(|id| {
                let load = report.per_node[&id];
                (id, node_success_prob(agent, load))
            })
            .collect();
        Ok(Self {
            task_id: task.id.clone(),
            key: derive_key(agent.seed, fnv1a(task.id.as_bytes())),
            nodes,
            cl_i: report.total,
        })
    }

    pub fn n_calls(&self) -> usize {
        self.nodes.len()
    }

    pub fn cl_i(&self) -> f64 {
        self.cl_i
    }

    /// Product of the per-call probabilities.
    pub fn closed_form(&self) -> f64 {
        self.nodes.iter().map(|n| n.1).product()
    }

    fn counter(&self, replication: u64, j: usize) -> u64 {
        replication.wrapping_mul(self.nodes.len() as u64).wrapping_add(j as u64)
    }

    /// Task outcome of one replication; every call is rolled.
    pub fn success(&self, replication: u64) -> bool {
        let mut ok = true;
        for (j, (_, p)) in self.nodes.iter().enumerate() {
            ok &= draw_f64(self.key, self.counter(replication, j)) < *p;
        }
        ok
    }

    pub fn run(&self, replication: u64) -> SimOutcome {
        let per_node_rolls: Vec<NodeRoll> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(j, (id, p))| NodeRoll {
                node_id: id.clone(),
                p_succ: *p,
                passed: draw_f64(self.key, self.counter(replication, j)) < *p,
            })
            .collect();
        SimOutcome {
            task_id: self.task_id.clone(),
            success: per_node_rolls.iter().all(|r| r.passed),
            per_node_rolls,
        }
    }

    /// Successes over `replications` runs, split into fixed chunks so the
    /// count does not depend on the thread count.
    pub fn count_successes(&self, replications: u64) -> u64 {
        const CHUNK: u64 = 4096;
        let chunks = replications.div_ceil(CHUNK);
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let end = ((c + 1) * CHUNK).min(replications);
                (c * CHUNK..end).filter(|&r| self.success(r)).count() as u64
            })
            .sum()
    }
}

/// One simulated attempt at a task.
pub fn simulate_task(
    agent: &SimAgent,
    task: &crate::model::TaskInstance,
    p: IntrinsicParams,
    replication: u64,
) -> Result<SimOutcome> {
    Ok(TaskSimulator::new(agent, task, p)?.run(replication))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditivityRow {
    pub task_id: String,
    pub n_calls: usize,
    pub cl_i: f64,
    pub predicted: f64,
    pub empirical: f64,
    pub abs_deviation: f64,
    /// Binomial standard error of the empirical rate under `predicted`.
    pub sigma: f64,
    pub within_3_sigma: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditivityReport {
    pub replications: u64,
    pub rows: Vec<AdditivityRow>,
    pub max_abs_deviation: f64,
    pub fraction_within_3_sigma: f64,
}

/// Compares each task's simulated success rate against
/// `exp(-(k·CL_I + n·b_node))`.
pub fn verify_additivity(
    agent: &SimAgent,
    tasks: &[crate::model::TaskInstance],
    replications: u64,
    p: IntrinsicParams,
) -> Result<AdditivityReport> {
    let rows = tasks
        .par_iter()
        .map(|task| {
            let sim = TaskSimulator::new(agent, task, p)?;
            let n = sim.n_calls();
            let predicted = (-(agent.k * sim.cl_i() + n as f64 * agent.b_node)).exp();
            let empirical = sim.count_successes(replications) as f64 / replications as f64;
            let sigma = (predicted * (1.0 - predicted) / replications as f64).sqrt();
            let abs_deviation = (empirical - predicted).abs();
            Ok(AdditivityRow {
                task_id: task.id.clone(),
                n_calls: n,
                cl_i: sim.cl_i(),
                predicted,
                empirical,
                abs_deviation,
                sigma,
                within_3_sigma: abs_deviation <= 3.0 * sigma,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_abs_deviation = rows.iter().map(|r| r.abs_deviation).fold(0.0, f64::max);
    let within = rows.iter().filter(|r| r.within_3_sigma).count();
    Ok(AdditivityReport {
        replications,
        fraction_within_3_sigma: if rows.is_empty() { 1.0 } else { within as f64 / rows.len() as f64 },
        max_abs_deviation,
        rows,
    })
}

/// Bernoulli trials with a given success probability per task. Draws depend
/// only on `(seed, task id, trial index)`.
pub fn simulate_bernoulli(agent_id: &str, tasks: &[(String, f64)], trials_per_task: u64, seed: u64) -> Vec<TrialRecord> {
    tasks
        .par_iter()
        .flat_map_iter(|(task_id, p)| {
            let key = derive_key(seed, fnv1a(task_id.as_bytes()));
            (0..trials_per_task).map(move |r| TrialRecord {
                task_id: task_id.clone(),
                agent_id: agent_id.to_string(),
                success: draw_f64(key, r) < *p,
            })
        })
        .collect()
}

/// Task-level generation: success probability `exp(-(k·load + b))`.
pub fn simulate_task_level(
    agent_id: &str,
    k: f64,
    b: f64,
    loads: &[(String, f64)],
    trials_per_task: u64,
    seed: u64,
) -> Vec<TrialRecord> {
    let probs: Vec<(String, f64)> = loads
        .iter()
        .map(|(id, l)| (id.clone(), (-(k * l.max(0.0) + b)).exp()))
        .collect();
    simulate_bernoulli(agent_id, &probs, trials_per_task, seed)
}
