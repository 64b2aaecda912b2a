//! Extraneous load: per-query ambiguity and distraction scores in `[0, 1]`,
//! summed over a task's queries.
//!
//! Scoring is pluggable. [`HeuristicScorer`] is deterministic and needs no
//! network; [`RemoteScorer`] asks an LLM endpoint for the two scores and
//! caches the answers.

mod heuristic;
mod remote;

pub use heuristic::{jaccard, tokens, HeuristicConfig, HeuristicScorer};
pub use remote::{
    build_prompt, parse_scores, CacheEntry, HttpTransport, RemoteConfig, RemoteScorer, ScoreCache, Transport,
    TransportError,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ensure_valid;
use crate::model::{Query, TaskInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryLoad {
    pub query_index: usize,
    pub ambiguity: f64,
    pub distraction: f64,
    pub total: f64,
}

impl QueryLoad {
    /// Clamps both scores into `[0, 1]` and sums them.
    pub fn new(query_index: usize, ambiguity: f64, distraction: f64) -> Self {
        let ambiguity = ambiguity.clamp(0.0, 1.0);
        let distraction = distraction.clamp(0.0, 1.0);
        Self {
            query_index,
            ambiguity,
            distraction,
            total: ambiguity + distraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtraneousReport {
    pub per_query: Vec<QueryLoad>,
    pub total: f64,
    pub scorer_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerConfig {
    Heuristic(HeuristicConfig),
    Remote(RemoteConfig),
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig::Heuristic(HeuristicConfig::default())
    }
}

pub trait QueryScorer: Send + Sync {
    fn id(&self) -> String;

    /// Raw `(ambiguity, distraction)` for one query; callers clamp.
    fn score(&self, task: &TaskInstance, query: &Query) -> Result<(f64, f64)>;

    /// Upper bound on concurrent `score` calls, if the scorer needs one.
    fn max_in_flight(&self) -> Option<usize> {
        None
    }
}

/// Builds the scorer a config describes.
pub fn scorer_from_config(cfg: &ScorerConfig) -> Result<Box<dyn QueryScorer>> {
    Ok(match cfg {
        ScorerConfig::Heuristic(h) => Box::new(HeuristicScorer::new(h.clone())),
        ScorerConfig::Remote(r) => Box::new(RemoteScorer::from_config(r.clone())?),
    })
}

pub fn score_query(query: &Query, task: &TaskInstance, scorer: &dyn QueryScorer) -> Result<QueryLoad> {
    if task.queries.get(query.index) != Some(query) {
        return Err(Error::Domain(format!(
            "query {} is not part of task `{}`",
            query.index, task.id
        )));
    }
    let (a, d) = scorer.score(task, query)?;
    Ok(QueryLoad::new(query.index, a, d))
}

/// Scores every query of the task. The first scoring failure aborts the
/// whole report.
pub fn extraneous_load(task: &TaskInstance, scorer: &dyn QueryScorer) -> Result<ExtraneousReport> {
    ensure_valid(task)?;
    let per_query = task
        .queries
        .iter()
        .map(|q| score_query(q, task, scorer))
        .collect::<Result<Vec<_>>>()?;
    let total = per_query.iter().map(|q| q.total).sum();
    Ok(ExtraneousReport {
        per_query,
        total,
        scorer_id: scorer.id(),
    })
}

/// Scores a batch in parallel; results come back in input order. When the
/// scorer caps in-flight requests the work runs on a pool of that size.
pub fn extraneous_load_batch(tasks: &[TaskInstance], scorer: &dyn QueryScorer) -> Vec<Result<ExtraneousReport>> {
    let run = || tasks.par_iter().map(|t| extraneous_load(t, scorer)).collect();
    match scorer.max_in_flight() {
        Some(cap) => match rayon::ThreadPoolBuilder::new().num_threads(cap.max(1)).build() {
            Ok(pool) => pool.install(run),
            Err(_) => tasks.iter().map(|t| extraneous_load(t, scorer)).collect(),
        },
        None => run(),
    }
}
