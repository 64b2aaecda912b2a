//! Synthetic task generation at a requested intrinsic load.
//!
//! [`generate_graph`] lays out queries and calls, wires every call to an
//! earlier node and then tops the load up with [`insert_edges`] until it lands
//! inside the requested band. [`sweep`] runs a grid of targets and reports the
//! loads actually achieved per stratum.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ensure_valid, with_assigned_turns};
use crate::intrinsic::{competitors, intrinsic_load, weight, IntrinsicParams, LoadContext};
use crate::model::{param, query, tool, DepEdge, EntityRef, GraphNode, TaskInstance, ToolGraph, ToolSpec};
use crate::rng::{derive_key, CounterRng};

const LAYOUT_ATTEMPTS: u64 = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub n_queries: usize,
    pub n_calls: usize,
    pub target_cli: f64,
    pub tolerance: f64,
    pub entity_type_pool: Vec<String>,
    /// Probability that a new entity reuses a semantic type already in
    /// context, which is what creates interference.
    pub interference_density: f64,
    /// Tools to draw calls and distractors from. Empty means a small built-in
    /// catalog derived from `entity_type_pool`.
    pub tool_catalog: Vec<ToolSpec>,
    pub distractor_count: usize,
    pub seed: u64,
    /// Task id; defaults to `gen-<seed>`.
    pub task_id: Option<String>,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            n_queries: 2,
            n_calls: 4,
            target_cli: 10.0,
            tolerance: 1.0,
            entity_type_pool: default_entity_types(),
            interference_density: 0.5,
            tool_catalog: Vec::new(),
            distractor_count: 2,
            seed: 0,
            task_id: None,
        }
    }
}

pub fn default_entity_types() -> Vec<String> {
    ["user_id", "file_path", "order_id", "date", "location"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Three tools per entity type: a getter, a search and an update.
pub fn default_catalog(types: &[String]) -> Vec<ToolSpec> {
    let mut out = Vec::new();
    for t in types {
        let noun = t.replace('_', " ");
        out.push(tool(format!("get_{t}"), format!("Fetch the record for a {noun}"), vec![param(t, t, true)]));
        out.push(tool(
            format!("search_{t}"),
            format!("Search records matching a {noun} and a free-text filter"),
            vec![param(t, t, true), param("filter", "text", false)],
        ));
        out.push(tool(
            format!("update_{t}"),
            format!("Update the {noun} attached to a record"),
            vec![param(t, t, true), param("value", "text", true)],
        ));
    }
    out
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_queries < 1 {
            return bad("n_queries must be >= 1".into());
        }
        if !(self.target_cli.is_finite() && self.target_cli >= 0.0) {
            return bad(format!("target_cli must be >= 0, got {}", self.target_cli));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return bad(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        if !(0.0..=1.0).contains(&self.interference_density) {
            return bad(format!("interference_density must lie in [0, 1], got {}", self.interference_density));
        }
        if self.entity_type_pool.is_empty() || self.entity_type_pool.iter().any(String::is_empty) {
            return bad("entity_type_pool must hold non-empty type names".into());
        }
        let mut names = BTreeSet::new();
        if let Some(t) = self.tool_catalog.iter().find(|t| !names.insert(t.name.as_str())) {
            return bad(format!("tool `{}` appears twice in the catalog", t.name));
        }
        Ok(())
    }

    fn catalog(&self) -> Vec<ToolSpec> {
        if self.tool_catalog.is_empty() {
            default_catalog(&self.entity_type_pool)
        } else {
            self.tool_catalog.clone()
        }
    }
}

fn unreachable(target: f64, reason: String) -> Error {
    Error::TargetUnreachable { target, reason }
}

/// One addable edge and the load it would contribute.
#[derive(Clone, Debug)]
struct Candidate {
    src: usize,
    dst: usize,
    entity: Option<EntityRef>,
    weight: f64,
}

/// Every edge that could be added to `task` without breaking validity, with
/// its weight. Turns must be assigned.
fn candidates(task: &TaskInstance, p: IntrinsicParams) -> Result<(Vec<Candidate>, Vec<usize>)> {
    let g = &task.graph;
    let ctx = LoadContext::new(task)?;
    let lin = ctx.linearization();
    let pos: Vec<usize> = (0..g.nodes.len()).map(|i| lin.turn_of_index(i)).collect();
    let mut taken = BTreeSet::new();
    for e in &g.edges {
        if let (Some(s), Some(d)) = (lin.node_index(&e.src), lin.node_index(&e.dst)) {
            taken.insert((s, d));
        }
    }
    let mut out = Vec::new();
    for (d, dn) in g.nodes.iter().enumerate() {
        if dn.is_query() {
            continue;
        }
        for (s, sn) in g.nodes.iter().enumerate() {
            if pos[s] >= pos[d] || taken.contains(&(s, d)) {
                continue;
            }
            let delta = pos[d] - pos[s];
            out.push(Candidate {
                src: s,
                dst: d,
                entity: None,
                weight: weight(delta, 0, p.lambda),
            });
            let mut offered: BTreeSet<&EntityRef> = sn.produces.iter().collect();
            if let Some(q) = sn.query_index.filter(|_| sn.is_query()).and_then(|qi| task.queries.get(qi)) {
                offered.extend(q.mentioned_entities.iter());
            }
            for ent in offered {
                let i = competitors(ctx.context_before(pos[d]), ent);
                out.push(Candidate {
                    src: s,
                    dst: d,
                    entity: Some(ent.clone()),
                    weight: weight(delta, i, p.lambda),
                });
            }
        }
    }
    Ok((out, pos))
}

/// Current load plus the heaviest option for every still-unconnected pair.
pub fn max_achievable(task: &TaskInstance, p: IntrinsicParams) -> Result<f64> {
    let task = timed(task)?;
    let current = intrinsic_load(&task, p)?.total;
    let (cands, _) = candidates(&task, p)?;
    let mut best: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
    for c in cands {
        let w = best.entry((c.src, c.dst)).or_insert(0.0);
        *w = w.max(c.weight);
    }
    Ok(current + best.values().sum::<f64>())
}

fn timed(task: &TaskInstance) -> Result<TaskInstance> {
    ensure_valid(task)?;
    let mut t = task.clone();
    if t.graph.nodes.iter().any(|n| n.turn.is_none()) {
        t.graph = with_assigned_turns(&t.graph)?;
    }
    Ok(t)
}

/// Greedily adds forward edges until the intrinsic load is within
/// `tolerance` of `target`. Each step takes the candidate that lands closest
/// to the target without overshooting the band; ties prefer the shorter edge,
/// then the earlier source, the earlier destination and execution edges.
///
/// Graphs without turns get their canonical turns written in first so later
/// insertions cannot reorder them.
pub fn insert_edges(task: &TaskInstance, target: f64, tolerance: f64, p: IntrinsicParams) -> Result<TaskInstance> {
    if !(tolerance > 0.0 && target.is_finite()) {
        return Err(Error::Config(format!("need finite target and tolerance > 0, got ({target}, {tolerance})")));
    }
    let mut current = intrinsic_load(task, p)?.total;
    let hi = target + tolerance;
    if current > hi {
        return Err(unreachable(target, format!("current load {current} is already above {hi}")));
    }
    if (current - target).abs() <= tolerance {
        return Ok(task.clone());
    }
    let mut task = timed(task)?;
    let (mut cands, pos) = candidates(&task, p)?;

    while (current - target).abs() > tolerance {
        let pick = cands
            .iter()
            .enumerate()
            .filter(|(_, c)| current + c.weight <= hi)
            .min_by(|(_, a), (_, b)| {
                let da = (current + a.weight - target).abs();
                let db = (current + b.weight - target).abs();
                da.total_cmp(&db)
                    .then((pos[a.dst] - pos[a.src]).cmp(&(pos[b.dst] - pos[b.src])))
                    .then(pos[a.src].cmp(&pos[b.src]))
                    .then(pos[a.dst].cmp(&pos[b.dst]))
                    .then(a.entity.cmp(&b.entity))
            })
            .map(|(i, _)| i);
        let Some(i) = pick else {
            return Err(unreachable(
                target,
                format!("no remaining edge fits; stopped at {current} (band {}..={hi})", target - tolerance),
            ));
        };
        let c = cands.swap_remove(i);
        cands.retain(|o| (o.src, o.dst) != (c.src, c.dst));
        let src = task.graph.nodes[c.src].id.clone();
        let dst = task.graph.nodes[c.dst].id.clone();
        let edge = match c.entity {
            Some(ent) => {
                let node = &mut task.graph.nodes[c.dst];
                if !node.consumes.contains(&ent) {
                    node.consumes.push(ent.clone());
                }
                DepEdge::data(src, dst, ent)
            }
            None => DepEdge::execution(src, dst),
        };
        task.graph.edges.push(edge);
        current += c.weight;
    }
    Ok(task)
}

/// Node layout: which query each call belongs to, entity types and tools.
struct Layout {
    queries: Vec<crate::model::Query>,
    nodes: Vec<GraphNode>,
    tools: Vec<ToolSpec>,
}

fn lay_out(spec: &GenSpec, catalog: &[ToolSpec], rng: &mut CounterRng) -> Layout {
    let mut owner: Vec<usize> = (0..spec.n_calls)
        .map(|_| rng.below(spec.n_queries as u64) as usize)
        .collect();
    owner.sort_unstable();

    let mut types_seen: Vec<String> = Vec::new();
    let mut serial = 0usize;
    let mut fresh = |rng: &mut CounterRng, seen: &mut Vec<String>| -> EntityRef {
        let ty = if !seen.is_empty() && rng.bernoulli(spec.interference_density) {
            rng.choose(seen).unwrap().clone()
        } else {
            rng.choose(&spec.entity_type_pool).unwrap().clone()
        };
        if !seen.contains(&ty) {
            seen.push(ty.clone());
        }
        serial += 1;
        EntityRef::new(ty.clone(), format!("{ty}-{serial}"))
    };

    let mut queries = Vec::with_capacity(spec.n_queries);
    let mut nodes = Vec::with_capacity(spec.n_queries + spec.n_calls);
    let mut used = BTreeSet::new();
    let mut call = 0;
    for qi in 0..spec.n_queries {
        let ent = fresh(rng, &mut types_seen);
        queries.push(query(
            qi,
            format!("Request {}: work with {} {}.", qi + 1, ent.semantic_type.replace('_', " "), ent.value_id),
            vec![ent],
        ));
        nodes.push(GraphNode::query(format!("q{}", qi + 1), qi).at(nodes.len()));
        while call < spec.n_calls && owner[call] == qi {
            let t = rng.below(catalog.len() as u64) as usize;
            used.insert(t);
            let ent = fresh(rng, &mut types_seen);
            call += 1;
            nodes.push(
                GraphNode::call(format!("f{call}"), catalog[t].name.clone())
                    .at(nodes.len())
                    .producing(ent),
            );
        }
    }

    let mut spare: Vec<usize> = (0..catalog.len()).filter(|i| !used.contains(i)).collect();
    rng.shuffle(&mut spare);
    let mut keep: BTreeSet<usize> = used;
    keep.extend(spare.into_iter().take(spec.distractor_count));
    if keep.is_empty() {
        keep.insert(0);
    }
    let tools = keep.into_iter().map(|i| catalog[i].clone()).collect();
    Layout { queries, nodes, tools }
}

/// Gives every call one incoming edge from a random earlier node.
fn base_edges(nodes: &mut [GraphNode], queries: &[crate::model::Query], rng: &mut CounterRng) -> Vec<DepEdge> {
    let mut edges = Vec::new();
    for d in 0..nodes.len() {
        if nodes[d].is_query() {
            continue;
        }
        let s = rng.below(d as u64) as usize;
        let offered = match nodes[s].query_index.filter(|_| nodes[s].is_query()) {
            Some(qi) => queries[qi].mentioned_entities.first().cloned(),
            None => nodes[s].produces.first().cloned(),
        };
        let (src, dst) = (nodes[s].id.clone(), nodes[d].id.clone());
        match offered.filter(|_| rng.bernoulli(0.5)) {
            Some(ent) => {
                nodes[d].consumes.push(ent.clone());
                edges.push(DepEdge::data(src, dst, ent));
            }
            None => edges.push(DepEdge::execution(src, dst)),
        }
    }
    edges
}

/// Every call wired to the node right before it.
fn minimal_edges(nodes: &mut [GraphNode]) -> Vec<DepEdge> {
    for n in nodes.iter_mut() {
        n.consumes.clear();
    }
    (1..nodes.len())
        .filter(|&d| !nodes[d].is_query())
        .map(|d| DepEdge::execution(nodes[d - 1].id.clone(), nodes[d].id.clone()))
        .collect()
}

/// Builds a valid task whose intrinsic load lies within `target_cli ± tolerance`.
///
/// Layouts are retried from derived seeds; the error for an unreachable
/// target reports the largest load any attempted layout could carry.
pub fn generate_graph(spec: &GenSpec, p: IntrinsicParams) -> Result<TaskInstance> {
    spec.validate()?;
    let target = spec.target_cli;
    let (lo, hi) = (target - spec.tolerance, target + spec.tolerance);
    if spec.n_calls as f64 > hi {
        return Err(unreachable(
            target,
            format!("{} calls need a load of at least {}, above {hi}", spec.n_calls, spec.n_calls),
        ));
    }
    let catalog = spec.catalog();
    if catalog.is_empty() {
        return Err(Error::Config("tool catalog is empty".into()));
    }
    let id = spec.task_id.clone().unwrap_or_else(|| format!("gen-{}", spec.seed));

    let mut best_max = 0.0f64;
    let mut last_err = None;
    for attempt in 0..LAYOUT_ATTEMPTS {
        let mut rng = CounterRng::new(derive_key(spec.seed, attempt));
        let mut layout = lay_out(spec, &catalog, &mut rng);
        let mut edges = base_edges(&mut layout.nodes, &layout.queries, &mut rng);
        let mut task = assemble(&id, spec, &layout, edges.clone());
        if intrinsic_load(&task, p)?.total > hi {
            edges = minimal_edges(&mut layout.nodes);
            task = assemble(&id, spec, &layout, edges);
        }
        let max = max_achievable(&task, p)?;
        best_max = best_max.max(max);
        if max < lo {
            continue;
        }
        match insert_edges(&task, target, spec.tolerance, p) {
            Ok(t) => return Ok(t),
            Err(e @ Error::TargetUnreachable { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| {
        unreachable(target, format!("maximum achievable load is {best_max}, below {lo}"))
    }))
}

fn assemble(id: &str, spec: &GenSpec, layout: &Layout, edges: Vec<DepEdge>) -> TaskInstance {
    let mut t = TaskInstance::new(
        id,
        layout.queries.clone(),
        layout.tools.clone(),
        ToolGraph {
            nodes: layout.nodes.clone(),
            edges,
            ..Default::default()
        },
    );
    t.domain = "synthetic".into();
    t.meta.insert("generator".into(), "taskgen/1".into());
    t.meta.insert("target_cli".into(), spec.target_cli.to_string());
    t.meta.insert("seed".into(), spec.seed.to_string());
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub targets: Vec<f64>,
    pub instances_per_target: usize,
    /// Average number of calls per instance; per-instance counts are spread
    /// so each stratum hits this mean as closely as integers allow.
    pub mean_calls: f64,
    /// Template for everything else; its target, call count, seed and id are
    /// overwritten per instance.
    pub base: GenSpec,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            targets: vec![5.0, 15.0, 25.0],
            instances_per_target: 10,
            mean_calls: 4.9,
            base: GenSpec::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumManifest {
    pub stratum: usize,
    pub target: f64,
    pub achieved_mean: f64,
    pub n: usize,
    pub mean_calls: f64,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenFailure {
    pub stratum: usize,
    pub instance: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub tasks: Vec<TaskInstance>,
    pub manifest: Vec<StratumManifest>,
    pub failures: Vec<GenFailure>,
}

/// Calls for instance `i` when instances should average `mean` calls.
pub fn spread_calls(mean: f64, i: usize) -> usize {
    ((mean * (i + 1) as f64).floor() - (mean * i as f64).floor()) as usize
}

pub fn sweep(spec: &SweepSpec, p: IntrinsicParams) -> Result<SweepOutput> {
    if !(spec.mean_calls.is_finite() && spec.mean_calls >= 0.0) {
        return Err(Error::Config(format!("mean_calls must be >= 0, got {}", spec.mean_calls)));
    }
    spec.base.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.targets.len())
        .flat_map(|s| (0..spec.instances_per_target).map(move |i| (s, i)))
        .collect();
    let results: Vec<(usize, usize, Result<(TaskInstance, f64)>)> = jobs
        .par_iter()
        .map(|&(s, i)| {
            let mut g = spec.base.clone();
            g.target_cli = spec.targets[s];
            g.n_calls = spread_calls(spec.mean_calls, i);
            g.seed = derive_key(derive_key(spec.seed, s as u64), i as u64);
            g.task_id = Some(format!("s{s}-{i:04}"));
            let r = generate_graph(&g, p).and_then(|t| {
                let l = intrinsic_load(&t, p)?.total;
                Ok((t, l))
            });
            (s, i, r)
        })
        .collect();

    let mut tasks = Vec::new();
    let mut failures = Vec::new();
    let mut per: Vec<(f64, usize, usize, usize)> = vec![(0.0, 0, 0, 0); spec.targets.len()];
    for (s, i, r) in results {
        match r {
            Ok((t, l)) => {
                per[s].0 += l;
                per[s].1 += 1;
                per[s].2 += t.graph.nodes.iter().filter(|n| !n.is_query()).count();
                tasks.push(t);
            }
            Err(e) => {
                per[s].3 += 1;
                failures.push(GenFailure {
                    stratum: s,
                    instance: i,
                    message: e.to_string(),
                });
            }
        }
    }
    let manifest = per
        .into_iter()
        .enumerate()
        .map(|(s, (sum, n, calls, failed))| StratumManifest {
            stratum: s,
            target: spec.targets[s],
            achieved_mean: if n > 0 { sum / n as f64 } else { f64::NAN },
            n,
            mean_calls: if n > 0 { calls as f64 / n as f64 } else { f64::NAN },
            failed,
        })
        .collect();
    Ok(SweepOutput {
        tasks,
        manifest,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate_task;
    use crate::model::EdgeKind;

    fn p() -> IntrinsicParams {
        IntrinsicParams::default()
    }

    #[test]
    fn no_calls_means_zero_load() {
        let spec = GenSpec {
            n_calls: 0,
            target_cli: 0.0,
            ..Default::default()
        };
        let t = generate_graph(&spec, p()).unwrap();
        assert_eq!(intrinsic_load(&t, p()).unwrap().total, 0.0);
        let spec = GenSpec {
            n_calls: 0,
            target_cli: 5.0,
            ..Default::default()
        };
        assert!(matches!(generate_graph(&spec, p()), Err(Error::TargetUnreachable { .. })));
    }

    #[test]
    fn hits_the_band() {
        for seed in 0..20 {
            let spec = GenSpec {
                n_queries: 2,
                n_calls: 4,
                target_cli: 12.0,
                tolerance: 1.0,
                seed,
                ..Default::default()
            };
            let t = generate_graph(&spec, p()).unwrap();
            assert!(validate_task(&t).is_valid(), "{:?}", validate_task(&t));
            let l = intrinsic_load(&t, p()).unwrap().total;
            assert!((11.0..=13.0).contains(&l), "seed {seed}: {l}");
        }
    }

    #[test]
    fn deterministic() {
        let spec = GenSpec {
            seed: 77,
            ..Default::default()
        };
        let a = generate_graph(&spec, p()).unwrap().to_json().unwrap();
        for _ in 0..5 {
            assert_eq!(generate_graph(&spec, p()).unwrap().to_json().unwrap(), a);
        }
    }

    #[test]
    fn too_many_calls_for_target() {
        let spec = GenSpec {
            n_calls: 10,
            target_cli: 3.0,
            ..Default::default()
        };
        let err = generate_graph(&spec, p()).unwrap_err();
        assert!(matches!(err, Error::TargetUnreachable { .. }));
    }

    #[test]
    fn unreachable_reports_maximum() {
        let spec = GenSpec {
            n_queries: 1,
            n_calls: 1,
            target_cli: 500.0,
            ..Default::default()
        };
        match generate_graph(&spec, p()) {
            Err(Error::TargetUnreachable { reason, .. }) => assert!(reason.contains("maximum"), "{reason}"),
            other => panic!("{other:?}"),
        }
    }

    fn two_call_chain() -> TaskInstance {
        let nodes = vec![
            GraphNode::query("q1", 0).at(0),
            GraphNode::call("f1", "t").at(1),
            GraphNode::call("f2", "t").at(2),
        ];
        let edges = vec![DepEdge::execution("q1", "f1"), DepEdge::execution("q1", "f2")];
        TaskInstance::new(
            "c",
            vec![query(0, "go", vec![])],
            vec![tool("t", "", vec![])],
            ToolGraph {
                nodes,
                edges,
                ..Default::default()
            },
        )
    }

    #[test]
    fn in_band_is_unchanged() {
        let t = two_call_chain();
        let cur = intrinsic_load(&t, p()).unwrap().total;
        assert_eq!(insert_edges(&t, cur, 0.5, p()).unwrap(), t);
    }

    #[test]
    fn adds_one_unit_edge() {
        let t = two_call_chain();
        let lam0 = IntrinsicParams::new(0.0).unwrap();
        let cur = intrinsic_load(&t, lam0).unwrap().total;
        let out = insert_edges(&t, cur + 1.0, 0.25, lam0).unwrap();
        assert_eq!(out.graph.edges.len(), 3);
        let added = &out.graph.edges[2];
        assert_eq!((added.src.as_str(), added.dst.as_str(), added.kind), ("f1", "f2", EdgeKind::Execution));
        assert_eq!(intrinsic_load(&out, lam0).unwrap().total, cur + 1.0);
    }

    #[test]
    fn saturated_graph_is_unreachable() {
        let mut t = two_call_chain();
        t.graph.edges.push(DepEdge::execution("f1", "f2"));
        assert!(matches!(
            insert_edges(&t, 100.0, 1.0, p()),
            Err(Error::TargetUnreachable { .. })
        ));
    }

    #[test]
    fn spread_hits_mean() {
        let total: usize = (0..10).map(|i| spread_calls(4.9, i)).sum();
        assert_eq!(total, 49);
        assert!((0..10).all(|i| (4..=5).contains(&spread_calls(4.9, i))));
    }

    #[test]
    fn sweep_counts() {
        let out = sweep(&SweepSpec::default(), p()).unwrap();
        assert_eq!(out.manifest.len(), 3);
        assert_eq!(out.tasks.len() + out.failures.len(), 30);
    }
}
