//! Intrinsic load: per-edge attentional distance and interference combined
//! into edge weights, summed over the function nodes of a task graph.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ensure_valid, Linearization};
use crate::model::{DepEdge, EdgeKind, EntityRef, NodeKind, TaskInstance, ToolGraph};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicParams {
    /// Weight of interference relative to distance inside an edge weight.
    pub lambda: f64,
}

impl Default for IntrinsicParams {
    fn default() -> Self {
        Self { lambda: 0.5 }
    }
}

impl IntrinsicParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { lambda })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeLoad {
    pub src: String,
    pub dst: String,
    pub kind: EdgeKind,
    pub delta: usize,
    pub interference: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicReport {
    pub per_edge: Vec<EdgeLoad>,
    /// Sum of incoming edge weights for every function node.
    pub per_node: BTreeMap<String, f64>,
    pub total: f64,
}

/// `delta * (1 + lambda * interference)`.
pub fn weight(delta: usize, interference: usize, lambda: f64) -> f64 {
    delta as f64 * (1.0 + lambda * interference as f64)
}

/// Linearization plus the entity context visible at each position, shared by
/// all per-edge computations on one task.
pub struct LoadContext<'a> {
    task: &'a TaskInstance,
    lin: Linearization,
    /// `seen[p]` = entities produced or mentioned strictly before position `p`.
    seen: Vec<BTreeSet<&'a EntityRef>>,
}

impl<'a> LoadContext<'a> {
    pub fn new(task: &'a TaskInstance) -> Result<Self> {
        let g = &task.graph;
        let lin = Linearization::new(g)?;
        let mut seen = Vec::with_capacity(g.nodes.len() + 1);
        let mut acc: BTreeSet<&EntityRef> = BTreeSet::new();
        seen.push(acc.clone());
        for &i in lin.order() {
            let node = &g.nodes[i];
            acc.extend(node.produces.iter());
            if node.kind == NodeKind::Query {
                if let Some(q) = node.query_index.and_then(|qi| task.queries.get(qi)) {
                    acc.extend(q.mentioned_entities.iter());
                }
            }
            seen.push(acc.clone());
        }
        Ok(Self { task, lin, seen })
    }

    pub fn linearization(&self) -> &Linearization {
        &self.lin
    }

    fn endpoints(&self, e: &DepEdge) -> Result<(usize, usize)> {
        let unknown = || Error::UnknownEdge {
            src: e.src.clone(),
            dst: e.dst.clone(),
        };
        if !self.task.graph.contains_edge(&e.src, &e.dst) {
            return Err(unknown());
        }
        let s = self.lin.turn_of(&e.src).ok_or_else(unknown)?;
        let d = self.lin.turn_of(&e.dst).ok_or_else(unknown)?;
        Ok((s, d))
    }

    pub fn distance(&self, e: &DepEdge) -> Result<usize> {
        let (s, d) = self.endpoints(e)?;
        Ok(d.saturating_sub(s))
    }

    pub fn interference(&self, e: &DepEdge) -> Result<usize> {
        let (_, d) = self.endpoints(e)?;
        Ok(self.interference_at(e, d))
    }

    fn interference_at(&self, e: &DepEdge, dst_turn: usize) -> usize {
        match (e.kind, &e.entity) {
            (EdgeKind::Data, Some(x)) => competitors(self.seen[dst_turn].iter().copied(), x),
            _ => 0,
        }
    }

    pub fn edge_load(&self, e: &DepEdge, p: IntrinsicParams) -> Result<EdgeLoad> {
        let (s, d) = self.endpoints(e)?;
        let delta = d.saturating_sub(s);
        let interference = self.interference_at(e, d);
        Ok(EdgeLoad {
            src: e.src.clone(),
            dst: e.dst.clone(),
            kind: e.kind,
            delta,
            interference,
            weight: weight(delta, interference, p.lambda),
        })
    }

    /// Entities in context just before `position`.
    pub fn context_before(&self, position: usize) -> impl Iterator<Item = &EntityRef> {
        self.seen[position.min(self.seen.len() - 1)].iter().copied()
    }
}

/// Distinct entities of the same semantic type as `x` but a different value.
pub fn competitors<'e>(context: impl IntoIterator<Item = &'e EntityRef>, x: &EntityRef) -> usize {
    context
        .into_iter()
        .filter(|c| c.semantic_type == x.semantic_type && c.value_id != x.value_id)
        .map(|c| &c.value_id)
        .collect::<BTreeSet<_>>()
        .len()
}

pub fn attentional_distance(task: &TaskInstance, e: &DepEdge) -> Result<usize> {
    LoadContext::new(task)?.distance(e)
}

/// Graph-only variant of [`attentional_distance`].
pub fn graph_distance(g: &ToolGraph, e: &DepEdge) -> Result<usize> {
    if !g.contains_edge(&e.src, &e.dst) {
        return Err(Error::UnknownEdge {
            src: e.src.clone(),
            dst: e.dst.clone(),
        });
    }
    let lin = Linearization::new(g)?;
    Ok(lin.turn_of(&e.dst).unwrap().saturating_sub(lin.turn_of(&e.src).unwrap()))
}

pub fn interference(task: &TaskInstance, e: &DepEdge) -> Result<usize> {
    LoadContext::new(task)?.interference(e)
}

pub fn edge_weight(task: &TaskInstance, e: &DepEdge, p: IntrinsicParams) -> Result<f64> {
    Ok(LoadContext::new(task)?.edge_load(e, p)?.weight)
}

/// Intrinsic load of a task: every function node's incoming edge weights,
/// summed.
pub fn intrinsic_load(task: &TaskInstance, p: IntrinsicParams) -> Result<IntrinsicReport> {
    ensure_valid(task)?;
    intrinsic_load_unchecked(task, p)
}

/// Same as [`intrinsic_load`] without the up-front validation; for callers
/// that already hold a valid task and recompute often.
pub fn intrinsic_load_unchecked(task: &TaskInstance, p: IntrinsicParams) -> Result<IntrinsicReport> {
    let ctx = LoadContext::new(task)?;
    let g = &task.graph;
    let mut per_node: BTreeMap<String, f64> = g
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::FunctionCall)
        .map(|n| (n.id.clone(), 0.0))
        .collect();

    let mut per_edge = Vec::with_capacity(g.edges.len());
    for e in &g.edges {
        let load = ctx.edge_load(e, p)?;
        if let Some(v) = per_node.get_mut(&e.dst) {
            *v += load.weight;
        }
        per_edge.push(load);
    }
    let total = per_node.values().sum();
    Ok(IntrinsicReport {
        per_edge,
        per_node,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{query, tool, DepEdge, EntityRef, GraphNode, ToolGraph};

    fn uid(v: &str) -> EntityRef {
        EntityRef::new("user_id", v)
    }

    /// q1 mentions u1,u2,u3; f1 consumes u2 from q1; f1 produces a file that
    /// f2 consumes.
    fn fixture() -> TaskInstance {
        let file = EntityRef::new("file_path", "/a");
        let graph = ToolGraph {
            nodes: vec![
                GraphNode::query("q1", 0).at(0),
                GraphNode::call("f1", "lookup").at(1).consuming(uid("u2")).producing(file.clone()),
                GraphNode::call("f2", "open").at(2).consuming(file.clone()),
            ],
            edges: vec![DepEdge::data("q1", "f1", uid("u2")), DepEdge::data("f1", "f2", file)],
            ..Default::default()
        };
        TaskInstance::new(
            "fx",
            vec![query(0, "look up", vec![uid("u1"), uid("u2"), uid("u3")])],
            vec![tool("lookup", "", vec![]), tool("open", "", vec![])],
            graph,
        )
    }

    #[test]
    fn fixture_total_is_three() {
        let task = fixture();
        let r = intrinsic_load(&task, IntrinsicParams::new(0.5).unwrap()).unwrap();
        let w: Vec<f64> = r.per_edge.iter().map(|e| e.weight).collect();
        assert_eq!(w, [2.0, 1.0]);
        assert_eq!(r.per_edge[0].interference, 2);
        assert_eq!(r.total, 3.0);
    }

    #[test]
    fn execution_edges_have_no_interference() {
        let mut task = fixture();
        task.graph.edges.push(DepEdge::execution("q1", "f2"));
        let e = task.graph.edges[2].clone();
        assert_eq!(interference(&task, &e).unwrap(), 0);
        assert_eq!(attentional_distance(&task, &e).unwrap(), 2);
        assert_eq!(edge_weight(&task, &e, IntrinsicParams::default()).unwrap(), 2.0);
    }

    #[test]
    fn unknown_edge() {
        let task = fixture();
        let e = DepEdge::execution("q1", "f9");
        assert!(matches!(attentional_distance(&task, &e), Err(Error::UnknownEdge { .. })));
    }

    #[test]
    fn no_function_nodes_means_zero() {
        let task = TaskInstance::new(
            "empty",
            vec![query(0, "hi", vec![])],
            vec![tool("t", "", vec![])],
            ToolGraph {
                nodes: vec![GraphNode::query("q1", 0)],
                ..Default::default()
            },
        );
        let r = intrinsic_load(&task, IntrinsicParams::default()).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(r.per_node.is_empty());
    }

    #[test]
    fn weight_formula() {
        assert_eq!(weight(1, 0, 0.5), 1.0);
        assert_eq!(weight(2, 3, 0.5), 5.0);
        assert_eq!(weight(4, 0, 0.5), 4.0);
    }

    #[test]
    fn invalid_task_is_rejected() {
        let mut task = fixture();
        task.graph.edges.push(DepEdge::execution("f2", "f1"));
        assert!(matches!(
            intrinsic_load(&task, IntrinsicParams::default()),
            Err(Error::InvalidTask { .. })
        ));
    }

    #[test]
    fn negative_lambda_rejected() {
        assert!(IntrinsicParams::new(-0.1).is_err());
        assert!(IntrinsicParams::new(f64::NAN).is_err());
    }
}
