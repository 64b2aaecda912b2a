//! Well-formedness checks and canonical linearization of tool interaction
//! graphs.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{EdgeKind, GraphNode, NodeKind, Query, TaskInstance, ToolGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    EmptyQueries,
    QueryIndexMismatch,
    EmptyTools,
    DuplicateTool,
    DuplicateParam,
    EmptySemanticType,
    DuplicateNodeId,
    QueryNodeWithTool,
    FunctionNodeWithoutTool,
    UnknownTool,
    QueryNodeIndex,
    QueryNodeCount,
    UnknownEndpoint,
    EdgeIntoQuery,
    DuplicateEdge,
    DataEdgeWithoutEntity,
    ExecutionEdgeWithEntity,
    DanglingDataDependency,
    UnconsumedDataEntity,
    PartialTurns,
    DuplicateTurn,
    BackwardEdge,
    QueryOrder,
    Cycle,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// Node id, `src->dst` edge label, or other offending item.
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]", self.message, self.subject)
    }
}

/// Violations sorted by code then subject; empty means valid.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    fn push(&mut self, code: ViolationCode, subject: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            code,
            subject: subject.into(),
            message: message.into(),
        });
    }

    fn finish(mut self) -> Self {
        self.violations
            .sort_by(|a, b| (a.code, &a.subject).cmp(&(b.code, &b.subject)));
        self.violations.dedup();
        self
    }
}

fn edge_label(src: &str, dst: &str) -> String {
    format!("{src}->{dst}")
}

/// Checks the graph-only invariants. A Data edge leaving a query node is
/// accepted when the entity is listed in that node's `produces`; use
/// [`validate_task`] to also accept the query's mentioned entities.
pub fn validate_graph(g: &ToolGraph) -> ValidationReport {
    check_graph(g, None).finish()
}

/// Checks the graph plus every task-level invariant (queries, tools, tool
/// references, query-node correspondence).
pub fn validate_task(task: &TaskInstance) -> ValidationReport {
    let mut r = check_graph(&task.graph, Some(&task.queries));
    use ViolationCode::*;

    if task.queries.is_empty() {
        r.push(EmptyQueries, &task.id, "task has no queries");
    }
    for (pos, q) in task.queries.iter().enumerate() {
        if q.index != pos {
            r.push(
                QueryIndexMismatch,
                format!("query[{pos}]"),
                format!("query index {} does not match position {pos}", q.index),
            );
        }
        for e in &q.mentioned_entities {
            if e.semantic_type.is_empty() {
                r.push(EmptySemanticType, format!("query[{pos}]"), "entity with empty semantic type");
            }
        }
    }

    if task.tools.is_empty() {
        r.push(EmptyTools, &task.id, "task has no tools");
    }
    let mut tool_names = HashSet::new();
    for t in &task.tools {
        if !tool_names.insert(t.name.as_str()) {
            r.push(DuplicateTool, &t.name, "duplicate tool name");
        }
        let mut params = HashSet::new();
        for p in &t.params {
            if !params.insert(p.name.as_str()) {
                r.push(DuplicateParam, format!("{}.{}", t.name, p.name), "duplicate parameter name");
            }
        }
    }

    let mut query_nodes = 0;
    for n in &task.graph.nodes {
        match n.kind {
            NodeKind::Query => {
                query_nodes += 1;
                if let Some(qi) = n.query_index {
                    if qi >= task.queries.len() {
                        r.push(QueryNodeIndex, &n.id, format!("query index {qi} out of range"));
                    }
                }
            }
            NodeKind::FunctionCall => {
                if let Some(tool) = &n.tool_name {
                    if !tool_names.contains(tool.as_str()) {
                        r.push(UnknownTool, &n.id, format!("references unknown tool `{tool}`"));
                    }
                }
            }
        }
    }
    if query_nodes != task.queries.len() {
        r.push(
            QueryNodeCount,
            &task.id,
            format!("{query_nodes} query nodes for {} queries", task.queries.len()),
        );
    }
    r.finish()
}

fn check_graph(g: &ToolGraph, queries: Option<&[Query]>) -> ValidationReport {
    use ViolationCode::*;
    let mut r = ValidationReport::default();

    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, n) in g.nodes.iter().enumerate() {
        if index.insert(n.id.as_str(), i).is_some() {
            r.push(DuplicateNodeId, &n.id, "duplicate node id");
        }
        match n.kind {
            NodeKind::Query => {
                if n.tool_name.is_some() {
                    r.push(QueryNodeWithTool, &n.id, "query node carries a tool name");
                }
                if n.query_index.is_none() {
                    r.push(QueryNodeIndex, &n.id, "query node without query index");
                }
            }
            NodeKind::FunctionCall => {
                if n.tool_name.as_deref().map_or(true, str::is_empty) {
                    r.push(FunctionNodeWithoutTool, &n.id, "function node without tool name");
                }
            }
        }
        for e in n.produces.iter().chain(&n.consumes) {
            if e.semantic_type.is_empty() {
                r.push(EmptySemanticType, &n.id, "entity with empty semantic type");
            }
        }
    }

    let mut seen_query_index = HashSet::new();
    for n in g.nodes.iter().filter(|n| n.is_query()) {
        if let Some(qi) = n.query_index {
            if !seen_query_index.insert(qi) {
                r.push(QueryNodeIndex, &n.id, format!("query index {qi} used by more than one node"));
            }
        }
    }

    let mut pairs = HashSet::new();
    for e in &g.edges {
        let label = edge_label(&e.src, &e.dst);
        let (Some(&si), Some(&di)) = (index.get(e.src.as_str()), index.get(e.dst.as_str())) else {
            r.push(UnknownEndpoint, &label, "edge endpoint does not exist");
            continue;
        };
        if !pairs.insert((si, di)) {
            r.push(DuplicateEdge, &label, "more than one edge between the same nodes");
        }
        let (src, dst) = (&g.nodes[si], &g.nodes[di]);
        if dst.is_query() {
            r.push(EdgeIntoQuery, &label, "edge points into a query node");
        }
        match (e.kind, &e.entity) {
            (EdgeKind::Data, None) => r.push(DataEdgeWithoutEntity, &label, "data edge carries no entity"),
            (EdgeKind::Execution, Some(_)) => {
                r.push(ExecutionEdgeWithEntity, &label, "execution edge carries an entity")
            }
            (EdgeKind::Data, Some(ent)) => {
                let mut available = src.produces.contains(ent);
                if !available && src.is_query() {
                    if let (Some(qs), Some(qi)) = (queries, src.query_index) {
                        available = qs
                            .get(qi)
                            .is_some_and(|q| q.mentioned_entities.contains(ent));
                    }
                }
                if !available {
                    r.push(DanglingDataDependency, &label, "dangling data dependency");
                }
                if !dst.consumes.contains(ent) {
                    r.push(UnconsumedDataEntity, &label, "data entity not consumed by destination");
                }
            }
            (EdgeKind::Execution, None) => {}
        }
    }

    let timed = g.nodes.iter().filter(|n| n.turn.is_some()).count();
    if timed > 0 && timed < g.nodes.len() {
        r.push(PartialTurns, "graph", "only some nodes carry a turn");
    } else if timed == g.nodes.len() && timed > 0 {
        let mut turns = HashMap::new();
        for n in &g.nodes {
            if let Some(prev) = turns.insert(n.turn.unwrap(), &n.id) {
                r.push(DuplicateTurn, &n.id, format!("turn {} already used by {prev}", n.turn.unwrap()));
            }
        }
        for e in &g.edges {
            if let (Some(s), Some(d)) = (g.node(&e.src), g.node(&e.dst)) {
                if s.turn >= d.turn {
                    r.push(BackwardEdge, edge_label(&e.src, &e.dst), "dependency does not point forward in time");
                }
            }
        }
        let mut qs: Vec<&GraphNode> = g.nodes.iter().filter(|n| n.is_query()).collect();
        qs.sort_by_key(|n| n.query_index);
        for w in qs.windows(2) {
            if w[0].turn > w[1].turn {
                r.push(QueryOrder, &w[1].id, "query nodes out of arrival order");
            }
        }
    }

    if let Err(Error::Cycle(ids)) = topo_order(g) {
        r.push(Cycle, ids.join(","), "cycle detected");
    }
    r
}

/// Adjacency restricted to edges whose endpoints exist.
fn adjacency(g: &ToolGraph) -> (Vec<Vec<usize>>, Vec<usize>) {
    let index: HashMap<&str, usize> = g.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let mut succ = vec![Vec::new(); g.nodes.len()];
    let mut indeg = vec![0; g.nodes.len()];
    for e in &g.edges {
        if let (Some(&s), Some(&d)) = (index.get(e.src.as_str()), index.get(e.dst.as_str())) {
            succ[s].push(d);
            indeg[d] += 1;
        }
    }
    (succ, indeg)
}

/// Kahn's algorithm with a min-heap on (query rank, id). A function node's
/// rank is the largest rank among its predecessors, so calls stay grouped
/// behind the query that introduced them.
fn topo_order(g: &ToolGraph) -> Result<Vec<usize>> {
    let (succ, mut indeg) = adjacency(g);
    let n = g.nodes.len();
    let mut rank: Vec<usize> = g
        .nodes
        .iter()
        .map(|node| match node.kind {
            NodeKind::Query => node.query_index.unwrap_or(0),
            NodeKind::FunctionCall => 0,
        })
        .collect();

    let mut heap = BinaryHeap::new();
    for i in 0..n {
        if indeg[i] == 0 {
            heap.push(Reverse((rank[i], g.nodes[i].id.as_str(), i)));
        }
    }
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((r, _, i))) = heap.pop() {
        order.push(i);
        for &j in &succ[i] {
            if g.nodes[j].kind == NodeKind::FunctionCall {
                rank[j] = rank[j].max(r);
            }
            indeg[j] -= 1;
            if indeg[j] == 0 {
                heap.push(Reverse((rank[j], g.nodes[j].id.as_str(), j)));
            }
        }
    }
    if order.len() < n {
        let done: HashSet<usize> = order.into_iter().collect();
        let stuck: BTreeSet<String> = (0..n).filter(|i| !done.contains(i)).map(|i| g.nodes[i].id.clone()).collect();
        return Err(Error::Cycle(stuck.into_iter().collect()));
    }
    Ok(order)
}

/// Canonical conversational order of a graph's nodes.
#[derive(Clone, Debug)]
pub struct Linearization {
    order: Vec<usize>,
    position: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Linearization {
    /// Uses the nodes' turns when every node has one; otherwise assigns an
    /// order by topological sort.
    pub fn new(g: &ToolGraph) -> Result<Self> {
        let topo = topo_order(g)?;
        let order = if !g.nodes.is_empty() && g.nodes.iter().all(|n| n.turn.is_some()) {
            let mut o: Vec<usize> = (0..g.nodes.len()).collect();
            o.sort_by_key(|&i| (g.nodes[i].turn, i));
            o
        } else {
            topo
        };
        let mut position = vec![0; g.nodes.len()];
        for (pos, &i) in order.iter().enumerate() {
            position[i] = pos;
        }
        let index = g.nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        Ok(Self { order, position, index })
    }

    /// Node indices (into `ToolGraph::nodes`) in conversational order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Position of the node in the canonical order.
    pub fn turn_of(&self, id: &str) -> Option<usize> {
        self.node_index(id).map(|i| self.position[i])
    }

    pub fn turn_of_index(&self, i: usize) -> usize {
        self.position[i]
    }

    /// For each node, the query index of the latest query node at or before
    /// it in conversational order (`None` for calls preceding every query).
    pub fn owning_queries(&self, g: &ToolGraph) -> Vec<Option<usize>> {
        let mut owner = vec![None; g.nodes.len()];
        let mut current = None;
        for &i in &self.order {
            if g.nodes[i].is_query() {
                current = g.nodes[i].query_index;
            }
            owner[i] = current;
        }
        owner
    }
}

/// Node ids in canonical conversational order.
pub fn linearize(g: &ToolGraph) -> Result<Vec<String>> {
    let lin = Linearization::new(g)?;
    Ok(lin.order.iter().map(|&i| g.nodes[i].id.clone()).collect())
}

/// Function-call node ids in canonical order.
pub fn function_nodes(g: &ToolGraph) -> Result<Vec<String>> {
    let lin = Linearization::new(g)?;
    Ok(lin
        .order
        .iter()
        .filter(|&&i| g.nodes[i].kind == NodeKind::FunctionCall)
        .map(|&i| g.nodes[i].id.clone())
        .collect())
}

/// Returns a copy of the graph with every node's turn set to its canonical
/// position.
pub fn with_assigned_turns(g: &ToolGraph) -> Result<ToolGraph> {
    let lin = Linearization::new(g)?;
    let mut out = g.clone();
    for (i, n) in out.nodes.iter_mut().enumerate() {
        n.turn = Some(lin.position[i]);
    }
    Ok(out)
}

/// Fails with [`Error::InvalidTask`] unless the task passes [`validate_task`].
pub fn ensure_valid(task: &TaskInstance) -> Result<()> {
    let report = validate_task(task);
    if report.is_valid() {
        Ok(())
    } else {
        Err(Error::InvalidTask {
            task_id: task.id.clone(),
            violations: report.violations.iter().map(ToString::to_string).collect(),
        })
    }
}
