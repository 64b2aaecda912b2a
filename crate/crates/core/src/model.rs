//! Task and tool-interaction-graph data model.
//!
//! A [`TaskInstance`] bundles the ordered user queries, the available tools and
//! the ground-truth [`ToolGraph`]. Everything serializes to the `tigload/1`
//! JSON format; fields this version does not know about are kept in `extra`
//! maps so a read/write cycle never drops data.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Schema tag required at the top level of every task document.
pub const SCHEMA_VERSION: &str = "tigload/1";

pub type Extra = BTreeMap<String, Value>;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityRef {
    pub semantic_type: String,
    pub value_id: String,
}

impl EntityRef {
    pub fn new(semantic_type: impl Into<String>, value_id: impl Into<String>) -> Self {
        Self {
            semantic_type: semantic_type.into(),
            value_id: value_id.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub index: usize,
    pub text: String,
    #[serde(default)]
    pub mentioned_entities: Vec<EntityRef>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolParam {
    pub name: String,
    /// Semantic type of the value this parameter expects (matches
    /// [`EntityRef::semantic_type`]).
    #[serde(rename = "type")]
    pub type_tag: String,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub params: Vec<ToolParam>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Query,
    FunctionCall,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub kind: NodeKind,
    /// Position in the conversational order. Either every node carries one or
    /// none does, in which case [`crate::graph::linearize`] assigns them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<usize>,
    /// Index of the task query this node stands for (query nodes only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_name: Option<String>,
    #[serde(default)]
    pub produces: Vec<EntityRef>,
    #[serde(default)]
    pub consumes: Vec<EntityRef>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl GraphNode {
    pub fn query(id: impl Into<String>, query_index: usize) -> Self {
        Self {
            id: id.into(),
            kind: NodeKind::Query,
            turn: None,
            query_index: Some(query_index),
            tool_name: None,
            produces: Vec::new(),
            consumes: Vec::new(),
            extra: Extra::new(),
        }
    }

    pub fn call(id: impl Into<String>, tool: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: NodeKind::FunctionCall,
            turn: None,
            query_index: None,
            tool_name: Some(tool.into()),
            produces: Vec::new(),
            consumes: Vec::new(),
            extra: Extra::new(),
        }
    }

    pub fn at(mut self, turn: usize) -> Self {
        self.turn = Some(turn);
        self
    }

    pub fn producing(mut self, e: EntityRef) -> Self {
        self.produces.push(e);
        self
    }

    pub fn consuming(mut self, e: EntityRef) -> Self {
        self.consumes.push(e);
        self
    }

    pub fn is_query(&self) -> bool {
        self.kind == NodeKind::Query
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Data,
    Execution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepEdge {
    pub src: String,
    pub dst: String,
    pub kind: EdgeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<EntityRef>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl DepEdge {
    pub fn data(src: impl Into<String>, dst: impl Into<String>, entity: EntityRef) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            kind: EdgeKind::Data,
            entity: Some(entity),
            extra: Extra::new(),
        }
    }

    pub fn execution(src: impl Into<String>, dst: impl Into<String>) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            kind: EdgeKind::Execution,
            entity: None,
            extra: Extra::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolGraph {
    #[serde(default)]
    pub nodes: Vec<GraphNode>,
    #[serde(default)]
    pub edges: Vec<DepEdge>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl ToolGraph {
    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn contains_edge(&self, src: &str, dst: &str) -> bool {
        self.edges.iter().any(|e| e.src == src && e.dst == dst)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub schema: String,
    pub id: String,
    #[serde(default)]
    pub domain: String,
    pub queries: Vec<Query>,
    pub tools: Vec<ToolSpec>,
    pub graph: ToolGraph,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl TaskInstance {
    pub fn new(
        id: impl Into<String>,
        queries: Vec<Query>,
        tools: Vec<ToolSpec>,
        graph: ToolGraph,
    ) -> Self {
        Self {
            schema: SCHEMA_VERSION.to_string(),
            id: id.into(),
            domain: String::new(),
            queries,
            tools,
            graph,
            meta: BTreeMap::new(),
            extra: Extra::new(),
        }
    }

    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    /// Parses one `tigload/1` document.
    pub fn from_json(s: &str) -> Result<Self> {
        let task: TaskInstance = serde_json::from_str(s)?;
        if task.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema `{}` (expected `{SCHEMA_VERSION}`)",
                task.schema
            )));
        }
        Ok(task)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// A line of a JSONL batch that failed to parse.
#[derive(Clone, Debug, PartialEq)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

/// Reads a JSONL batch of tasks. Blank lines are skipped; each malformed line
/// is reported with its line number and does not stop the read.
pub fn read_tasks_jsonl<R: BufRead>(reader: R) -> Result<(Vec<TaskInstance>, Vec<LineError>)> {
    let mut tasks = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match TaskInstance::from_json(&line) {
            Ok(t) => tasks.push(t),
            Err(e) => errors.push(LineError {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    Ok((tasks, errors))
}

pub fn query(index: usize, text: impl Into<String>, mentioned: Vec<EntityRef>) -> Query {
    Query {
        index,
        text: text.into(),
        mentioned_entities: mentioned,
        extra: Extra::new(),
    }
}

pub fn tool(name: impl Into<String>, description: impl Into<String>, params: Vec<ToolParam>) -> ToolSpec {
    ToolSpec {
        name: name.into(),
        description: description.into(),
        params,
        extra: Extra::new(),
    }
}

pub fn param(name: impl Into<String>, type_tag: impl Into<String>, required: bool) -> ToolParam {
    ToolParam {
        name: name.into(),
        type_tag: type_tag.into(),
        required,
        description: String::new(),
    }
}
