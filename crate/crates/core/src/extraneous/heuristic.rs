use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::QueryScorer;
use crate::error::Result;
use crate::graph::Linearization;
use crate::model::{EdgeKind, NodeKind, Query, TaskInstance, ToolSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicConfig {
    pub ambiguity_weight: f64,
    pub distraction_weight: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            ambiguity_weight: 1.0,
            distraction_weight: 1.0,
        }
    }
}

/// Deterministic scorer.
///
/// * ambiguity: share of the required parameters of the query's own calls
///   that the query does not supply. A slot counts as supplied when the query
///   mentions an entity of the parameter's type, or when the call receives
///   one through a data edge from another call.
/// * distraction: highest token-set Jaccard similarity between any tool the
///   graph never calls and any tool called on behalf of this query.
#[derive(Clone, Debug, Default)]
pub struct HeuristicScorer {
    cfg: HeuristicConfig,
}

impl HeuristicScorer {
    pub fn new(cfg: HeuristicConfig) -> Self {
        Self { cfg }
    }

    pub fn ambiguity(&self, task: &TaskInstance, query: &Query) -> Result<f64> {
        let g = &task.graph;
        let lin = Linearization::new(g)?;
        let owner = lin.owning_queries(g);
        let mentioned: HashSet<&str> = query
            .mentioned_entities
            .iter()
            .map(|e| e.semantic_type.as_str())
            .collect();

        let (mut slots, mut unresolved) = (0usize, 0usize);
        for (i, node) in g.nodes.iter().enumerate() {
            if node.kind != NodeKind::FunctionCall || owner[i] != Some(query.index) {
                continue;
            }
            let Some(tool) = node.tool_name.as_deref().and_then(|t| task.tool(t)) else {
                continue;
            };
            let piped: HashSet<&str> = g
                .edges
                .iter()
                .filter(|e| e.dst == node.id && e.kind == EdgeKind::Data)
                .filter(|e| g.node(&e.src).is_some_and(|s| s.kind == NodeKind::FunctionCall))
                .filter_map(|e| e.entity.as_ref().map(|x| x.semantic_type.as_str()))
                .collect();
            for p in tool.params.iter().filter(|p| p.required) {
                slots += 1;
                let t = p.type_tag.as_str();
                if !mentioned.contains(t) && !piped.contains(t) {
                    unresolved += 1;
                }
            }
        }
        Ok(if slots == 0 {
            0.0
        } else {
            unresolved as f64 / slots as f64
        })
    }

    pub fn distraction(&self, task: &TaskInstance, query: &Query) -> Result<f64> {
        let g = &task.graph;
        let lin = Linearization::new(g)?;
        let owner = lin.owning_queries(g);
        let used: HashSet<&str> = g.nodes.iter().filter_map(|n| n.tool_name.as_deref()).collect();
        let mine: BTreeSet<&str> = g
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| owner[*i] == Some(query.index))
            .filter_map(|(_, n)| n.tool_name.as_deref())
            .collect();

        let refs: Vec<BTreeSet<String>> = mine
            .iter()
            .filter_map(|name| task.tool(name))
            .map(tool_tokens)
            .collect();
        let mut best = 0.0f64;
        for distractor in task.tools.iter().filter(|t| !used.contains(t.name.as_str())) {
            let d = tool_tokens(distractor);
            for r in &refs {
                best = best.max(jaccard(&d, r));
            }
        }
        Ok(best)
    }
}

impl QueryScorer for HeuristicScorer {
    fn id(&self) -> String {
        let c = &self.cfg;
        if *c == HeuristicConfig::default() {
            "heuristic/v1".to_string()
        } else {
            format!("heuristic/v1(a={},d={})", c.ambiguity_weight, c.distraction_weight)
        }
    }

    fn score(&self, task: &TaskInstance, query: &Query) -> Result<(f64, f64)> {
        Ok((
            self.cfg.ambiguity_weight * self.ambiguity(task, query)?,
            self.cfg.distraction_weight * self.distraction(task, query)?,
        ))
    }
}

fn tool_tokens(t: &ToolSpec) -> BTreeSet<String> {
    let mut s = tokens(&t.name);
    s.extend(tokens(&t.description));
    s
}

/// Lowercased alphanumeric runs.
pub fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraneous::extraneous_load;
    use crate::model::{param, query, tool, DepEdge, EntityRef, GraphNode, ToolGraph};

    fn uid(v: &str) -> EntityRef {
        EntityRef::new("user_id", v)
    }

    /// One query with two calls; `send` needs (user_id, channel) and
    /// `archive` needs (user_id, folder). The query mentions only a user_id.
    fn two_call_task(extra_tools: Vec<ToolSpec>) -> TaskInstance {
        let mut tools = vec![
            tool("send_message", "send a chat message to a user", vec![
                param("to", "user_id", true),
                param("channel", "channel_id", true),
                param("note", "text", false),
            ]),
            tool("archive", "archive a folder", vec![param("owner", "user_id", true), param("folder", "folder_id", true)]),
        ];
        tools.extend(extra_tools);
        let graph = ToolGraph {
            nodes: vec![
                GraphNode::query("q0", 0).at(0),
                GraphNode::call("f1", "send_message").at(1).consuming(uid("u1")),
                GraphNode::call("f2", "archive").at(2).consuming(uid("u1")),
            ],
            edges: vec![DepEdge::data("q0", "f1", uid("u1")), DepEdge::data("q0", "f2", uid("u1"))],
            ..Default::default()
        };
        TaskInstance::new("t", vec![query(0, "message u1 and archive", vec![uid("u1")])], tools, graph)
    }

    #[test]
    fn two_of_four_slots_unresolved() {
        // slots: to(user_id) ok, channel missing, owner(user_id) ok, folder missing
        let t = two_call_task(vec![]);
        let s = HeuristicScorer::default();
        assert_eq!(s.ambiguity(&t, &t.queries[0]).unwrap(), 0.5);
    }

    #[test]
    fn no_distractors_means_zero_distraction() {
        let t = two_call_task(vec![]);
        assert_eq!(HeuristicScorer::default().distraction(&t, &t.queries[0]).unwrap(), 0.0);
    }

    #[test]
    fn distraction_is_max_jaccard() {
        // archive tokens: {archive, a, folder}. "folder archive" tokens
        // {folder, archive}: 2/3. send_message tokens: {send, message, a,
        // chat, to, user}; "send chat message to user" shares 5 of 6.
        let t = two_call_task(vec![
            tool("folder", "archive", vec![]),
            tool("send", "chat message to user", vec![]),
            tool("weather", "forecast", vec![]),
        ]);
        let d = HeuristicScorer::default().distraction(&t, &t.queries[0]).unwrap();
        assert!((d - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn jaccard_point_eight() {
        let a = tokens("alpha beta gamma delta");
        let b = tokens("alpha-beta gamma_delta EPSILON");
        assert_eq!(jaccard(&a, &b), 0.8);
    }

    #[test]
    fn piped_values_resolve_slots() {
        let chan = EntityRef::new("channel_id", "c9");
        let mut t = two_call_task(vec![tool("find_channel", "", vec![])]);
        t.graph.nodes.insert(1, GraphNode::call("f0", "find_channel").at(1).producing(chan.clone()));
        t.graph.nodes[2].turn = Some(2);
        t.graph.nodes[3].turn = Some(3);
        t.graph.nodes[2].consumes.push(chan.clone());
        t.graph.edges.push(DepEdge::data("f0", "f1", chan));
        // find_channel has no params; channel now piped: 1 of 4 unresolved
        let s = HeuristicScorer::default();
        assert_eq!(s.ambiguity(&t, &t.queries[0]).unwrap(), 0.25);
        let r = extraneous_load(&t, &s).unwrap();
        assert_eq!(r.per_query[0].ambiguity, 0.25);
    }

    #[test]
    fn tokens_strip_punctuation() {
        let t = tokens("Get_User-ID, (v2)!");
        assert_eq!(t.into_iter().collect::<Vec<_>>(), ["get", "id", "user", "v2"]);
    }
}
