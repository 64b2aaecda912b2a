#![allow(dead_code)]

use tigload::model::{param, query, tool, DepEdge, EntityRef, GraphNode, TaskInstance, ToolGraph};
use tigload::rng::CounterRng;

pub const TYPES: [&str; 3] = ["user_id", "file_path", "date"];

/// A random valid task: queries in order, each followed by its calls, every
/// call with one to three incoming edges from earlier nodes. Tools `op_a` and
/// `op_b` are used; `op_c` and `file_tool` are distractors.
pub fn random_task(seed: u64, max_calls: usize) -> TaskInstance {
    let mut rng = CounterRng::new(seed);
    let n_queries = 1 + rng.below(3) as usize;
    let n_calls = 1 + rng.below(max_calls as u64) as usize;
    let mut owners: Vec<usize> = (0..n_calls).map(|_| rng.below(n_queries as u64) as usize).collect();
    owners.sort_unstable();
    let mut queries = Vec::new();
    let mut nodes: Vec<GraphNode> = Vec::new();
    let mut serial = 0;
    let mut call = 0;
    for qi in 0..n_queries {
        serial += 1;
        let ent = EntityRef::new(*rng.choose(&TYPES).unwrap(), format!("v{serial}"));
        queries.push(query(qi, format!("request {qi}"), vec![ent]));
        nodes.push(GraphNode::query(format!("q{qi}"), qi).at(nodes.len()));
        while call < n_calls && owners[call] == qi {
            serial += 1;
            call += 1;
            let ent = EntityRef::new(*rng.choose(&TYPES).unwrap(), format!("v{serial}"));
            let tool = if rng.bernoulli(0.5) { "op_a" } else { "op_b" };
            nodes.push(GraphNode::call(format!("f{call}"), tool).at(nodes.len()).producing(ent));
        }
    }
    let mut edges = Vec::new();
    for d in 0..nodes.len() {
        if nodes[d].is_query() {
            continue;
        }
        let mut srcs: Vec<usize> = (0..d).collect();
        rng.shuffle(&mut srcs);
        let k = 1 + rng.below(srcs.len().min(3) as u64) as usize;
        for &s in &srcs[..k] {
            let ent = match nodes[s].query_index.filter(|_| nodes[s].is_query()) {
                Some(qi) => queries[qi].mentioned_entities[0].clone(),
                None => nodes[s].produces[0].clone(),
            };
            let (src, dst) = (nodes[s].id.clone(), nodes[d].id.clone());
            if rng.bernoulli(0.6) {
                nodes[d].consumes.push(ent.clone());
                edges.push(DepEdge::data(src, dst, ent));
            } else {
                edges.push(DepEdge::execution(src, dst));
            }
        }
    }
    TaskInstance::new(
        format!("rand-{seed}"),
        queries,
        vec![
            tool("op_a", "read a user record", vec![param("user", "user_id", true)]),
            tool("op_b", "open a file path", vec![param("path", "file_path", true), param("day", "date", false)]),
            tool("op_c", "read a user profile record", vec![param("user", "user_id", true)]),
            tool("file_tool", "delete a file path", vec![param("path", "file_path", true)]),
        ],
        ToolGraph {
            nodes,
            edges,
            ..Default::default()
        },
    )
}

/// Same task with every turn annotation removed.
pub fn untimed(mut t: TaskInstance) -> TaskInstance {
    for n in &mut t.graph.nodes {
        n.turn = None;
    }
    t
}
