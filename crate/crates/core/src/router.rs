//! Routes a task to the agent whose profile predicts the best outcome under a
//! policy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::CognitiveProfile;
use crate::total::total_load;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    MaxAccuracy,
    CheapestAboveThreshold { threshold: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingPolicy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    pub costs: BTreeMap<String, f64>,
}

impl RoutingPolicy {
    pub fn validate(&self) -> Result<()> {
        if let PolicyKind::CheapestAboveThreshold { threshold } = self.kind {
            if !(threshold > 0.0 && threshold < 1.0) {
                return Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")));
            }
        }
        if let Some((a, c)) = self.costs.iter().find(|(_, c)| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::Config(format!("cost for `{a}` must be >= 0, got {c}")));
        }
        Ok(())
    }
}

/// A fitted profile together with the omega_e used to build that agent's
/// total load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub profile: CognitiveProfile,
    pub omega_e: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub task_id: String,
    pub agent_id: String,
    pub predicted_accuracy: f64,
    pub rationale: String,
}

struct Candidate<'a> {
    agent: &'a str,
    predicted: f64,
    cost: f64,
}

/// Picks an agent for one task given each agent's total load for it.
pub fn route(
    task_id: &str,
    task_loads: &BTreeMap<String, f64>,
    profiles: &[CognitiveProfile],
    policy: &RoutingPolicy,
) -> Result<RoutingDecision> {
    if profiles.is_empty() {
        return Err(Error::NoProfiles);
    }
    policy.validate()?;
    let mut cands = Vec::with_capacity(profiles.len());
    for p in profiles {
        let load = *task_loads
            .get(&p.agent_id)
            .ok_or_else(|| Error::Domain(format!("task `{task_id}` has no load for agent `{}`", p.agent_id)))?;
        let cost = *policy
            .costs
            .get(&p.agent_id)
            .ok_or_else(|| Error::MissingCost(p.agent_id.clone()))?;
        cands.push(Candidate {
            agent: &p.agent_id,
            predicted: p.predict(load),
            cost,
        });
    }

    let best = |cs: &[&Candidate]| -> usize {
        let mut bi = 0;
        for (i, c) in cs.iter().enumerate().skip(1) {
            let b = cs[bi];
            let better = c.predicted > b.predicted
                || (c.predicted == b.predicted && (c.cost < b.cost || (c.cost == b.cost && c.agent < b.agent)));
            if better {
                bi = i;
            }
        }
        bi
    };
    let all: Vec<&Candidate> = cands.iter().collect();

    let (chosen, rationale) = match policy.kind {
        PolicyKind::MaxAccuracy => {
            let c = all[best(&all)];
            (c, format!("highest predicted accuracy {:.4}", c.predicted))
        }
        PolicyKind::CheapestAboveThreshold { threshold } => {
            let mut ok: Vec<&Candidate> = all.iter().copied().filter(|c| c.predicted >= threshold).collect();
            if ok.is_empty() {
                let c = all[best(&all)];
                (
                    c,
                    format!(
                        "no agent reaches {threshold}; fell back to highest predicted accuracy {:.4}",
                        c.predicted
                    ),
                )
            } else {
                ok.sort_by(|a, b| {
                    a.cost
                        .total_cmp(&b.cost)
                        .then(b.predicted.total_cmp(&a.predicted))
                        .then(a.agent.cmp(b.agent))
                });
                let c = ok[0];
                (
                    c,
                    format!("cheapest agent (cost {}) with predicted accuracy {:.4} >= {threshold}", c.cost, c.predicted),
                )
            }
        }
    };
    Ok(RoutingDecision {
        task_id: task_id.to_string(),
        agent_id: chosen.agent.to_string(),
        predicted_accuracy: chosen.predicted,
        rationale,
    })
}

/// Routes using each agent's own omega_e, or `shared_omega` for every agent
/// when given.
pub fn route_task(
    task_id: &str,
    cl_i: f64,
    cl_e: f64,
    agents: &[AgentProfile],
    policy: &RoutingPolicy,
    shared_omega: Option<f64>,
) -> Result<RoutingDecision> {
    let loads = agents
        .iter()
        .map(|a| {
            let omega = shared_omega.unwrap_or(a.omega_e);
            (a.profile.agent_id.clone(), total_load(cl_i, cl_e, omega))
        })
        .collect();
    let profiles: Vec<CognitiveProfile> = agents.iter().map(|a| a.profile.clone()).collect();
    route(task_id, &loads, &profiles, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::FitMethod;

    fn profile(agent: &str, k: f64, b: f64) -> CognitiveProfile {
        CognitiveProfile {
            agent_id: agent.into(),
            k,
            b,
            fit_bins: vec![],
            residual_sse: 0.0,
            n_trials: 0,
            overall_accuracy: 0.0,
            method: FitMethod::LogLinear,
        }
    }

    fn policy(kind: PolicyKind, costs: &[(&str, f64)]) -> RoutingPolicy {
        RoutingPolicy {
            kind,
            costs: costs.iter().map(|(a, c)| (a.to_string(), *c)).collect(),
        }
    }

    fn loads(v: &[(&str, f64)]) -> BTreeMap<String, f64> {
        v.iter().map(|(a, l)| (a.to_string(), *l)).collect()
    }

    #[test]
    fn single_agent() {
        let d = route(
            "t",
            &loads(&[("a", 5.0)]),
            &[profile("a", 0.1, 1.0)],
            &policy(PolicyKind::MaxAccuracy, &[("a", 1.0)]),
        )
        .unwrap();
        assert_eq!(d.agent_id, "a");
    }

    #[test]
    fn tie_goes_to_cheaper() {
        let d = route(
            "t",
            &loads(&[("a", 5.0), ("b", 5.0)]),
            &[profile("a", 0.1, 1.0), profile("b", 0.1, 1.0)],
            &policy(PolicyKind::MaxAccuracy, &[("a", 2.0), ("b", 1.0)]),
        )
        .unwrap();
        assert_eq!(d.agent_id, "b");
    }

    #[test]
    fn table_profiles_at_load_twenty() {
        let d = route(
            "t",
            &loads(&[("xlam2-32b", 20.0), ("gpt-4o", 20.0)]),
            &[profile("gpt-4o", 0.067, 1.71), profile("xlam2-32b", 0.034, 1.22)],
            &policy(PolicyKind::MaxAccuracy, &[("xlam2-32b", 1.0), ("gpt-4o", 1.0)]),
        )
        .unwrap();
        assert_eq!(d.agent_id, "xlam2-32b");
        assert!((d.predicted_accuracy - (-1.90f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn cheapest_above_threshold_and_fallback() {
        let profiles = [profile("strong", 0.01, 0.1), profile("cheap", 0.1, 0.2)];
        let costs = [("strong", 10.0), ("cheap", 1.0)];
        let l = loads(&[("strong", 2.0), ("cheap", 2.0)]);
        // cheap: exp(-0.4) = 0.67, strong: exp(-0.12) = 0.89
        let d = route("t", &l, &profiles, &policy(PolicyKind::CheapestAboveThreshold { threshold: 0.6 }, &costs)).unwrap();
        assert_eq!(d.agent_id, "cheap");
        let d = route("t", &l, &profiles, &policy(PolicyKind::CheapestAboveThreshold { threshold: 0.8 }, &costs)).unwrap();
        assert_eq!(d.agent_id, "strong");
        let d = route("t", &l, &profiles, &policy(PolicyKind::CheapestAboveThreshold { threshold: 0.95 }, &costs)).unwrap();
        assert_eq!(d.agent_id, "strong");
        assert!(d.rationale.contains("fell back"));
    }

    #[test]
    fn errors() {
        let p = policy(PolicyKind::MaxAccuracy, &[]);
        assert!(matches!(route("t", &loads(&[]), &[], &p), Err(Error::NoProfiles)));
        assert!(matches!(
            route("t", &loads(&[("a", 1.0)]), &[profile("a", 0.1, 0.1)], &p),
            Err(Error::MissingCost(_))
        ));
        let bad = policy(PolicyKind::CheapestAboveThreshold { threshold: 1.0 }, &[("a", 1.0)]);
        assert!(matches!(
            route("t", &loads(&[("a", 1.0)]), &[profile("a", 0.1, 0.1)], &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn per_agent_omega() {
        // a weighs extraneous load heavily, b ignores it
        let agents = [
            AgentProfile {
                profile: profile("a", 0.1, 0.0),
                omega_e: 10.0,
            },
            AgentProfile {
                profile: profile("b", 0.1, 0.1),
                omega_e: 0.0,
            },
        ];
        let p = policy(PolicyKind::MaxAccuracy, &[("a", 1.0), ("b", 1.0)]);
        assert_eq!(route_task("t", 1.0, 1.0, &agents, &p, None).unwrap().agent_id, "b");
        assert_eq!(route_task("t", 1.0, 1.0, &agents, &p, Some(0.0)).unwrap().agent_id, "a");
    }
}
