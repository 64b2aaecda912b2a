//! Markdown summary of fitted profiles, calibration tests and tercile
//! accuracies.

use std::fmt::Write;

use tigload::router::AgentProfile;
use tigload::stats::chi2_survival;

use crate::commands::{HlEntry, OmegaFile};

pub fn render_report(profiles: &[AgentProfile], hl: &[HlEntry], buckets: Option<&OmegaFile>) -> String {
    let mut profiles: Vec<&AgentProfile> = profiles.iter().collect();
    profiles.sort_by(|a, b| a.profile.agent_id.cmp(&b.profile.agent_id));
    let mut hl: Vec<&HlEntry> = hl.iter().collect();
    hl.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));

    let mut s = String::new();
    s.push_str("# Cognitive load report\n\n");

    s.push_str("## Overall accuracy\n\n| Agent | Trials | Accuracy (%) |\n|---|---:|---:|\n");
    for p in &profiles {
        let p = &p.profile;
        let _ = writeln!(s, "| {} | {} | {:.2} |", p.agent_id, p.n_trials, 100.0 * p.overall_accuracy);
    }

    s.push_str("\n## Cognitive profiles\n\n| Agent | k | b | omega_e | Fit |\n|---|---:|---:|---:|---|\n");
    for ap in &profiles {
        let p = &ap.profile;
        let method = match p.method {
            tigload::fit::FitMethod::LogLinear => "log-linear",
            tigload::fit::FitMethod::LogLinearMle => "log-linear + MLE",
        };
        let _ = writeln!(s, "| {} | {:.3} | {:.2} | {:.3} | {method} |", p.agent_id, p.k, p.b, ap.omega_e);
    }

    s.push_str("\n## Hosmer-Lemeshow goodness of fit\n\n| Agent | Chi-square | dof | p-value |\n|---|---:|---:|---:|\n");
    for h in &hl {
        let p = if h.dof > 0 { chi2_survival(h.chi2, h.dof) } else { h.p_value };
        let _ = writeln!(s, "| {} | {:.2} | {} | {:.2} |", h.agent_id, h.chi2, h.dof, p);
    }

    if let Some(b) = buckets {
        let mut cals: Vec<_> = b.calibrations.iter().collect();
        cals.sort_by(|x, y| x.agent_id.cmp(&y.agent_id));
        for (title, pick) in [
            ("Accuracy by intrinsic load tercile", 0usize),
            ("Accuracy by extraneous load tercile", 1),
        ] {
            let _ = write!(
                s,
                "\n## {title}\n\n| Agent | Low (%) | Medium (%) | High (%) | Drop (pts) |\n|---|---:|---:|---:|---:|\n"
            );
            for c in &cals {
                let acc = if pick == 0 { c.tercile_accuracy.cli } else { c.tercile_accuracy.cle };
                let _ = writeln!(
                    s,
                    "| {} | {:.2} | {:.2} | {:.2} | {:.2} |",
                    c.agent_id,
                    100.0 * acc[0],
                    100.0 * acc[1],
                    100.0 * acc[2],
                    100.0 * (acc[0] - acc[2])
                );
            }
        }
        s.push_str("\n## Extraneous load scale\n\n| Agent | omega_e | Floored |\n|---|---:|---|\n");
        for c in &cals {
            let _ = writeln!(s, "| {} | {:.3} | {} |", c.agent_id, c.omega_e, if c.clamped { "yes" } else { "no" });
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use tigload::fit::{CognitiveProfile, FitMethod};

    fn agent(id: &str) -> AgentProfile {
        AgentProfile {
            profile: CognitiveProfile {
                agent_id: id.into(),
                k: 0.067,
                b: 1.71,
                fit_bins: vec![],
                residual_sse: 0.0,
                n_trials: 200,
                overall_accuracy: 0.5,
                method: FitMethod::LogLinear,
            },
            omega_e: 1.0,
        }
    }

    fn hl(id: &str, chi2: f64) -> HlEntry {
        HlEntry {
            agent_id: id.into(),
            chi2,
            dof: 8,
            p_value: 0.0,
            groups: vec![],
        }
    }

    #[test]
    fn one_row_per_table() {
        let r = render_report(&[agent("a")], &[hl("a", 4.87)], None);
        assert_eq!(r.matches("| a |").count(), 3);
        assert!(r.contains("| a | 4.87 | 8 | 0.77 |"), "{r}");
        assert!(r.contains("| a | 0.067 | 1.71 |"));
    }

    #[test]
    fn rows_sorted_by_agent() {
        let r = render_report(&[agent("z"), agent("b")], &[], None);
        assert!(r.find("| b |").unwrap() < r.find("| z |").unwrap());
    }
}
