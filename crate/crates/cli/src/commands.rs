use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tigload::extraneous::{extraneous_load_batch, scorer_from_config, QueryLoad, QueryScorer};
use tigload::fit::{fit_profile, CognitiveProfile, TrialRecord};
use tigload::graph::ensure_valid;
use tigload::intrinsic::{intrinsic_load, EdgeLoad, IntrinsicParams};
use tigload::model::TaskInstance;
use tigload::router::{route_task, AgentProfile, RoutingDecision, RoutingPolicy};
use tigload::sim::{simulate_task_level, SimAgent, TaskSimulator};
use tigload::stats::{calibration_bins, hosmer_lemeshow, HlGroup};
use tigload::taskgen::{sweep, GenFailure, StratumManifest};
use tigload::total::{calibrate_omega, total_load, OmegaCalibration};

use crate::artifact::{parse_doc, parse_jsonl, parse_jsonl_strict, write_atomic, Provenance};
use crate::config::{OmegaMode, RunConfig};
use crate::error::CliError;
use crate::report::render_report;

/// One line of a loads file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadRecord {
    pub task_id: String,
    pub cl_i: f64,
    pub cl_e: f64,
    #[serde(default)]
    pub scorer_id: String,
    #[serde(default)]
    pub per_edge: Vec<EdgeLoad>,
    #[serde(default)]
    pub per_query: Vec<QueryLoad>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub task_id: String,
    pub cl_e: f64,
    pub scorer_id: String,
    pub per_query: Vec<QueryLoad>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaFile {
    pub mode: OmegaMode,
    pub calibrations: Vec<OmegaCalibration>,
}

pub const POOLED_AGENT: &str = "pooled";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HlEntry {
    pub agent_id: String,
    pub chi2: f64,
    pub dof: u32,
    pub p_value: f64,
    pub groups: Vec<HlGroup>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenManifest {
    pub strata: Vec<StratumManifest>,
    pub failures: Vec<GenFailure>,
}

/// Outcome of a command. Diagnostics mark skipped input and turn the exit
/// status into a data error; warnings are informational.
#[must_use]
#[derive(Default)]
pub struct Outcome {
    pub diagnostics: Vec<String>,
    pub warnings: Vec<String>,
}

impl Outcome {
    fn clean() -> Self {
        Self::default()
    }

    fn with_diagnostics(diagnostics: Vec<String>) -> Self {
        Self {
            diagnostics,
            warnings: Vec::new(),
        }
    }

    fn with_warnings(warnings: Vec<String>) -> Self {
        Self {
            diagnostics: Vec::new(),
            warnings,
        }
    }
}

fn params(cfg: &RunConfig) -> Result<IntrinsicParams> {
    Ok(IntrinsicParams::new(cfg.lambda)?)
}

fn name_of(p: &Path) -> String {
    p.display().to_string()
}

/// Tasks with their line numbers, plus diagnostics for lines that did not
/// parse or tasks that failed validation.
fn read_tasks(bytes: &[u8], name: &str) -> Result<(Vec<TaskInstance>, Vec<String>)> {
    let (values, bad) = parse_jsonl::<serde_json::Value>(bytes)?;
    let mut diags: Vec<(usize, String)> = bad.into_iter().map(|d| (d.line, d.message)).collect();
    let mut seen = BTreeSet::new();
    let mut tasks = Vec::new();
    for (line, v) in values {
        let parsed = serde_json::to_string(&v)
            .map_err(tigload::Error::from)
            .and_then(|s| TaskInstance::from_json(&s))
            .and_then(|t| ensure_valid(&t).map(|_| t));
        match parsed {
            Ok(t) if !seen.insert(t.id.clone()) => diags.push((line, format!("duplicate task id `{}`", t.id))),
            Ok(t) => tasks.push(t),
            Err(e) => diags.push((line, e.to_string())),
        }
    }
    diags.sort();
    let diags = diags.into_iter().map(|(l, m)| format!("{name}:{l}: {m}")).collect();
    tasks.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((tasks, diags))
}

fn make_scorer(cfg: &RunConfig) -> Result<Box<dyn QueryScorer>> {
    Ok(scorer_from_config(&cfg.scorer)?)
}

/// Runs the scorer over every task. Scorer failures abort; other per-task
/// failures become diagnostics.
fn score_all(
    tasks: &[TaskInstance],
    scorer: &dyn QueryScorer,
    diags: &mut Vec<String>,
) -> Result<Vec<(usize, tigload::extraneous::ExtraneousReport)>> {
    let mut out = Vec::new();
    for (i, r) in extraneous_load_batch(tasks, scorer).into_iter().enumerate() {
        match r {
            Ok(rep) => out.push((i, rep)),
            Err(e @ (tigload::Error::ScorerUnavailable { .. } | tigload::Error::MalformedScore { .. })) => {
                return Err(e).with_context(|| format!("scoring task `{}`", tasks[i].id))
            }
            Err(e) => diags.push(format!("task `{}`: {e}", tasks[i].id)),
        }
    }
    Ok(out)
}

pub fn analyze(cfg: &RunConfig, tasks_path: &Path, out: &Path) -> Result<Outcome> {
    let mut prov = Provenance::new("analyze", cfg)?;
    let bytes = prov.input("tasks", tasks_path)?;
    let (tasks, mut diags) = read_tasks(&bytes, &name_of(tasks_path))?;
    let p = params(cfg)?;
    let scorer = make_scorer(cfg)?;
    let ext = score_all(&tasks, scorer.as_ref(), &mut diags)?;
    let records: Vec<LoadRecord> = ext
        .into_par_iter()
        .map(|(i, e)| {
            let t = &tasks[i];
            let cli = intrinsic_load(t, p)?;
            Ok(LoadRecord {
                task_id: t.id.clone(),
                cl_i: cli.total,
                cl_e: e.total,
                scorer_id: e.scorer_id,
                per_edge: cli.per_edge,
                per_query: e.per_query,
            })
        })
        .collect::<tigload::Result<_>>()?;
    write_atomic(out, &prov.jsonl(&records)?)?;
    Ok(Outcome::with_diagnostics(diags))
}

pub fn score(cfg: &RunConfig, tasks_path: &Path, out: &Path) -> Result<Outcome> {
    let mut prov = Provenance::new("score", cfg)?;
    let bytes = prov.input("tasks", tasks_path)?;
    let (tasks, mut diags) = read_tasks(&bytes, &name_of(tasks_path))?;
    let scorer = make_scorer(cfg)?;
    let records: Vec<ScoreRecord> = score_all(&tasks, scorer.as_ref(), &mut diags)?
        .into_iter()
        .map(|(i, e)| ScoreRecord {
            task_id: tasks[i].id.clone(),
            cl_e: e.total,
            scorer_id: e.scorer_id,
            per_query: e.per_query,
        })
        .collect();
    write_atomic(out, &prov.jsonl(&records)?)?;
    Ok(Outcome::with_diagnostics(diags))
}

fn read_loads(prov: &mut Provenance, path: &Path) -> Result<BTreeMap<String, LoadRecord>> {
    let bytes = prov.input("loads", path)?;
    let mut map = BTreeMap::new();
    for r in parse_jsonl_strict::<LoadRecord>(&bytes, &name_of(path))? {
        if map.contains_key(&r.task_id) {
            return Err(CliError::Data(format!("{}: duplicate task id `{}`", name_of(path), r.task_id)).into());
        }
        map.insert(r.task_id.clone(), r);
    }
    Ok(map)
}

fn read_trials(prov: &mut Provenance, path: &Path) -> Result<Vec<TrialRecord>> {
    let bytes = prov.input("trials", path)?;
    parse_jsonl_strict(&bytes, &name_of(path))
}

fn check_matched(trials: &[TrialRecord], loads: &BTreeMap<String, LoadRecord>) -> Result<()> {
    let orphans: BTreeSet<&str> = trials
        .iter()
        .filter(|t| !loads.contains_key(&t.task_id))
        .map(|t| t.task_id.as_str())
        .collect();
    if orphans.is_empty() {
        Ok(())
    } else {
        let list: Vec<&str> = orphans.into_iter().collect();
        Err(tigload::Error::UnmatchedTrial(list.join(", ")).into())
    }
}

fn by_agent(trials: &[TrialRecord]) -> BTreeMap<String, Vec<TrialRecord>> {
    let mut m: BTreeMap<String, Vec<TrialRecord>> = BTreeMap::new();
    for t in trials {
        m.entry(t.agent_id.clone()).or_default().push(t.clone());
    }
    m
}

/// omega_e per agent, from a calibration file or the configured constant.
struct OmegaLookup {
    per_agent: BTreeMap<String, f64>,
    fallback: f64,
}

impl OmegaLookup {
    fn load(prov: &mut Provenance, cfg: &RunConfig, path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self {
                per_agent: BTreeMap::new(),
                fallback: cfg.omega.value,
            });
        };
        let bytes = prov.input("omega", path)?;
        let file: OmegaFile = parse_doc(&bytes, "omega", &name_of(path))?;
        let per_agent: BTreeMap<String, f64> =
            file.calibrations.iter().map(|c| (c.agent_id.clone(), c.omega_e)).collect();
        let fallback = match file.mode {
            OmegaMode::Pooled => per_agent.get(POOLED_AGENT).copied().unwrap_or(cfg.omega.value),
            OmegaMode::PerAgent => cfg.omega.value,
        };
        Ok(Self { per_agent, fallback })
    }

    fn get(&self, agent: &str) -> f64 {
        self.per_agent.get(agent).copied().unwrap_or(self.fallback)
    }
}

fn totals(loads: &BTreeMap<String, LoadRecord>, omega: f64) -> HashMap<String, f64> {
    loads
        .values()
        .map(|r| (r.task_id.clone(), total_load(r.cl_i, r.cl_e, omega)))
        .collect()
}

pub fn calibrate(cfg: &RunConfig, loads: &Path, trials: &Path, pooled: bool, out: &Path) -> Result<Outcome> {
    let mut prov = Provenance::new("calibrate-omega", cfg)?;
    let loads = read_loads(&mut prov, loads)?;
    let trials = read_trials(&mut prov, trials)?;
    check_matched(&trials, &loads)?;
    let cli: HashMap<String, f64> = loads.values().map(|r| (r.task_id.clone(), r.cl_i)).collect();
    let cle: HashMap<String, f64> = loads.values().map(|r| (r.task_id.clone(), r.cl_e)).collect();
    let mode = if pooled { OmegaMode::Pooled } else { cfg.omega.mode };
    let calibrations = match mode {
        OmegaMode::Pooled => vec![calibrate_omega(POOLED_AGENT, &trials, &cli, &cle)?],
        OmegaMode::PerAgent => by_agent(&trials)
            .iter()
            .map(|(a, ts)| calibrate_omega(a, ts, &cli, &cle).with_context(|| format!("agent `{a}`")))
            .collect::<Result<Vec<_>>>()?,
    };
    let warnings = calibrations
        .iter()
        .filter(|c| c.clamped)
        .map(|c| {
            format!(
                "agent `{}`: accuracy rose with extraneous load (drop {:.4}); omega_e floored at 0",
                c.agent_id, c.drop_cle
            )
        })
        .collect();
    write_atomic(out, &prov.json_doc("omega", &OmegaFile { mode, calibrations })?)?;
    Ok(Outcome::with_warnings(warnings))
}

fn hl_for(cfg: &RunConfig, profile: &CognitiveProfile, trials: &[TrialRecord], loads: &HashMap<String, f64>) -> Result<HlEntry> {
    let preds: HashMap<String, f64> = loads.iter().map(|(t, l)| (t.clone(), profile.predict(*l))).collect();
    let r = hosmer_lemeshow(trials, &preds, cfg.hl_groups)
        .with_context(|| format!("calibration test for `{}`", profile.agent_id))?;
    Ok(HlEntry {
        agent_id: profile.agent_id.clone(),
        chi2: r.chi2,
        dof: r.dof,
        p_value: r.p_value,
        groups: r.groups,
    })
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

pub fn fit(cfg: &RunConfig, loads: &Path, trials: &Path, omega: Option<&Path>, out_dir: &Path) -> Result<Outcome> {
    let mut prov = Provenance::new("fit", cfg)?;
    let loads = read_loads(&mut prov, loads)?;
    let trials = read_trials(&mut prov, trials)?;
    let omega = OmegaLookup::load(&mut prov, cfg, omega)?;
    if trials.is_empty() {
        return Err(CliError::Data("no trials to fit".into()).into());
    }
    check_matched(&trials, &loads)?;

    let mut profiles = Vec::new();
    let mut hl = Vec::new();
    let mut calib_rows = Vec::new();
    let mut curve_rows = Vec::new();
    for (agent, ts) in by_agent(&trials) {
        let w = omega.get(&agent);
        let total = totals(&loads, w);
        let profile = fit_profile(&ts, &total, &cfg.fit).with_context(|| format!("fitting `{agent}`"))?;
        hl.push(hl_for(cfg, &profile, &ts, &total)?);
        let preds: HashMap<String, f64> = total.iter().map(|(t, l)| (t.clone(), profile.predict(*l))).collect();
        for b in calibration_bins(&ts, &preds, cfg.calibration_bins)? {
            calib_rows.push(format!(
                "{agent},{},{},{},{},{}",
                f(b.bin_lo),
                f(b.bin_hi),
                f(b.predicted_mean),
                f(b.observed_acc),
                b.n
            ));
        }
        for b in &profile.fit_bins {
            curve_rows.push(format!(
                "{agent},{},{},{},{}",
                f(b.load_mid),
                f(b.empirical_acc),
                f(profile.predict(b.load_mid)),
                b.n
            ));
        }
        profiles.push(AgentProfile { profile, omega_e: w });
    }

    write_atomic(&out_dir.join("profiles.json"), &prov.json_doc("profiles", &profiles)?)?;
    write_atomic(&out_dir.join("hl.json"), &prov.json_doc("hosmer_lemeshow", &hl)?)?;
    write_atomic(
        &out_dir.join("calibration.csv"),
        &prov.csv("agent_id,bin_lo,bin_hi,predicted_mean,observed_acc,n", &calib_rows)?,
    )?;
    write_atomic(
        &out_dir.join("decay_curve.csv"),
        &prov.csv("agent_id,load_mid,empirical_acc,fitted_acc,n", &curve_rows)?,
    )?;
    Ok(Outcome::clean())
}

fn read_profiles(prov: &mut Provenance, path: &Path) -> Result<Vec<AgentProfile>> {
    let bytes = prov.input("profiles", path)?;
    parse_doc(&bytes, "profiles", &name_of(path))
}

pub fn validate(cfg: &RunConfig, loads: &Path, trials: &Path, profiles: &Path, out: &Path) -> Result<Outcome> {
    let mut prov = Provenance::new("validate", cfg)?;
    let loads = read_loads(&mut prov, loads)?;
    let trials = read_trials(&mut prov, trials)?;
    let profiles = read_profiles(&mut prov, profiles)?;
    check_matched(&trials, &loads)?;
    let groups = by_agent(&trials);
    let mut hl = Vec::new();
    for ap in &profiles {
        let Some(ts) = groups.get(&ap.profile.agent_id) else {
            continue;
        };
        hl.push(hl_for(cfg, &ap.profile, ts, &totals(&loads, ap.omega_e))?);
    }
    let missing: Vec<&str> = groups
        .keys()
        .filter(|a| !profiles.iter().any(|p| &p.profile.agent_id == *a))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Data(format!("no profile for agent(s): {}", missing.join(", "))).into());
    }
    write_atomic(out, &prov.json_doc("hosmer_lemeshow", &hl)?)?;
    Ok(Outcome::clean())
}

#[derive(Clone, Debug, Default)]
pub struct SimulateArgs {
    pub tasks: Option<PathBuf>,
    pub loads: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn simulate(cfg: &RunConfig, args: &SimulateArgs) -> Result<Outcome> {
    let mut prov = Provenance::new("simulate", cfg)?;
    let s = &cfg.simulate;
    let mut trials: Vec<TrialRecord> = match (&args.tasks, &args.loads) {
        (Some(tasks_path), None) => {
            let bytes = prov.input("tasks", tasks_path)?;
            let (tasks, diags) = read_tasks(&bytes, &name_of(tasks_path))?;
            if let Some(d) = diags.first() {
                return Err(CliError::Data(d.clone()).into());
            }
            let agent = SimAgent::new(s.k, s.b_node, cfg.seed)?;
            let p = params(cfg)?;
            tasks
                .par_iter()
                .map(|t| {
                    let sim = TaskSimulator::new(&agent, t, p)?;
                    Ok((0..s.trials_per_task)
                        .map(|r| TrialRecord {
                            task_id: t.id.clone(),
                            agent_id: s.agent_id.clone(),
                            success: sim.success(r),
                        })
                        .collect::<Vec<_>>())
                })
                .collect::<tigload::Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect()
        }
        (None, Some(loads_path)) => {
            if !(s.k.is_finite() && s.k >= 0.0 && s.b.is_finite() && s.b >= 0.0) {
                return Err(CliError::Config(format!("simulate needs k >= 0 and b >= 0, got ({}, {})", s.k, s.b)).into());
            }
            let loads = read_loads(&mut prov, loads_path)?;
            let pairs: Vec<(String, f64)> = loads
                .values()
                .map(|r| (r.task_id.clone(), total_load(r.cl_i, r.cl_e, cfg.omega.value)))
                .collect();
            simulate_task_level(&s.agent_id, s.k, s.b, &pairs, s.trials_per_task, cfg.seed)
        }
        _ => return Err(CliError::Config("simulate needs exactly one of --tasks or --loads".into()).into()),
    };
    trials.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    write_atomic(&args.out, &prov.jsonl(&trials)?)?;
    Ok(Outcome::clean())
}

pub fn gen(cfg: &RunConfig, out: &Path, manifest: &Path) -> Result<Outcome> {
    let prov = Provenance::new("gen", cfg)?;
    let result = sweep(&cfg.gen, params(cfg)?)?;
    let mut tasks = result.tasks;
    tasks.sort_by(|a, b| a.id.cmp(&b.id));
    let warnings = result
        .failures
        .iter()
        .map(|f| format!("stratum {} instance {}: {}", f.stratum, f.instance, f.message))
        .collect();
    write_atomic(out, &prov.jsonl(&tasks)?)?;
    write_atomic(
        manifest,
        &prov.json_doc(
            "manifest",
            &GenManifest {
                strata: result.manifest,
                failures: result.failures,
            },
        )?,
    )?;
    Ok(Outcome::with_warnings(warnings))
}

pub fn route(
    cfg: &RunConfig,
    loads: &Path,
    profiles: &Path,
    policy: &Path,
    shared_omega: Option<f64>,
    out: &Path,
) -> Result<Outcome> {
    let mut prov = Provenance::new("route", cfg)?;
    let loads = read_loads(&mut prov, loads)?;
    let agents = read_profiles(&mut prov, profiles)?;
    let policy_bytes = prov.input("policy", policy)?;
    let policy: RoutingPolicy = toml::from_str(
        std::str::from_utf8(&policy_bytes).map_err(|e| CliError::Config(format!("{}: {e}", name_of(policy))))?,
    )
    .map_err(|e| CliError::Config(format!("{}: {e}", name_of(policy))))?;
    let decisions: Vec<RoutingDecision> = loads
        .values()
        .map(|r| route_task(&r.task_id, r.cl_i, r.cl_e, &agents, &policy, shared_omega))
        .collect::<tigload::Result<_>>()?;
    write_atomic(out, &prov.jsonl(&decisions)?)?;
    Ok(Outcome::clean())
}

pub fn report(cfg: &RunConfig, profiles: &Path, hl: &Path, buckets: Option<&Path>, out: &Path) -> Result<Outcome> {
    let mut prov = Provenance::new("report", cfg)?;
    let profiles = read_profiles(&mut prov, profiles)?;
    let hl_bytes = prov.input("hl", hl)?;
    let hl: Vec<HlEntry> = parse_doc(&hl_bytes, "hosmer_lemeshow", &name_of(hl))?;
    let buckets = match buckets {
        Some(p) => {
            let bytes = prov.input("buckets", p)?;
            Some(parse_doc::<OmegaFile>(&bytes, "omega", &name_of(p))?)
        }
        None => None,
    };
    let mut text = prov.markdown_comment()?;
    text.push_str(&render_report(&profiles, &hl, buckets.as_ref()));
    write_atomic(out, text.as_bytes())?;
    Ok(Outcome::clean())
}
