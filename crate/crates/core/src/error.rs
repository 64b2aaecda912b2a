use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cycle detected among nodes: {}", .0.join(", "))]
    Cycle(Vec<String>),

    #[error("invalid task `{task_id}`: {}", summarize(.violations))]
    InvalidTask {
        task_id: String,
        violations: Vec<String>,
    },

    #[error("edge {src} -> {dst} is not part of the graph")]
    UnknownEdge { src: String, dst: String },

    #[error("scorer unavailable after {attempts} attempt(s): {reason}")]
    ScorerUnavailable { attempts: u32, reason: String },

    #[error("malformed score response for {key}: {reason}")]
    MalformedScore { key: String, reason: String },

    #[error("need at least 3 tasks for tercile bucketing, got {0}")]
    TooFewTasks(usize),

    #[error("bucket {0} has no trials")]
    EmptyBucket(&'static str),

    #[error("trial references task `{0}` which has no load")]
    UnmatchedTrial(String),

    #[error("degenerate calibration: intrinsic-load accuracy drop is {drop_cli}, omega_e undefined")]
    DegenerateCalibration { drop_cli: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("all loads are equal ({0}); cannot fit a decay curve")]
    DegenerateLoads(f64),

    #[error("degenerate Hosmer-Lemeshow group {group}: mean prediction {mean}")]
    DegenerateGroup { group: usize, mean: f64 },

    #[error("target intrinsic load {target} unreachable: {reason}")]
    TargetUnreachable { target: f64, reason: String },

    #[error("no cognitive profiles available for routing")]
    NoProfiles,

    #[error("agent `{0}` has no cost in the routing policy")]
    MissingCost(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn summarize(v: &[String]) -> String {
    match v.len() {
        0 => "no violations".to_string(),
        1 => v[0].clone(),
        n => format!("{} (and {} more)", v[0], n - 1),
    }
}
