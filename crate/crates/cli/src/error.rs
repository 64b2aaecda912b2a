use std::process::ExitCode;

/// Errors raised by the command layer itself.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Config(String),
}

pub const EXIT_DATA: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_SCORER: u8 = 4;

/// Maps an error chain to the process exit status.
pub fn exit_code(err: &anyhow::Error) -> ExitCode {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return ExitCode::from(match e {
                CliError::Data(_) => EXIT_DATA,
                CliError::Config(_) => EXIT_CONFIG,
            });
        }
        if let Some(e) = cause.downcast_ref::<tigload::Error>() {
            use tigload::Error::*;
            return ExitCode::from(match e {
                ScorerUnavailable { .. } | MalformedScore { .. } => EXIT_SCORER,
                Config(_) => EXIT_CONFIG,
                _ => EXIT_DATA,
            });
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    ExitCode::from(EXIT_DATA)
}
