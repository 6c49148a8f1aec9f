use std::path::PathBuf;

use pmstab_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration; `pointer` is a JSON pointer such as `/bands/0/risk`.
    #[error("config error at `{pointer}`: {message}")]
    Config { pointer: String, message: String },
    #[error("missing upstream artifact {}: run `{stage}` first", path.display())]
    StageMissing { path: PathBuf, stage: &'static str },
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: CoreError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config { pointer: pointer.into(), message: message.into() }
    }

    /// Process exit status: 2 config or input data, 3 numerical, 4 infeasible
    /// target, 5 I/O or missing artifacts.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::StageMissing { .. } | CliError::Io { .. } => 5,
            CliError::Core { source, .. } => core_exit_code(source),
        }
    }
}

fn core_exit_code(e: &CoreError) -> i32 {
    use CoreError::*;
    if e.is_infeasible() {
        return 4;
    }
    match e {
        Io(_) | Csv(_) => 5,
        Domain(_) | InvalidTable(_) | Parse { .. } | MissingValue { .. } | UnknownLevel { .. }
        | UnknownVariable(_) | DimensionMismatch { .. } | AllZeroWeights => 2,
        _ => 3,
    }
}

pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T> Context<T> for Result<T, CoreError> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { context: what(), source })
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_class() {
        let core = |e| CliError::Core { context: "x".into(), source: e };
        assert_eq!(CliError::config("/seed", "missing").exit_code(), 2);
        assert_eq!(core(CoreError::NotPositiveDefinite { pivot: 1, value: -1.0 }).exit_code(), 3);
        assert_eq!(core(CoreError::DeltaUnreachable { target: 0.99, reached: 0.8, delta: 1e3 }).exit_code(), 4);
        assert_eq!(core(CoreError::Unachievable { risk: 0.5, width: 1.2, supremum: 1.0 }).exit_code(), 4);
        assert_eq!(core(CoreError::UnknownVariable("age".into())).exit_code(), 2);
        let missing = CliError::StageMissing { path: "model.json".into(), stage: "calibrate" };
        assert_eq!(missing.exit_code(), 5);
    }
}
