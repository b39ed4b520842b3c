use std::path::Path;

use crfwi_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// 2 for bad configuration or inputs, 3 for numeric failures, 4 when a
    /// resource guard refuses the job, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 1,
            CliError::Core(e) => match e.root() {
                CoreError::InvalidArgument(_) | CoreError::Format(_) => 2,
                CoreError::NumericBlowup { .. } | CoreError::NonFiniteGradient { .. } | CoreError::Counterexample(_) => 3,
                CoreError::ResourceGuard { .. } => 4,
                CoreError::Io(_) | CoreError::Epoch { .. } => 1,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_root_cause() {
        let blowup = CoreError::Epoch { epoch: 7, source: Box::new(CoreError::NumericBlowup { step: 12, shot: Some(1) }) };
        assert_eq!(CliError::from(blowup).exit_code(), 3);
        assert_eq!(CliError::from(CoreError::NonFiniteGradient { index: 0 }).exit_code(), 3);
        let guard = CoreError::ResourceGuard { what: "x", required: 2, limit: 1 };
        assert_eq!(CliError::from(guard).exit_code(), 4);
        assert_eq!(CliError::from(CoreError::Format("bad magic".into())).exit_code(), 2);
        assert_eq!(CliError::config("nope").exit_code(), 2);
        assert_eq!(CliError::io(Path::new("a"), std::io::Error::other("x")).exit_code(), 1);
    }
}
