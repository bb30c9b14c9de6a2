//! Crate-wide error type.
//!
//! Every failure carries a stable machine-readable code (kebab-case) so the
//! CLI can print `error: <code>: <message>` lines and scripts can branch on
//! them without parsing prose.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // -- gateway --
    #[error("invalid request: {reason}")]
    InvalidRequest { reason: String },
    #[error("endpoint unreachable after {attempts} attempt(s): {detail}")]
    NetworkUnreachable { attempts: u32, detail: String },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimitedAfterRetries { attempts: u32 },
    #[error("no fixture for request digest {digest}")]
    ScriptedMiss { digest: String },
    #[error("malformed endpoint response: {detail}")]
    ProtocolError { detail: String },

    // -- corpus --
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, field {field}: {reason}")]
    SchemaError {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("line {line}: {reason}")]
    InvariantViolation { line: usize, reason: String },
    #[error("model kept returning duplicate variants after {attempts} attempt(s)")]
    DuplicateVariantsAfterRetries { attempts: u32 },
    #[error("requested {n} samples from a dataset of {len}")]
    NTooLarge { n: usize, len: usize },

    // -- answer simulation / parsing --
    #[error("{count} sources exceed the single-digit citation limit of 9")]
    TooManySources { count: usize },
    #[error("citation [{id}] in sentence {sentence} exceeds source count {count}")]
    CitationOutOfRange {
        id: u32,
        sentence: usize,
        count: usize,
    },

    // -- strategy pipeline --
    #[error("step {line}: {reason}")]
    StepParseError { line: usize, reason: String },
    #[error("plan produced {count} steps, need at least {min}")]
    TooFewSteps { count: usize, min: usize },
    #[error("rewrite of {original_words} words came back as {words} words, outside the {min_ratio}x-{max_ratio}x guard")]
    LengthGuardViolation {
        words: usize,
        original_words: usize,
        min_ratio: f64,
        max_ratio: f64,
    },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    // -- reflection --
    #[error("could not parse roles: {reason}")]
    RoleParseError { reason: String },
    #[error("model produced {count} distinct roles, need at least {min}")]
    TooFewRoles { count: usize, min: usize },
    #[error("could not parse {what}: {reason}")]
    ParseError { what: String, reason: String },

    // -- metrics --
    #[error("source id {id} outside 1..={count}")]
    SourceIdOutOfRange { id: u32, count: usize },
    #[error("no SCORE line in judge output: {raw:?}")]
    ScoreParseError { raw: String },
    #[error("judge score {score} outside 0..=5")]
    ScoreOutOfRange { score: i64 },
    #[error("{name} must be non-negative, got {value}")]
    NegativeInput { name: String, value: f64 },

    // -- analysis --
    #[error("labeler output is not a listed category: {raw:?}")]
    LabelParseError { raw: String },

    // -- runner / cli / config --
    #[error("{what} is empty")]
    EmptyInput { what: String },
    #[error("config file not found: {path}")]
    ConfigNotFound { path: PathBuf },
    #[error("bad config: {reason}")]
    ConfigError { reason: String },
    #[error("this command needs a backend; pass --backend or set one in the config")]
    BackendRequired,
    #[error("{reason}")]
    InvalidInput { reason: String },
    #[error("template {name}: {reason}")]
    TemplateError { name: String, reason: String },
}

impl Error {
    /// Stable machine-readable code, used in CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidRequest { .. } => "invalid-request",
            Error::NetworkUnreachable { .. } => "network-unreachable",
            Error::RateLimitedAfterRetries { .. } => "rate-limited-after-retries",
            Error::ScriptedMiss { .. } => "scripted-miss",
            Error::ProtocolError { .. } => "protocol-error",
            Error::Io { .. } => "io-error",
            Error::SchemaError { .. } => "schema-error",
            Error::InvariantViolation { .. } => "invariant-violation",
            Error::DuplicateVariantsAfterRetries { .. } => "duplicate-variants-after-retries",
            Error::NTooLarge { .. } => "n-too-large",
            Error::TooManySources { .. } => "too-many-sources",
            Error::CitationOutOfRange { .. } => "citation-out-of-range",
            Error::StepParseError { .. } => "step-parse-error",
            Error::TooFewSteps { .. } => "too-few-steps",
            Error::LengthGuardViolation { .. } => "length-guard-violation",
            Error::Stage { source, .. } => source.code(),
            Error::RoleParseError { .. } => "role-parse-error",
            Error::TooFewRoles { .. } => "too-few-roles",
            Error::ParseError { .. } => "parse-error",
            Error::SourceIdOutOfRange { .. } => "source-id-out-of-range",
            Error::ScoreParseError { .. } => "score-parse-error",
            Error::ScoreOutOfRange { .. } => "score-out-of-range",
            Error::NegativeInput { .. } => "negative-input",
            Error::LabelParseError { .. } => "label-parse-error",
            Error::EmptyInput { .. } => "empty-input",
            Error::ConfigNotFound { .. } => "config-not-found",
            Error::ConfigError { .. } => "config-error",
            Error::BackendRequired => "backend-required",
            Error::InvalidInput { .. } => "invalid-input",
            Error::TemplateError { .. } => "template-error",
        }
    }

    /// CLI exit code: 1 for user errors (bad input, bad config), 2 for
    /// runtime failures (network, parsing model output, I/O).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidRequest { .. }
            | Error::SchemaError { .. }
            | Error::InvariantViolation { .. }
            | Error::NTooLarge { .. }
            | Error::TooManySources { .. }
            | Error::SourceIdOutOfRange { .. }
            | Error::NegativeInput { .. }
            | Error::EmptyInput { .. }
            | Error::ConfigNotFound { .. }
            | Error::ConfigError { .. }
            | Error::BackendRequired
            | Error::InvalidInput { .. }
            | Error::TemplateError { .. } => 1,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }

    /// Wrap an error with the pipeline stage it happened in.
    pub fn in_stage(self, stage: impl Into<String>) -> Error {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
