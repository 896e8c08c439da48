use serde::Serialize;

/// Error reported on stderr as `{"format_version":1,"error":{...}}`.
#[derive(Debug, Serialize)]
pub struct Failure {
    pub kind: String,
    pub message: String,
    /// One entry per violated invariant for configuration errors.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

impl Failure {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
            details: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "format_version": pmgp::io::FORMAT_VERSION, "error": self }).to_string()
    }
}

impl From<pmgp::Error> for Failure {
    fn from(e: pmgp::Error) -> Self {
        let details = match &e {
            pmgp::Error::Config(v) => v.clone(),
            _ => Vec::new(),
        };
        Self {
            kind: e.kind().into(),
            message: e.to_string(),
            details,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::new("json", e.to_string())
    }
}

impl From<toml::de::Error> for Failure {
    fn from(e: toml::de::Error) -> Self {
        Self::new("config", e.message().to_string())
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;
