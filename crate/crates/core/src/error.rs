use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid lot configuration: {0}")]
    Layout(String),
    #[error("invalid run configuration: {0}")]
    Run(String),
    #[error("invalid sweep definition: {0}")]
    Sweep(String),
    #[error("spot index {0} out of range")]
    SpotIndex(String),
    #[error("requested {requested} free spots but the lot has {total}")]
    FreeSpots { requested: usize, total: usize },
    #[error("failed to parse {what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: toml::de::Error,
    },
}

#[derive(Debug, Error)]
pub enum PathError {
    #[error("spot {spot} is not reachable from lane {lane}")]
    Unreachable { lane: usize, spot: String },
    #[error("no feasible maneuver template for {0}")]
    Infeasible(String),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Format(String),
}

impl IoError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
