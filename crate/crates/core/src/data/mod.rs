//! Dataset generators and ingestion.

use std::path::Path;

use crate::graph::GraphError;

pub mod gps;
pub mod io;
pub mod navigation;
pub mod planar;

pub use gps::{generate_gps, map_gps_to_distribution, GpsConfig, GpsDataset, GpsMappingConfig};
pub use navigation::{edge_click_features, load_navigation_paths, navigation_samples, NavigationSet};
pub use planar::{generate_planar, PlanarConfig, PlanarDataset};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum DataError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("{0}")]
    Format(String),
    #[error("invalid data config: {0}")]
    Config(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl DataError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        DataError::Io { path: path.display().to_string(), msg: e.to_string() }
    }

    pub(crate) fn parse(file: &str, line: usize, msg: impl Into<String>) -> Self {
        DataError::Parse { file: file.to_string(), line, msg: msg.into() }
    }
}
