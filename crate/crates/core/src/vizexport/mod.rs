//! Image renders and plot data exports.
//!
//! Images are RGB8 and written as binary PPM so that renders can be compared
//! byte for byte. Views of feature frames are schematic: a background with
//! feature dots, not video.

mod image;
mod render;
mod series;
mod viridis;

pub use image::Image;
pub use render::{
    device_palette, render_feature_view, render_gaze_on, render_gaze_on_view, render_grid, render_heatmap_overlay,
    render_heatmap_overlay_on, GazeMark, OverlayStyle, BACKGROUND, HEATMAP_BASE,
};
pub use series::export_series_csv;
pub use viridis::VIRIDIS;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::timesync::Nanos;

#[derive(Debug, Error)]
pub enum VizError {
    #[error("grid of {rows}x{cols} cannot hold {needed} tiles")]
    GridTooSmall { rows: usize, cols: usize, needed: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed PPM: {0}")]
    BadPpm(&'static str),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `<root>/viz/<mode>/<t_ns>.ppm`
pub fn frame_path(root: &Path, mode: &str, t_ns: Nanos) -> PathBuf {
    root.join("viz").join(mode).join(format!("{t_ns}.ppm"))
}

/// `<root>/viz/series`
pub fn series_dir(root: &Path) -> PathBuf {
    root.join("viz").join("series")
}
