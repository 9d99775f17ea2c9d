use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::VizError;
use crate::analysis::output::write_timeseries_csv;
use crate::analysis::rolling_mean;
use crate::timesync::Nanos;

/// Writes `<name>.csv` and `<name>_smoothed.csv` under `dir`, the second
/// passed through a centered rolling mean of `window` samples.
pub fn export_series_csv(
    dir: &Path,
    name: &str,
    series: &[(Nanos, f64)],
    window: usize,
) -> Result<(PathBuf, PathBuf), VizError> {
    fs::create_dir_all(dir)?;
    let raw = dir.join(format!("{name}.csv"));
    let smooth = dir.join(format!("{name}_smoothed.csv"));
    let values: Vec<f64> = series.iter().map(|s| s.1).collect();
    let smoothed: Vec<(Nanos, f64)> = series.iter().map(|s| s.0).zip(rolling_mean(&values, window)).collect();
    write_timeseries_csv(BufWriter::new(File::create(&raw)?), series)?;
    write_timeseries_csv(BufWriter::new(File::create(&smooth)?), &smoothed)?;
    Ok((raw, smooth))
}
