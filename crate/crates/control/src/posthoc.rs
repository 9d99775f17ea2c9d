//! Offline processing of a finished session: clock fits, projection into
//! the central view, and every individual and collective metric.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use gazemesh::analysis::{
    self, blink_raster, collective_series, gaze_entropy, gaze_velocity, heatmap, heatmap_sim, output, pairwise_matrix,
    rolling_mean, sim_distance_correlation, BlinkRaster, CollectiveFrame, HeatmapGrid, PairMatrix, SeatMap,
};
use gazemesh::geometry::{Dims, Point};
use gazemesh::projection::{
    project_batch, write_homography_csv, write_transformed_gaze, BatchOutput, DeviceInput, ProjectionParams,
};
use gazemesh::scenesim::{BlinkInterval, FeatureFrame, GazeSample};
use gazemesh::timesync::{fit_clock_map, map_timestamp, FitParams, Nanos, OffsetSample, TimeMap};
use gazemesh::vizexport::{self, render_heatmap_overlay};
use serde::{Deserialize, Serialize};

use crate::ControlError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisParams {
    pub ego_sigma_px: f64,
    pub ego_cell_px: u32,
    pub central_sigma_px: f64,
    pub central_cell_px: u32,
    pub ego_entropy_bin_px: u32,
    pub central_entropy_bin_px: u32,
    pub blink_bin_ms: i64,
    pub rolling_window: usize,
    pub overlay_alpha: f64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            ego_sigma_px: analysis::DEFAULT_EGO_SIGMA_PX,
            ego_cell_px: 8,
            central_sigma_px: 16.0,
            central_cell_px: 4,
            ego_entropy_bin_px: 16,
            central_entropy_bin_px: 16,
            blink_bin_ms: 100,
            rolling_window: analysis::ROLLING_WINDOW,
            overlay_alpha: 0.7,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosthocParams {
    pub fit: FitParams,
    pub projection: ProjectionParams,
    pub analysis: AnalysisParams,
}

/// One device's raw streams as recorded.
pub struct DeviceSource<'a> {
    pub id: Arc<str>,
    pub gaze: Vec<GazeSample>,
    pub ego_frames: Box<dyn Iterator<Item = FeatureFrame> + Send + 'a>,
    pub offsets: Vec<OffsetSample>,
    pub ego_dims: Dims,
    pub seat: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceReport {
    pub device_id: Arc<str>,
    pub offset_samples: usize,
    pub timemap_score: f64,
    pub gaze_samples: usize,
    pub blink_samples: usize,
    pub ego_frames: usize,
    pub homographies_ok: usize,
    pub filled: usize,
    pub unpaired: usize,
    pub gaps: usize,
    pub ego_velocity: Option<f64>,
    pub ego_entropy: Option<f64>,
    pub transformed_velocity: Option<f64>,
    pub transformed_entropy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedDevice {
    pub device_id: Arc<str>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct PosthocOutput {
    pub timemaps: Vec<(Arc<str>, TimeMap)>,
    pub batch: BatchOutput,
    pub devices: Vec<DeviceReport>,
    pub excluded: Vec<ExcludedDevice>,
    pub collective: Vec<CollectiveFrame>,
    pub central_heatmap: HeatmapGrid,
    pub pairwise_sim: Option<PairMatrix>,
    pub pairwise_sim_ego: Option<PairMatrix>,
    /// Pearson r and p of transformed SIM against seat distance.
    pub sim_distance: Option<(f64, f64)>,
    pub blinks: Option<BlinkRaster>,
    pub central_dims: Dims,
}

/// A single offset sample pins a constant offset.
pub(crate) fn fit_or_constant(offsets: &[OffsetSample], params: &FitParams) -> Result<TimeMap, String> {
    match offsets {
        [] => Err("no offset samples".into()),
        [s] => Ok(TimeMap { slope: 0.0, intercept_ns: -(s.offset_ns as f64), inlier_mask: vec![true], score: 1.0 }),
        _ => fit_clock_map(offsets, params).map_err(|e| e.to_string()),
    }
}

fn blink_intervals(gaze: &[GazeSample], map: &TimeMap) -> Vec<BlinkInterval> {
    let mut out = Vec::new();
    let mut start: Option<Nanos> = None;
    for g in gaze {
        let t = map_timestamp(map, g.t_device_ns);
        match (g.blink, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push(BlinkInterval { start_ns: s, end_ns: t });
                start = None;
            }
            _ => {}
        }
    }
    if let (Some(s), Some(last)) = (start, gaze.last()) {
        out.push(BlinkInterval { start_ns: s, end_ns: map_timestamp(map, last.t_device_ns) + 1 });
    }
    out
}

fn pairwise_sim_of(ids: &[Arc<str>], maps: Vec<HeatmapGrid>) -> Option<PairMatrix> {
    let (ids, maps): (Vec<Arc<str>>, Vec<HeatmapGrid>) = ids
        .iter()
        .cloned()
        .zip(maps)
        .filter(|(id, h)| {
            if h.empty {
                tracing::warn!(device = %id, "empty heatmap left out of pairwise similarity");
            }
            !h.empty
        })
        .unzip();
    if ids.len() < 2 {
        return None;
    }
    pairwise_matrix(&ids, &maps, heatmap_sim).ok()
}

pub fn run_posthoc(
    sources: Vec<DeviceSource<'_>>,
    central: &[FeatureFrame],
    central_dims: Dims,
    params: &PosthocParams,
) -> Result<PosthocOutput, ControlError> {
    let ap = &params.analysis;
    let mut proj_params = params.projection.clone();
    proj_params.central_dims = central_dims;

    let mut excluded = Vec::new();
    let mut kept = Vec::new();
    for s in sources {
        match fit_or_constant(&s.offsets, &params.fit) {
            Ok(map) => kept.push((s, map)),
            Err(reason) => excluded.push(ExcludedDevice { device_id: s.id.clone(), reason }),
        }
    }

    let mut inputs = Vec::with_capacity(kept.len());
    let mut meta = Vec::with_capacity(kept.len());
    for (s, map) in kept {
        let DeviceSource { id, gaze, ego_frames, offsets, ego_dims, seat } = s;
        meta.push((id.clone(), gaze, offsets.len(), map.clone(), ego_dims, seat));
        inputs.push((id, ego_frames, map));
    }
    let device_inputs: Vec<DeviceInput<'_>> = inputs
        .into_iter()
        .zip(&meta)
        .map(|((device_id, ego_frames, timemap), m)| DeviceInput { device_id, gaze: &m.1, ego_frames, timemap })
        .collect();
    let batch = project_batch(device_inputs, central, &proj_params);

    let mut reports = Vec::with_capacity(meta.len());
    let mut ego_maps = Vec::new();
    let mut central_maps = Vec::new();
    let mut blink_sets = Vec::new();
    let mut seats = Vec::new();
    for (id, gaze, n_offsets, map, ego_dims, seat) in &meta {
        let open: Vec<Point> = gaze.iter().filter(|g| !g.blink).map(|g| Point::new(g.x, g.y)).collect();
        let transformed: Vec<Point> = batch.gaze.iter().filter(|g| g.device_id == *id).map(|g| g.point()).collect();
        let homs: Vec<_> = batch.homographies.iter().filter(|h| h.device_id == *id).collect();
        let (filled, unpaired) =
            batch.per_device.iter().find(|(d, ..)| d == id).map(|(_, f, u)| (*f, *u)).unwrap_or_default();
        reports.push(DeviceReport {
            device_id: id.clone(),
            offset_samples: *n_offsets,
            timemap_score: map.score,
            gaze_samples: gaze.len(),
            blink_samples: gaze.len() - open.len(),
            ego_frames: homs.len(),
            homographies_ok: homs.iter().filter(|h| h.homography.is_some()).count(),
            filled,
            unpaired,
            gaps: batch.gaps.iter().filter(|g| g.device_id == *id).count(),
            ego_velocity: gaze_velocity(&open).ok(),
            ego_entropy: gaze_entropy(&open, *ego_dims, ap.ego_entropy_bin_px).ok(),
            transformed_velocity: gaze_velocity(&transformed).ok(),
            transformed_entropy: gaze_entropy(&transformed, central_dims, ap.central_entropy_bin_px).ok(),
        });
        ego_maps.push(heatmap(&open, *ego_dims, ap.ego_sigma_px, ap.ego_cell_px)?);
        central_maps.push(heatmap(&transformed, central_dims, ap.central_sigma_px, ap.central_cell_px)?);
        blink_sets.push((id.clone(), blink_intervals(gaze, map)));
        if let Some(s) = seat {
            seats.push((id.clone(), *s));
        }
    }
    let ids: Vec<Arc<str>> = meta.iter().map(|m| m.0.clone()).collect();
    let pairwise_sim = pairwise_sim_of(&ids, central_maps);
    let pairwise_sim_ego = pairwise_sim_of(&ids, ego_maps);
    let sim_distance = match (&pairwise_sim, SeatMap::new(seats)) {
        (Some(m), Ok(seat_map)) => sim_distance_correlation(m, &seat_map).ok(),
        _ => None,
    };
    let blinks = match (batch.central_times.first(), batch.central_times.last()) {
        (Some(&a), Some(&b)) if b > a && !blink_sets.is_empty() => {
            Some(blink_raster(&blink_sets, a, b + 1, ap.blink_bin_ms * 1_000_000)?)
        }
        _ => None,
    };
    let all_points: Vec<Point> = batch.gaze.iter().map(|g| g.point()).collect();
    let central_heatmap = heatmap(&all_points, central_dims, ap.central_sigma_px, ap.central_cell_px)?;
    let collective = collective_series(&batch.gaze, central_dims);
    let timemaps = meta.iter().map(|m| (m.0.clone(), m.3.clone())).collect();
    Ok(PosthocOutput {
        timemaps,
        batch,
        devices: reports,
        excluded,
        collective,
        central_heatmap,
        pairwise_sim,
        pairwise_sim_ego,
        sim_distance,
        blinks,
        central_dims,
    })
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    devices: usize,
    excluded: &'a [ExcludedDevice],
    central_frames: usize,
    transformed_samples: usize,
    gaps: usize,
    mean_pairwise_sim: Option<f64>,
    mean_pairwise_sim_ego: Option<f64>,
    sim_distance_r: Option<f64>,
    sim_distance_p: Option<f64>,
    mean_blink_density: Option<f64>,
}

fn write_series(path: &Path, series: &[(Nanos, f64)]) -> Result<(), ControlError> {
    output::write_timeseries_csv(BufWriter::new(File::create(path)?), series)?;
    Ok(())
}

/// Writes `projection/` and `analysis/` under `root`.
pub fn write_posthoc(root: &Path, out: &PosthocOutput, params: &AnalysisParams) -> Result<(), ControlError> {
    write_projection(root, out)?;
    write_analysis(root, out, params)
}

pub fn write_projection(root: &Path, out: &PosthocOutput) -> Result<(), ControlError> {
    let pdir = root.join("projection");
    fs::create_dir_all(&pdir)?;

    write_transformed_gaze(File::create(pdir.join("transformed_gaze.jsonl"))?, &out.batch.gaze)?;
    write_homography_csv(File::create(pdir.join("homographies.csv"))?, &out.batch.homographies)?;
    let mut w = BufWriter::new(File::create(pdir.join("gaps.jsonl"))?);
    for g in &out.batch.gaps {
        serde_json::to_writer(&mut w, g)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    serde_json::to_writer_pretty(File::create(pdir.join("timemaps.json"))?, &out.timemaps)?;
    Ok(())
}

pub fn write_analysis(root: &Path, out: &PosthocOutput, params: &AnalysisParams) -> Result<(), ControlError> {
    let adir = root.join("analysis");
    fs::create_dir_all(&adir)?;

    let mut w = csv::Writer::from_path(adir.join("devices.csv"))?;
    for d in &out.devices {
        w.serialize(d)?;
    }
    w.flush()?;
    if let Some(m) = &out.pairwise_sim {
        output::write_pairwise_csv(BufWriter::new(File::create(adir.join("pairwise_sim.csv"))?), m, "sim")?;
    }
    if let Some(m) = &out.pairwise_sim_ego {
        output::write_pairwise_csv(BufWriter::new(File::create(adir.join("pairwise_sim_ego.csv"))?), m, "sim")?;
    }
    let col = &out.collective;
    let pick = |f: fn(&CollectiveFrame) -> f64| -> Vec<(Nanos, f64)> { col.iter().map(|c| (c.t_ns, f(c))).collect() };
    let named: [(&str, Vec<(Nanos, f64)>); 4] = [
        ("contour_area", pick(|c| c.contour_area)),
        ("sd_x", pick(|c| c.sd_x)),
        ("sd_y", pick(|c| c.sd_y)),
        ("points_in_frame", pick(|c| c.in_frame as f64)),
    ];
    for (name, series) in &named {
        write_series(&adir.join(format!("collective_{name}.csv")), series)?;
        let smoothed: Vec<(Nanos, f64)> = series
            .iter()
            .map(|s| s.0)
            .zip(rolling_mean(&series.iter().map(|s| s.1).collect::<Vec<_>>(), params.rolling_window))
            .collect();
        write_series(&adir.join(format!("collective_{name}_smoothed.csv")), &smoothed)?;
    }
    if let Some(b) = &out.blinks {
        let series: Vec<(Nanos, f64)> = b.bin_starts.iter().copied().zip(b.density.iter().copied()).collect();
        write_series(&adir.join("blink_density.csv"), &series)?;
    }
    output::write_grid_f32(BufWriter::new(File::create(adir.join("central_heatmap.f32"))?), &out.central_heatmap)?;
    render_heatmap_overlay(&out.central_heatmap, out.central_dims, params.overlay_alpha)
        .save(&adir.join("central_heatmap.ppm"))?;

    let summary = Summary {
        devices: out.devices.len(),
        excluded: &out.excluded,
        central_frames: out.batch.central_times.len(),
        transformed_samples: out.batch.gaze.len(),
        gaps: out.batch.gaps.len(),
        mean_pairwise_sim: out.pairwise_sim.as_ref().map(PairMatrix::mean_off_diagonal),
        mean_pairwise_sim_ego: out.pairwise_sim_ego.as_ref().map(PairMatrix::mean_off_diagonal),
        sim_distance_r: out.sim_distance.map(|s| s.0),
        sim_distance_p: out.sim_distance.map(|s| s.1),
        mean_blink_density: out.blinks.as_ref().map(BlinkRaster::mean_density),
    };
    let mut f = File::create(adir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// `viz/series/` exports of the collective series, raw and smoothed.
pub fn export_viz_series(root: &Path, out: &PosthocOutput, window: usize) -> Result<(), ControlError> {
    let dir = vizexport::series_dir(root);
    let col = &out.collective;
    let series = [
        ("contour_area", col.iter().map(|c| (c.t_ns, c.contour_area)).collect::<Vec<_>>()),
        ("sd_x", col.iter().map(|c| (c.t_ns, c.sd_x)).collect()),
        ("sd_y", col.iter().map(|c| (c.t_ns, c.sd_y)).collect()),
        ("points_in_frame", col.iter().map(|c| (c.t_ns, c.in_frame as f64)).collect()),
    ];
    for (name, s) in &series {
        vizexport::export_series_csv(&dir, name, s, window)?;
    }
    Ok(())
}
