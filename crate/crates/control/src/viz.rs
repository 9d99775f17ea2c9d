//! Image exports of a processed recording under `viz/<mode>/<t_ns>.ppm`.

use std::path::{Path, PathBuf};

use gazemesh::analysis::heatmap;
use gazemesh::geometry::{Dims, Point};
use gazemesh::projection::nearest_index;
use gazemesh::timesync::{map_timestamp, Nanos, NS_PER_S};
use gazemesh::vizexport::{
    frame_path, render_feature_view, render_gaze_on, render_grid, render_heatmap_overlay_on, GazeMark, OverlayStyle,
};

use crate::posthoc::{export_viz_series, AnalysisParams, PosthocOutput};
use crate::session::Recording;
use crate::ControlError;

/// Heatmap frames accumulate transformed gaze over this window around `t`.
const HEATMAP_WINDOW_NS: Nanos = 5 * NS_PER_S;
const GRID_CELL: Dims = Dims::new(320, 240);

/// `count` central frame times spread evenly over the session.
pub fn pick_times(central_times: &[Nanos], count: usize) -> Vec<Nanos> {
    if central_times.is_empty() || count == 0 {
        return Vec::new();
    }
    let n = central_times.len();
    let mut v: Vec<Nanos> = (0..count).map(|k| central_times[(k * 2 + 1) * n / (2 * count)]).collect();
    v.dedup();
    v
}

/// Renders the `central`, `heatmap` and `grid` views at each time in
/// `times` and the smoothed collective series. Returns the image paths.
pub fn export_viz(
    root: &Path,
    rec: &Recording,
    out: &PosthocOutput,
    times: &[Nanos],
    params: &AnalysisParams,
) -> Result<Vec<PathBuf>, ControlError> {
    let central = rec.central_frames()?;
    let central_t: Vec<Nanos> = central.iter().map(|f| f.t_ns).collect();
    let dims = out.central_dims;
    let style = OverlayStyle::default();
    let mut paths = Vec::new();

    let mut egos = Vec::new();
    for (id, map) in &out.timemaps {
        let m = rec.manifest.devices.iter().find(|d| *d.id == **id).expect("manifest lists every device");
        let frames = rec.ego_frames(id)?;
        let gaze = rec.gaze(id)?;
        let frame_t: Vec<Nanos> = frames.iter().map(|f| map_timestamp(map, f.t_ns)).collect();
        let gaze_t: Vec<Nanos> = gaze.iter().map(|g| map_timestamp(map, g.t_device_ns)).collect();
        egos.push((id.clone(), Dims::new(m.ego_width, m.ego_height), frames, frame_t, gaze, gaze_t));
    }

    for &t in times {
        let Some(ci) = nearest_index(&central_t, t) else { continue };
        let base = render_feature_view(&central[ci], dims);
        let marks: Vec<GazeMark> = out
            .batch
            .gaze
            .iter()
            .filter(|g| g.t_ref_ns == central_t[ci])
            .map(|g| GazeMark::new(g.device_id.clone(), g.point()))
            .collect();
        let (central_img, _) = render_gaze_on(&base, &marks, &style);
        let p = frame_path(root, "central", t);
        central_img.save(&p)?;
        paths.push(p);

        let window: Vec<Point> = out
            .batch
            .gaze
            .iter()
            .filter(|g| (g.t_ref_ns - t).abs() <= HEATMAP_WINDOW_NS / 2)
            .map(|g| g.point())
            .collect();
        let h = heatmap(&window, dims, params.central_sigma_px, params.central_cell_px)?;
        let p = frame_path(root, "heatmap", t);
        render_heatmap_overlay_on(&base, &h, params.overlay_alpha).save(&p)?;
        paths.push(p);

        let tiles: Vec<_> = egos
            .iter()
            .filter_map(|(id, ego_dims, frames, frame_t, gaze, gaze_t)| {
                let fi = nearest_index(frame_t, t)?;
                let img = render_feature_view(&frames[fi], *ego_dims);
                let marks: Vec<GazeMark> = nearest_index(gaze_t, t)
                    .filter(|&gi| !gaze[gi].blink)
                    .map(|gi| GazeMark::new(id.clone(), Point::new(gaze[gi].x, gaze[gi].y)))
                    .into_iter()
                    .collect();
                Some(render_gaze_on(&img, &marks, &style).0)
            })
            .collect();
        let side = ((tiles.len() + 1) as f64).sqrt().ceil() as usize;
        let rows = (tiles.len() + 1).div_ceil(side);
        let grid = render_grid(&tiles, &central_img, rows.max(1), side.max(1), GRID_CELL)?;
        let p = frame_path(root, "grid", t);
        grid.save(&p)?;
        paths.push(p);
    }
    export_viz_series(root, out, params.rolling_window)?;
    Ok(paths)
}
