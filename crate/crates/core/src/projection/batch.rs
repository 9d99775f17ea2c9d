use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{match_features, ProjectionError, RansacParams, DEFAULT_RATIO};
use crate::geometry::{Dims, Homography, Point};
use crate::rng::fnv1a;
use crate::scenesim::{FeatureFrame, GazeSample};
use crate::timesync::{map_timestamp, Nanos, TimeMap, NS_PER_MS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionParams {
    pub ratio_threshold: f64,
    pub ransac: RansacParams,
    /// Max distance between a central frame and the gaze sample paired to it.
    pub pairing_tolerance_ns: Nanos,
    /// Max distance between an ego frame and the central frame it is matched against.
    pub central_match_tolerance_ns: Nanos,
    /// Nominal ego frame interval; `None` takes the median observed gap.
    pub ego_frame_interval_ns: Option<Nanos>,
    pub central_dims: Dims,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self {
            ratio_threshold: DEFAULT_RATIO,
            ransac: RansacParams::default(),
            pairing_tolerance_ns: 25 * NS_PER_MS,
            central_match_tolerance_ns: 25 * NS_PER_MS,
            ego_frame_interval_ns: None,
            central_dims: Dims::new(720, 480),
        }
    }
}

/// Gaze mapped into the central view at a central frame time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedGaze {
    pub device_id: Arc<str>,
    #[serde(rename = "t_ns")]
    pub t_ref_ns: Nanos,
    pub x: f64,
    pub y: f64,
    pub in_frame: bool,
    #[serde(skip)]
    pub source_homography_t: Nanos,
}

impl TransformedGaze {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// A (central frame, device) slot with a paired gaze sample but no usable
/// homography nearby.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapMarker {
    pub device_id: Arc<str>,
    pub t_ref_ns: Nanos,
}

/// Result of estimation for one ego frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameHomography {
    pub device_id: Arc<str>,
    pub t_device_ns: Nanos,
    pub t_ref_ns: Nanos,
    pub matches: usize,
    pub homography: Option<Homography>,
    pub error: Option<String>,
}

/// Index of the element of sorted `ts` closest to `t` (earlier wins ties).
pub fn nearest_index(ts: &[Nanos], t: Nanos) -> Option<usize> {
    if ts.is_empty() {
        return None;
    }
    let i = ts.partition_point(|&x| x < t);
    match (i.checked_sub(1), (i < ts.len()).then_some(i)) {
        (Some(a), Some(b)) => Some(if t - ts[a] <= ts[b] - t { a } else { b }),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    }
}

fn nearest_within(ts: &[Nanos], t: Nanos, tol: Nanos) -> Option<usize> {
    nearest_index(ts, t).filter(|&i| (ts[i] - t).abs() <= tol)
}

/// Estimates one homography per ego frame against the central frame nearest
/// in reference time.
pub fn estimate_frame_homographies(
    device_id: &Arc<str>,
    ego_frames: impl Iterator<Item = FeatureFrame>,
    central: &[FeatureFrame],
    map: &TimeMap,
    params: &ProjectionParams,
) -> Vec<FrameHomography> {
    let central_t: Vec<Nanos> = central.iter().map(|f| f.t_ns).collect();
    let dev_seed = fnv1a(device_id.as_bytes());
    ego_frames
        .enumerate()
        .map(|(k, ego)| {
            let t_ref = map_timestamp(map, ego.t_ns);
            let mut out = FrameHomography {
                device_id: device_id.clone(),
                t_device_ns: ego.t_ns,
                t_ref_ns: t_ref,
                matches: 0,
                homography: None,
                error: None,
            };
            let Some(ci) = nearest_within(&central_t, t_ref, params.central_match_tolerance_ns) else {
                out.error = Some("no central frame".into());
                return out;
            };
            let result = match_features(&ego, &central[ci], params.ratio_threshold).and_then(|m| {
                out.matches = m.len();
                let ransac = RansacParams { seed: params.ransac.seed ^ dev_seed ^ k as u64, ..params.ransac };
                ransac.estimate(&m)
            });
            match result {
                Ok(h) => out.homography = Some(h),
                Err(e) => out.error = Some(e.to_string()),
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeviceProjection {
    pub gaze: Vec<TransformedGaze>,
    pub gaps: Vec<GapMarker>,
    /// Central frames with no open-eye gaze sample within tolerance.
    pub unpaired: usize,
}

fn median_gap(ts: &[Nanos]) -> Option<Nanos> {
    let mut d: Vec<Nanos> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    if d.is_empty() {
        return None;
    }
    d.sort_unstable();
    Some(d[d.len() / 2])
}

/// Pairs one device's gaze with each central frame time and maps it through
/// the nearest valid ego-frame homography.
pub fn project_device(
    device_id: &Arc<str>,
    gaze: &[GazeSample],
    homographies: &[FrameHomography],
    map: &TimeMap,
    central_times: &[Nanos],
    params: &ProjectionParams,
) -> DeviceProjection {
    let open: Vec<&GazeSample> = gaze.iter().filter(|g| !g.blink).collect();
    let gaze_t: Vec<Nanos> = open.iter().map(|g| map_timestamp(map, g.t_device_ns)).collect();
    let all_h_t: Vec<Nanos> = homographies.iter().map(|h| h.t_ref_ns).collect();
    let interval = params
        .ego_frame_interval_ns
        .or_else(|| median_gap(&all_h_t))
        .unwrap_or(33 * NS_PER_MS);
    let valid: Vec<(Nanos, &FrameHomography, &Homography)> = homographies
        .iter()
        .filter_map(|f| f.homography.as_ref().map(|h| (f.t_ref_ns, f, h)))
        .collect();
    let valid_t: Vec<Nanos> = valid.iter().map(|v| v.0).collect();

    let mut out = DeviceProjection::default();
    for &tc in central_times {
        let Some(gi) = nearest_within(&gaze_t, tc, params.pairing_tolerance_ns) else {
            out.unpaired += 1;
            continue;
        };
        let gap = || GapMarker { device_id: device_id.clone(), t_ref_ns: tc };
        let Some(hi) = nearest_within(&valid_t, tc, 2 * interval) else {
            out.gaps.push(gap());
            continue;
        };
        let (ht, _, h) = valid[hi];
        match h.apply(Point::new(open[gi].x, open[gi].y)) {
            Ok(p) if p.is_finite() => out.gaze.push(TransformedGaze {
                device_id: device_id.clone(),
                t_ref_ns: tc,
                x: p.x,
                y: p.y,
                in_frame: params.central_dims.contains(p),
                source_homography_t: ht,
            }),
            _ => out.gaps.push(gap()),
        }
    }
    out
}

/// Everything one device contributes to a batch run.
pub struct DeviceInput<'a> {
    pub device_id: Arc<str>,
    pub gaze: &'a [GazeSample],
    pub ego_frames: Box<dyn Iterator<Item = FeatureFrame> + Send + 'a>,
    pub timemap: TimeMap,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutput {
    /// Ordered by (t_ref, device_id).
    pub gaze: Vec<TransformedGaze>,
    pub gaps: Vec<GapMarker>,
    pub homographies: Vec<FrameHomography>,
    /// (device_id, filled slots, unpaired slots) in input order.
    pub per_device: Vec<(Arc<str>, usize, usize)>,
    pub central_times: Vec<Nanos>,
}

/// Post-hoc projection of a whole session, fanned out per device.
pub fn project_batch(
    inputs: Vec<DeviceInput<'_>>,
    central: &[FeatureFrame],
    params: &ProjectionParams,
) -> BatchOutput {
    let central_times: Vec<Nanos> = central.iter().map(|f| f.t_ns).collect();
    let results: Vec<(Arc<str>, Vec<FrameHomography>, DeviceProjection)> = inputs
        .into_par_iter()
        .map(|input| {
            let homs = estimate_frame_homographies(&input.device_id, input.ego_frames, central, &input.timemap, params);
            let proj = project_device(&input.device_id, input.gaze, &homs, &input.timemap, &central_times, params);
            (input.device_id, homs, proj)
        })
        .collect();
    let mut out = BatchOutput { central_times, ..BatchOutput::default() };
    for (id, homs, proj) in results {
        out.per_device.push((id, proj.gaze.len(), proj.unpaired));
        out.gaze.extend(proj.gaze);
        out.gaps.extend(proj.gaps);
        out.homographies.extend(homs);
    }
    out.gaze.sort_by(|a, b| (a.t_ref_ns, &a.device_id).cmp(&(b.t_ref_ns, &b.device_id)));
    out.gaps.sort_by(|a, b| (a.t_ref_ns, &a.device_id).cmp(&(b.t_ref_ns, &b.device_id)));
    out
}

pub fn write_transformed_gaze<W: Write>(w: W, gaze: &[TransformedGaze]) -> Result<(), ProjectionError> {
    let mut w = std::io::BufWriter::new(w);
    for g in gaze {
        serde_json::to_writer(&mut w, g)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// `device_id,t_ns,inliers,mean_err_px`; failed frames leave the error empty.
pub fn write_homography_csv<W: Write>(w: W, homs: &[FrameHomography]) -> Result<(), ProjectionError> {
    let mut w = std::io::BufWriter::new(w);
    writeln!(w, "device_id,t_ns,inliers,mean_err_px")?;
    for f in homs {
        match &f.homography {
            Some(h) => writeln!(w, "{},{},{},{}", f.device_id, f.t_ref_ns, h.inlier_count, h.mean_reprojection_error)?,
            None => writeln!(w, "{},{},0,", f.device_id, f.t_ref_ns)?,
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenesim::{
        build_scene, generate_gaze, place_devices, render_central_frames, render_ego_frames, AttentionPolicy,
        ClockSpread, FleetConfig, FrameConfig, SceneConfig,
    };

    #[test]
    fn nearest_index_cases() {
        let ts = [0, 10, 20];
        assert_eq!(nearest_index(&ts, -5), Some(0));
        assert_eq!(nearest_index(&ts, 5), Some(0));
        assert_eq!(nearest_index(&ts, 6), Some(1));
        assert_eq!(nearest_index(&ts, 99), Some(2));
        assert_eq!(nearest_index(&[], 1), None);
        assert_eq!(nearest_within(&ts, 14, 3), None);
    }

    fn sample(t: Nanos, x: f64, blink: bool) -> GazeSample {
        GazeSample { device_id: Arc::from("d00"), t_device_ns: t, x, y: 2.0 * x, blink }
    }

    fn identity_frames(ts: &[Nanos]) -> Vec<FrameHomography> {
        ts.iter()
            .map(|&t| FrameHomography {
                device_id: Arc::from("d00"),
                t_device_ns: t,
                t_ref_ns: t,
                matches: 4,
                homography: Some(Homography::identity()),
                error: None,
            })
            .collect()
    }

    #[test]
    fn identity_resamples_to_central_times() {
        let id: Arc<str> = Arc::from("d00");
        let gaze: Vec<_> = (0..200).map(|k| sample(k * 5 * NS_PER_MS, k as f64, false)).collect();
        let homs = identity_frames(&(0..30).map(|k| k * 33 * NS_PER_MS).collect::<Vec<_>>());
        let central: Vec<Nanos> = (0..50).map(|k| k * 16_666_667).collect();
        let p = project_device(&id, &gaze, &homs, &TimeMap::identity(), &central, &ProjectionParams::default());
        assert_eq!(p.gaze.len(), 50);
        for (g, &tc) in p.gaze.iter().zip(&central) {
            assert_eq!(g.t_ref_ns, tc);
            let k = ((tc as f64 / 5e6).round()) as f64;
            assert_eq!((g.x, g.y), (k, 2.0 * k));
        }
    }

    #[test]
    fn blinks_never_project() {
        let id: Arc<str> = Arc::from("d00");
        let gaze: Vec<_> = (0..200).map(|k| sample(k * 5 * NS_PER_MS, k as f64, (40..80).contains(&k))).collect();
        let homs = identity_frames(&(0..30).map(|k| k * 33 * NS_PER_MS).collect::<Vec<_>>());
        let central: Vec<Nanos> = (0..60).map(|k| k * 16_666_667).collect();
        let p = project_device(&id, &gaze, &homs, &TimeMap::identity(), &central, &ProjectionParams::default());
        for g in &p.gaze {
            let k = g.x as i64;
            assert!(!(40..80).contains(&k));
        }
        assert!(p.unpaired > 0);
    }

    #[test]
    fn missing_homography_gives_gap() {
        let id: Arc<str> = Arc::from("d00");
        let gaze: Vec<_> = (0..400).map(|k| sample(k * 5 * NS_PER_MS, 1.0, false)).collect();
        let mut homs = identity_frames(&(0..60).map(|k| k * 33 * NS_PER_MS).collect::<Vec<_>>());
        for f in &mut homs[20..40] {
            f.homography = None;
        }
        let central: Vec<Nanos> = (0..110).map(|k| k * 16_666_667).collect();
        let params = ProjectionParams { ego_frame_interval_ns: Some(33 * NS_PER_MS), ..Default::default() };
        let p = project_device(&id, &gaze, &homs, &TimeMap::identity(), &central, &params);
        assert!(!p.gaps.is_empty());
        assert_eq!(p.gaps.len() + p.gaze.len(), central.len());
        for gap in &p.gaps {
            assert!(gap.t_ref_ns > 19 * 33 * NS_PER_MS + 66 * NS_PER_MS);
            assert!(gap.t_ref_ns < 40 * 33 * NS_PER_MS - 66 * NS_PER_MS);
        }
    }

    #[test]
    fn small_batch_is_ordered_and_accurate() {
        let scene = build_scene(&SceneConfig::single_static(3.0)).unwrap();
        let fleet = FleetConfig { devices: 4, clocks: ClockSpread::ideal(), gaze_noise_sd: 0.0, ..Default::default() };
        let devs = place_devices(&scene, &fleet, 3).unwrap();
        let cfg = FrameConfig::default();
        let central = render_central_frames(&scene, &cfg, 3);
        let traces: Vec<_> = devs
            .iter()
            .map(|d| generate_gaze(d, &scene, &AttentionPolicy::default(), 3).unwrap())
            .collect();
        let inputs = devs
            .iter()
            .zip(&traces)
            .map(|(d, tr)| DeviceInput {
                device_id: Arc::from(d.id.as_str()),
                gaze: &tr.samples,
                ego_frames: Box::new(render_ego_frames(d, &scene, &cfg, 3).unwrap()),
                timemap: TimeMap::identity(),
            })
            .collect();
        let out = project_batch(inputs, &central, &ProjectionParams::default());
        assert!(out.gaze.windows(2).all(|w| (w[0].t_ref_ns, &w[0].device_id) < (w[1].t_ref_ns, &w[1].device_id)));
        let central_t: std::collections::HashSet<_> = central.iter().map(|f| f.t_ns).collect();
        assert!(out.gaze.iter().all(|g| central_t.contains(&g.t_ref_ns)));
        let target = scene.targets[0].position_at(0.0);
        let mean = out.gaze.iter().map(|g| g.point().dist(target)).sum::<f64>() / out.gaze.len() as f64;
        // landing spread of 2 px plus a small homography error
        assert!(mean < 5.0, "{mean}");
        assert!(out.homographies.iter().all(|h| h.homography.is_some()));
    }

    #[test]
    fn jsonl_and_csv_shapes() {
        let g = TransformedGaze {
            device_id: Arc::from("d01"),
            t_ref_ns: 5,
            x: 1.5,
            y: 2.0,
            in_frame: true,
            source_homography_t: 3,
        };
        let mut buf = Vec::new();
        write_transformed_gaze(&mut buf, &[g]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"device_id\":\"d01\",\"t_ns\":5,\"x\":1.5,\"y\":2.0,\"in_frame\":true}\n"
        );
        let mut homs = identity_frames(&[7]);
        homs.push(FrameHomography { homography: None, ..homs[0].clone() });
        let mut buf = Vec::new();
        write_homography_csv(&mut buf, &homs).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "device_id,t_ns,inliers,mean_err_px\nd00,7,0,0\nd00,7,0,\n");
    }
}
