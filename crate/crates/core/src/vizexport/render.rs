use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use super::{Image, VizError, VIRIDIS};
use crate::analysis::HeatmapGrid;
use crate::geometry::{Dims, Point};
use crate::scenesim::FeatureFrame;

pub const BACKGROUND: [u8; 3] = [24, 24, 24];
pub const HEATMAP_BASE: [u8; 3] = [128, 128, 128];
const FEATURE_DOT: [u8; 3] = [150, 150, 150];
const GRID_GAP: [u8; 3] = [0, 0, 0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayStyle {
    pub circle_radius: f64,
    pub ring_width: f64,
    pub fill: [u8; 3],
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self { circle_radius: 10.0, ring_width: 3.0, fill: [255, 255, 255] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazeMark {
    pub device_id: Arc<str>,
    pub point: Point,
}

impl GazeMark {
    pub fn new(device_id: impl Into<Arc<str>>, point: Point) -> Self {
        Self { device_id: device_id.into(), point }
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    let (r, g, b) = match i as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8]
}

/// `n` distinct saturated colors spread by the golden angle.
pub fn device_palette(n: usize) -> Vec<[u8; 3]> {
    let mut used: HashSet<[u8; 3]> = HashSet::new();
    (0..n)
        .map(|i| {
            let mut h = (i as f64 * 0.618_033_988_75).fract();
            let s = if i % 2 == 0 { 0.85 } else { 0.6 };
            let mut c = hsv(h, s, 0.95);
            while !used.insert(c) {
                h = (h + 1.0 / 1024.0).fract();
                c = hsv(h, s, 0.95);
            }
            c
        })
        .collect()
}

/// Draws one ringed disc per mark over `base`. Colors follow the sorted
/// device ids so a device keeps its color across frames with the same
/// audience. Returns the image and how many marks fell outside it.
pub fn render_gaze_on(base: &Image, marks: &[GazeMark], style: &OverlayStyle) -> (Image, usize) {
    let ids: BTreeMap<&str, usize> = {
        let mut v: Vec<&str> = marks.iter().map(|m| &*m.device_id).collect();
        v.sort_unstable();
        v.dedup();
        v.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
    };
    let palette = device_palette(ids.len());
    let dims = Dims::new(base.width, base.height);
    let mut img = base.clone();
    let mut clipped = 0;
    let r = style.circle_radius.max(0.5);
    let inner = (r - style.ring_width).max(0.0);
    for m in marks {
        let p = m.point;
        if !p.is_finite() || !dims.contains(p) {
            clipped += 1;
            continue;
        }
        let ring = palette[ids[&*m.device_id]];
        let (x0, x1) = ((p.x - r).floor() as i64, (p.x + r).ceil() as i64);
        let (y0, y1) = ((p.y - r).floor() as i64, (p.y + r).ceil() as i64);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = Point::new(x as f64 + 0.5, y as f64 + 0.5).dist(p);
                if d <= r {
                    img.put(x, y, if d > inner { ring } else { style.fill });
                }
            }
        }
    }
    (img, clipped)
}

pub fn render_gaze_on_view(dims: Dims, marks: &[GazeMark], style: &OverlayStyle) -> (Image, usize) {
    render_gaze_on(&Image::new(dims.width, dims.height, BACKGROUND), marks, style)
}

/// Schematic view of a feature frame: a 3×3 dot per feature.
pub fn render_feature_view(frame: &FeatureFrame, dims: Dims) -> Image {
    let mut img = Image::new(dims.width, dims.height, BACKGROUND);
    for f in &frame.points {
        let (cx, cy) = (f.x.floor() as i64, f.y.floor() as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                img.put(cx + dx, cy + dy, FEATURE_DOT);
            }
        }
    }
    img
}

/// Blends the max-normalized heatmap, colored through viridis, over `base`.
/// Each pixel takes the value of the cell that contains it. An all-zero
/// heatmap leaves the base untouched.
pub fn render_heatmap_overlay_on(base: &Image, h: &HeatmapGrid, alpha: f64) -> Image {
    let max = h.max();
    if !(max > 0.0) {
        return base.clone();
    }
    let a = alpha.clamp(0.0, 1.0);
    let cs = h.cell_size.max(1);
    let mut img = base.clone();
    for y in 0..base.height {
        let cy = (y / cs).min(h.height - 1);
        for x in 0..base.width {
            let cx = (x / cs).min(h.width - 1);
            let k = ((h.at(cx, cy) / max).clamp(0.0, 1.0) * 255.0).round() as usize;
            let c = VIRIDIS[k];
            let b = base.get(x, y);
            let mix = |i: usize| ((1.0 - a) * b[i] as f64 + a * c[i] as f64).round() as u8;
            img.set(x, y, [mix(0), mix(1), mix(2)]);
        }
    }
    img
}

pub fn render_heatmap_overlay(h: &HeatmapGrid, base_dims: Dims, alpha: f64) -> Image {
    render_heatmap_overlay_on(&Image::new(base_dims.width, base_dims.height, HEATMAP_BASE), h, alpha)
}

/// Tiles ego views around the central view, which sits in cell
/// (rows / 2, cols / 2). Ego views fill the other cells in row-major order.
/// Each tile is scaled by nearest-neighbour sampling to fit its cell with
/// the source aspect ratio kept, and centered in the cell.
pub fn render_grid(egos: &[Image], central: &Image, rows: usize, cols: usize, cell: Dims) -> Result<Image, VizError> {
    if cell.width == 0 || cell.height == 0 {
        return Err(VizError::InvalidParameter("cell size must be positive".into()));
    }
    if rows * cols < egos.len() + 1 {
        return Err(VizError::GridTooSmall { rows, cols, needed: egos.len() + 1 });
    }
    let mut out = Image::new(cols as u32 * cell.width, rows as u32 * cell.height, GRID_GAP);
    let centre = (rows / 2, cols / 2);
    let slots = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).filter(|&rc| rc != centre);
    let placed = std::iter::once((centre, central)).chain(slots.zip(egos));
    for ((r, c), src) in placed {
        blit_fit(&mut out, src, c as u32 * cell.width, r as u32 * cell.height, cell);
    }
    Ok(out)
}

fn blit_fit(dst: &mut Image, src: &Image, ox: u32, oy: u32, cell: Dims) {
    if src.width == 0 || src.height == 0 {
        return;
    }
    let scale = (cell.width as f64 / src.width as f64).min(cell.height as f64 / src.height as f64);
    let tw = ((src.width as f64 * scale).round() as u32).clamp(1, cell.width);
    let th = ((src.height as f64 * scale).round() as u32).clamp(1, cell.height);
    let (px, py) = (ox + (cell.width - tw) / 2, oy + (cell.height - th) / 2);
    for ty in 0..th {
        let sy = (((ty as f64 + 0.5) * src.height as f64 / th as f64) as u32).min(src.height - 1);
        for tx in 0..tw {
            let sx = (((tx as f64 + 0.5) * src.width as f64 / tw as f64) as u32).min(src.width - 1);
            dst.set(px + tx, py + ty, src.get(sx, sy));
        }
    }
}
