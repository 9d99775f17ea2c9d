//! On-disk formats for analysis results.

use std::io::{self, Write};

use super::{AnalysisError, HeatmapGrid, PairMatrix};
use crate::timesync::Nanos;

/// `id_a,id_b,<metric>` rows for i < j.
pub fn write_pairwise_csv<W: Write>(mut w: W, m: &PairMatrix, metric: &str) -> Result<(), AnalysisError> {
    writeln!(w, "id_a,id_b,{metric}")?;
    for (i, j, v) in m.pairs() {
        writeln!(w, "{},{},{}", m.ids[i], m.ids[j], v)?;
    }
    Ok(())
}

pub fn write_timeseries_csv<W: Write>(mut w: W, series: &[(Nanos, f64)]) -> Result<(), AnalysisError> {
    writeln!(w, "t_ns,value")?;
    for (t, v) in series {
        writeln!(w, "{t},{v}")?;
    }
    Ok(())
}

/// Width and height as u32 LE, then row-major f32 LE cells.
pub fn write_grid_f32<W: Write>(mut w: W, grid: &HeatmapGrid) -> io::Result<()> {
    let mut buf = Vec::with_capacity(8 + 4 * grid.values.len());
    buf.extend_from_slice(&grid.width.to_le_bytes());
    buf.extend_from_slice(&grid.height.to_le_bytes());
    for v in &grid.values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_grid_f32(bytes: &[u8]) -> Result<(u32, u32, Vec<f32>), AnalysisError> {
    let bad = || AnalysisError::InvalidParameter("truncated grid dump".into());
    let head: [u8; 8] = bytes.get(..8).ok_or_else(bad)?.try_into().unwrap();
    let w = u32::from_le_bytes(head[..4].try_into().unwrap());
    let h = u32::from_le_bytes(head[4..].try_into().unwrap());
    let body = &bytes[8..];
    if body.len() != 4 * w as usize * h as usize {
        return Err(bad());
    }
    Ok((w, h, body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn csv_layouts() {
        let m = PairMatrix { ids: vec![Arc::from("a"), Arc::from("b")], values: vec![1.0, 0.25, 0.25, 1.0] };
        let mut out = Vec::new();
        write_pairwise_csv(&mut out, &m, "sim").unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "id_a,id_b,sim\na,b,0.25\n");
        let mut out = Vec::new();
        write_timeseries_csv(&mut out, &[(5, 0.5), (10, 1.0)]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "t_ns,value\n5,0.5\n10,1\n");
    }

    #[test]
    fn grid_dump_round_trip() {
        let g = HeatmapGrid { width: 3, height: 2, cell_size: 1, values: vec![0.0, 0.5, 0.25, 0.125, 0.125, 0.0], empty: false };
        let mut out = Vec::new();
        write_grid_f32(&mut out, &g).unwrap();
        assert_eq!(out.len(), 8 + 24);
        assert_eq!(&out[..8], &[3, 0, 0, 0, 2, 0, 0, 0]);
        let (w, h, v) = read_grid_f32(&out).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(v, vec![0.0f32, 0.5, 0.25, 0.125, 0.125, 0.0]);
        assert!(read_grid_f32(&out[..20]).is_err());
    }
}
