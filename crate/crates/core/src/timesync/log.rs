use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{OffsetSample, TimeSyncError};

#[derive(Serialize, Deserialize)]
struct Row {
    t_ref_ns: i64,
    offset_ns: i64,
    rtt_ns: i64,
}

/// Writes `t_ref_ns,offset_ns,rtt_ns` rows with LF line endings.
pub fn write_offset_log<W: Write>(w: W, samples: &[OffsetSample]) -> Result<(), TimeSyncError> {
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    if samples.is_empty() {
        wr.write_record(["t_ref_ns", "offset_ns", "rtt_ns"])?;
    }
    for s in samples {
        wr.serialize(Row {
            t_ref_ns: s.t_ref_ns,
            offset_ns: s.offset_ns,
            rtt_ns: s.rtt_ns,
        })?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_offset_log<R: Read>(r: R) -> Result<Vec<OffsetSample>, TimeSyncError> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize::<Row>()
        .map(|row| {
            let row = row?;
            Ok(OffsetSample {
                t_ref_ns: row.t_ref_ns,
                offset_ns: row.offset_ns,
                rtt_ns: row.rtt_ns,
            })
        })
        .collect()
}
