use std::io::Write;

use serde::Serialize;

use super::trainer::MetricRecord;
use super::HarnessError;

/// CSV header of [`write_records_csv`].
pub const CSV_HEADER: &str =
    "run_id,width,depth,step,eta_base,loss,layer,delta_h_rms,srank,spec_norm";

/// Metric records as CSV; unmeasured fields are empty.
pub fn write_records_csv<W: Write>(out: W, records: &[MetricRecord]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, items: &[T]) -> Result<(), HarnessError> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
