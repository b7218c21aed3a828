//! CSV outputs.

use std::io::Write;

use super::{GridCell, PerfReport, Result, SliceTable};

fn fmt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// `source,h,o,eer`; absent cells have an empty EER.
pub fn write_grid(out: impl Write, cells: &[GridCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "h", "o", "eer"])?;
    for c in cells {
        w.write_record([c.source.to_string(), c.h.to_string(), c.o.to_string(), fmt(c.eer)])?;
    }
    w.flush()?;
    Ok(())
}

/// `cardinality,ep,eer,overall`.
pub fn write_slice_table(out: impl Write, table: &SliceTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cardinality", "ep", "eer", "overall"])?;
    for r in &table.rows {
        w.write_record([r.cardinality.to_string(), format!("{:.2}", r.ep), fmt(r.eer), fmt(r.overall)])?;
    }
    w.flush()?;
    Ok(())
}

/// `metric,backend,stat,value`.
pub fn write_perf(out: impl Write, reports: &[PerfReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "backend", "stat", "value"])?;
    for r in reports {
        for (metric, stat, value) in r.rows() {
            w.write_record([metric, &r.backend, stat, &value.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
