//! Trace rows and their CSV form.
//!
//! Files start with one `#` line of run metadata, then the header
//! `ops,fpr,extra_bits_per_item,map_accesses,wall_nanos`.

use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Workload operations completed at this checkpoint.
    pub ops: u64,
    /// Instantaneous false-positive rate, measured with adaptation frozen.
    pub fpr: f64,
    /// Extension and counter slot bits per stored item.
    pub extra_bits_per_item: f64,
    /// Cumulative reverse-map reads by the workload.
    pub map_accesses: u64,
    pub wall_nanos: u64,
}

pub fn write_csv<W: Write>(out: W, meta: &str, rows: &[TraceRow]) -> anyhow::Result<()> {
    let mut out = out;
    writeln!(out, "# {}", meta.replace('\n', " "))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["ops", "fpr", "extra_bits_per_item", "map_accesses", "wall_nanos"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(path: &Path, meta: &str, rows: &[TraceRow]) -> anyhow::Result<()> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_csv(std::io::BufWriter::new(f), meta, rows)
}

/// Returns the metadata line (without `# `) and the rows.
pub fn read_csv<R: BufRead>(input: R) -> anyhow::Result<(String, Vec<TraceRow>)> {
    let mut input = input;
    let mut first = String::new();
    input.read_line(&mut first)?;
    let meta = first
        .strip_prefix("# ")
        .context("missing metadata line")?
        .trim_end()
        .to_string();
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<Result<Vec<TraceRow>, _>>()?;
    Ok((meta, rows))
}

pub fn load_csv(path: &Path) -> anyhow::Result<(String, Vec<TraceRow>)> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_csv(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_header_only() {
        let mut buf = Vec::new();
        write_csv(&mut buf, "probe_sets=20", &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "# probe_sets=20\nops,fpr,extra_bits_per_item,map_accesses,wall_nanos\n"
        );
        let (meta, rows) = read_csv(&buf[..]).unwrap();
        assert_eq!(meta, "probe_sets=20");
        assert!(rows.is_empty());
    }

    #[test]
    fn roundtrip() {
        let rows: Vec<TraceRow> = (0..5)
            .map(|i| TraceRow {
                ops: i * 1000,
                fpr: 1.0 / (i as f64 + 3.0),
                extra_bits_per_item: i as f64 * 1e-4,
                map_accesses: i * 7,
                wall_nanos: i * 123_456_789,
            })
            .collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, "x", &rows).unwrap();
        assert_eq!(read_csv(&buf[..]).unwrap().1, rows);
    }
}
