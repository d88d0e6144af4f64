//! CSV emission and loading of timing records.

use std::path::Path;

use swept_core::perf::TimingRecord;

use crate::CliError;

pub const HEADER: [&str; 15] = [
    "equation",
    "method",
    "scheme",
    "n",
    "w",
    "wf",
    "ranks",
    "steps",
    "mode",
    "avg_us_per_step",
    "msgs",
    "bytes",
    "rounds",
    "virtual_comm_us",
    "setup_us",
];

fn csv_error(path: &Path, source: csv::Error) -> CliError {
    CliError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Rows in config order so identical runs give identical files.
pub fn sorted(records: &[TimingRecord]) -> Vec<TimingRecord> {
    let mut rows = records.to_vec();
    rows.sort_by_key(|a| a.sort_key());
    rows
}

pub fn write_records(records: &[TimingRecord], out: impl std::io::Write) -> Result<(), csv::Error> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    wtr.write_record(HEADER)?;
    for r in sorted(records) {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn emit_csv(records: &[TimingRecord], path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let file = std::fs::File::create(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_records(records, std::io::BufWriter::new(file)).map_err(|e| csv_error(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<TimingRecord>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    rdr.deserialize()
        .collect::<Result<Vec<TimingRecord>, _>>()
        .map_err(|e| csv_error(path, e))
}

/// `(header, value)` pairs of one record, formatted as in the CSV.
pub fn fields(record: &TimingRecord) -> Vec<(&'static str, String)> {
    let mut buf = Vec::new();
    {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
        wtr.serialize(record).expect("in-memory write");
        wtr.flush().expect("in-memory flush");
    }
    let line = String::from_utf8(buf).expect("csv output is utf-8");
    HEADER
        .iter()
        .copied()
        .zip(line.trim_end().split(',').map(str::to_string))
        .collect()
}
