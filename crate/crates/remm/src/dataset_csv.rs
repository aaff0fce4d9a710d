//! Long counting-process CSV: `id,start,stop,status,z1,...,zd`, one row per
//! interval, `status` at `stop` being 0 (censoring or interval break),
//! 1 (recurrence) or 2 (terminal event).

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use remm_core::{CovariateInterval, Dataset, SubjectRecord};

use crate::error::{CliError, CliResult};

#[derive(Debug)]
struct Row {
    line: usize,
    start: f64,
    stop: f64,
    status: u8,
    z: Vec<f64>,
}

fn row_error(line: usize, message: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("row {line}: {message}"))
}

fn parse_time(field: &str, what: &str, line: usize) -> CliResult<f64> {
    let v: f64 = field.trim().parse().map_err(|_| row_error(line, format!("{what} '{field}' is not a number")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(row_error(line, format!("{what} {v} must be finite and nonnegative")));
    }
    Ok(v)
}

/// Reads a dataset. Without `tau` the study end is the largest `stop`.
/// Errors name the 1-based line of the offending row (the header is line 1).
pub fn parse_dataset<R: Read>(source: R, tau: Option<f64>) -> CliResult<Dataset> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(source);
    let header = reader.headers().map_err(|e| CliError::Validation(format!("row 1: {e}")))?.clone();
    let expected: Vec<&str> = header.iter().collect();
    if expected.len() < 4 || expected[..4] != ["id", "start", "stop", "status"] {
        return Err(CliError::Validation("row 1: header must begin with id,start,stop,status".into()));
    }
    let d = expected.len() - 4;

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<Row>> = HashMap::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| row_error(line, e))?;
        if record.len() != d + 4 {
            return Err(row_error(line, format!("expected {} columns, found {}", d + 4, record.len())));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(row_error(line, "empty id"));
        }
        let start = parse_time(&record[1], "start", line)?;
        let stop = parse_time(&record[2], "stop", line)?;
        if stop < start {
            return Err(row_error(line, format!("stop {stop} before start {start}")));
        }
        let status = match record[3].trim() {
            "0" => 0,
            "1" => 1,
            "2" => 2,
            other => return Err(row_error(line, format!("status '{other}' must be 0, 1 or 2"))),
        };
        let z = (4..d + 4)
            .map(|j| {
                let v: f64 = record[j].parse().map_err(|_| row_error(line, format!("covariate '{}' is not a number", &record[j])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(row_error(line, "non-finite covariate"))
                }
            })
            .collect::<CliResult<Vec<f64>>>()?;
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push(Row { line, start, stop, status, z });
    }

    let mut subjects = Vec::with_capacity(order.len());
    let mut max_stop: f64 = 0.0;
    for id in order {
        let mut rs = rows.remove(&id).unwrap_or_default();
        rs.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.stop.total_cmp(&b.stop)));
        subjects.push(merge_subject(id, &rs)?);
        max_stop = max_stop.max(rs.last().map_or(0.0, |r| r.stop));
    }
    let tau = match tau {
        Some(t) => t,
        None if subjects.is_empty() => 1.0,
        None => max_stop,
    };
    Ok(Dataset::new(subjects, tau)?)
}

fn merge_subject(id: String, rows: &[Row]) -> CliResult<SubjectRecord> {
    let first = &rows[0];
    if first.start != 0.0 {
        return Err(row_error(first.line, format!("subject {id}: follow-up must start at 0, found {}", first.start)));
    }
    let mut path: Vec<CovariateInterval> = Vec::new();
    let mut recurrent_times = Vec::new();
    let mut terminal_time = None;
    let mut prev_stop = 0.0;
    for (j, r) in rows.iter().enumerate() {
        if j > 0 {
            if r.start < prev_stop {
                return Err(row_error(r.line, format!("subject {id}: interval overlaps the previous one")));
            }
            if r.start > prev_stop {
                return Err(row_error(r.line, format!("subject {id}: gap between {prev_stop} and {}", r.start)));
            }
        }
        if let Some(d) = terminal_time {
            let what = if r.status == 2 { "duplicate terminal event" } else { "recurrence after terminal event" };
            return Err(row_error(r.line, format!("subject {id}: {what} (terminal at {d})")));
        }
        if path.last().is_none_or(|iv: &CovariateInterval| iv.values != r.z) {
            if path.last().is_some_and(|iv| iv.start == r.start) {
                return Err(row_error(r.line, format!("subject {id}: covariates change within a zero-length interval")));
            }
            path.push(CovariateInterval { start: r.start, values: r.z.clone() });
        }
        match r.status {
            1 => recurrent_times.push(r.stop),
            2 => terminal_time = Some(r.stop),
            _ => {}
        }
        prev_stop = r.stop;
    }
    Ok(SubjectRecord { id, covariate_path: path, recurrent_times, terminal_time, censor_time: prev_stop })
}

pub fn read_dataset(path: &Path, tau: Option<f64>) -> CliResult<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_dataset(std::io::BufReader::new(file), tau)
}

/// Writes a dataset so that [`parse_dataset`] reproduces it. Rows break at
/// covariate changes and events; the last row ends at the end of follow-up.
pub fn write_dataset<W: Write>(ds: &Dataset, sink: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["id".to_string(), "start".into(), "stop".into(), "status".into()];
    header.extend((1..=ds.dim()).map(|j| format!("z{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for s in ds.subjects() {
        let end = s.follow_up_end();
        let mut cuts: Vec<(f64, u8)> = s.recurrent_times.iter().map(|t| (*t, 1)).collect();
        cuts.extend(s.covariate_path.iter().skip(1).filter(|iv| iv.start < end).map(|iv| (iv.start, 0)));
        cuts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        // A covariate change at a recurrence time needs no row of its own.
        cuts.dedup_by(|later, earlier| later.0 == earlier.0 && later.1 == 0);
        let last = if s.terminal_time.is_some() { 2 } else { 0 };
        if cuts.last().is_none_or(|c| c.0 < end) || last == 2 {
            cuts.push((end, last));
        }
        let mut start = 0.0;
        let mut interval = 0;
        for (stop, status) in cuts {
            while interval + 1 < s.covariate_path.len() && s.covariate_path[interval + 1].start <= start {
                interval += 1;
            }
            let mut rec = vec![s.id.clone(), fmt(start), fmt(stop), status.to_string()];
            rec.extend(s.covariate_path[interval].values.iter().map(|v| fmt(*v)));
            w.write_record(&rec).map_err(csv_err)?;
            start = stop;
        }
    }
    w.flush().map_err(|e| CliError::io("<output>", e))
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn csv_err(e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io("<output>", io),
        other => CliError::Validation(format!("{other:?}")),
    }
}

/// Covariate profile CSV `start,z1,...,zd` for predictions.
pub fn parse_profile<R: Read>(source: R) -> CliResult<Vec<CovariateInterval>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut out: Vec<CovariateInterval> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| row_error(line, e))?;
        let start = parse_time(&record[0], "start", line)?;
        let values = record
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map_err(|_| row_error(line, format!("covariate '{f}' is not a number"))))
            .collect::<CliResult<Vec<f64>>>()?;
        if out.last().is_some_and(|iv| iv.start >= start) {
            return Err(row_error(line, "profile starts must increase"));
        }
        out.push(CovariateInterval { start, values });
    }
    if out.first().is_none_or(|iv| iv.start != 0.0) {
        return Err(CliError::Validation("profile must have a row starting at 0".into()));
    }
    Ok(out)
}
