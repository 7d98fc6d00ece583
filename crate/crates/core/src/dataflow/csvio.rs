//! CSV reading and writing for flow series.
//!
//! Format: UTF-8, header `timestamp,count`, timestamps as `YYYY-MM-DDTHH:MM`
//! on the 30-minute grid, counts as non-negative decimals.
//!
//! Loading tolerates small holes: gaps of at most 2 missing intervals are
//! filled by linear interpolation; anything longer splits the series and only
//! the longest contiguous segment is kept, with the discarded share reported.

use std::path::Path;

use chrono::{NaiveDateTime, Timelike};

use crate::dataflow::{FlowSeries, STEP_MINUTES};
use crate::error::{io_err, FcError, Result};

pub const CSV_HEADER: &str = "timestamp,count";
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

/// Longest gap (in missing intervals) that is interpolated instead of
/// splitting the series.
pub const MAX_INTERPOLATED_GAP: i64 = 2;

/// Result of loading a CSV: the longest contiguous segment plus bookkeeping
/// about how much of the file it covers.
#[derive(Debug)]
pub struct LoadedSeries {
    pub series: FlowSeries,
    /// Fraction of parsed rows that fell outside the returned segment.
    pub drop_fraction: f64,
    /// Values synthesized by gap interpolation inside the returned segment.
    pub interpolated: usize,
    /// Data rows parsed from the file.
    pub total_rows: usize,
}

/// Writes a series in the canonical CSV format with three-decimal counts.
pub fn save_csv(series: &FlowSeries, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut out = String::with_capacity(series.len() * 24 + 16);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (ts, v) in series.timestamps.iter().zip(&series.values) {
        out.push_str(&format!("{},{:.3}\n", ts.format(TIMESTAMP_FORMAT), v));
    }
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| io_err(path, e))
}

fn parse_row(line_no: usize, line: &str) -> Result<(NaiveDateTime, f64)> {
    let mut fields = line.split(',');
    let (ts_str, val_str) = match (fields.next(), fields.next(), fields.next()) {
        (Some(a), Some(b), None) => (a, b),
        _ => {
            return Err(FcError::Parse {
                line: line_no,
                msg: format!("expected two comma-separated fields, got `{line}`"),
            })
        }
    };
    let ts = NaiveDateTime::parse_from_str(ts_str, TIMESTAMP_FORMAT).map_err(|e| {
        FcError::Parse {
            line: line_no,
            msg: format!("invalid timestamp `{ts_str}`: {e}"),
        }
    })?;
    if ts.minute() % 30 != 0 || ts.second() != 0 {
        return Err(FcError::Parse {
            line: line_no,
            msg: format!("timestamp `{ts_str}` is not on the 30-minute grid"),
        });
    }
    let value: f64 = val_str.trim().parse().map_err(|_| FcError::Parse {
        line: line_no,
        msg: format!("invalid count `{val_str}`"),
    })?;
    if !value.is_finite() || value < 0.0 {
        return Err(FcError::Parse {
            line: line_no,
            msg: format!("count must be finite and non-negative, got `{val_str}`"),
        });
    }
    Ok((ts, value))
}

struct Segment {
    timestamps: Vec<NaiveDateTime>,
    values: Vec<f64>,
    rows: usize,
    interpolated: usize,
}

/// Loads a series from `path`, applying the gap policy described in the
/// module docs. Errors name the offending line.
pub fn load_csv(path: &Path) -> Result<LoadedSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(FcError::Parse {
                line: 1,
                msg: format!("expected header `{CSV_HEADER}`, got `{}`", header.trim_end()),
            })
        }
        None => {
            return Err(FcError::Parse {
                line: 1,
                msg: "empty file".into(),
            })
        }
    }

    let mut segments: Vec<Segment> = Vec::new();
    let mut cur: Option<Segment> = None;
    let mut total_rows = 0usize;

    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let (ts, value) = parse_row(line_no, line)?;
        total_rows += 1;
        match cur.as_mut() {
            None => {
                cur = Some(Segment {
                    timestamps: vec![ts],
                    values: vec![value],
                    rows: 1,
                    interpolated: 0,
                });
            }
            Some(seg) => {
                let prev_ts = *seg.timestamps.last().unwrap();
                let minutes = (ts - prev_ts).num_minutes();
                if minutes <= 0 {
                    return Err(FcError::Parse {
                        line: line_no,
                        msg: format!(
                            "timestamps must be strictly increasing; {ts} does not follow {prev_ts}"
                        ),
                    });
                }
                if minutes % STEP_MINUTES != 0 {
                    return Err(FcError::Parse {
                        line: line_no,
                        msg: format!("timestamp {ts} is not aligned to the 30-minute grid"),
                    });
                }
                let steps = minutes / STEP_MINUTES;
                let missing = steps - 1;
                if missing == 0 {
                    seg.timestamps.push(ts);
                    seg.values.push(value);
                    seg.rows += 1;
                } else if missing <= MAX_INTERPOLATED_GAP {
                    // Fill the interior points on the line from the previous
                    // observation to this one, then append the observation.
                    let prev_val = *seg.values.last().unwrap();
                    for k in 1..steps {
                        let frac = k as f64 / steps as f64;
                        seg.timestamps
                            .push(prev_ts + chrono::Duration::minutes(STEP_MINUTES * k));
                        seg.values.push(prev_val + frac * (value - prev_val));
                        seg.interpolated += 1;
                    }
                    seg.timestamps.push(ts);
                    seg.values.push(value);
                    seg.rows += 1;
                } else {
                    segments.push(cur.take().unwrap());
                    cur = Some(Segment {
                        timestamps: vec![ts],
                        values: vec![value],
                        rows: 1,
                        interpolated: 0,
                    });
                }
            }
        }
    }
    if let Some(seg) = cur.take() {
        segments.push(seg);
    }
    if segments.is_empty() {
        return Err(FcError::Data(format!(
            "{} contains no data rows",
            path.display()
        )));
    }

    // Longest segment by value count; ties keep the earliest.
    let best = segments
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.values
                .len()
                .cmp(&b.values.len())
                .then(ib.cmp(ia)) // earlier index wins ties
        })
        .map(|(i, _)| i)
        .unwrap();
    let seg = segments.swap_remove(best);
    let drop_fraction = 1.0 - seg.rows as f64 / total_rows as f64;
    let interpolated = seg.interpolated;
    let series = FlowSeries::new(seg.timestamps, seg.values)?;
    Ok(LoadedSeries {
        series,
        drop_fraction,
        interpolated,
        total_rows,
    })
}
