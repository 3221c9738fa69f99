use std::io::{Read, Write};

use csv::{ByteRecord, ReaderBuilder};

use super::{Condition, GazeIoError, GazeSample, Result, Trial};
use crate::fixation::Fixation;

pub const GAZE_CSV_HEADER: [&str; 6] = ["participant_id", "trial_id", "condition", "t_ms", "x_px", "y_px"];

pub const FIXATION_CSV_HEADER: [&str; 8] = [
    "participant_id",
    "trial_id",
    "condition",
    "start_ms",
    "duration_ms",
    "x_px",
    "y_px",
    "n_samples",
];

/// Fixations of one trial as read back from a fixation CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct FixationTrial {
    pub participant_id: String,
    pub trial_id: String,
    pub condition: Condition,
    pub fixations: Vec<Fixation>,
}

struct Rows<R: Read> {
    reader: csv::Reader<R>,
    record: ByteRecord,
}

impl<R: Read> Rows<R> {
    fn new(input: R, comments: bool) -> Self {
        let reader = ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(if comments { Some(b'#') } else { None })
            .from_reader(input);
        Rows { reader, record: ByteRecord::new() }
    }

    /// Next row as UTF-8 fields with its 1-based line number.
    fn next(&mut self) -> Result<Option<(u64, Vec<&str>)>> {
        let more = self.reader.read_byte_record(&mut self.record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            match e.into_kind() {
                csv::ErrorKind::Io(io) => GazeIoError::Io(io),
                other => GazeIoError::Parse { line, message: format!("{other:?}") },
            }
        })?;
        if !more {
            return Ok(None);
        }
        let line = self.record.position().map_or(0, |p| p.line());
        let fields = self
            .record
            .iter()
            .map(|f| {
                std::str::from_utf8(f).map_err(|_| GazeIoError::Parse {
                    line,
                    message: "invalid UTF-8".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some((line, fields)))
    }
}

fn expect_header(line: u64, fields: &[&str], header: &[&str]) -> Result<()> {
    if fields != header {
        return Err(GazeIoError::Parse {
            line,
            message: format!("expected header `{}`, found `{}`", header.join(","), fields.join(",")),
        });
    }
    Ok(())
}

fn parse_number(line: u64, name: &str, s: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(GazeIoError::Parse {
            line,
            message: format!("{name}: expected a finite number, found `{s}`"),
        }),
    }
}

/// Groups contiguous rows keyed by `(participant_id, trial_id)`. A key that
/// reappears after another trial started is rejected.
struct Grouper<T> {
    groups: Vec<(String, String, Condition, Vec<T>)>,
    seen: std::collections::HashSet<(String, String)>,
}

impl<T> Grouper<T> {
    fn new() -> Self {
        Grouper { groups: Vec::new(), seen: Default::default() }
    }

    fn push(&mut self, pid: &str, tid: &str, cond: Condition, item: T) -> Result<&mut Vec<T>> {
        let continues = matches!(self.groups.last(), Some((p, t, _, _)) if p == pid && t == tid);
        if continues {
            let last = self.groups.last_mut().expect("non-empty");
            if last.2 != cond {
                return Err(GazeIoError::Validation {
                    participant_id: pid.into(),
                    trial_id: tid.into(),
                    message: format!("condition changes from {} to {}", last.2, cond),
                });
            }
            last.3.push(item);
        } else {
            if !self.seen.insert((pid.to_string(), tid.to_string())) {
                return Err(GazeIoError::Validation {
                    participant_id: pid.into(),
                    trial_id: tid.into(),
                    message: "rows of this trial are not contiguous".into(),
                });
            }
            self.groups.push((pid.to_string(), tid.to_string(), cond, vec![item]));
        }
        Ok(&mut self.groups.last_mut().expect("non-empty").3)
    }
}

/// Parses a gaze CSV into trials, preserving row order within each trial.
///
/// Timestamps must be non-negative and strictly increasing within a trial;
/// unsorted input is rejected rather than re-sorted.
pub fn parse_gaze_csv<R: Read>(input: R) -> Result<Vec<Trial>> {
    let mut rows = Rows::new(input, false);
    let Some((line, header)) = rows.next()? else {
        return Err(GazeIoError::Parse { line: 1, message: "missing header".into() });
    };
    expect_header(line, &header, &GAZE_CSV_HEADER)?;

    let mut grouper = Grouper::new();
    while let Some((line, f)) = rows.next()? {
        if f.len() != GAZE_CSV_HEADER.len() {
            return Err(GazeIoError::Parse {
                line,
                message: format!("expected {} fields, found {}", GAZE_CSV_HEADER.len(), f.len()),
            });
        }
        let sample = GazeSample {
            t_ms: parse_number(line, "t_ms", f[3])?,
            x_px: parse_number(line, "x_px", f[4])?,
            y_px: parse_number(line, "y_px", f[5])?,
        };
        let samples = grouper.push(f[0], f[1], Condition::parse_lenient(f[2]), sample)?;
        let n = samples.len();
        let invalid = if sample.t_ms < 0.0 {
            Some(format!("negative timestamp {} at line {line}", sample.t_ms))
        } else if n > 1 && samples[n - 2].t_ms >= sample.t_ms {
            Some(format!(
                "timestamps not strictly increasing ({} then {}) at line {line}",
                samples[n - 2].t_ms, sample.t_ms
            ))
        } else {
            None
        };
        if let Some(message) = invalid {
            return Err(GazeIoError::Validation {
                participant_id: f[0].into(),
                trial_id: f[1].into(),
                message,
            });
        }
    }
    Ok(grouper
        .groups
        .into_iter()
        .map(|(participant_id, trial_id, condition, samples)| Trial {
            participant_id,
            trial_id,
            condition,
            samples,
        })
        .collect())
}

/// Parses a fixation CSV. Lines starting with `#` are metadata comments.
pub fn parse_fixation_csv<R: Read>(input: R) -> Result<Vec<FixationTrial>> {
    let mut rows = Rows::new(input, true);
    let Some((line, header)) = rows.next()? else {
        return Err(GazeIoError::Parse { line: 1, message: "missing header".into() });
    };
    expect_header(line, &header, &FIXATION_CSV_HEADER)?;

    let mut grouper = Grouper::new();
    while let Some((line, f)) = rows.next()? {
        if f.len() != FIXATION_CSV_HEADER.len() {
            return Err(GazeIoError::Parse {
                line,
                message: format!("expected {} fields, found {}", FIXATION_CSV_HEADER.len(), f.len()),
            });
        }
        let n_samples = f[7].parse::<usize>().map_err(|_| GazeIoError::Parse {
            line,
            message: format!("n_samples: expected a count, found `{}`", f[7]),
        })?;
        let fixation = Fixation {
            start_ms: parse_number(line, "start_ms", f[3])?,
            duration_ms: parse_number(line, "duration_ms", f[4])?,
            x_px: parse_number(line, "x_px", f[5])?,
            y_px: parse_number(line, "y_px", f[6])?,
            n_samples,
        };
        grouper.push(f[0], f[1], Condition::parse_lenient(f[2]), fixation)?;
    }
    Ok(grouper
        .groups
        .into_iter()
        .map(|(participant_id, trial_id, condition, fixations)| FixationTrial {
            participant_id,
            trial_id,
            condition,
            fixations,
        })
        .collect())
}

/// Writes fixation rows. `meta`, when given, is emitted as a leading
/// `# `-prefixed comment line (one line, no newlines allowed).
pub fn write_fixation_csv<W: Write>(mut out: W, trials: &[FixationTrial], meta: Option<&str>) -> Result<()> {
    if let Some(meta) = meta {
        writeln!(out, "# {}", meta.replace('\n', " "))?;
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(FIXATION_CSV_HEADER).map_err(csv_err)?;
    for t in trials {
        for f in &t.fixations {
            w.write_record([
                t.participant_id.as_str(),
                t.trial_id.as_str(),
                t.condition.as_str(),
                &fmt_num(f.start_ms),
                &fmt_num(f.duration_ms),
                &fmt_num(f.x_px),
                &fmt_num(f.y_px),
                &f.n_samples.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> GazeIoError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => GazeIoError::Io(io),
        other => GazeIoError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Shortest representation of the value rounded to ten significant digits.
fn fmt_num(x: f64) -> String {
    format!("{}", super::round_significant(x))
}
