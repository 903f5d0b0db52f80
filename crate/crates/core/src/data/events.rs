use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{io_err, Error, Result};

/// One raw interaction as read from disk.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawEvent {
    pub user_id: String,
    pub item_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
}

impl RawEvent {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: i64) -> Self {
        Self {
            user_id: user_id.into(),
            item_id: item_id.into(),
            timestamp,
        }
    }
}

/// Column layout of a delimiter-separated event file.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFormat {
    pub delimiter: String,
    pub user_col: usize,
    pub item_col: usize,
    pub time_col: usize,
    pub has_header: bool,
    /// Loading fails when more than this fraction of rows is malformed.
    pub max_malformed_fraction: f64,
}

impl EventFormat {
    pub fn tsv() -> Self {
        Self {
            delimiter: "\t".into(),
            user_col: 0,
            item_col: 1,
            time_col: 2,
            has_header: false,
            max_malformed_fraction: 0.01,
        }
    }

    pub fn csv() -> Self {
        Self {
            delimiter: ",".into(),
            ..Self::tsv()
        }
    }

    /// `user::item::rating::timestamp`
    pub fn movielens() -> Self {
        Self {
            delimiter: "::".into(),
            time_col: 3,
            ..Self::tsv()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedEvents {
    pub events: Vec<RawEvent>,
    pub rows: usize,
    pub malformed: usize,
    /// First few malformed lines, with 1-based line numbers.
    pub malformed_samples: Vec<(usize, String)>,
}

fn parse_row(line: &str, fmt: &EventFormat) -> Option<RawEvent> {
    let fields: Vec<&str> = line.split(fmt.delimiter.as_str()).collect();
    let user = fields.get(fmt.user_col)?.trim();
    let item = fields.get(fmt.item_col)?.trim();
    let ts: i64 = fields.get(fmt.time_col)?.trim().parse().ok()?;
    if user.is_empty() || item.is_empty() || ts < 0 {
        return None;
    }
    Some(RawEvent::new(user, item, ts))
}

/// Reads events in file order, skipping blank lines. Malformed rows are
/// counted and dropped.
pub fn load_events(path: &Path, fmt: &EventFormat) -> Result<LoadedEvents> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = LoadedEvents {
        events: Vec::new(),
        rows: 0,
        malformed: 0,
        malformed_samples: Vec::new(),
    };
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if lineno == 0 && fmt.has_header {
            continue;
        }
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        out.rows += 1;
        match parse_row(line, fmt) {
            Some(ev) => out.events.push(ev),
            None => {
                out.malformed += 1;
                if out.malformed_samples.len() < 5 {
                    out.malformed_samples.push((lineno + 1, line.to_string()));
                }
            }
        }
    }
    if out.rows > 0 && out.malformed as f64 > fmt.max_malformed_fraction * out.rows as f64 {
        let samples: Vec<String> = out
            .malformed_samples
            .iter()
            .map(|(n, l)| format!("line {n}: {l:?}"))
            .collect();
        return Err(Error::Format(format!(
            "{}: {} of {} rows malformed; e.g. {}",
            path.display(),
            out.malformed,
            out.rows,
            samples.join(", ")
        )));
    }
    if out.malformed > 0 {
        log::warn!(
            "{}: skipped {} malformed rows",
            path.display(),
            out.malformed
        );
    }
    Ok(out)
}

/// Writes events as `user<TAB>item<TAB>timestamp` lines.
pub fn write_events_tsv(path: &Path, events: &[RawEvent]) -> Result<()> {
    let mut buf = String::with_capacity(events.len() * 24);
    for e in events {
        buf.push_str(&e.user_id);
        buf.push('\t');
        buf.push_str(&e.item_id);
        buf.push('\t');
        buf.push_str(&e.timestamp.to_string());
        buf.push('\n');
    }
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(buf.as_bytes()).map_err(io_err(path))
}
