use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use chrono::DateTime;

use crate::error::{Error, Result};

/// One line of a raw check-in dump, before re-indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCheckIn {
    pub user_key: String,
    pub poi_key: String,
    pub lat: f64,
    pub lon: f64,
    /// Unix seconds.
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeFormat {
    /// RFC 3339 / ISO-8601, e.g. `2010-10-19T23:55:27Z`.
    Iso8601,
    /// Integer unix seconds.
    Unix,
    /// `Tue Apr 03 18:00:09 +0000 2012`, as in the Foursquare global dump.
    Ctime,
}

impl FromStr for TimeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "iso8601" | "iso-8601" | "rfc3339" => Ok(TimeFormat::Iso8601),
            "unix" => Ok(TimeFormat::Unix),
            "ctime" => Ok(TimeFormat::Ctime),
            other => Err(Error::Mapping(format!("unknown time_format {other:?}"))),
        }
    }
}

impl TimeFormat {
    fn parse(self, s: &str) -> Option<i64> {
        match self {
            TimeFormat::Iso8601 => DateTime::parse_from_rfc3339(s).ok().map(|t| t.timestamp()),
            TimeFormat::Unix => s.parse().ok(),
            TimeFormat::Ctime => DateTime::parse_from_str(s, "%a %b %d %H:%M:%S %z %Y")
                .ok()
                .map(|t| t.timestamp()),
        }
    }
}

/// Zero-based column positions for a delimited check-in dump.
///
/// Parsed from `key=value` lines: `user_col`, `poi_col`, `lat_col`, `lon_col`,
/// `time_col`, `time_format`, and optionally `delimiter` (`tab`, `comma`, or a
/// single character). Coordinates may be omitted, in which case they are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMapping {
    pub user_col: usize,
    pub poi_col: usize,
    pub lat_col: Option<usize>,
    pub lon_col: Option<usize>,
    pub time_col: usize,
    pub time_format: TimeFormat,
    pub delimiter: char,
}

impl ColumnMapping {
    /// SNAP `loc-gowalla_totalCheckins.txt`: user, time, lat, lon, location id.
    pub fn gowalla() -> Self {
        ColumnMapping {
            user_col: 0,
            poi_col: 4,
            lat_col: Some(2),
            lon_col: Some(3),
            time_col: 1,
            time_format: TimeFormat::Iso8601,
            delimiter: '\t',
        }
    }

    /// Foursquare global-scale check-ins: user, venue, UTC time, offset.
    pub fn foursquare() -> Self {
        ColumnMapping {
            user_col: 0,
            poi_col: 1,
            lat_col: None,
            lon_col: None,
            time_col: 2,
            time_format: TimeFormat::Ctime,
            delimiter: '\t',
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut user_col = None;
        let mut poi_col = None;
        let mut lat_col = None;
        let mut lon_col = None;
        let mut time_col = None;
        let mut time_format = None;
        let mut delimiter = '\t';
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Mapping(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let col = || {
                value
                    .parse::<usize>()
                    .map_err(|_| Error::Mapping(format!("{key}: not a column index: {value:?}")))
            };
            match key {
                "user_col" => user_col = Some(col()?),
                "poi_col" => poi_col = Some(col()?),
                "lat_col" => lat_col = Some(col()?),
                "lon_col" => lon_col = Some(col()?),
                "time_col" => time_col = Some(col()?),
                "time_format" => time_format = Some(value.parse()?),
                "delimiter" => {
                    delimiter = match value {
                        "tab" | "\\t" => '\t',
                        "comma" => ',',
                        "space" => ' ',
                        v if v.chars().count() == 1 => v.chars().next().unwrap(),
                        v => return Err(Error::Mapping(format!("bad delimiter {v:?}"))),
                    }
                }
                other => return Err(Error::Mapping(format!("unknown key {other:?}"))),
            }
        }
        let need = |v: Option<usize>, name: &str| {
            v.ok_or_else(|| Error::Mapping(format!("missing {name}")))
        };
        if lat_col.is_some() != lon_col.is_some() {
            return Err(Error::Mapping("lat_col and lon_col must be given together".into()));
        }
        Ok(ColumnMapping {
            user_col: need(user_col, "user_col")?,
            poi_col: need(poi_col, "poi_col")?,
            lat_col,
            lon_col,
            time_col: need(time_col, "time_col")?,
            time_format: time_format.ok_or_else(|| Error::Mapping("missing time_format".into()))?,
            delimiter,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn parse_line(&self, line: &str) -> Option<RawCheckIn> {
        let fields: Vec<&str> = line.split(self.delimiter).map(str::trim).collect();
        let field = |i: usize| fields.get(i).copied().filter(|f| !f.is_empty());
        let coord = |col: Option<usize>, bound: f64| -> Option<f64> {
            match col {
                None => Some(0.0),
                Some(c) => field(c)?
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && v.abs() <= bound),
            }
        };
        let timestamp = self.time_format.parse(field(self.time_col)?)?;
        if timestamp < 0 {
            return None;
        }
        Some(RawCheckIn {
            user_key: field(self.user_col)?.to_string(),
            poi_key: field(self.poi_col)?.to_string(),
            lat: coord(self.lat_col, 90.0)?,
            lon: coord(self.lon_col, 180.0)?,
            timestamp,
        })
    }
}

/// Outcome of parsing a raw dump.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedCheckIns {
    pub records: Vec<RawCheckIn>,
    /// Non-blank lines that could not be parsed.
    pub skipped: usize,
}

/// Below this many non-blank lines the malformed-ratio guard is not applied;
/// a handful of bad lines says nothing about the mapping.
const MIN_LINES_FOR_RATIO_CHECK: usize = 10;

/// Parses a delimited check-in dump. Blank lines are ignored, malformed lines
/// are skipped and counted. More than half the lines malformed is treated as
/// a wrong mapping and fails.
pub fn parse_raw(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<ParsedCheckIns> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_raw_reader(BufReader::new(file), mapping).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_raw_reader(reader: impl BufRead, mapping: &ColumnMapping) -> Result<ParsedCheckIns> {
    let mut out = ParsedCheckIns::default();
    let mut total = 0;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match mapping.parse_line(&line) {
            Some(r) => out.records.push(r),
            None => out.skipped += 1,
        }
    }
    if total >= MIN_LINES_FOR_RATIO_CHECK && out.skipped * 2 > total {
        return Err(Error::TooManyMalformed {
            skipped: out.skipped,
            total,
        });
    }
    Ok(out)
}
