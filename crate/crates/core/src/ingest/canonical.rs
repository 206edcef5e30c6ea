//! Canonical dataset file.
//!
//! ```text
//! #n2rec-v1 M=<users> Q=<pois>
//! #split<TAB>set|none
//! #user<TAB><id><TAB><key>          (M lines)
//! #poi<TAB><id><TAB><key>           (Q lines)
//! user_id<TAB>poi_id<TAB>lat<TAB>lon<TAB>unix_ts<TAB>is_test
//! ...
//! #sha256<TAB><hex digest of every preceding byte>
//! ```
//!
//! Rows are sorted by (user_id, timestamp) and each user's rows go train
//! first, then test. Keys escape `\`, tab and newline.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ids::{PoiId, UserId};
use crate::ingest::dataset::{CheckIn, Dataset};

pub const CANONICAL_VERSION: &str = "#n2rec-v1";

pub fn save_canonical(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_canonical_string(dataset)).map_err(|e| Error::io(path, e))
}

pub fn load_canonical(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_canonical_str(&text)
}

pub(crate) fn to_canonical_string(dataset: &Dataset) -> String {
    let mut out = String::with_capacity(dataset.num_checkins() * 48);
    let _ = writeln!(
        out,
        "{CANONICAL_VERSION} M={} Q={}",
        dataset.num_users(),
        dataset.num_pois()
    );
    let _ = writeln!(out, "#split\t{}", if dataset.is_split() { "set" } else { "none" });
    for (i, k) in dataset.user_keys().iter().enumerate() {
        let _ = writeln!(out, "#user\t{i}\t{}", escape(k));
    }
    for (i, k) in dataset.poi_keys().iter().enumerate() {
        let _ = writeln!(out, "#poi\t{i}\t{}", escape(k));
    }
    for u in dataset.users() {
        let split = dataset.split_point(u).unwrap_or(usize::MAX);
        for (i, c) in dataset.sequence(u).iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                c.user,
                c.poi,
                c.lat,
                c.lon,
                c.timestamp,
                u8::from(i >= split)
            );
        }
    }
    let digest = hex::encode(Sha256::digest(out.as_bytes()));
    let _ = writeln!(out, "#sha256\t{digest}");
    out
}

pub(crate) fn from_canonical_str(text: &str) -> Result<Dataset> {
    let body_end = text
        .trim_end_matches('\n')
        .rfind('\n')
        .map(|i| i + 1)
        .ok_or(Error::Format {
            line: 1,
            msg: "truncated file".into(),
        })?;
    let (body, trailer) = text.split_at(body_end);

    let mut lines = body.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or(Error::Format {
        line: 1,
        msg: "missing header".into(),
    })?;
    let mut tokens = header.split_whitespace();
    let version = tokens.next().unwrap_or("");
    if version != CANONICAL_VERSION {
        return Err(Error::Version {
            found: version.to_string(),
            expected: CANONICAL_VERSION,
        });
    }

    let stored = trailer
        .trim_end()
        .strip_prefix("#sha256\t")
        .ok_or(Error::Format {
            line: body.lines().count() + 1,
            msg: "missing #sha256 trailer".into(),
        })?;
    let computed = hex::encode(Sha256::digest(body.as_bytes()));
    if stored != computed {
        return Err(Error::Checksum {
            stored: stored.to_string(),
            computed,
        });
    }

    let num_users = header_count(tokens.next(), "M=")?;
    let num_pois = header_count(tokens.next(), "Q=")?;

    let mut split_set = None;
    let mut user_keys = Vec::with_capacity(num_users);
    let mut poi_keys = Vec::with_capacity(num_pois);
    let mut sequences: Vec<Vec<CheckIn>> = vec![Vec::new(); num_users];
    let mut test_flags: Vec<Vec<bool>> = vec![Vec::new(); num_users];
    let mut last_user = 0usize;

    for (line_no, line) in lines {
        let fail = |msg: String| Error::Format { line: line_no, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[0] {
            "#split" => {
                split_set = Some(match fields.get(1).copied() {
                    Some("set") => true,
                    Some("none") => false,
                    other => return Err(fail(format!("bad split marker {other:?}"))),
                });
            }
            "#user" | "#poi" => {
                let [_, id, key] = fields[..] else {
                    return Err(fail("expected #kind<TAB>id<TAB>key".into()));
                };
                let keys = if fields[0] == "#user" { &mut user_keys } else { &mut poi_keys };
                let id: usize = id.parse().map_err(|_| fail(format!("bad id {id:?}")))?;
                if id != keys.len() {
                    return Err(fail(format!("key table out of order at id {id}")));
                }
                keys.push(unescape(key));
            }
            f if f.starts_with('#') => return Err(fail(format!("unknown directive {f:?}"))),
            _ => {
                let [user, poi, lat, lon, ts, is_test] = fields[..] else {
                    return Err(fail(format!("expected 6 columns, found {}", fields.len())));
                };
                let user: usize = user.parse().map_err(|_| fail(format!("bad user id {user:?}")))?;
                let poi: u32 = poi.parse().map_err(|_| fail(format!("bad POI id {poi:?}")))?;
                if user >= num_users {
                    return Err(fail(format!("user {user} out of range")));
                }
                if user < last_user {
                    return Err(fail("rows not sorted by user".into()));
                }
                last_user = user;
                let is_test = match is_test {
                    "0" => false,
                    "1" => true,
                    other => return Err(fail(format!("bad is_test flag {other:?}"))),
                };
                sequences[user].push(CheckIn {
                    user: UserId::from_index(user),
                    poi: PoiId(poi),
                    lat: lat.parse().map_err(|_| fail(format!("bad latitude {lat:?}")))?,
                    lon: lon.parse().map_err(|_| fail(format!("bad longitude {lon:?}")))?,
                    timestamp: ts.parse().map_err(|_| fail(format!("bad timestamp {ts:?}")))?,
                });
                test_flags[user].push(is_test);
            }
        }
    }

    if user_keys.len() != num_users || poi_keys.len() != num_pois {
        return Err(Error::InvalidDataset(format!(
            "header declares M={num_users} Q={num_pois} but key tables have {} and {} entries",
            user_keys.len(),
            poi_keys.len()
        )));
    }
    let split_set = split_set.ok_or_else(|| Error::InvalidDataset("missing #split marker".into()))?;
    let split_points = if split_set {
        let mut points = Vec::with_capacity(num_users);
        for (u, flags) in test_flags.iter().enumerate() {
            let p = flags.iter().take_while(|t| !**t).count();
            if flags[p..].iter().any(|t| !t) {
                return Err(Error::InvalidDataset(format!("user {u}: train row after test row")));
            }
            points.push(p);
        }
        Some(points)
    } else {
        if test_flags.iter().flatten().any(|t| *t) {
            return Err(Error::InvalidDataset("test rows in an unsplit dataset".into()));
        }
        None
    };
    Dataset::new(user_keys, poi_keys, sequences, split_points)
}

fn header_count(token: Option<&str>, prefix: &str) -> Result<usize> {
    token
        .and_then(|t| t.strip_prefix(prefix))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format {
            line: 1,
            msg: format!("header field {prefix}<int> missing or malformed"),
        })
}

fn escape(key: &str) -> String {
    let mut out = String::with_capacity(key.len());
    for ch in key.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(key: &str) -> String {
    let mut out = String::with_capacity(key.len());
    let mut chars = key.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}
