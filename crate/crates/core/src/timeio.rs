//! Timestamp parsing and formatting shared by the CSV readers and writers.
//!
//! Timestamps are carried internally as seconds since the Unix epoch. On
//! input both ISO-8601 strings and plain numbers of seconds are accepted; on
//! output ISO-8601 UTC is written.

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};

pub fn parse_timestamp(s: &str) -> Result<f64, String> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return if v.is_finite() { Ok(v) } else { Err(format!("non-finite timestamp `{s}`")) };
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(to_seconds(dt.with_timezone(&Utc)));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(n) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(to_seconds(n.and_utc()));
        }
    }
    Err(format!("unparseable timestamp `{s}`"))
}

fn to_seconds(dt: DateTime<Utc>) -> f64 {
    dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9
}

pub fn format_timestamp(secs: f64) -> String {
    let whole = secs.floor();
    let nanos = ((secs - whole) * 1e9).round() as u32;
    match DateTime::<Utc>::from_timestamp(whole as i64, nanos.min(999_999_999)) {
        Some(dt) => dt.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        None => format!("{secs}"),
    }
}
