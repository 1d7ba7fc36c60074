//! Local (exchange) wall-clock timestamps.
//!
//! Feed timestamps are nanoseconds since the Unix epoch (UTC). Johannesburg
//! runs a fixed UTC+2 offset with no daylight saving, so local time is a plain
//! shift. Vendor files already carry local wall-clock times.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const NANOS_PER_SEC: i64 = 1_000_000_000;
pub const NANOS_PER_MIN: i64 = 60 * NANOS_PER_SEC;
pub const NANOS_PER_DAY: i64 = 86_400 * NANOS_PER_SEC;

/// Offset applied to feed timestamps to obtain exchange local time.
pub const LOCAL_OFFSET_NS: i64 = 2 * 3_600 * NANOS_PER_SEC;

/// Nanoseconds since 1970-01-01T00:00:00 on the local wall clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LocalTime(i64);

impl LocalTime {
    pub const fn from_local_ns(ns: i64) -> Self {
        Self(ns)
    }

    pub fn from_unix_ns(ns: u64) -> Self {
        Self(ns as i64 + LOCAL_OFFSET_NS)
    }

    pub fn from_ymd_hms(
        year: i32,
        month: u32,
        day: u32,
        hour: u32,
        min: u32,
        sec: u32,
    ) -> Option<Self> {
        let date = chrono::NaiveDate::from_ymd_opt(year, month, day)?;
        let dt = date.and_hms_opt(hour, min, sec)?;
        dt.and_utc().timestamp_nanos_opt().map(Self)
    }

    pub const fn as_ns(self) -> i64 {
        self.0
    }

    /// Calendar day index (days since 1970-01-01 local).
    pub fn day(self) -> i64 {
        self.0.div_euclid(NANOS_PER_DAY)
    }

    /// Nanoseconds since local midnight.
    pub fn time_of_day(self) -> i64 {
        self.0.rem_euclid(NANOS_PER_DAY)
    }

    pub fn seconds_since(self, earlier: LocalTime) -> f64 {
        (self.0 - earlier.0) as f64 / NANOS_PER_SEC as f64
    }

    pub fn plus_ns(self, ns: i64) -> Self {
        Self(self.0 + ns)
    }

    fn naive(self) -> NaiveDateTime {
        let secs = self.0.div_euclid(NANOS_PER_SEC);
        let nanos = self.0.rem_euclid(NANOS_PER_SEC) as u32;
        DateTime::from_timestamp(secs, nanos)
            .expect("timestamp within chrono range")
            .naive_utc()
    }
}

impl fmt::Display for LocalTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.naive().format("%Y-%m-%dT%H:%M:%S%.9f"))
    }
}

impl FromStr for LocalTime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let parsed = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
            .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f"))
            .map_err(|_| Error::InvalidTimestamp(s.to_string()))?;
        parsed
            .and_utc()
            .timestamp_nanos_opt()
            .map(Self)
            .ok_or_else(|| Error::InvalidTimestamp(s.to_string()))
    }
}

/// Convert a feed timestamp (ns since the Unix epoch, UTC) to local time.
pub fn to_local_time(ns: u64) -> LocalTime {
    LocalTime::from_unix_ns(ns)
}

/// UTC rendering used in the feed header line, truncated to microseconds.
pub fn format_utc_micros(unix_ns: u64) -> String {
    let secs = (unix_ns / NANOS_PER_SEC as u64) as i64;
    let nanos = (unix_ns % NANOS_PER_SEC as u64) as u32;
    let dt = DateTime::from_timestamp(secs, nanos - nanos % 1_000).expect("timestamp in range");
    dt.naive_utc().format("%Y-%m-%dT%H:%M:%S%.6f").to_string()
}

/// A half-open intraday window `[start, end)` expressed as time-of-day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub start_ns: i64,
    pub end_ns: i64,
}

impl Session {
    pub const fn from_minutes(start_min: i64, end_min: i64) -> Self {
        Self {
            start_ns: start_min * NANOS_PER_MIN,
            end_ns: end_min * NANOS_PER_MIN,
        }
    }

    pub fn contains(&self, t: LocalTime) -> bool {
        let tod = t.time_of_day();
        tod >= self.start_ns && tod < self.end_ns
    }

    pub fn length_ns(&self) -> i64 {
        self.end_ns - self.start_ns
    }
}

/// Continuous trading session, 09:00 to 16:50.
impl Default for Session {
    fn default() -> Self {
        Self::from_minutes(9 * 60, 16 * 60 + 50)
    }
}

impl FromStr for Session {
    type Err = Error;

    /// Parses `HH:MM-HH:MM`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::InvalidSession(s.to_string());
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        let minutes = |hm: &str| -> Option<i64> {
            let (h, m) = hm.trim().split_once(':')?;
            let h: i64 = h.parse().ok()?;
            let m: i64 = m.parse().ok()?;
            (h < 24 && m < 60).then_some(h * 60 + m)
        };
        let start = minutes(a).ok_or_else(bad)?;
        let end = minutes(b).ok_or_else(bad)?;
        if end <= start {
            return Err(bad());
        }
        Ok(Self::from_minutes(start, end))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_maps_to_two_am() {
        assert_eq!(to_local_time(0).to_string(), "1970-01-01T02:00:00.000000000");
    }

    #[test]
    fn feed_snippet_timestamp() {
        let t = to_local_time(1_583_827_086_138_193_000);
        assert_eq!(t.to_string(), "2020-03-10T09:58:06.138193000");
        assert_eq!(format_utc_micros(1_583_827_086_138_193_000), "2020-03-10T07:58:06.138193");
    }

    #[test]
    fn one_nanosecond_apart() {
        let a = to_local_time(1_583_827_086_138_193_000);
        let b = to_local_time(1_583_827_086_138_193_001);
        assert_eq!(b.as_ns() - a.as_ns(), 1);
        assert_eq!(b.to_string(), "2020-03-10T09:58:06.138193001");
    }

    #[test]
    fn display_parse_round_trip() {
        let t = to_local_time(1_583_827_086_179_435_000);
        let back: LocalTime = t.to_string().parse().unwrap();
        assert_eq!(back, t);
        let v: LocalTime = "2019-01-02T09:00:35.0".parse().unwrap();
        assert_eq!(v.time_of_day(), (9 * 3600 + 35) * NANOS_PER_SEC);
    }

    #[test]
    fn session_is_half_open() {
        let s: Session = "09:00-16:50".parse().unwrap();
        assert_eq!(s, Session::default());
        let open = LocalTime::from_ymd_hms(2019, 1, 2, 9, 0, 0).unwrap();
        let close = LocalTime::from_ymd_hms(2019, 1, 2, 16, 50, 0).unwrap();
        assert!(s.contains(open));
        assert!(!s.contains(close));
        assert!(!s.contains(close.plus_ns(1)));
        assert!(s.contains(close.plus_ns(-1)));
        assert!("16:50-09:00".parse::<Session>().is_err());
    }
}
