use std::fmt;

use chrono::{DateTime, Utc};

/// UTC instant with nanosecond precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const fn from_nanos(nanos: i64) -> Self {
        Timestamp(nanos)
    }

    pub const fn nanos(self) -> i64 {
        self.0
    }

    pub fn from_secs(secs: i64) -> Self {
        Timestamp(secs * 1_000_000_000)
    }

    pub fn plus_nanos(self, n: i64) -> Self {
        Timestamp(self.0.saturating_add(n))
    }

    /// Current wall-clock time.
    pub fn now() -> Self {
        let d = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap_or_default();
        Timestamp(d.as_nanos() as i64)
    }

    /// Accepts any RFC 3339 offset and normalizes to UTC.
    pub fn parse_rfc3339(s: &str) -> Option<Self> {
        let dt = DateTime::parse_from_rfc3339(s).ok()?;
        dt.with_timezone(&Utc).timestamp_nanos_opt().map(Timestamp)
    }
}

impl fmt::Display for Timestamp {
    /// RFC 3339 in UTC, fractional seconds trimmed of trailing zeros.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let secs = self.0.div_euclid(1_000_000_000);
        let sub = self.0.rem_euclid(1_000_000_000) as u32;
        let dt = DateTime::<Utc>::from_timestamp(secs, sub).ok_or(fmt::Error)?;
        write!(f, "{}", dt.format("%Y-%m-%dT%H:%M:%S"))?;
        if sub != 0 {
            let frac = format!("{sub:09}");
            write!(f, ".{}", frac.trim_end_matches('0'))?;
        }
        f.write_str("Z")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_trimmed_fraction() {
        let t = Timestamp::parse_rfc3339("2024-03-01T05:00:00.120Z").unwrap();
        assert_eq!(t.to_string(), "2024-03-01T05:00:00.12Z");
        let t = Timestamp::parse_rfc3339("2024-03-01T05:00:00Z").unwrap();
        assert_eq!(t.to_string(), "2024-03-01T05:00:00Z");
        let t = t.plus_nanos(1);
        assert_eq!(t.to_string(), "2024-03-01T05:00:00.000000001Z");
    }

    #[test]
    fn offsets_normalize_to_utc() {
        let a = Timestamp::parse_rfc3339("2024-03-01T06:00:00+01:00").unwrap();
        let b = Timestamp::parse_rfc3339("2024-03-01T05:00:00Z").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_string(), "2024-03-01T05:00:00Z");
    }

    #[test]
    fn pre_epoch_round_trips() {
        let t = Timestamp::from_nanos(-1);
        assert_eq!(t.to_string(), "1969-12-31T23:59:59.999999999Z");
        assert_eq!(Timestamp::parse_rfc3339(&t.to_string()), Some(t));
    }
}
