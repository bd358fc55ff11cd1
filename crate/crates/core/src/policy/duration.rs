//! ISO-8601 durations restricted to days, hours, minutes and seconds.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid duration {text:?}: {reason}")]
pub struct DurationError {
    pub text: String,
    pub reason: &'static str,
}

/// A duration that remembers its designators, so `PT60S` prints back as
/// `PT60S` and not `PT1M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct IsoDuration {
    pub days: Option<u64>,
    pub hours: Option<u64>,
    pub minutes: Option<u64>,
    pub seconds: Option<u64>,
}

impl IsoDuration {
    pub fn days(n: u64) -> Self {
        IsoDuration { days: Some(n), ..Default::default() }
    }

    pub fn seconds(n: u64) -> Self {
        IsoDuration { seconds: Some(n), ..Default::default() }
    }

    pub fn as_secs(&self) -> u64 {
        self.days.unwrap_or(0) * 86_400
            + self.hours.unwrap_or(0) * 3_600
            + self.minutes.unwrap_or(0) * 60
            + self.seconds.unwrap_or(0)
    }

    pub fn as_millis(&self) -> u64 {
        self.as_secs() * 1_000
    }

    pub fn to_std(&self) -> Duration {
        Duration::from_secs(self.as_secs())
    }

    pub fn is_zero(&self) -> bool {
        self.as_secs() == 0
    }
}

/// Parses `P[nD][T[nH][nM][nS]]` with non-negative integer components.
pub fn parse_duration(text: &str) -> Result<IsoDuration, DurationError> {
    let err = |reason| DurationError { text: text.to_string(), reason };
    let rest = text.strip_prefix('P').ok_or_else(|| err("must start with P"))?;
    if rest.is_empty() {
        return Err(err("no components"));
    }
    let (date, time) = match rest.split_once('T') {
        Some((d, t)) => {
            if t.is_empty() {
                return Err(err("T without time components"));
            }
            (d, Some(t))
        }
        None => (rest, None),
    };

    let mut out = IsoDuration::default();
    // date part: only D is supported
    for (n, unit) in components(date).map_err(err)? {
        match unit {
            'D' if out.days.is_none() => out.days = Some(n),
            'D' => return Err(err("repeated designator")),
            'Y' | 'M' | 'W' => return Err(err("years, months and weeks are not supported")),
            _ => return Err(err("unknown designator")),
        }
    }
    if let Some(time) = time {
        let mut last = 0;
        for (n, unit) in components(time).map_err(err)? {
            let rank = match unit {
                'H' => 1,
                'M' => 2,
                'S' => 3,
                _ => return Err(err("unknown designator")),
            };
            if rank <= last {
                return Err(err("designators out of order"));
            }
            last = rank;
            match unit {
                'H' => out.hours = Some(n),
                'M' => out.minutes = Some(n),
                _ => out.seconds = Some(n),
            }
        }
    }
    Ok(out)
}

fn components(s: &str) -> Result<Vec<(u64, char)>, &'static str> {
    let mut out = Vec::new();
    let mut digits = String::new();
    for ch in s.chars() {
        if ch.is_ascii_digit() {
            digits.push(ch);
        } else if ch.is_ascii_uppercase() {
            if digits.is_empty() {
                return Err("designator without a number");
            }
            let n = digits.parse().map_err(|_| "component too large")?;
            out.push((n, ch));
            digits.clear();
        } else if ch == '.' || ch == ',' {
            return Err("fractional components are not supported");
        } else {
            return Err("unexpected character");
        }
    }
    if !digits.is_empty() {
        return Err("number without a designator");
    }
    Ok(out)
}

impl fmt::Display for IsoDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("P")?;
        if let Some(d) = self.days {
            write!(f, "{d}D")?;
        }
        if self.hours.is_some() || self.minutes.is_some() || self.seconds.is_some() {
            f.write_str("T")?;
            if let Some(h) = self.hours {
                write!(f, "{h}H")?;
            }
            if let Some(m) = self.minutes {
                write!(f, "{m}M")?;
            }
            if let Some(s) = self.seconds {
                write!(f, "{s}S")?;
            }
        } else if self.days.is_none() {
            // an all-empty value still needs one component to be valid text
            f.write_str("T0S")?;
        }
        Ok(())
    }
}

impl FromStr for IsoDuration {
    type Err = DurationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_duration(s)
    }
}

impl Serialize for IsoDuration {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IsoDuration {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_duration(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn supported_forms() {
        assert_eq!(parse_duration("P1D").unwrap().as_secs(), 86_400);
        assert_eq!(parse_duration("PT60S").unwrap().as_secs(), 60);
        assert_eq!(parse_duration("P2DT3H4M5S").unwrap().as_secs(), 2 * 86_400 + 3 * 3_600 + 245);
        assert_eq!(parse_duration("PT1M").unwrap().as_secs(), 60);
    }

    #[test]
    fn canonical_text_round_trips() {
        for text in ["P1D", "PT60S", "PT1M", "P1DT12H", "PT0S", "P10DT1H2M3S"] {
            assert_eq!(parse_duration(text).unwrap().to_string(), text);
        }
    }

    #[test]
    fn rejections() {
        for bad in ["", "P", "PT", "1D", "P1Y", "P1M", "P2W", "P1.5D", "PT1S2M", "P1D1D", "PT5", "PTD", "p1d"] {
            assert!(parse_duration(bad).is_err(), "{bad}");
        }
    }
}
