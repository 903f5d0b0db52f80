use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Timelike};

use crate::error::{Error, Result};

/// A calendar feature derived from a UTC timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContextKind {
    Month,
    DayOfMonth,
    DayOfWeek,
    Hour,
}

impl ContextKind {
    pub const ALL: [ContextKind; 4] = [Self::Month, Self::DayOfMonth, Self::DayOfWeek, Self::Hour];

    pub fn name(self) -> &'static str {
        match self {
            Self::Month => "month",
            Self::DayOfMonth => "day_of_month",
            Self::DayOfWeek => "day_of_week",
            Self::Hour => "hour",
        }
    }

    /// Number of distinct values; also the period of the cyclic encoding.
    pub fn cardinality(self) -> usize {
        match self {
            Self::Month => 12,
            Self::DayOfMonth => 31,
            Self::DayOfWeek => 7,
            Self::Hour => 24,
        }
    }

    /// 0-based value for a UTC timestamp. Monday is day 0 of the week.
    pub fn value(self, timestamp: i64) -> usize {
        let dt = DateTime::from_timestamp(timestamp, 0).expect("timestamp within chrono range");
        (match self {
            Self::Month => dt.month0(),
            Self::DayOfMonth => dt.day0(),
            Self::DayOfWeek => dt.weekday().num_days_from_monday(),
            Self::Hour => dt.hour(),
        }) as usize
    }
}

impl fmt::Display for ContextKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ContextKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(vec![format!("unknown context type {s:?}")]))
    }
}

/// One context tuple: a 0-based value per schema entry.
pub type ContextTuple = Vec<u16>;

/// Ordered list of context types attached to every interaction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContextSchema {
    kinds: Vec<ContextKind>,
}

impl ContextSchema {
    pub fn new(kinds: Vec<ContextKind>) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::Config(vec![
                "context schema needs at least one type".into(),
            ]));
        }
        for (i, k) in kinds.iter().enumerate() {
            if kinds[..i].contains(k) {
                return Err(Error::Config(vec![format!(
                    "context type {k} listed twice"
                )]));
            }
        }
        Ok(Self { kinds })
    }

    pub fn kinds(&self) -> &[ContextKind] {
        &self.kinds
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.kinds.iter().map(|k| k.cardinality()).collect()
    }

    pub fn position(&self, kind: ContextKind) -> Option<usize> {
        self.kinds.iter().position(|&k| k == kind)
    }

    /// The tuple used at padded positions.
    pub fn padding(&self) -> ContextTuple {
        vec![0; self.kinds.len()]
    }

    pub fn derive(&self, timestamp: i64) -> ContextTuple {
        derive_context(timestamp, self)
    }
}

impl Default for ContextSchema {
    fn default() -> Self {
        Self {
            kinds: ContextKind::ALL.to_vec(),
        }
    }
}

impl fmt::Display for ContextSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.kinds.iter().map(|k| k.name()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for ContextSchema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kinds = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        Self::new(kinds)
    }
}

/// Calendar context of a UTC timestamp under `schema`.
pub fn derive_context(timestamp: i64, schema: &ContextSchema) -> ContextTuple {
    schema
        .kinds
        .iter()
        .map(|k| k.value(timestamp) as u16)
        .collect()
}
