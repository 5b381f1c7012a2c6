//! Week and quarter identifiers used throughout the pipeline.
//!
//! Snapshots arrive weekly; indicators aggregate to quarters. Weeks follow
//! the ISO 8601 year-week convention, so a week id is stable regardless of
//! which weekday an event lands on.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

/// An ISO year-week, e.g. `2016-W01`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Week {
    pub year: i32,
    pub week: u32,
}

impl Week {
    pub fn new(year: i32, week: u32) -> Result<Self, TimeError> {
        // ISO weeks run 1..=52 or 53 depending on the year.
        if week == 0 || NaiveDate::from_isoywd_opt(year, week, Weekday::Mon).is_none() {
            return Err(TimeError::InvalidWeek { year, week });
        }
        Ok(Week { year, week })
    }

    pub fn from_date(date: NaiveDate) -> Self {
        let iso = date.iso_week();
        Week { year: iso.year(), week: iso.week() }
    }

    /// Monday of this week. Mid-week events are dated to this day.
    pub fn monday(&self) -> NaiveDate {
        NaiveDate::from_isoywd_opt(self.year, self.week, Weekday::Mon)
            .expect("validated on construction")
    }

    pub fn next(&self) -> Week {
        Week::from_date(self.monday() + chrono::Duration::days(7))
    }

    pub fn plus_weeks(&self, n: u32) -> Week {
        Week::from_date(self.monday() + chrono::Duration::days(7 * i64::from(n)))
    }

    pub fn quarter(&self) -> Quarter {
        Quarter::from_date(self.monday())
    }
}

impl fmt::Display for Week {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-W{:02}", self.year, self.week)
    }
}

impl FromStr for Week {
    type Err = TimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (year, week) = s
            .split_once("-W")
            .ok_or_else(|| TimeError::WeekSyntax(s.to_string()))?;
        let year: i32 = year.parse().map_err(|_| TimeError::WeekSyntax(s.to_string()))?;
        let week: u32 = week.parse().map_err(|_| TimeError::WeekSyntax(s.to_string()))?;
        Week::new(year, week)
    }
}

impl TryFrom<String> for Week {
    type Error = TimeError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Week> for String {
    fn from(w: Week) -> String {
        w.to_string()
    }
}

/// A calendar quarter, e.g. `2016-Q3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Quarter {
    pub year: i32,
    pub quarter: u32,
}

impl Quarter {
    pub fn from_date(date: NaiveDate) -> Self {
        Quarter { year: date.year(), quarter: (date.month0() / 3) + 1 }
    }

    pub fn prev(&self) -> Quarter {
        if self.quarter == 1 {
            Quarter { year: self.year - 1, quarter: 4 }
        } else {
            Quarter { year: self.year, quarter: self.quarter - 1 }
        }
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-Q{}", self.year, self.quarter)
    }
}

impl FromStr for Quarter {
    type Err = TimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (year, q) = s
            .split_once("-Q")
            .ok_or_else(|| TimeError::QuarterSyntax(s.to_string()))?;
        let year: i32 = year.parse().map_err(|_| TimeError::QuarterSyntax(s.to_string()))?;
        let quarter: u32 = q.parse().map_err(|_| TimeError::QuarterSyntax(s.to_string()))?;
        if !(1..=4).contains(&quarter) {
            return Err(TimeError::QuarterSyntax(s.to_string()));
        }
        Ok(Quarter { year, quarter })
    }
}

impl TryFrom<String> for Quarter {
    type Error = TimeError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Quarter> for String {
    fn from(q: Quarter) -> String {
        q.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TimeError {
    #[error("invalid ISO week {year}-W{week:02}")]
    InvalidWeek { year: i32, week: u32 },
    #[error("cannot parse week id {0:?} (expected e.g. 2016-W01)")]
    WeekSyntax(String),
    #[error("cannot parse quarter id {0:?} (expected e.g. 2016-Q1)")]
    QuarterSyntax(String),
}
