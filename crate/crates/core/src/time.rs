//! Timestamps, aggregation bins, and the study calendar.
//!
//! Everything upstream of the statistics works in UTC milliseconds. The
//! before/transition/after split and the work/rest-hours split are defined on
//! the calendar in *local* time (a fixed UTC offset), because both follow
//! human schedules rather than the capture clock.

use chrono::{DateTime, Datelike, NaiveDate, SecondsFormat, TimeZone, Timelike, Utc, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MS_PER_HOUR: i64 = 3_600_000;
pub const MS_PER_DAY: i64 = 86_400_000;

/// UTC instant with millisecond precision.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub fn millis(self) -> i64 {
        self.0
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Timestamp(dt.timestamp_millis())
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        Utc.timestamp_millis_opt(self.0).single().expect("timestamp in range")
    }

    /// Parses an ISO-8601 / RFC 3339 UTC timestamp, e.g. `2020-02-24T10:20:00Z`.
    pub fn parse(s: &str) -> Result<Self> {
        let dt = DateTime::parse_from_rfc3339(s)
            .map_err(|e| Error::invalid(format!("bad timestamp {s:?}: {e}")))?;
        Ok(Timestamp(dt.with_timezone(&Utc).timestamp_millis()))
    }

    pub fn to_rfc3339(self) -> String {
        self.to_datetime().to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    /// Local civil time under a fixed hour offset.
    pub fn local(self, offset_hours: i32) -> DateTime<Utc> {
        Utc.timestamp_millis_opt(self.0 + i64::from(offset_hours) * MS_PER_HOUR)
            .single()
            .expect("timestamp in range")
    }
}

impl std::fmt::Display for Timestamp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.to_rfc3339())
    }
}

/// Supported aggregation grids. Bins of one width tile the timeline without
/// overlap, aligned to the width boundary in UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinWidth {
    FiveMin,
    Hour,
    Day,
}

impl BinWidth {
    pub fn millis(self) -> i64 {
        match self {
            BinWidth::FiveMin => 300_000,
            BinWidth::Hour => MS_PER_HOUR,
            BinWidth::Day => MS_PER_DAY,
        }
    }

    pub fn index_of(self, ts: Timestamp) -> i64 {
        ts.0.div_euclid(self.millis())
    }

    pub fn bin(self, index: i64) -> TimeBin {
        TimeBin { index, start: Timestamp(index * self.millis()), width: self }
    }

    pub fn bin_of(self, ts: Timestamp) -> TimeBin {
        self.bin(self.index_of(ts))
    }
}

/// One cell of an aggregation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeBin {
    pub index: i64,
    pub start: Timestamp,
    pub width: BinWidth,
}

impl TimeBin {
    pub fn end(&self) -> Timestamp {
        Timestamp(self.start.0 + self.width.millis())
    }
}

/// Closed interval of local calendar dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateInterval {
    pub first: NaiveDate,
    pub last: NaiveDate,
}

impl DateInterval {
    pub fn new(first: NaiveDate, last: NaiveDate) -> Self {
        DateInterval { first, last }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.first <= d && d <= self.last
    }

    pub fn days(&self) -> i64 {
        (self.last - self.first).num_days() + 1
    }

    pub fn iter(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.first.iter_days().take_while(move |d| *d <= self.last)
    }
}

/// Weekday business-hours predicate, local time. `start_hour..end_hour` is
/// half-open, so the default 8..17 covers 08:00:00 through 16:59:59.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkHours {
    pub weekdays_only: bool,
    pub start_hour: u32,
    pub end_hour: u32,
}

impl Default for WorkHours {
    fn default() -> Self {
        WorkHours { weekdays_only: true, start_hour: 8, end_hour: 17 }
    }
}

impl WorkHours {
    pub fn matches(&self, weekday: Weekday, hour: u32) -> bool {
        let workday = !self.weekdays_only
            || !matches!(weekday, Weekday::Sat | Weekday::Sun);
        workday && hour >= self.start_hour && hour < self.end_hour
    }
}

/// Study period of a timestamp relative to the calendar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Before,
    Transition,
    After,
    Outside,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoursClass {
    Work,
    Rest,
}

/// Before/transition/after intervals plus the work-hours rule. The intervals
/// must be disjoint and ordered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyCalendar {
    pub before: DateInterval,
    pub transition: DateInterval,
    pub after: DateInterval,
    pub work_hours: WorkHours,
    pub timezone_offset_hours: i32,
}

impl Default for StudyCalendar {
    fn default() -> Self {
        // The default study window: observation Feb 24 - May 21 2020 with the
        // mid-March transition, US Mountain time.
        let d = |y, m, dd| NaiveDate::from_ymd_opt(y, m, dd).unwrap();
        StudyCalendar {
            before: DateInterval::new(d(2020, 2, 24), d(2020, 3, 13)),
            transition: DateInterval::new(d(2020, 3, 14), d(2020, 3, 30)),
            after: DateInterval::new(d(2020, 3, 31), d(2020, 5, 21)),
            work_hours: WorkHours::default(),
            timezone_offset_hours: -7,
        }
    }
}

impl StudyCalendar {
    pub fn validate(&self) -> Result<()> {
        if self.before.first > self.before.last
            || self.transition.first > self.transition.last
            || self.after.first > self.after.last
        {
            return Err(Error::invalid("calendar interval with first > last"));
        }
        if self.before.last >= self.transition.first || self.transition.last >= self.after.first {
            return Err(Error::invalid(
                "calendar intervals must be disjoint and ordered before < transition < after",
            ));
        }
        if self.work_hours.start_hour >= self.work_hours.end_hour
            || self.work_hours.end_hour > 24
        {
            return Err(Error::invalid("work hours must satisfy start < end <= 24"));
        }
        Ok(())
    }

    pub fn local_date(&self, ts: Timestamp) -> NaiveDate {
        ts.local(self.timezone_offset_hours).date_naive()
    }

    pub fn period_of_date(&self, d: NaiveDate) -> Period {
        if self.before.contains(d) {
            Period::Before
        } else if self.transition.contains(d) {
            Period::Transition
        } else if self.after.contains(d) {
            Period::After
        } else {
            Period::Outside
        }
    }

    /// Classifies a timestamp into its (period, work/rest) cell.
    pub fn segment(&self, ts: Timestamp) -> (Period, HoursClass) {
        let local = ts.local(self.timezone_offset_hours);
        let period = self.period_of_date(local.date_naive());
        let hours = if self.work_hours.matches(local.weekday(), local.hour()) {
            HoursClass::Work
        } else {
            HoursClass::Rest
        };
        (period, hours)
    }

    /// First day of observation (start of `before`).
    pub fn first_date(&self) -> NaiveDate {
        self.before.first
    }

    /// Last day of observation (end of `after`).
    pub fn last_date(&self) -> NaiveDate {
        self.after.last
    }

    pub fn period_interval(&self, p: Period) -> Option<DateInterval> {
        match p {
            Period::Before => Some(self.before),
            Period::Transition => Some(self.transition),
            Period::After => Some(self.after),
            Period::Outside => None,
        }
    }
}
