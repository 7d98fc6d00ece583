//! Calendar feature extraction for 30-minute-interval timestamps.

use chrono::{Datelike, NaiveDateTime, Timelike};

/// Calendar features of one interval, used as embedding-table indices.
///
/// `hour` is the hour bucket containing the interval's end: an interval
/// starting on the half hour (e.g. 14:30) belongs to the next hour (15),
/// except the day's final interval (23:30), which stays in hour 23 so the
/// bucket never rolls into the following day. The remaining fields are taken
/// from the interval's start date.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalendarFeatures {
    /// 0..=23
    pub hour: u8,
    /// 1..=7, Monday = 1
    pub weekday: u8,
    /// 1..=31
    pub day: u8,
    /// 1..=12
    pub month: u8,
}

impl CalendarFeatures {
    /// Table indices in embedding order: (hour, weekday−1, day−1, month−1).
    pub fn indices(&self) -> [usize; 4] {
        [
            self.hour as usize,
            self.weekday as usize - 1,
            self.day as usize - 1,
            self.month as usize - 1,
        ]
    }
}

/// Extracts calendar features for the interval starting at `ts`.
pub fn calendar_features(ts: NaiveDateTime) -> CalendarFeatures {
    let start_hour = ts.hour() as u8;
    let hour = if ts.minute() == 0 {
        start_hour
    } else {
        (start_hour + 1).min(23)
    };
    CalendarFeatures {
        hour,
        weekday: ts.weekday().number_from_monday() as u8,
        day: ts.day() as u8,
        month: ts.month() as u8,
    }
}
