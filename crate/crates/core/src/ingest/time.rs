use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::IngestError;

/// Month-resolution launch timestamp (`YYYY-MM`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct YearMonth {
    pub year: i32,
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Result<Self, IngestError> {
        if !(1..=12).contains(&month) {
            return Err(IngestError::InvalidLaunchTime(format!("{year:04}-{month:02}")));
        }
        Ok(Self { year, month })
    }
}

impl FromStr for YearMonth {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IngestError::InvalidLaunchTime(s.to_string());
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.is_empty() || m.len() > 2 {
            return Err(bad());
        }
        let year: i32 = y.parse().map_err(|_| bad())?;
        let month: u8 = m.parse().map_err(|_| bad())?;
        YearMonth::new(year, month).map_err(|_| bad())
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// Calendar quarter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Season {
    pub year: i32,
    pub quarter: u8,
}

impl Season {
    pub fn new(year: i32, quarter: u8) -> Result<Self, IngestError> {
        if !(1..=4).contains(&quarter) {
            return Err(IngestError::InvalidSeason(format!("{year}Q{quarter}")));
        }
        Ok(Self { year, quarter })
    }

    pub fn next(self) -> Season {
        if self.quarter == 4 {
            Season {
                year: self.year + 1,
                quarter: 1,
            }
        } else {
            Season {
                year: self.year,
                quarter: self.quarter + 1,
            }
        }
    }

    /// Inclusive contiguous run of seasons from `lo` to `hi`; empty if `lo > hi`.
    pub fn range(lo: Season, hi: Season) -> impl Iterator<Item = Season> {
        std::iter::successors(Some(lo), |s| Some(s.next())).take_while(move |s| *s <= hi)
    }

    /// Quarters elapsed since year 0, for spacing on a timeline.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }
}

impl FromStr for Season {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IngestError::InvalidSeason(s.to_string());
        let t = s.trim();
        let (y, q) = t.split_once(['Q', 'q']).ok_or_else(bad)?;
        if y.len() != 4 || q.len() != 1 {
            return Err(bad());
        }
        let year = y.parse().map_err(|_| bad())?;
        let quarter = q.parse().map_err(|_| bad())?;
        Season::new(year, quarter).map_err(|_| bad())
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}Q{}", self.year, self.quarter)
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(YearMonth);
string_serde!(Season);

pub fn to_season(launch: YearMonth) -> Season {
    Season {
        year: launch.year,
        quarter: (launch.month + 2) / 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quarter_formula() {
        let s = to_season("2016-10".parse().unwrap());
        assert_eq!(s, Season::new(2016, 4).unwrap());
        assert_eq!(s.to_string(), "2016Q4");
        assert_eq!(to_season("2016-01".parse().unwrap()).quarter, 1);
        assert_eq!(to_season("2016-03".parse().unwrap()).quarter, 1);
        assert_eq!(to_season("2016-04".parse().unwrap()).quarter, 2);
        assert_eq!(to_season("2016-12".parse().unwrap()).quarter, 4);
    }

    #[test]
    fn bad_months_rejected() {
        assert!("2016-13".parse::<YearMonth>().is_err());
        assert!("2016-00".parse::<YearMonth>().is_err());
        assert!("2016".parse::<YearMonth>().is_err());
        assert!("16-01".parse::<YearMonth>().is_err());
        assert!("2016Q5".parse::<Season>().is_err());
        assert!("2016-Q1".parse::<Season>().is_err());
    }

    #[test]
    fn season_range_is_contiguous() {
        let lo: Season = "2015Q3".parse().unwrap();
        let hi: Season = "2016Q2".parse().unwrap();
        let r: Vec<String> = Season::range(lo, hi).map(|s| s.to_string()).collect();
        assert_eq!(r, ["2015Q3", "2015Q4", "2016Q1", "2016Q2"]);
        assert_eq!(Season::range(hi, lo).count(), 0);
    }

    proptest! {
        #[test]
        fn to_season_is_monotone(y1 in 2000i32..2030, m1 in 1u8..=12, y2 in 2000i32..2030, m2 in 1u8..=12) {
            let a = YearMonth::new(y1, m1).unwrap();
            let b = YearMonth::new(y2, m2).unwrap();
            if a <= b {
                prop_assert!(to_season(a) <= to_season(b));
            }
        }
    }
}
