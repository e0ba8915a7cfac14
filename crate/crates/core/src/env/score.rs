use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A process score in `[0, 100]`, stored as an exact count of hundredths.
///
/// Scores are always rounded half-up to two decimals, so keeping them as
/// integers makes equality and ordering exact. On the wire they are plain
/// JSON numbers (`33.33`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Score(u32);

impl Score {
    pub const ZERO: Score = Score(0);
    pub const FULL: Score = Score(10_000);

    /// `100 * satisfied / total`, rounded half-up to two decimals.
    pub fn from_fraction(satisfied: usize, total: usize) -> Score {
        assert!(total > 0, "score over an empty subgoal list");
        assert!(satisfied <= total);
        let num = 10_000u64 * satisfied as u64;
        let total = total as u64;
        Score(((2 * num + total) / (2 * total)) as u32)
    }

    pub fn from_hundredths(h: u32) -> Score {
        Score(h.min(10_000))
    }

    pub fn hundredths(self) -> u32 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Parses a decimal score. Anything outside `[0, 100]` or not on the
    /// two-decimal grid (within float noise) is rejected.
    pub fn from_f64(v: f64) -> Option<Score> {
        if !v.is_finite() || !(0.0..=100.0).contains(&v) {
            return None;
        }
        let scaled = v * 100.0;
        let rounded = scaled.round();
        if (scaled - rounded).abs() > 1e-6 {
            return None;
        }
        Some(Score(rounded as u32))
    }

    pub fn is_full(self) -> bool {
        self == Score::FULL
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Score::from_f64(v).ok_or_else(|| serde::de::Error::custom(format!("invalid score {v}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessScore {
    pub value: Score,
    pub satisfied_subgoals: BTreeSet<usize>,
}
