use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Categorical rendering of a confidence value. Lower bounds are inclusive:
/// 0.8, 0.6 and 0.4 belong to the band above them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceBand {
    Unmatched,
    Low,
    Medium,
    High,
}

impl ConfidenceBand {
    pub const HIGH_FLOOR: f64 = 0.8;
    pub const MEDIUM_FLOOR: f64 = 0.6;
    pub const LOW_FLOOR: f64 = 0.4;

    pub fn as_str(self) -> &'static str {
        match self {
            ConfidenceBand::High => "high",
            ConfidenceBand::Medium => "medium",
            ConfidenceBand::Low => "low",
            ConfidenceBand::Unmatched => "unmatched",
        }
    }

    /// Bands shown without an explicit filter; `unmatched` is kept in
    /// storage but hidden.
    pub fn visible_by_default(self) -> bool {
        self != ConfidenceBand::Unmatched
    }
}

impl std::str::FromStr for ConfidenceBand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "high" => Ok(ConfidenceBand::High),
            "medium" => Ok(ConfidenceBand::Medium),
            "low" => Ok(ConfidenceBand::Low),
            "unmatched" => Ok(ConfidenceBand::Unmatched),
            other => Err(Error::InvalidParams(format!(
                "unknown confidence band `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for ConfidenceBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn band_of(confidence: f64) -> Result<ConfidenceBand> {
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::InvalidParams(format!(
            "confidence {confidence} outside [0, 1]"
        )));
    }
    Ok(if confidence >= ConfidenceBand::HIGH_FLOOR {
        ConfidenceBand::High
    } else if confidence >= ConfidenceBand::MEDIUM_FLOOR {
        ConfidenceBand::Medium
    } else if confidence >= ConfidenceBand::LOW_FLOOR {
        ConfidenceBand::Low
    } else {
        ConfidenceBand::Unmatched
    })
}
