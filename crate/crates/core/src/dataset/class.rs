use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The five morphological classes, with fixed indices in declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    /// Tortuous septate hyaline hyphae.
    #[serde(rename = "TSH")]
    Tsh,
    /// Beaded arthroconidial septate hyaline hyphae.
    #[serde(rename = "BASH")]
    Bash,
    /// Groups or mosaics of arthroconidia.
    #[serde(rename = "GMA")]
    Gma,
    /// Septate hyaline hyphae with chlamydioconidia.
    #[serde(rename = "SHC")]
    Shc,
    /// Broad brown hyphae.
    #[serde(rename = "BBH")]
    Bbh,
}

pub const NUM_CLASSES: usize = 5;

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::Tsh,
        ClassLabel::Bash,
        ClassLabel::Gma,
        ClassLabel::Shc,
        ClassLabel::Bbh,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            ClassLabel::Tsh => "TSH",
            ClassLabel::Bash => "BASH",
            ClassLabel::Gma => "GMA",
            ClassLabel::Shc => "SHC",
            ClassLabel::Bbh => "BBH",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown class label {s:?}"))
    }
}

/// Raw image counts per class in the labelled source collection.
pub const REFERENCE_RAW_COUNTS: [(ClassLabel, usize); NUM_CLASSES] = [
    (ClassLabel::Tsh, 227),
    (ClassLabel::Bash, 117),
    (ClassLabel::Gma, 36),
    (ClassLabel::Shc, 144),
    (ClassLabel::Bbh, 75),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_are_stable() {
        for (i, c) in ClassLabel::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(ClassLabel::from_index(i), Some(*c));
            assert_eq!(c.code().parse::<ClassLabel>().unwrap(), *c);
        }
        assert_eq!(ClassLabel::from_index(5), None);
        assert!("XYZ".parse::<ClassLabel>().is_err());
    }

    #[test]
    fn reference_counts_total() {
        let total: usize = REFERENCE_RAW_COUNTS.iter().map(|(_, n)| n).sum();
        assert_eq!(total, 599);
    }
}
