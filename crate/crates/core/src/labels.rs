use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The six interphase staining patterns, in their canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    Homogeneous,
    Speckled,
    Nucleolar,
    Centromere,
    NuclearMembrane,
    Golgi,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 6] = [
        ClassLabel::Homogeneous,
        ClassLabel::Speckled,
        ClassLabel::Nucleolar,
        ClassLabel::Centromere,
        ClassLabel::NuclearMembrane,
        ClassLabel::Golgi,
    ];

    pub const COUNT: usize = 6;

    /// Zero-based index (Homogeneous = 0). Reports print `index() + 1`.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn short(self) -> &'static str {
        match self {
            ClassLabel::Homogeneous => "H",
            ClassLabel::Speckled => "S",
            ClassLabel::Nucleolar => "N",
            ClassLabel::Centromere => "C",
            ClassLabel::NuclearMembrane => "NM",
            ClassLabel::Golgi => "G",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Homogeneous => "Homogeneous",
            ClassLabel::Speckled => "Speckled",
            ClassLabel::Nucleolar => "Nucleolar",
            ClassLabel::Centromere => "Centromere",
            ClassLabel::NuclearMembrane => "NuMem",
            ClassLabel::Golgi => "Golgi",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let label = match key.as_str() {
            "h" | "homogeneous" | "1" => ClassLabel::Homogeneous,
            "s" | "speckled" | "2" => ClassLabel::Speckled,
            "n" | "nucleolar" | "3" => ClassLabel::Nucleolar,
            "c" | "centromere" | "4" => ClassLabel::Centromere,
            "nm" | "numem" | "nuclearmembrane" | "5" => ClassLabel::NuclearMembrane,
            "g" | "golgi" | "6" => ClassLabel::Golgi,
            _ => return Err(Error::Input(format!("unknown class label {s:?}"))),
        };
        Ok(label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IntensityTag {
    Positive,
    Intermediate,
}

impl IntensityTag {
    pub fn as_str(self) -> &'static str {
        match self {
            IntensityTag::Positive => "positive",
            IntensityTag::Intermediate => "intermediate",
        }
    }
}

impl fmt::Display for IntensityTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IntensityTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "pos" => Ok(IntensityTag::Positive),
            "intermediate" | "int" => Ok(IntensityTag::Intermediate),
            _ => Err(Error::Input(format!("unknown intensity tag {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_round_trip() {
        for (i, c) in ClassLabel::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(ClassLabel::from_index(i), Some(*c));
            assert_eq!(c.short().parse::<ClassLabel>().unwrap(), *c);
            assert_eq!(c.name().parse::<ClassLabel>().unwrap(), *c);
        }
        assert_eq!("Nuclear Membrane".parse::<ClassLabel>().unwrap(), ClassLabel::NuclearMembrane);
        assert!("mitotic".parse::<ClassLabel>().is_err());
        assert_eq!("Intermediate".parse::<IntensityTag>().unwrap(), IntensityTag::Intermediate);
    }
}
