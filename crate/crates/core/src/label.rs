use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Age {
    Adult,
    Juvenile,
}

/// Sex × age class. The discriminant is the class index used by the
/// network's logits and by confusion matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stereotype {
    AM = 0,
    JM = 1,
    AF = 2,
    JF = 3,
}

impl Stereotype {
    pub const ALL: [Stereotype; NUM_CLASSES] = [Stereotype::AM, Stereotype::JM, Stereotype::AF, Stereotype::JF];

    pub fn new(sex: Sex, age: Age) -> Self {
        match (sex, age) {
            (Sex::M, Age::Adult) => Stereotype::AM,
            (Sex::M, Age::Juvenile) => Stereotype::JM,
            (Sex::F, Age::Adult) => Stereotype::AF,
            (Sex::F, Age::Juvenile) => Stereotype::JF,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self, Error> {
        Self::ALL.get(index).copied().ok_or(Error::Label(index))
    }

    pub fn sex(self) -> Sex {
        match self {
            Stereotype::AM | Stereotype::JM => Sex::M,
            Stereotype::AF | Stereotype::JF => Sex::F,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Stereotype::AM => "AM",
            Stereotype::JM => "JM",
            Stereotype::AF => "AF",
            Stereotype::JF => "JF",
        }
    }
}

impl fmt::Display for Age {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Age::Adult => "adult",
            Age::Juvenile => "juvenile",
        })
    }
}

impl fmt::Display for Stereotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Stereotype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|c| c.code() == s)
            .ok_or_else(|| Error::Config(format!("unknown class `{s}`")))
    }
}
