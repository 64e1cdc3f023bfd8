use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Tactile afferent class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AfferentType {
    /// Slowly adapting; driven by stress and its first derivative.
    SA,
    /// Rapidly adapting; driven by changes of the first derivative.
    RA,
    /// Pacinian; driven by changes of the second derivative.
    PC,
}

impl AfferentType {
    pub const ALL: [AfferentType; 3] = [AfferentType::SA, AfferentType::RA, AfferentType::PC];

    pub fn as_str(self) -> &'static str {
        match self {
            AfferentType::SA => "SA",
            AfferentType::RA => "RA",
            AfferentType::PC => "PC",
        }
    }
}

impl fmt::Display for AfferentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AfferentType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SA" => Ok(AfferentType::SA),
            "RA" => Ok(AfferentType::RA),
            "PC" => Ok(AfferentType::PC),
            other => Err(Error::validation(
                "afferent",
                format!("unknown afferent type `{other}` (expected SA, RA or PC)"),
            )),
        }
    }
}

/// One value per afferent type.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerAfferent<T> {
    #[serde(rename = "SA")]
    pub sa: T,
    #[serde(rename = "RA")]
    pub ra: T,
    #[serde(rename = "PC")]
    pub pc: T,
}

impl<T> PerAfferent<T> {
    pub fn new(sa: T, ra: T, pc: T) -> Self {
        PerAfferent { sa, ra, pc }
    }

    pub fn from_fn(mut f: impl FnMut(AfferentType) -> T) -> Self {
        PerAfferent {
            sa: f(AfferentType::SA),
            ra: f(AfferentType::RA),
            pc: f(AfferentType::PC),
        }
    }

    pub fn get(&self, afferent: AfferentType) -> &T {
        match afferent {
            AfferentType::SA => &self.sa,
            AfferentType::RA => &self.ra,
            AfferentType::PC => &self.pc,
        }
    }

    pub fn get_mut(&mut self, afferent: AfferentType) -> &mut T {
        match afferent {
            AfferentType::SA => &mut self.sa,
            AfferentType::RA => &mut self.ra,
            AfferentType::PC => &mut self.pc,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (AfferentType, &T)> {
        AfferentType::ALL.into_iter().map(move |a| (a, self.get(a)))
    }

    pub fn map<U>(&self, mut f: impl FnMut(AfferentType, &T) -> U) -> PerAfferent<U> {
        PerAfferent::from_fn(|a| f(a, self.get(a)))
    }
}

impl<T> std::ops::Index<AfferentType> for PerAfferent<T> {
    type Output = T;

    fn index(&self, index: AfferentType) -> &T {
        self.get(index)
    }
}

impl<T> std::ops::IndexMut<AfferentType> for PerAfferent<T> {
    fn index_mut(&mut self, index: AfferentType) -> &mut T {
        self.get_mut(index)
    }
}
