use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Age stage: `A` (0–5), `B` (6–15), `C` (16–45), `D` (>45).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeStage {
    A,
    B,
    C,
    D,
}

impl AgeStage {
    pub const ALL: [AgeStage; 4] = [AgeStage::A, AgeStage::B, AgeStage::C, AgeStage::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<AgeStage> {
        AgeStage::ALL.get(i).copied()
    }

    pub fn one_hot(self) -> [f32; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }

    pub fn letter(self) -> char {
        ['A', 'B', 'C', 'D'][self.index()]
    }
}

impl FromStr for AgeStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(AgeStage::A),
            "B" | "b" => Ok(AgeStage::B),
            "C" | "c" => Ok(AgeStage::C),
            "D" | "d" => Ok(AgeStage::D),
            other => Err(Error::validation("age", format!("expected one of A, B, C, D, got {other:?}"))),
        }
    }
}

impl fmt::Display for AgeStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl Gender {
    /// Scalar encoding: M → 0, F → 1.
    pub fn encode(self) -> f32 {
        match self {
            Gender::M => 0.0,
            Gender::F => 1.0,
        }
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "M" | "m" => Ok(Gender::M),
            "F" | "f" => Ok(Gender::F),
            other => Err(Error::validation("gender", format!("expected M or F, got {other:?}"))),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::M => "M",
            Gender::F => "F",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeLabel {
    pub age: AgeStage,
    pub gender: Gender,
}

impl AttributeLabel {
    pub fn new(age: AgeStage, gender: Gender) -> Self {
        AttributeLabel { age, gender }
    }

    /// The 5-dim encoding: 4-dim one-hot age followed by the gender scalar.
    pub fn encode(&self) -> [f32; 5] {
        let a = self.age.one_hot();
        [a[0], a[1], a[2], a[3], self.gender.encode()]
    }
}
