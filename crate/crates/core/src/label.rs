use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Ground-truth or predicted class of a face presentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "attack")]
    Attack,
    #[serde(rename = "bona-fide")]
    BonaFide,
}

impl Label {
    /// Index of the head neuron for this class; also the BCE target.
    pub fn index(self) -> usize {
        match self {
            Label::Attack => 0,
            Label::BonaFide => 1,
        }
    }

    pub fn target(self) -> f64 {
        self.index() as f64
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Attack => "attack",
            Label::BonaFide => "bona-fide",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Attack => Label::BonaFide,
            Label::BonaFide => Label::Attack,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attack" => Ok(Label::Attack),
            "bona-fide" => Ok(Label::BonaFide),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}
