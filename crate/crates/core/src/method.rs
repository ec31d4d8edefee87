//! Method catalog: the baseline prompt plus the seven historical heuristics,
//! and the three prompt styles every method can be rendered in.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the seven historical context heuristics mined from the blame commit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HeuristicKind {
    #[serde(rename = "CFN-modified")]
    CfnModified,
    #[serde(rename = "CFN-all")]
    CfnAll,
    #[serde(rename = "FN-modified")]
    FnModified,
    #[serde(rename = "FN-all")]
    FnAll,
    #[serde(rename = "FLN-all")]
    FlnAll,
    #[serde(rename = "FN-pair")]
    FnPair,
    #[serde(rename = "FL-diff")]
    FlDiff,
}

impl HeuristicKind {
    pub const ALL: [HeuristicKind; 7] = [
        HeuristicKind::CfnModified,
        HeuristicKind::CfnAll,
        HeuristicKind::FnModified,
        HeuristicKind::FnAll,
        HeuristicKind::FlnAll,
        HeuristicKind::FnPair,
        HeuristicKind::FlDiff,
    ];

    pub fn tag(self) -> &'static str {
        Method::from(self).tag()
    }

    /// True for the five kinds whose payload is a list of names or paths.
    pub fn carries_names(self) -> bool {
        !matches!(self, HeuristicKind::FnPair | HeuristicKind::FlDiff)
    }
}

impl fmt::Display for HeuristicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// A prompt configuration: the baseline or the baseline augmented by one heuristic.
///
/// The declaration order is the fixed catalog order used for reporting and
/// for tie-breaking when methods are sorted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    Baseline,
    #[serde(rename = "CFN-modified")]
    CfnModified,
    #[serde(rename = "CFN-all")]
    CfnAll,
    #[serde(rename = "FN-modified")]
    FnModified,
    #[serde(rename = "FN-all")]
    FnAll,
    #[serde(rename = "FLN-all")]
    FlnAll,
    #[serde(rename = "FN-pair")]
    FnPair,
    #[serde(rename = "FL-diff")]
    FlDiff,
}

impl Method {
    pub const CATALOG: [Method; 8] = [
        Method::Baseline,
        Method::CfnModified,
        Method::CfnAll,
        Method::FnModified,
        Method::FnAll,
        Method::FlnAll,
        Method::FnPair,
        Method::FlDiff,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Baseline => "Baseline",
            Method::CfnModified => "CFN-modified",
            Method::CfnAll => "CFN-all",
            Method::FnModified => "FN-modified",
            Method::FnAll => "FN-all",
            Method::FlnAll => "FLN-all",
            Method::FnPair => "FN-pair",
            Method::FlDiff => "FL-diff",
        }
    }

    /// Position in the catalog order.
    pub fn catalog_index(self) -> usize {
        Method::CATALOG.iter().position(|m| *m == self).unwrap()
    }

    pub fn heuristic(self) -> Option<HeuristicKind> {
        match self {
            Method::Baseline => None,
            Method::CfnModified => Some(HeuristicKind::CfnModified),
            Method::CfnAll => Some(HeuristicKind::CfnAll),
            Method::FnModified => Some(HeuristicKind::FnModified),
            Method::FnAll => Some(HeuristicKind::FnAll),
            Method::FlnAll => Some(HeuristicKind::FlnAll),
            Method::FnPair => Some(HeuristicKind::FnPair),
            Method::FlDiff => Some(HeuristicKind::FlDiff),
        }
    }
}

impl From<HeuristicKind> for Method {
    fn from(kind: HeuristicKind) -> Self {
        match kind {
            HeuristicKind::CfnModified => Method::CfnModified,
            HeuristicKind::CfnAll => Method::CfnAll,
            HeuristicKind::FnModified => Method::FnModified,
            HeuristicKind::FnAll => Method::FnAll,
            HeuristicKind::FlnAll => Method::FlnAll,
            HeuristicKind::FnPair => Method::FnPair,
            HeuristicKind::FlDiff => Method::FlDiff,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {what} `{value}`")]
pub struct UnknownName {
    pub(crate) what: &'static str,
    pub(crate) value: String,
}

impl FromStr for Method {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::CATALOG
            .iter()
            .copied()
            .find(|m| m.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownName {
                what: "method",
                value: s.to_string(),
            })
    }
}

/// How the buggy code is presented to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PromptStyle {
    Instruction,
    InstructionLabel,
    InstructionMask,
}

impl PromptStyle {
    pub const ALL: [PromptStyle; 3] = [
        PromptStyle::Instruction,
        PromptStyle::InstructionLabel,
        PromptStyle::InstructionMask,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            PromptStyle::Instruction => "Instruction",
            PromptStyle::InstructionLabel => "InstructionLabel",
            PromptStyle::InstructionMask => "InstructionMask",
        }
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for PromptStyle {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptStyle::ALL
            .iter()
            .copied()
            .find(|p| p.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownName {
                what: "prompt style",
                value: s.to_string(),
            })
    }
}
