//! Lead vocabulary of the standard 12-lead ECG and the reduced 3-lead input set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lead {
    I,
    II,
    III,
    #[serde(rename = "aVR")]
    AVR,
    #[serde(rename = "aVL")]
    AVL,
    #[serde(rename = "aVF")]
    AVF,
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
}

impl Lead {
    pub fn name(self) -> &'static str {
        match self {
            Lead::I => "I",
            Lead::II => "II",
            Lead::III => "III",
            Lead::AVR => "aVR",
            Lead::AVL => "aVL",
            Lead::AVF => "aVF",
            Lead::V1 => "V1",
            Lead::V2 => "V2",
            Lead::V3 => "V3",
            Lead::V4 => "V4",
            Lead::V5 => "V5",
            Lead::V6 => "V6",
        }
    }

    /// Row of this lead in a canonical 12-row signal matrix.
    pub fn row(self) -> usize {
        LeadSet::ALL_12
            .iter()
            .position(|&l| l == self)
            .expect("every lead is in ALL_12")
    }

    /// Row of this lead in the 9-row target matrix, if it is a target lead.
    pub fn target_row(self) -> Option<usize> {
        LeadSet::TARGET_9.iter().position(|&l| l == self)
    }
}

impl fmt::Display for Lead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Lead {
    type Err = String;

    /// Case-insensitive, surrounding quotes ignored (`aVR`, `AVR`, `'avr'`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().trim_matches(|c| c == '\'' || c == '"');
        LeadSet::ALL_12
            .iter()
            .copied()
            .find(|l| l.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| format!("unknown lead name {s:?}"))
    }
}

/// The fixed lead partitions used throughout the crate.
pub struct LeadSet;

impl LeadSet {
    pub const ALL_12: [Lead; 12] = [
        Lead::I,
        Lead::II,
        Lead::III,
        Lead::AVR,
        Lead::AVL,
        Lead::AVF,
        Lead::V1,
        Lead::V2,
        Lead::V3,
        Lead::V4,
        Lead::V5,
        Lead::V6,
    ];

    /// Leads recorded by the reduced system.
    pub const INPUT_3: [Lead; 3] = [Lead::I, Lead::II, Lead::V2];

    /// Leads to reconstruct, in reporting order.
    pub const TARGET_9: [Lead; 9] = [
        Lead::III,
        Lead::AVR,
        Lead::AVL,
        Lead::AVF,
        Lead::V1,
        Lead::V3,
        Lead::V4,
        Lead::V5,
        Lead::V6,
    ];

    pub fn input_rows() -> [usize; 3] {
        Self::INPUT_3.map(Lead::row)
    }

    pub fn target_rows() -> [usize; 9] {
        Self::TARGET_9.map(Lead::row)
    }
}
