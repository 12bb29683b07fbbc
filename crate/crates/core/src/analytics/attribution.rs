use serde::{Deserialize, Serialize};

use super::episodes::Episode;
use super::hypothesis::{chi_square_test, TestResult};
use super::Result;
use crate::audio::PerturbationPattern;

/// Which patterns were playing when attention came back, against how often each played.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternAttribution {
    pub patterns: [PerturbationPattern; 4],
    /// Last pattern before each refocus.
    pub last_before_refocus: [u64; 4],
    /// Every "on" phase.
    pub total: [u64; 4],
    /// Pearson chi-square on the 2×4 table of the two rows, with Cramér's V.
    pub test: TestResult,
}

pub fn pattern_attribution(episodes: &[Episode]) -> Result<PatternAttribution> {
    let mut last = [0u64; 4];
    let mut total = [0u64; 4];
    for e in episodes {
        for p in &e.patterns {
            total[p.index()] += 1;
        }
        if let (false, Some(p)) = (e.open, e.last_pattern) {
            last[p.index()] += 1;
        }
    }
    attribution_from_counts(last, total)
}

pub fn attribution_from_counts(last: [u64; 4], total: [u64; 4]) -> Result<PatternAttribution> {
    let table = vec![
        last.iter().map(|&v| v as f64).collect(),
        total.iter().map(|&v| v as f64).collect(),
    ];
    Ok(PatternAttribution {
        patterns: PerturbationPattern::ALL,
        last_before_refocus: last,
        total,
        test: chi_square_test(&table)?,
    })
}
