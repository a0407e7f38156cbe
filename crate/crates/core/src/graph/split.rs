use std::ops::Range;

use log::warn;

use super::store::{GraphError, TemporalGraph};

/// Fractions of the log assigned to training and validation; the rest is test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.70, validation_fraction: 0.15 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), GraphError> {
        let ok = |f: f64| f > 0.0 && f < 1.0;
        if !ok(self.train_fraction) || !ok(self.validation_fraction) {
            return Err(GraphError::InvalidSplit("fractions must lie in (0, 1)".into()));
        }
        if self.train_fraction + self.validation_fraction >= 1.0 {
            return Err(GraphError::InvalidSplit("train + validation must be below 1".into()));
        }
        Ok(())
    }
}

/// Contiguous ordinal ranges of a chronological split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

/// Boundaries for `n` interactions: each cut is `n · fraction` rounded to
/// the nearest integer.
pub fn split_bounds(n: usize, spec: &SplitSpec) -> Result<Split, GraphError> {
    spec.validate()?;
    let a = ((n as f64) * spec.train_fraction).round() as usize;
    let b = ((n as f64) * (spec.train_fraction + spec.validation_fraction)).round() as usize;
    let b = b.min(n);
    let split = Split { train: 0..a, validation: a..b, test: b..n };
    if split.train.is_empty() {
        return Err(GraphError::EmptySplit("train"));
    }
    if split.validation.is_empty() {
        return Err(GraphError::EmptySplit("validation"));
    }
    if split.test.is_empty() {
        return Err(GraphError::EmptySplit("test"));
    }
    Ok(split)
}

/// Splits the log chronologically by ordinal. Timestamp ties across a
/// boundary are allowed and reported as a warning.
pub fn chronological_split(g: &TemporalGraph, spec: &SplitSpec) -> Result<Split, GraphError> {
    if g.is_empty() {
        return Err(GraphError::EmptySplit("train"));
    }
    let split = split_bounds(g.len(), spec)?;
    let time = |o: usize| g.interaction(o).time;
    if time(split.train.end - 1) == time(split.validation.start) || time(split.validation.end - 1) == time(split.test.start)
    {
        warn!("split boundary falls inside a run of equal timestamps; splitting by ordinal");
    }
    Ok(split)
}
