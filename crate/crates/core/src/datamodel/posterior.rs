use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::NORMALIZATION_TOL;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorEntry {
    pub time: i64,
    pub tile: usize,
    pub prob: f64,
}

/// Sparse posterior location probabilities of one device.
///
/// Entries are sorted by `(time, tile)` and only nonzero probabilities are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorLocation {
    pub device_id: String,
    pub entries: Vec<PosteriorEntry>,
}

impl PosteriorLocation {
    pub fn new(device_id: impl Into<String>, mut entries: Vec<PosteriorEntry>) -> Self {
        entries.retain(|e| e.prob > 0.0);
        entries.sort_by(|a, b| (a.time, a.tile).cmp(&(b.time, b.tile)));
        PosteriorLocation {
            device_id: device_id.into(),
            entries,
        }
    }

    /// Builds from dense per-time vectors, dropping zeros.
    pub fn from_dense(device_id: impl Into<String>, times: &[i64], dense: &[Vec<f64>]) -> Self {
        let entries = times
            .iter()
            .zip(dense)
            .flat_map(|(&time, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(move |(tile, &p)| PosteriorEntry {
                        time,
                        tile,
                        prob: p.min(1.0),
                    })
            })
            .collect();
        Self::new(device_id, entries)
    }

    pub fn times(&self) -> Vec<i64> {
        let mut out: Vec<i64> = self.entries.iter().map(|e| e.time).collect();
        out.dedup();
        out
    }

    /// Entries of one time instant.
    pub fn at(&self, time: i64) -> &[PosteriorEntry] {
        let lo = self.entries.partition_point(|e| e.time < time);
        let hi = self.entries.partition_point(|e| e.time <= time);
        &self.entries[lo..hi]
    }

    pub fn dense_at(&self, time: i64, n_tiles: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_tiles];
        for e in self.at(time) {
            v[e.tile] = e.prob;
        }
        v
    }

    pub fn sums_by_time(&self) -> BTreeMap<i64, f64> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.time).or_insert(0.0) += e.prob;
        }
        out
    }

    /// Checks probability bounds and per-time normalization within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if let Some(e) = self.entries.iter().find(|e| !(e.prob > 0.0 && e.prob <= 1.0)) {
            return Err(Error::invalid(format!(
                "device {}: probability {} at time {} tile {} outside (0, 1]",
                self.device_id, e.prob, e.time, e.tile
            )));
        }
        for (t, s) in self.sums_by_time() {
            if (s - 1.0).abs() > tol {
                return Err(Error::invalid(format!(
                    "device {}: probabilities at time {t} sum to {s}",
                    self.device_id
                )));
            }
        }
        Ok(())
    }

    pub fn is_normalized(&self) -> bool {
        self.validate(NORMALIZATION_TOL).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointEntry {
    pub time_from: i64,
    pub time_to: i64,
    pub tile_from: usize,
    pub tile_to: usize,
    pub prob: f64,
}

/// Sparse joint location probabilities over consecutive time instants.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPosterior {
    pub device_id: String,
    pub entries: Vec<JointEntry>,
}

impl JointPosterior {
    pub fn new(device_id: impl Into<String>, mut entries: Vec<JointEntry>) -> Self {
        entries.retain(|e| e.prob > 0.0);
        entries.sort_by(|a, b| {
            (a.time_from, a.time_to, a.tile_from, a.tile_to)
                .cmp(&(b.time_from, b.time_to, b.tile_from, b.tile_to))
        });
        JointPosterior {
            device_id: device_id.into(),
            entries,
        }
    }

    /// Distinct `(time_from, time_to)` pairs in order.
    pub fn transitions(&self) -> Vec<(i64, i64)> {
        let mut out: Vec<(i64, i64)> = self.entries.iter().map(|e| (e.time_from, e.time_to)).collect();
        out.dedup();
        out
    }

    pub fn at(&self, time_from: i64) -> &[JointEntry] {
        let lo = self.entries.partition_point(|e| e.time_from < time_from);
        let hi = self.entries.partition_point(|e| e.time_from <= time_from);
        &self.entries[lo..hi]
    }

    /// Marginal over `tile_to` (origin) or `tile_from` (destination).
    pub fn marginal(&self, time_from: i64, n_tiles: usize, origin: bool) -> Vec<f64> {
        let mut v = vec![0.0; n_tiles];
        for e in self.at(time_from) {
            let tile = if origin { e.tile_from } else { e.tile_to };
            v[tile] += e.prob;
        }
        v
    }

    pub fn validate(&self, increment: i64, tol: f64) -> Result<()> {
        let mut sums: BTreeMap<(i64, i64), f64> = BTreeMap::new();
        for e in &self.entries {
            if e.time_to != e.time_from + increment {
                return Err(Error::invalid(format!(
                    "device {}: transition {} -> {} is not between consecutive instants (step {increment})",
                    self.device_id, e.time_from, e.time_to
                )));
            }
            if !(e.prob > 0.0 && e.prob <= 1.0) {
                return Err(Error::invalid(format!(
                    "device {}: joint probability {} outside (0, 1]",
                    self.device_id, e.prob
                )));
            }
            *sums.entry((e.time_from, e.time_to)).or_insert(0.0) += e.prob;
        }
        for ((a, b), s) in sums {
            if (s - 1.0).abs() > tol {
                return Err(Error::invalid(format!(
                    "device {}: joint probabilities {a} -> {b} sum to {s}",
                    self.device_id
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_dropped_and_sorted() {
        let p = PosteriorLocation::from_dense("D", &[0, 1], &[vec![0.0, 1.0], vec![0.5, 0.5]]);
        assert_eq!(p.entries.len(), 3);
        assert_eq!(p.at(1).len(), 2);
        assert_eq!(p.dense_at(0, 2), vec![0.0, 1.0]);
        assert!(p.is_normalized());
    }

    #[test]
    fn joint_validation() {
        let j = JointPosterior::new(
            "D",
            vec![JointEntry {
                time_from: 0,
                time_to: 1,
                tile_from: 2,
                tile_to: 2,
                prob: 1.0,
            }],
        );
        assert!(j.validate(1, 1e-9).is_ok());
        assert!(j.validate(2, 1e-9).is_err());
        assert_eq!(j.marginal(0, 3, true), vec![0.0, 0.0, 1.0]);
    }
}
