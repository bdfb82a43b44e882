//! Domain types shared by every layer of the pipeline.

mod cells;
mod grid;
mod posterior;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cells::{AntennaCells, Polygon};
pub use grid::{Adjacency, Grid, Neighbor};
pub use posterior::{JointEntry, JointPosterior, PosteriorEntry, PosteriorLocation};

/// Tolerance used when checking that stored probabilities are normalized.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Regular sequence of integer time instants `start, start + increment, ...`
/// strictly below `end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeAxis {
    pub start: i64,
    pub end: i64,
    pub increment: i64,
}

impl TimeAxis {
    pub fn new(start: i64, end: i64, increment: i64) -> Result<Self> {
        let axis = TimeAxis {
            start,
            end,
            increment,
        };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<()> {
        if self.increment <= 0 {
            return Err(Error::invalid(format!(
                "time increment must be positive, got {}",
                self.increment
            )));
        }
        if self.len() < 2 {
            return Err(Error::invalid(format!(
                "time axis [{}, {}) step {} has fewer than two instants",
                self.start, self.end, self.increment
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        if self.end <= self.start || self.increment <= 0 {
            return 0;
        }
        ((self.end - self.start + self.increment - 1) / self.increment) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn times(&self) -> Vec<i64> {
        (0..self.len())
            .map(|k| self.start + k as i64 * self.increment)
            .collect()
    }

    pub fn time_at(&self, index: usize) -> i64 {
        self.start + index as i64 * self.increment
    }

    pub fn index_of(&self, t: i64) -> Option<usize> {
        if t < self.start || t >= self.end || (t - self.start) % self.increment != 0 {
            return None;
        }
        Some(((t - self.start) / self.increment) as usize)
    }
}

/// One network event: device `device_id` connected to `antenna_id` at `t`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Event {
    pub t: i64,
    pub antenna_id: String,
    pub event_code: i32,
    pub device_id: String,
}

/// Events sorted by `(device_id, t)` with at most one event per device and time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new(mut events: Vec<Event>) -> Result<Self> {
        events.sort_by(|a, b| (&a.device_id, a.t).cmp(&(&b.device_id, b.t)));
        for w in events.windows(2) {
            if w[0].device_id == w[1].device_id && w[0].t == w[1].t {
                return Err(Error::invalid(format!(
                    "device {} has two events at t={}",
                    w[0].device_id, w[0].t
                )));
            }
        }
        Ok(EventLog { events })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Distinct device ids in sorted order.
    pub fn devices(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.events {
            if out.last() != Some(&e.device_id) {
                out.push(e.device_id.clone());
            }
        }
        out
    }

    /// Events of one device, sorted by time.
    pub fn for_device(&self, device: &str) -> &[Event] {
        let lo = self
            .events
            .partition_point(|e| e.device_id.as_str() < device);
        let hi = self
            .events
            .partition_point(|e| e.device_id.as_str() <= device);
        &self.events[lo..hi]
    }

    pub fn by_device(&self) -> Vec<(&str, &[Event])> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.events.len() {
            if i == self.events.len() || self.events[i].device_id != self.events[start].device_id {
                out.push((self.events[start].device_id.as_str(), &self.events[start..i]));
                start = i;
            }
        }
        out
    }

    pub fn antennas(&self) -> BTreeSet<&str> {
        self.events.iter().map(|e| e.antenna_id.as_str()).collect()
    }
}

/// Signal dominance `s(a, i)` per antenna (row) and tile (column).
#[derive(Debug, Clone, PartialEq)]
pub struct SignalDominance {
    antennas: Vec<String>,
    values: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl SignalDominance {
    pub fn new(antennas: Vec<String>, values: Vec<Vec<f64>>, n_tiles: usize) -> Result<Self> {
        if antennas.len() != values.len() {
            return Err(Error::invalid("one signal row per antenna required"));
        }
        let mut index = HashMap::with_capacity(antennas.len());
        for (k, (id, row)) in antennas.iter().zip(&values).enumerate() {
            if row.len() != n_tiles {
                return Err(Error::invalid(format!(
                    "antenna {id} has {} tile values, grid has {n_tiles} tiles",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::invalid(format!(
                    "antenna {id} has invalid dominance {v}"
                )));
            }
            if index.insert(id.clone(), k).is_some() {
                return Err(Error::invalid(format!("antenna {id} listed twice")));
            }
        }
        Ok(SignalDominance {
            antennas,
            values,
            index,
        })
    }

    pub fn antennas(&self) -> &[String] {
        &self.antennas
    }

    pub fn n_antennas(&self) -> usize {
        self.antennas.len()
    }

    pub fn n_tiles(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn antenna_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row(&self, antenna: usize) -> &[f64] {
        &self.values[antenna]
    }

    pub fn value(&self, antenna: usize, tile: usize) -> f64 {
        self.values[antenna][tile]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// Assignment of every tile to a region id in `1..=R`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPartition {
    region_of: Vec<u32>,
    n_regions: u32,
}

impl RegionPartition {
    pub fn new(region_of: Vec<u32>) -> Result<Self> {
        let ids: BTreeSet<u32> = region_of.iter().copied().collect();
        let n_regions = ids.len() as u32;
        if region_of.is_empty() {
            return Err(Error::invalid("region partition is empty"));
        }
        if ids.first() != Some(&1) || ids.last() != Some(&n_regions) {
            return Err(Error::invalid(format!(
                "region ids must form 1..=R, got {:?}",
                ids.iter().take(10).collect::<Vec<_>>()
            )));
        }
        Ok(RegionPartition {
            region_of,
            n_regions,
        })
    }

    /// Splits the grid into `rx × ry` rectangular blocks, numbered row-major.
    pub fn blocks(grid: &Grid, rx: usize, ry: usize) -> Result<Self> {
        if rx == 0 || ry == 0 || rx > grid.n_tiles_x || ry > grid.n_tiles_y {
            return Err(Error::invalid(format!(
                "cannot split a {}x{} grid into {rx}x{ry} regions",
                grid.n_tiles_x, grid.n_tiles_y
            )));
        }
        let region_of = (0..grid.n_tiles())
            .map(|t| {
                let (row, col) = grid.row_col(t).expect("tile in range");
                let bx = col * rx / grid.n_tiles_x;
                let by = row * ry / grid.n_tiles_y;
                (by * rx + bx + 1) as u32
            })
            .collect();
        Self::new(region_of)
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions as usize
    }

    pub fn n_tiles(&self) -> usize {
        self.region_of.len()
    }

    pub fn region(&self, tile: usize) -> u32 {
        self.region_of[tile]
    }

    pub fn regions(&self) -> &[u32] {
        &self.region_of
    }

    pub fn region_ids(&self) -> Vec<u32> {
        (1..=self.n_regions).collect()
    }
}

/// `p_d^(2)` per device: probability the owner carries two devices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DuplicityTable {
    rows: BTreeMap<String, f64>,
}

impl DuplicityTable {
    pub fn new(rows: BTreeMap<String, f64>) -> Result<Self> {
        for (d, p) in &rows {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::invalid(format!(
                    "duplicity probability of {d} is {p}, outside [0, 1]"
                )));
            }
        }
        Ok(DuplicityTable { rows })
    }

    pub fn get(&self, device: &str) -> Option<f64> {
        self.rows.get(device).copied()
    }

    pub fn rows(&self) -> &BTreeMap<String, f64> {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn devices(&self) -> impl Iterator<Item = &String> {
        self.rows.keys()
    }

    pub fn mean(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.values().sum::<f64>() / self.rows.len() as f64
    }
}

/// Register population `N0` per region at the initial time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegisterPopulation {
    pub counts: BTreeMap<u32, u64>,
}

/// Devices per individual, per region.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PenetrationRate {
    pub rates: BTreeMap<u32, f64>,
}

impl PenetrationRate {
    pub fn new(rates: BTreeMap<u32, f64>) -> Result<Self> {
        if let Some((r, v)) = rates.iter().find(|(_, v)| !v.is_finite() || **v <= 0.0) {
            return Err(Error::invalid(format!(
                "penetration rate of region {r} must be positive, got {v}"
            )));
        }
        Ok(PenetrationRate { rates })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: i64, a: &str, d: &str) -> Event {
        Event {
            t,
            antenna_id: a.into(),
            event_code: 0,
            device_id: d.into(),
        }
    }

    #[test]
    fn time_axis_is_end_exclusive() {
        let axis = TimeAxis::new(0, 20, 10).unwrap();
        assert_eq!(axis.times(), vec![0, 10]);
        assert_eq!(axis.index_of(10), Some(1));
        assert_eq!(axis.index_of(20), None);
        assert_eq!(axis.index_of(5), None);
        assert!(TimeAxis::new(0, 10, 0).is_err());
        assert!(TimeAxis::new(0, 1, 1).is_err());
        assert_eq!(TimeAxis::new(0, 7, 3).unwrap().times(), vec![0, 3, 6]);
    }

    #[test]
    fn event_log_sorts_and_rejects_duplicates() {
        let log = EventLog::new(vec![ev(2, "A", "D2"), ev(1, "A", "D1"), ev(0, "B", "D2")]).unwrap();
        assert_eq!(log.devices(), vec!["D1", "D2"]);
        assert_eq!(log.for_device("D2").len(), 2);
        assert_eq!(log.for_device("D2")[0].t, 0);
        assert!(log.for_device("D9").is_empty());
        assert_eq!(log.by_device().len(), 2);
        assert!(EventLog::new(vec![ev(1, "A", "D1"), ev(1, "B", "D1")]).is_err());
    }

    #[test]
    fn region_blocks_cover_grid() {
        let g = Grid::square(10, 10, 1.0).unwrap();
        let p = RegionPartition::blocks(&g, 2, 2).unwrap();
        assert_eq!(p.n_regions(), 4);
        assert_eq!(p.region(0), 1);
        assert_eq!(p.region(9), 2);
        assert_eq!(p.region(99), 4);
        assert!(RegionPartition::new(vec![1, 3]).is_err());
        assert!(RegionPartition::new(vec![0, 1]).is_err());
    }

    #[test]
    fn duplicity_bounds() {
        let mut rows = BTreeMap::new();
        rows.insert("D1".to_string(), 1.3);
        assert!(DuplicityTable::new(rows).is_err());
    }

    #[test]
    fn signal_shape_checks() {
        assert!(SignalDominance::new(vec!["A".into()], vec![vec![0.5, 0.5]], 3).is_err());
        assert!(SignalDominance::new(vec!["A".into()], vec![vec![-0.1, 0.5]], 2).is_err());
        let s = SignalDominance::new(vec!["A".into(), "B".into()], vec![vec![1.0, 0.0], vec![0.2, 0.3]], 2)
            .unwrap();
        assert_eq!(s.antenna_index("B"), Some(1));
        assert_eq!(s.value(1, 1), 0.3);
    }
}
