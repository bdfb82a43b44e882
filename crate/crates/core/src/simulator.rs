//! Synthetic scenarios: persons walking on the grid with 0, 1 or 2 devices,
//! antennas with a distance-based dominance model, and the resulting events.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    Adjacency, AntennaCells, Event, EventLog, Grid, PenetrationRate, Polygon, RegionPartition,
    RegisterPopulation, SignalDominance, TimeAxis,
};
use crate::error::{Error, Result};
use crate::{io, seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaSpec {
    pub id: String,
    pub x: f64,
    pub y: f64,
    /// Distance at which dominance drops to one half.
    pub power: f64,
    pub path_loss_exponent: f64,
}

/// `1 / (1 + (d / power)^gamma)` for an antenna at distance `d`.
pub fn signal_dominance(antenna: &AntennaSpec, point: (f64, f64)) -> f64 {
    let d = ((antenna.x - point.0).powi(2) + (antenna.y - point.1).powi(2)).sqrt();
    1.0 / (1.0 + (d / antenna.power).powf(antenna.path_loss_exponent))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub grid: Grid,
    pub time_axis: TimeAxis,
    pub antennas: Vec<AntennaSpec>,
    pub persons: usize,
    pub prob_one_device: f64,
    pub prob_two_devices: f64,
    pub seed: u64,
    /// Probability a person stays on its tile during one tick.
    pub p_stay: f64,
    /// Dominance below which an antenna does not serve a tile.
    pub min_dominance: f64,
    /// Number of region blocks along x and y.
    pub regions_x: usize,
    pub regions_y: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        let grid = Grid::square(10, 10, 100.0).expect("valid grid");
        let antennas = [(200.0, 200.0), (800.0, 200.0), (500.0, 500.0), (200.0, 800.0), (800.0, 800.0)]
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| AntennaSpec {
                id: format!("A{}", k + 1),
                x,
                y,
                power: 150.0,
                path_loss_exponent: 4.0,
            })
            .collect();
        Scenario {
            grid,
            time_axis: TimeAxis {
                start: 0,
                end: 20,
                increment: 1,
            },
            antennas,
            persons: 30,
            prob_one_device: 0.6,
            prob_two_devices: 0.2,
            seed: 1,
            p_stay: 0.3,
            min_dominance: 0.05,
            regions_x: 2,
            regions_y: 2,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.time_axis.validate()?;
        let probs = [self.prob_one_device, self.prob_two_devices, self.p_stay, self.min_dominance];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("scenario probabilities must lie in [0, 1]"));
        }
        if self.prob_one_device + self.prob_two_devices > 1.0 + 1e-12 {
            return Err(Error::invalid(
                "prob_one_device + prob_two_devices must not exceed 1",
            ));
        }
        if self.antennas.is_empty() {
            return Err(Error::invalid("scenario has no antennas"));
        }
        let mut ids = BTreeSet::new();
        for a in &self.antennas {
            if !ids.insert(&a.id) {
                return Err(Error::invalid(format!("duplicate antenna id {}", a.id)));
            }
            if !self.grid.contains_point(a.x, a.y) {
                return Err(Error::invalid(format!(
                    "antenna {} at ({}, {}) lies outside the grid",
                    a.id, a.x, a.y
                )));
            }
            if !(a.power > 0.0 && a.path_loss_exponent > 0.0) {
                return Err(Error::invalid(format!(
                    "antenna {} needs positive power and path-loss exponent",
                    a.id
                )));
            }
        }
        Ok(())
    }
}

/// Trajectory of one person as tile indices over the time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonTrack {
    pub person_id: String,
    pub tiles: Vec<usize>,
    pub devices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub persons: Vec<PersonTrack>,
    /// Device to the index of its owner in `persons`.
    pub owner: BTreeMap<String, usize>,
}

impl GroundTruth {
    /// True when the device's owner carries two devices.
    pub fn is_duplicate(&self, device: &str) -> Option<bool> {
        self.owner.get(device).map(|&p| self.persons[p].devices.len() == 2)
    }

    /// Device pairs carried by the same person.
    pub fn duplicate_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .persons
            .iter()
            .filter(|p| p.devices.len() == 2)
            .map(|p| {
                let (a, b) = (&p.devices[0], &p.devices[1]);
                if a < b {
                    (a.clone(), b.clone())
                } else {
                    (b.clone(), a.clone())
                }
            })
            .collect();
        out.sort();
        out
    }

    /// Tile of the device's owner at time index `k`.
    pub fn device_tile(&self, device: &str, k: usize) -> Option<usize> {
        self.owner.get(device).map(|&p| self.persons[p].tiles[k])
    }
}

/// Individuals per region at time index `k`.
pub fn true_counts(truth: &GroundTruth, regions: &RegionPartition, k: usize) -> BTreeMap<u32, u64> {
    tally(truth, regions, k, |_| true)
}

/// Individuals carrying at least one device, per region at time index `k`.
pub fn detected_counts(truth: &GroundTruth, regions: &RegionPartition, k: usize) -> BTreeMap<u32, u64> {
    tally(truth, regions, k, |p| !p.devices.is_empty())
}

fn tally(
    truth: &GroundTruth,
    regions: &RegionPartition,
    k: usize,
    keep: impl Fn(&PersonTrack) -> bool,
) -> BTreeMap<u32, u64> {
    let mut out: BTreeMap<u32, u64> = regions.region_ids().into_iter().map(|r| (r, 0)).collect();
    for p in truth.persons.iter().filter(|p| keep(p)) {
        *out.get_mut(&regions.region(p.tiles[k])).expect("region id") += 1;
    }
    out
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub scenario: Scenario,
    pub events: EventLog,
    pub signal: SignalDominance,
    pub cells: AntennaCells,
    pub regions: RegionPartition,
    pub truth: GroundTruth,
    pub register: RegisterPopulation,
    pub pnt_rate: PenetrationRate,
}

/// Dominance matrix with values below `min_dominance` set to zero.
fn dominance_matrix(scenario: &Scenario) -> Result<Vec<Vec<f64>>> {
    let grid = &scenario.grid;
    let mut rows = Vec::with_capacity(scenario.antennas.len());
    for a in &scenario.antennas {
        let row = (0..grid.n_tiles())
            .map(|t| {
                let s = signal_dominance(a, grid.tile_center(t)?);
                Ok(if s >= scenario.min_dominance { s } else { 0.0 })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    for t in 0..grid.n_tiles() {
        if rows.iter().all(|r| r[t] == 0.0) {
            return Err(Error::invalid(format!("tile {t} is not covered by any antenna")));
        }
    }
    Ok(rows)
}

/// Bounding rectangle of the tiles each antenna serves.
fn coverage_cells(grid: &Grid, antennas: &[AntennaSpec], rows: &[Vec<f64>]) -> Result<AntennaCells> {
    let mut cells = BTreeMap::new();
    for (a, row) in antennas.iter().zip(rows) {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for (t, s) in row.iter().enumerate() {
            if *s > 0.0 {
                let (cx, cy) = grid.tile_center(t)?;
                x0 = x0.min(cx - grid.tile_size_x / 2.0);
                x1 = x1.max(cx + grid.tile_size_x / 2.0);
                y0 = y0.min(cy - grid.tile_size_y / 2.0);
                y1 = y1.max(cy + grid.tile_size_y / 2.0);
            }
        }
        if x0 > x1 {
            // serves no tile: a degenerate cell at the antenna position
            (x0, y0, x1, y1) = (a.x, a.y, a.x, a.y);
        }
        cells.insert(a.id.clone(), Polygon::rectangle(x0, y0, x1, y1)?);
    }
    Ok(AntennaCells::new(cells))
}

fn sample_index(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Runs the scenario. The output depends only on the scenario, seed included.
pub fn simulate(scenario: &Scenario) -> Result<Simulation> {
    scenario.validate()?;
    let grid = &scenario.grid;
    let axis = &scenario.time_axis;
    let n_tiles = grid.n_tiles();
    let rows = dominance_matrix(scenario)?;
    let cells = coverage_cells(grid, &scenario.antennas, &rows)?;
    let regions = RegionPartition::blocks(grid, scenario.regions_x, scenario.regions_y)?;
    let mut rng = seed::rng_for(scenario.seed, b"simulator");

    let n_devices_of: Vec<usize> = (0..scenario.persons)
        .map(|_| {
            let u: f64 = rng.random();
            if u < scenario.prob_two_devices {
                2
            } else if u < scenario.prob_two_devices + scenario.prob_one_device {
                1
            } else {
                0
            }
        })
        .collect();
    let total_devices: usize = n_devices_of.iter().sum();
    let width = total_devices.max(1).to_string().len().max(3);
    let mut labels: Vec<String> = (1..=total_devices).map(|k| format!("D{k:0width$}")).collect();
    labels.shuffle(&mut rng);

    let mut persons = Vec::with_capacity(scenario.persons);
    let mut owner = BTreeMap::new();
    let mut next_label = labels.into_iter();
    let pwidth = scenario.persons.max(1).to_string().len().max(3);
    for (p, &nd) in n_devices_of.iter().enumerate() {
        let mut tiles = Vec::with_capacity(axis.len());
        let mut tile = rng.random_range(0..n_tiles);
        tiles.push(tile);
        for _ in 1..axis.len() {
            if rng.random::<f64>() >= scenario.p_stay {
                let nb = grid.tile_neighbors(tile, Adjacency::Queen)?;
                if !nb.is_empty() {
                    tile = nb[rng.random_range(0..nb.len())];
                }
            }
            tiles.push(tile);
        }
        let devices: Vec<String> = (0..nd).map(|_| next_label.next().expect("label per device")).collect();
        for d in &devices {
            owner.insert(d.clone(), p);
        }
        persons.push(PersonTrack {
            person_id: format!("P{:0pwidth$}", p + 1),
            tiles,
            devices,
        });
    }

    let mut events = Vec::with_capacity(total_devices * axis.len());
    for person in &persons {
        for (k, &tile) in person.tiles.iter().enumerate() {
            let weights: Vec<f64> = rows.iter().map(|r| r[tile]).collect();
            for d in &person.devices {
                let a = sample_index(&weights, &mut rng);
                events.push(Event {
                    t: axis.time_at(k),
                    antenna_id: scenario.antennas[a].id.clone(),
                    event_code: 0,
                    device_id: d.clone(),
                });
            }
        }
    }

    let truth = GroundTruth { persons, owner };
    let at_start = true_counts(&truth, &regions, 0);
    let register = RegisterPopulation {
        counts: at_start.clone(),
    };
    let overall = if scenario.persons > 0 {
        (total_devices as f64 / scenario.persons as f64).max(1e-3)
    } else {
        1.0
    };
    let mut devices_at_start: BTreeMap<u32, usize> = BTreeMap::new();
    for p in &truth.persons {
        *devices_at_start.entry(regions.region(p.tiles[0])).or_default() += p.devices.len();
    }
    let rates = at_start
        .iter()
        .map(|(&r, &n)| {
            let d = devices_at_start.get(&r).copied().unwrap_or(0);
            let rate = if n > 0 && d > 0 { d as f64 / n as f64 } else { overall };
            (r, rate)
        })
        .collect();

    Ok(Simulation {
        scenario: scenario.clone(),
        events: EventLog::new(events)?,
        signal: SignalDominance::new(
            scenario.antennas.iter().map(|a| a.id.clone()).collect(),
            rows,
            n_tiles,
        )?,
        cells,
        regions,
        truth,
        register,
        pnt_rate: PenetrationRate::new(rates)?,
    })
}

/// File names used by [`write_simulation`].
pub mod files {
    pub const EVENTS: &str = "events.csv";
    pub const SIGNAL: &str = "signal.csv";
    pub const CELLS: &str = "antenna_cells.csv";
    pub const GRID: &str = "grid.csv";
    pub const PARAMS: &str = "simulation.xml";
    pub const REGIONS: &str = "regions.csv";
    pub const REGISTER: &str = "pop_reg.csv";
    pub const PNT_RATE: &str = "pnt_rate.csv";
    pub const TRUTH_TRACKS: &str = "truth_trajectories.csv";
    pub const TRUTH_DEVICES: &str = "truth_devices.csv";
}

/// Writes every input file of the pipeline plus the ground truth into `dir`.
pub fn write_simulation(dir: impl AsRef<Path>, sim: &Simulation) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_events(dir.join(files::EVENTS), &sim.events)?;
    io::write_signal(dir.join(files::SIGNAL), &sim.signal)?;
    io::write_antenna_cells(dir.join(files::CELLS), &sim.cells)?;
    io::write_grid(dir.join(files::GRID), &sim.scenario.grid)?;
    io::write_simulation_params(dir.join(files::PARAMS), &sim.scenario.time_axis)?;
    io::write_regions(dir.join(files::REGIONS), &sim.regions)?;
    io::write_register(dir.join(files::REGISTER), &sim.register)?;
    io::write_penetration_rate(dir.join(files::PNT_RATE), &sim.pnt_rate)?;
    write_truth(dir, sim)
}

fn write_truth(dir: &Path, sim: &Simulation) -> Result<()> {
    let grid = &sim.scenario.grid;
    let path = dir.join(files::TRUTH_TRACKS);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    w.write_record(["person_id", "time", "tile", "x", "y"]).map_err(|e| csv_error(&path, e))?;
    for p in &sim.truth.persons {
        for (k, &tile) in p.tiles.iter().enumerate() {
            let (x, y) = grid.tile_center(tile)?;
            w.write_record([
                p.person_id.clone(),
                sim.scenario.time_axis.time_at(k).to_string(),
                tile.to_string(),
                x.to_string(),
                y.to_string(),
            ])
            .map_err(|e| csv_error(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(files::TRUTH_DEVICES);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    w.write_record(["device_id", "person_id", "n_devices"]).map_err(|e| csv_error(&path, e))?;
    for (d, &p) in &sim.truth.owner {
        let person = &sim.truth.persons[p];
        w.write_record([d.clone(), person.person_id.clone(), person.devices.len().to_string()])
            .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}
