//! Probability that a device belongs to an individual carrying two devices.
//!
//! Three methods are available. The Bayesian ones compare, for each candidate
//! pair, the likelihood of both event sequences under a single shared
//! trajectory with the product of their separate likelihoods; `1to1` keeps at
//! most one partner per device, `pairs` averages over all candidates. The
//! trajectory method compares posterior-mean trajectories.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Adjacency, AntennaCells, DuplicityTable, EventLog, Grid, PosteriorLocation};
use crate::error::{Error, Result};
use crate::geolocation::{model_log_likelihood, DeviceModel, TransitionParams};
use crate::parallel;

/// Bayes factor assigned to devices without an accepted partner.
pub const PAIR_FLOOR: f64 = 1e-6;

/// Clip range of the trajectory likelihood ratio.
pub const TRAJECTORY_CLIP: (f64, f64) = (1e-6, 1e6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DedupMethod {
    #[default]
    #[serde(rename = "1to1")]
    OneToOne,
    #[serde(rename = "pairs")]
    Pairs,
    #[serde(rename = "trajectory")]
    Trajectory,
}

impl fmt::Display for DedupMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DedupMethod::OneToOne => "1to1",
            DedupMethod::Pairs => "pairs",
            DedupMethod::Trajectory => "trajectory",
        })
    }
}

impl FromStr for DedupMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1to1" | "one_to_one" => Ok(DedupMethod::OneToOne),
            "pairs" => Ok(DedupMethod::Pairs),
            "trajectory" => Ok(DedupMethod::Trajectory),
            other => Err(Error::invalid(format!(
                "unknown deduplication method `{other}`; valid: 1to1, pairs, trajectory"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DuplicityConfig {
    pub method: DedupMethod,
    /// A-priori share of two-device owners.
    pub prior: f64,
    /// Prior-odds scale; 1 when absent.
    pub lambda: Option<f64>,
    pub workers: usize,
}

impl Default for DuplicityConfig {
    fn default() -> Self {
        DuplicityConfig {
            method: DedupMethod::OneToOne,
            prior: 0.1,
            lambda: None,
            workers: 1,
        }
    }
}

impl DuplicityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prior) {
            return Err(Error::invalid(format!("prior {} outside [0, 1]", self.prior)));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!("lambda must be positive, got {l}")));
            }
        }
        Ok(())
    }
}

/// Log Bayes factor of the pair `(a, b)` with `a < b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub a: String,
    pub b: String,
    pub log_b: f64,
}

/// Posterior probability from prior odds scaled by `lambda` and a Bayes factor.
pub fn posterior_probability(prior: f64, lambda: f64, log_b: f64) -> f64 {
    if prior <= 0.0 {
        return 0.0;
    }
    if prior >= 1.0 {
        return 1.0;
    }
    let log_odds = lambda.ln() + (prior / (1.0 - prior)).ln() + log_b;
    1.0 / (1.0 + (-log_odds).exp())
}

/// Device pairs with at least one common tick whose antennas are identical or
/// neighbours at every common tick. Without cells, every pair sharing a tick
/// is a candidate.
pub fn candidate_pairs(events: &EventLog, cells: Option<&AntennaCells>) -> Result<Vec<(String, String)>> {
    let neighbors = match cells {
        Some(c) => {
            for a in events.antennas() {
                if c.get(a).is_none() {
                    return Err(Error::invalid(format!("antenna {a} has no cell")));
                }
            }
            Some(c.neighbor_map())
        }
        None => None,
    };
    let compatible = |x: &str, y: &str| match &neighbors {
        Some(n) => x == y || n.get(x).is_some_and(|s| s.contains(y)),
        None => true,
    };

    let tracks: Vec<(&str, BTreeMap<i64, &str>)> = events
        .by_device()
        .into_iter()
        .map(|(d, evs)| (d, evs.iter().map(|e| (e.t, e.antenna_id.as_str())).collect()))
        .collect();
    let mut out = Vec::new();
    for i in 0..tracks.len() {
        for j in i + 1..tracks.len() {
            let (a, ta) = &tracks[i];
            let (b, tb) = &tracks[j];
            let mut common = 0;
            let ok = ta.iter().all(|(t, x)| match tb.get(t) {
                Some(y) => {
                    common += 1;
                    compatible(x, y)
                }
                None => true,
            });
            if ok && common > 0 {
                out.push((a.to_string(), b.to_string()));
            }
        }
    }
    Ok(out)
}

fn uniform_log_likelihood(
    grid: &Grid,
    adjacency: Adjacency,
    params: TransitionParams,
    likelihoods: &[Vec<f64>],
) -> Result<f64> {
    let n = grid.n_tiles();
    model_log_likelihood(grid, adjacency, &vec![1.0 / n as f64; n], params, likelihoods)
}

/// `log P(both | one trajectory) - log P(a) - log P(b)`.
///
/// Each likelihood uses a uniform initial distribution; the shared trajectory
/// multiplies the two devices' per-tick likelihood vectors and uses the mean
/// of their transition parameters. Returns `-inf` when the two sequences
/// cannot come from one trajectory.
pub fn pair_evidence(a: &DeviceModel, b: &DeviceModel, grid: &Grid, adjacency: Adjacency) -> Result<f64> {
    if a.likelihoods.len() != b.likelihoods.len() {
        return Err(Error::invalid(format!(
            "devices {} and {} are on different time axes",
            a.device_id, b.device_id
        )));
    }
    let joint: Vec<Vec<f64>> = a
        .likelihoods
        .iter()
        .zip(&b.likelihoods)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u * v).collect())
        .collect();
    let mean = TransitionParams {
        p_stay: (a.params.p_stay + b.params.p_stay) / 2.0,
        p_diag_ratio: (a.params.p_diag_ratio + b.params.p_diag_ratio) / 2.0,
    };
    let ll_joint = match uniform_log_likelihood(grid, adjacency, mean, &joint) {
        Ok(v) => v,
        Err(Error::ImpossibleObservation { .. }) => return Ok(f64::NEG_INFINITY),
        Err(e) => return Err(e),
    };
    let ll_a = uniform_log_likelihood(grid, adjacency, a.params, &a.likelihoods)?;
    let ll_b = uniform_log_likelihood(grid, adjacency, b.params, &b.likelihoods)?;
    Ok(ll_joint - ll_a - ll_b)
}

/// Scores every pair, in parallel, ordered as given.
pub fn score_pairs(
    pairs: &[(String, String)],
    models: &[DeviceModel],
    grid: &Grid,
    adjacency: Adjacency,
    workers: usize,
) -> Result<Vec<PairScore>> {
    let index: BTreeMap<&str, &DeviceModel> = models.iter().map(|m| (m.device_id.as_str(), m)).collect();
    let get = |d: &str| {
        index
            .get(d)
            .copied()
            .ok_or_else(|| Error::invalid(format!("device {d} has no fitted model")))
    };
    parallel::install(workers, || {
        pairs
            .par_iter()
            .map(|(a, b)| {
                let (x, y) = if a <= b { (a, b) } else { (b, a) };
                Ok(PairScore {
                    a: x.clone(),
                    b: y.clone(),
                    log_b: pair_evidence(get(x)?, get(y)?, grid, adjacency)?,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?
}

/// Greedy best-first one-to-one matching on the scores above the floor.
///
/// Returns the partner and log Bayes factor of every matched device.
pub fn match_one_to_one(scores: &[PairScore]) -> BTreeMap<String, (String, f64)> {
    let floor = PAIR_FLOOR.ln();
    let mut order: Vec<&PairScore> = scores.iter().filter(|s| s.log_b > floor).collect();
    order.sort_by(|x, y| {
        y.log_b
            .total_cmp(&x.log_b)
            .then_with(|| (&x.a, &x.b).cmp(&(&y.a, &y.b)))
    });
    let mut matched = BTreeMap::new();
    for s in order {
        if matched.contains_key(&s.a) || matched.contains_key(&s.b) {
            continue;
        }
        matched.insert(s.a.clone(), (s.b.clone(), s.log_b));
        matched.insert(s.b.clone(), (s.a.clone(), s.log_b));
    }
    matched
}

pub fn duplicity_one_to_one(
    devices: &[String],
    scores: &[PairScore],
    prior: f64,
    lambda: Option<f64>,
) -> Result<DuplicityTable> {
    let lambda = lambda.unwrap_or(1.0);
    let matched = match_one_to_one(scores);
    let rows = devices
        .iter()
        .map(|d| {
            let log_b = matched.get(d).map_or(PAIR_FLOOR.ln(), |(_, b)| *b);
            (d.clone(), posterior_probability(prior, lambda, log_b))
        })
        .collect();
    DuplicityTable::new(rows)
}

fn log_mean_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (values.iter().map(|v| (v - m).exp()).sum::<f64>() / values.len() as f64).ln()
}

pub fn duplicity_pairs(devices: &[String], scores: &[PairScore], prior: f64) -> Result<DuplicityTable> {
    let mut per_device: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in scores {
        per_device.entry(&s.a).or_default().push(s.log_b);
        per_device.entry(&s.b).or_default().push(s.log_b);
    }
    let rows = devices
        .iter()
        .map(|d| {
            let log_b = per_device
                .get(d.as_str())
                .map_or(f64::NEG_INFINITY, |v| log_mean_exp(v))
                .max(PAIR_FLOOR.ln());
            (d.clone(), posterior_probability(prior, 1.0, log_b))
        })
        .collect();
    DuplicityTable::new(rows)
}

/// Posterior-mean coordinates of a device at each of its times.
pub fn mean_trajectory(post: &PosteriorLocation, grid: &Grid) -> Result<BTreeMap<i64, (f64, f64)>> {
    let mut out = BTreeMap::new();
    for t in post.times() {
        let (mut x, mut y, mut w) = (0.0, 0.0, 0.0);
        for e in post.at(t) {
            let (cx, cy) = grid.tile_center(e.tile)?;
            x += e.prob * cx;
            y += e.prob * cy;
            w += e.prob;
        }
        out.insert(t, (x / w, y / w));
    }
    Ok(out)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Mean pairwise distance among the points; the tile diagonal when that is
/// zero or undefined.
pub fn dispersion_radius(points: &[(f64, f64)], grid: &Grid) -> f64 {
    let n = points.len();
    if n < 2 {
        return grid.tile_diagonal();
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += dist(points[i], points[j]);
        }
    }
    let r = total / (n * (n - 1) / 2) as f64;
    if r > 0.0 {
        r
    } else {
        grid.tile_diagonal()
    }
}

/// Log likelihood ratio `1 - delta / r` clipped to the trajectory range.
pub fn trajectory_log_ratio(delta: f64, radius: f64) -> f64 {
    (1.0 - delta / radius).clamp(TRAJECTORY_CLIP.0.ln(), TRAJECTORY_CLIP.1.ln())
}

pub fn duplicity_trajectory(
    devices: &[String],
    posteriors: &[PosteriorLocation],
    grid: &Grid,
    prior: f64,
    lambda: Option<f64>,
    workers: usize,
) -> Result<DuplicityTable> {
    let tracks: BTreeMap<&str, BTreeMap<i64, (f64, f64)>> = posteriors
        .iter()
        .map(|p| Ok((p.device_id.as_str(), mean_trajectory(p, grid)?)))
        .collect::<Result<_>>()?;
    let radius: BTreeMap<&str, f64> = tracks
        .iter()
        .map(|(d, tr)| (*d, dispersion_radius(&tr.values().copied().collect::<Vec<_>>(), grid)))
        .collect();
    let lambda = lambda.unwrap_or(1.0);
    let best = |d: &str| -> Option<f64> {
        let own = tracks.get(d)?;
        tracks
            .iter()
            .filter(|(other, _)| **other != d)
            .filter_map(|(other, tr)| {
                let deltas: Vec<f64> = own
                    .iter()
                    .filter_map(|(t, p)| tr.get(t).map(|q| dist(*p, *q)))
                    .collect();
                if deltas.is_empty() {
                    return None;
                }
                let delta = deltas.iter().sum::<f64>() / deltas.len() as f64;
                let r = (radius[d] + radius[other]) / 2.0;
                Some(trajectory_log_ratio(delta, r))
            })
            .max_by(f64::total_cmp)
    };
    for d in devices {
        if !tracks.contains_key(d.as_str()) {
            return Err(Error::invalid(format!("device {d} has no posterior")));
        }
    }
    let rows = parallel::install(workers, || {
        devices
            .par_iter()
            .map(|d| {
                let log_b = best(d).unwrap_or(PAIR_FLOOR.ln());
                (d.clone(), posterior_probability(prior, lambda, log_b))
            })
            .collect::<Vec<_>>()
    })?;
    DuplicityTable::new(rows.into_iter().collect())
}

/// Everything the three methods may need.
pub struct DedupInputs<'a> {
    pub events: &'a EventLog,
    pub cells: Option<&'a AntennaCells>,
    pub grid: &'a Grid,
    pub adjacency: Adjacency,
    /// Fitted device models, needed by `1to1` and `pairs`.
    pub models: &'a [DeviceModel],
    /// Posterior locations, needed by `trajectory`.
    pub posteriors: &'a [PosteriorLocation],
}

/// Duplicity table with one row per device of the event log.
pub fn compute_duplicity(config: &DuplicityConfig, inputs: &DedupInputs<'_>) -> Result<DuplicityTable> {
    config.validate()?;
    let devices = inputs.events.devices();
    match config.method {
        DedupMethod::Trajectory => duplicity_trajectory(
            &devices,
            inputs.posteriors,
            inputs.grid,
            config.prior,
            config.lambda,
            config.workers,
        ),
        method => {
            let known: BTreeSet<&str> = inputs.models.iter().map(|m| m.device_id.as_str()).collect();
            if let Some(d) = devices.iter().find(|d| !known.contains(d.as_str())) {
                return Err(Error::invalid(format!("device {d} has no fitted model")));
            }
            let pairs = candidate_pairs(inputs.events, inputs.cells)?;
            log::info!("{} candidate pairs among {} devices", pairs.len(), devices.len());
            let scores = score_pairs(&pairs, inputs.models, inputs.grid, inputs.adjacency, config.workers)?;
            if method == DedupMethod::OneToOne {
                duplicity_one_to_one(&devices, &scores, config.prior, config.lambda)
            } else {
                duplicity_pairs(&devices, &scores, config.prior)
            }
        }
    }
}
