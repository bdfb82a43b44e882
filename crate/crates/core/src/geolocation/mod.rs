//! Per-device HMM geolocation on the tile grid.
//!
//! For each device: event likelihoods from the emission model, initial
//! distribution from the first observed event, maximum-likelihood transition
//! parameters, then forward-backward smoothing into posterior and joint
//! location probabilities.

mod fit;
mod hmm;

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    Adjacency, Event, EventLog, Grid, JointEntry, JointPosterior, PosteriorLocation,
    SignalDominance, TimeAxis,
};
use crate::error::{Error, Result};
use crate::{io, parallel, seed};

pub use fit::{
    fit, model_log_likelihood, nelder_mead_box, FitResult, Minimum, OptimizerSettings,
    P_DIAG_BOUNDS, P_STAY_BOUNDS,
};
pub use hmm::{
    forward_backward, log_likelihood, transition_matrix, HmmModel, Smoothed, SparseTransition,
    TransitionParams,
};

/// Emission probabilities `E(i, a) = P(antenna a | tile i)`.
#[derive(Debug, Clone)]
pub struct Emission {
    antennas: Vec<String>,
    index: HashMap<String, usize>,
    /// `by_antenna[a][i] = E(i, a)`
    by_antenna: Vec<Vec<f64>>,
    uncovered: Vec<bool>,
}

impl Emission {
    pub fn n_tiles(&self) -> usize {
        self.uncovered.len()
    }

    pub fn antennas(&self) -> &[String] {
        &self.antennas
    }

    pub fn antenna_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// `E(i, a)` for every tile `i`.
    pub fn column(&self, antenna: usize) -> &[f64] {
        &self.by_antenna[antenna]
    }

    pub fn prob(&self, tile: usize, antenna: usize) -> f64 {
        self.by_antenna[antenna][tile]
    }

    /// Tiles no antenna reaches; they carry a uniform emission row.
    pub fn uncovered(&self) -> &[bool] {
        &self.uncovered
    }
}

/// Normalizes signal dominance per tile into connection probabilities.
pub fn emission_from_signal(signal: &SignalDominance) -> Emission {
    let n_tiles = signal.n_tiles();
    let n_ant = signal.n_antennas();
    let mut by_antenna = vec![vec![0.0; n_tiles]; n_ant];
    let mut uncovered = vec![false; n_tiles];
    for tile in 0..n_tiles {
        let total: f64 = (0..n_ant).map(|a| signal.value(a, tile)).sum();
        if total > 0.0 {
            for (a, col) in by_antenna.iter_mut().enumerate() {
                col[tile] = signal.value(a, tile) / total;
            }
        } else {
            uncovered[tile] = true;
            for col in by_antenna.iter_mut() {
                col[tile] = 1.0 / n_ant.max(1) as f64;
            }
        }
    }
    let n_uncovered = uncovered.iter().filter(|u| **u).count();
    if n_uncovered > 0 {
        log::warn!("{n_uncovered} of {n_tiles} tiles have no coverage; using uniform emission there");
    }
    Emission {
        antennas: signal.antennas().to_vec(),
        index: signal
            .antennas()
            .iter()
            .enumerate()
            .map(|(k, id)| (id.clone(), k))
            .collect(),
        by_antenna,
        uncovered,
    }
}

/// Logistic dominance of a raw signal strength.
pub fn dominance_from_strength(strength: f64, s_mid: f64, s_steep: f64) -> f64 {
    1.0 / (1.0 + (-s_steep * (strength - s_mid)).exp())
}

/// Per-tick likelihood vectors of one device over the time axis.
///
/// A tick with an event on antenna `a` gets `E(., a)`; a tick without events
/// gets all ones. Events off the axis are ignored.
pub fn event_likelihoods(events: &[Event], emission: &Emission, axis: &TimeAxis) -> Result<Vec<Vec<f64>>> {
    let n = emission.n_tiles();
    let mut out = vec![vec![1.0; n]; axis.len()];
    for e in events {
        let a = emission.antenna_index(&e.antenna_id).ok_or_else(|| {
            Error::invalid(format!(
                "device {} at t={} references unknown antenna {}",
                e.device_id, e.t, e.antenna_id
            ))
        })?;
        match axis.index_of(e.t) {
            Some(k) => out[k].copy_from_slice(emission.column(a)),
            None => log::debug!("event of {} at t={} is off the time axis", e.device_id, e.t),
        }
    }
    Ok(out)
}

/// Index of the first tick holding an informative likelihood vector.
pub fn first_observed(likelihoods: &[Vec<f64>]) -> Option<usize> {
    likelihoods
        .iter()
        .position(|l| l.iter().any(|v| *v != 1.0))
}

/// Initial distribution proportional to the first observed likelihood vector,
/// uniform when there is none.
pub fn initial_distribution(first: Option<&[f64]>, n_tiles: usize) -> Vec<f64> {
    if let Some(l) = first {
        let s: f64 = l.iter().sum();
        if s > 0.0 && s.is_finite() {
            return l.iter().map(|v| v / s).collect();
        }
    }
    vec![1.0 / n_tiles as f64; n_tiles]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeolocationConfig {
    pub adjacency: Adjacency,
    pub retrain: usize,
    pub seed: u64,
    pub workers: usize,
    pub optimizer: OptimizerSettings,
    /// Treat signal values as raw strengths and apply the logistic dominance transform.
    pub signal_is_strength: bool,
    pub s_mid: f64,
    pub s_steep: f64,
}

impl Default for GeolocationConfig {
    fn default() -> Self {
        GeolocationConfig {
            adjacency: Adjacency::Queen,
            retrain: 3,
            seed: 1,
            workers: 1,
            optimizer: OptimizerSettings::default(),
            signal_is_strength: false,
            s_mid: -92.5,
            s_steep: 0.2,
        }
    }
}

/// What the deduplication layer needs to re-evaluate a device's HMM.
#[derive(Debug, Clone)]
pub struct DeviceModel {
    pub device_id: String,
    pub likelihoods: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    pub params: TransitionParams,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone)]
pub struct DeviceGeolocation {
    pub device_id: String,
    pub fit: FitResult,
    pub posterior: PosteriorLocation,
    pub joint: JointPosterior,
    pub model: DeviceModel,
}

/// Likelihoods, initial distribution and fitted parameters of one device.
pub fn fit_device(
    device_id: &str,
    events: &[Event],
    emission: &Emission,
    grid: &Grid,
    axis: &TimeAxis,
    config: &GeolocationConfig,
) -> Result<(DeviceModel, FitResult)> {
    let likelihoods = event_likelihoods(events, emission, axis)?;
    let initial = initial_distribution(
        first_observed(&likelihoods).map(|k| likelihoods[k].as_slice()),
        grid.n_tiles(),
    );
    let mut rng = seed::rng_for(config.seed, device_id.as_bytes());
    let fit = fit::fit(
        grid,
        config.adjacency,
        &initial,
        &likelihoods,
        config.retrain,
        &config.optimizer,
        &mut rng,
    )?;
    Ok((
        DeviceModel {
            device_id: device_id.to_string(),
            likelihoods,
            initial,
            params: fit.params,
            log_likelihood: fit.log_likelihood,
        },
        fit,
    ))
}

/// Full geolocation of one device.
pub fn geolocate_device(
    device_id: &str,
    events: &[Event],
    emission: &Emission,
    grid: &Grid,
    axis: &TimeAxis,
    config: &GeolocationConfig,
) -> Result<DeviceGeolocation> {
    let (model, fit) = fit_device(device_id, events, emission, grid, axis, config)?;
    let hmm = HmmModel {
        initial: model.initial.clone(),
        transition: transition_matrix(grid, config.adjacency, fit.params),
    };
    let smoothed = forward_backward(&hmm, &model.likelihoods)?;
    let times = axis.times();
    let posterior = PosteriorLocation::from_dense(device_id, &times, &smoothed.posterior);
    let joint_entries = smoothed
        .joint
        .iter()
        .enumerate()
        .flat_map(|(k, cells)| {
            let (tf, tt) = (times[k], times[k + 1]);
            cells.iter().map(move |&(i, j, p)| JointEntry {
                time_from: tf,
                time_to: tt,
                tile_from: i,
                tile_to: j,
                prob: p.min(1.0),
            })
        })
        .collect();
    Ok(DeviceGeolocation {
        device_id: device_id.to_string(),
        fit,
        posterior,
        joint: JointPosterior::new(device_id, joint_entries),
        model,
    })
}

/// Emission matrix honoring `signal_is_strength`.
pub fn emission_for(signal: &SignalDominance, config: &GeolocationConfig) -> Result<Emission> {
    if !config.signal_is_strength {
        return Ok(emission_from_signal(signal));
    }
    let rows = signal
        .rows()
        .iter()
        .map(|r| {
            r.iter()
                .map(|s| dominance_from_strength(*s, config.s_mid, config.s_steep))
                .collect()
        })
        .collect();
    let dom = SignalDominance::new(signal.antennas().to_vec(), rows, signal.n_tiles())?;
    Ok(emission_from_signal(&dom))
}

/// Geolocates every device of the event log on a pool of `config.workers` threads.
/// Results come back in device order.
pub fn geolocate_all(
    events: &EventLog,
    emission: &Emission,
    grid: &Grid,
    axis: &TimeAxis,
    config: &GeolocationConfig,
) -> Result<Vec<DeviceGeolocation>> {
    if emission.n_tiles() != grid.n_tiles() {
        return Err(Error::invalid(format!(
            "signal covers {} tiles, grid has {}",
            emission.n_tiles(),
            grid.n_tiles()
        )));
    }
    let groups = events.by_device();
    log::info!("geolocating {} devices on {} workers", groups.len(), config.workers);
    parallel::install(config.workers, || {
        groups
            .par_iter()
            .map(|(dev, evs)| geolocate_device(dev, evs, emission, grid, axis, config))
            .collect::<Result<Vec<_>>>()
    })?
}

/// Device models only (no smoothing), used to rebuild Bayes-factor inputs.
pub fn fit_all(
    events: &EventLog,
    emission: &Emission,
    grid: &Grid,
    axis: &TimeAxis,
    config: &GeolocationConfig,
) -> Result<Vec<DeviceModel>> {
    let groups = events.by_device();
    parallel::install(config.workers, || {
        groups
            .par_iter()
            .map(|(dev, evs)| fit_device(dev, evs, emission, grid, axis, config).map(|(m, _)| m))
            .collect::<Result<Vec<_>>>()
    })?
}

/// Writes one posterior and one joint file per device.
pub fn write_outputs(
    dir: impl AsRef<Path>,
    results: &[DeviceGeolocation],
    posterior_prefix: &str,
    joint_prefix: &str,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in results {
        io::write_posterior(io::device_file(dir, posterior_prefix, &r.device_id), &r.posterior)?;
        io::write_joint(io::device_file(dir, joint_prefix, &r.device_id), &r.joint)?;
    }
    Ok(())
}
