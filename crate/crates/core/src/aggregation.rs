//! Monte-Carlo draws of the number of individuals detected per region and time
//! and of origin-destination flows.
//!
//! Each draw samples, independently per device, a duplicity indicator
//! `z ~ Bernoulli(dupP)` (held for the whole draw) and a tile from the
//! device's posterior at every time. The device adds `1 - z/2` to the region
//! of its tile, so counts are multiples of one half.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{DuplicityTable, JointPosterior, PosteriorLocation, RegionPartition};
use crate::error::{Error, Result};
use crate::{parallel, seed};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountDraw {
    pub time: i64,
    pub region: u32,
    pub n: f64,
    /// 1-based draw index.
    pub iter: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountDraws {
    pub rows: Vec<CountDraw>,
}

impl CountDraws {
    /// Draw values per `(time, region)`, ordered by draw index.
    pub fn by_key(&self) -> BTreeMap<(i64, u32), Vec<f64>> {
        let mut rows: Vec<&CountDraw> = self.rows.iter().collect();
        rows.sort_by_key(|d| (d.time, d.region, d.iter));
        let mut out: BTreeMap<(i64, u32), Vec<f64>> = BTreeMap::new();
        for d in rows {
            out.entry((d.time, d.region)).or_default().push(d.n);
        }
        out
    }

    pub fn times(&self) -> Vec<i64> {
        let mut t: Vec<i64> = self.rows.iter().map(|d| d.time).collect();
        t.sort_unstable();
        t.dedup();
        t
    }

    pub fn n_iter(&self) -> u32 {
        self.rows.iter().map(|d| d.iter).max().unwrap_or(0)
    }

    /// Rows of one time instant.
    pub fn at(&self, time: i64) -> CountDraws {
        CountDraws {
            rows: self.rows.iter().filter(|d| d.time == time).copied().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdDraw {
    pub time_from: i64,
    pub time_to: i64,
    pub region_from: u32,
    pub region_to: u32,
    pub n: f64,
    pub iter: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OdDraws {
    pub rows: Vec<OdDraw>,
}

impl OdDraws {
    /// Distinct `(time_from, time_to)` pairs in order.
    pub fn transitions(&self) -> Vec<(i64, i64)> {
        let mut t: Vec<(i64, i64)> = self.rows.iter().map(|d| (d.time_from, d.time_to)).collect();
        t.sort_unstable();
        t.dedup();
        t
    }

    pub fn n_iter(&self) -> u32 {
        self.rows.iter().map(|d| d.iter).max().unwrap_or(0)
    }

    /// Flow matrix `[region_from - 1][region_to - 1]` of one draw and transition.
    pub fn matrix(&self, time_from: i64, iter: u32, n_regions: usize) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; n_regions]; n_regions];
        for d in self
            .rows
            .iter()
            .filter(|d| d.time_from == time_from && d.iter == iter)
        {
            m[d.region_from as usize - 1][d.region_to as usize - 1] += d.n;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    pub n_draws: u32,
    pub seed: u64,
    pub workers: usize,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            n_draws: 100,
            seed: 1,
            workers: 1,
        }
    }
}

/// Duplicity indicators `z_d ~ Bernoulli(dupP_d)` of draw `iter`.
///
/// The same `(seed, iter)` gives the same indicators in every sampler, so
/// count and flow draws with equal index share their duplicates.
pub fn sample_duplicity_indicators(dup_p: &[f64], seed: u64, iter: u32) -> Vec<bool> {
    let mut rng = seed::rng_for_index(seed, "duplicity", iter as u64);
    dup_p.iter().map(|p| rng.random::<f64>() < *p).collect()
}

/// Discrete distribution prepared for inverse-CDF sampling.
#[derive(Debug, Clone)]
struct Categorical<T> {
    values: Vec<T>,
    cdf: Vec<f64>,
}

impl<T: Copy> Categorical<T> {
    fn new(items: impl Iterator<Item = (T, f64)>) -> Self {
        let mut values = Vec::new();
        let mut cdf = Vec::new();
        let mut acc = 0.0;
        for (v, p) in items {
            acc += p;
            values.push(v);
            cdf.push(acc);
        }
        Categorical { values, cdf }
    }

    fn sample(&self, rng: &mut impl Rng) -> T {
        let total = *self.cdf.last().expect("nonempty distribution");
        let u = rng.random::<f64>() * total;
        let k = self.cdf.partition_point(|c| *c <= u).min(self.values.len() - 1);
        self.values[k]
    }
}

fn duplicity_for<'a>(
    dup: &DuplicityTable,
    devices: impl Iterator<Item = &'a str>,
) -> Result<Vec<f64>> {
    devices
        .map(|d| {
            dup.get(d)
                .ok_or_else(|| Error::invalid(format!("device {d} has no duplicity probability")))
        })
        .collect()
}

fn region_index(regions: &RegionPartition, tile: usize, device: &str) -> Result<usize> {
    if tile >= regions.n_tiles() {
        return Err(Error::invalid(format!(
            "device {device}: tile {tile} outside the region partition ({} tiles)",
            regions.n_tiles()
        )));
    }
    Ok(regions.region(tile) as usize - 1)
}

/// Per device and time, region-level location distribution.
fn location_tables(
    posteriors: &[PosteriorLocation],
    regions: &RegionPartition,
    times: &[i64],
) -> Result<Vec<Vec<Categorical<usize>>>> {
    posteriors
        .iter()
        .map(|post| {
            times
                .iter()
                .map(|&t| {
                    let entries = post.at(t);
                    if entries.is_empty() {
                        return Err(Error::invalid(format!(
                            "device {} has no posterior at time {t}",
                            post.device_id
                        )));
                    }
                    let items = entries
                        .iter()
                        .map(|e| Ok((region_index(regions, e.tile, &post.device_id)?, e.prob)))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(Categorical::new(items.into_iter()))
                })
                .collect()
        })
        .collect()
}

fn flow_tables(
    joints: &[JointPosterior],
    regions: &RegionPartition,
    times: &[i64],
) -> Result<Vec<Vec<Categorical<(usize, usize)>>>> {
    joints
        .iter()
        .map(|joint| {
            times
                .windows(2)
                .map(|w| {
                    let entries = joint.at(w[0]);
                    if entries.is_empty() || entries.iter().any(|e| e.time_to != w[1]) {
                        return Err(Error::invalid(format!(
                            "device {} has no joint posterior for {} -> {}",
                            joint.device_id, w[0], w[1]
                        )));
                    }
                    let items = entries
                        .iter()
                        .map(|e| {
                            Ok((
                                (
                                    region_index(regions, e.tile_from, &joint.device_id)?,
                                    region_index(regions, e.tile_to, &joint.device_id)?,
                                ),
                                e.prob,
                            ))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(Categorical::new(items.into_iter()))
                })
                .collect()
        })
        .collect()
}

fn check_draws(n: u32) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("number of draws must be at least 1"));
    }
    Ok(())
}

/// Draws of detected individuals per `(time, region)`.
///
/// Rows cover every time and region (zeros included), sorted by `(time, region, iter)`.
pub fn r_nnet_event(
    dup: &DuplicityTable,
    regions: &RegionPartition,
    posteriors: &[PosteriorLocation],
    times: &[i64],
    config: &AggregationConfig,
) -> Result<CountDraws> {
    check_draws(config.n_draws)?;
    let dup_p = duplicity_for(dup, posteriors.iter().map(|p| p.device_id.as_str()))?;
    let tables = location_tables(posteriors, regions, times)?;
    let n_regions = regions.n_regions();

    let draw = |iter: u32| -> Vec<Vec<f64>> {
        let z = sample_duplicity_indicators(&dup_p, config.seed, iter);
        let mut rng = seed::rng_for_index(config.seed, "locations", iter as u64);
        let mut counts = vec![vec![0.0; n_regions]; times.len()];
        for (d, per_time) in tables.iter().enumerate() {
            let w = if z[d] { 0.5 } else { 1.0 };
            for (k, cat) in per_time.iter().enumerate() {
                counts[k][cat.sample(&mut rng)] += w;
            }
        }
        counts
    };
    let per_draw: Vec<Vec<Vec<f64>>> = parallel::install(config.workers, || {
        (1..=config.n_draws).into_par_iter().map(draw).collect()
    })?;

    let mut rows = Vec::with_capacity(times.len() * n_regions * config.n_draws as usize);
    for (k, &time) in times.iter().enumerate() {
        for r in 0..n_regions {
            for (i, counts) in per_draw.iter().enumerate() {
                rows.push(CountDraw {
                    time,
                    region: r as u32 + 1,
                    n: counts[k][r],
                    iter: i as u32 + 1,
                });
            }
        }
    }
    Ok(CountDraws { rows })
}

fn od_draws_inner(
    dup: &DuplicityTable,
    regions: &RegionPartition,
    joints: &[JointPosterior],
    times: &[i64],
    config: &AggregationConfig,
) -> Result<(OdDraws, CountDraws)> {
    check_draws(config.n_draws)?;
    if times.len() < 2 {
        return Err(Error::invalid("flows need at least two time instants"));
    }
    let dup_p = duplicity_for(dup, joints.iter().map(|j| j.device_id.as_str()))?;
    let tables = flow_tables(joints, regions, times)?;
    let n_regions = regions.n_regions();
    let n_pairs = times.len() - 1;

    let draw = |iter: u32| -> Vec<Vec<Vec<f64>>> {
        let z = sample_duplicity_indicators(&dup_p, config.seed, iter);
        let mut rng = seed::rng_for_index(config.seed, "flows", iter as u64);
        let mut flows = vec![vec![vec![0.0; n_regions]; n_regions]; n_pairs];
        for (d, per_pair) in tables.iter().enumerate() {
            let w = if z[d] { 0.5 } else { 1.0 };
            for (k, cat) in per_pair.iter().enumerate() {
                let (a, b) = cat.sample(&mut rng);
                flows[k][a][b] += w;
            }
        }
        flows
    };
    let per_draw: Vec<Vec<Vec<Vec<f64>>>> = parallel::install(config.workers, || {
        (1..=config.n_draws).into_par_iter().map(draw).collect()
    })?;

    let mut od = Vec::with_capacity(n_pairs * n_regions * n_regions * config.n_draws as usize);
    let mut counts = Vec::with_capacity(n_pairs * n_regions * config.n_draws as usize);
    for k in 0..n_pairs {
        for a in 0..n_regions {
            for b in 0..n_regions {
                for (i, flows) in per_draw.iter().enumerate() {
                    od.push(OdDraw {
                        time_from: times[k],
                        time_to: times[k + 1],
                        region_from: a as u32 + 1,
                        region_to: b as u32 + 1,
                        n: flows[k][a][b],
                        iter: i as u32 + 1,
                    });
                }
            }
            for (i, flows) in per_draw.iter().enumerate() {
                counts.push(CountDraw {
                    time: times[k],
                    region: a as u32 + 1,
                    n: flows[k][a].iter().sum(),
                    iter: i as u32 + 1,
                });
            }
        }
    }
    Ok((OdDraws { rows: od }, CountDraws { rows: counts }))
}

/// Draws of detected flows between regions over consecutive time instants.
///
/// Rows cover every region pair (zeros included), sorted by
/// `(time_from, region_from, region_to, iter)`.
pub fn r_nnet_event_od(
    dup: &DuplicityTable,
    regions: &RegionPartition,
    joints: &[JointPosterior],
    times: &[i64],
    config: &AggregationConfig,
) -> Result<OdDraws> {
    od_draws_inner(dup, regions, joints, times, config).map(|(od, _)| od)
}

/// Flow draws together with the origin counts implied by the same sampled tiles.
pub fn r_nnet_event_od_coupled(
    dup: &DuplicityTable,
    regions: &RegionPartition,
    joints: &[JointPosterior],
    times: &[i64],
    config: &AggregationConfig,
) -> Result<(OdDraws, CountDraws)> {
    od_draws_inner(dup, regions, joints, times, config)
}

/// Exact expectation `sum_d P_d(r, t) (1 - dupP_d / 2)` of each count.
pub fn expected_counts(
    dup: &DuplicityTable,
    regions: &RegionPartition,
    posteriors: &[PosteriorLocation],
    times: &[i64],
) -> Result<BTreeMap<(i64, u32), f64>> {
    let mut out = BTreeMap::new();
    for &t in times {
        for r in regions.region_ids() {
            out.insert((t, r), 0.0);
        }
    }
    for post in posteriors {
        let p = dup
            .get(&post.device_id)
            .ok_or_else(|| Error::invalid(format!("device {} has no duplicity probability", post.device_id)))?;
        let w = 1.0 - p / 2.0;
        for &t in times {
            for e in post.at(t) {
                let r = region_index(regions, e.tile, &post.device_id)? as u32 + 1;
                *out.get_mut(&(t, r)).expect("key inserted above") += e.prob * w;
            }
        }
    }
    Ok(out)
}
