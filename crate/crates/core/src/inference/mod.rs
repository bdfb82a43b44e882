//! Target-population distributions conditioned on detected counts.
//!
//! Deduplication factors turn devices into individuals, register population
//! and penetration rate give a per-region detection probability, and each
//! detected-count draw `N` is completed with an undetected part `M` so that
//! `NPop = N + M`. Later times and origin-destination matrices redistribute
//! the initial populations along the detected flow proportions.

mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{CountDraws, OdDraws};
use crate::datamodel::{
    DuplicityTable, PenetrationRate, PosteriorLocation, RegionPartition, RegisterPopulation,
};
use crate::error::{Error, Result};
use crate::{parallel, seed};

pub use stats::{compute_stats, mode, quantile_sorted, StatsTable, Summary};

/// Individuals per detected device, per region.
#[derive(Debug, Clone, PartialEq)]
pub struct DeduplicationFactors {
    pub omega: BTreeMap<u32, f64>,
}

/// `omega_r = sum_d P_d(r) (1 - dupP_d / 2) / sum_d P_d(r)` at time `t0`.
///
/// Regions without device mass get `1 - mean(dupP) / 2`.
pub fn compute_dedup_factors(
    dup: &DuplicityTable,
    posteriors: &[PosteriorLocation],
    regions: &RegionPartition,
    t0: i64,
) -> Result<DeduplicationFactors> {
    let n = regions.n_regions();
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    for post in posteriors {
        let p = dup.get(&post.device_id).ok_or_else(|| {
            Error::invalid(format!("device {} has no duplicity probability", post.device_id))
        })?;
        for e in post.at(t0) {
            if e.tile >= regions.n_tiles() {
                return Err(Error::invalid(format!(
                    "device {}: tile {} outside the region partition",
                    post.device_id, e.tile
                )));
            }
            let r = regions.region(e.tile) as usize - 1;
            num[r] += e.prob * (1.0 - p / 2.0);
            den[r] += e.prob;
        }
    }
    let fallback = 1.0 - dup.mean() / 2.0;
    let omega = (0..n)
        .map(|r| {
            let w = if den[r] > 0.0 { num[r] / den[r] } else { fallback };
            (r as u32 + 1, w.clamp(0.5, 1.0))
        })
        .collect();
    Ok(DeduplicationFactors { omega })
}

/// Detection model of one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionParams {
    /// Probability that an individual of the region is detected.
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Register population, the prior strength `alpha + beta`.
    pub n0: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistrParams {
    pub regions: BTreeMap<u32, RegionParams>,
}

/// `p_r = min(1, pntRate_r omega_r)`, `alpha = p N0`, `beta = (1 - p) N0`.
pub fn compute_distr_params(
    omega: &DeduplicationFactors,
    register: &RegisterPopulation,
    pnt_rate: &PenetrationRate,
) -> Result<DistrParams> {
    let mut out = BTreeMap::new();
    for (&r, &w) in &omega.omega {
        let n0 = *register
            .counts
            .get(&r)
            .ok_or_else(|| Error::invalid(format!("register has no population for region {r}")))?;
        let rate = *pnt_rate
            .rates
            .get(&r)
            .ok_or_else(|| Error::invalid(format!("no penetration rate for region {r}")))?;
        let raw = rate * w;
        if raw > 1.0 {
            log::warn!("region {r}: penetration rate x deduplication factor = {raw} > 1; detection probability clipped to 1");
        }
        let p = raw.min(1.0);
        out.insert(
            r,
            RegionParams {
                p,
                alpha: p * n0 as f64,
                beta: (1.0 - p) * n0 as f64,
                n0,
            },
        );
    }
    Ok(DistrParams { regions: out })
}

/// Distribution family of the undetected population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PopDistr {
    #[default]
    BetaNegBin,
    NegBin,
    STNegBin,
}

impl PopDistr {
    pub const LABELS: [&'static str; 3] = ["BetaNegBin", "NegBin", "STNegBin"];
}

impl fmt::Display for PopDistr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PopDistr::BetaNegBin => "BetaNegBin",
            PopDistr::NegBin => "NegBin",
            PopDistr::STNegBin => "STNegBin",
        })
    }
}

impl FromStr for PopDistr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "BetaNegBin" => Ok(PopDistr::BetaNegBin),
            "NegBin" => Ok(PopDistr::NegBin),
            "STNegBin" => Ok(PopDistr::STNegBin),
            other => Err(Error::invalid(format!(
                "unknown population distribution `{other}`; valid labels: {}",
                PopDistr::LABELS.join(", ")
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub pop_distr: PopDistr,
    /// Variance inflation of the state-process variant.
    pub dispersion: f64,
    pub ci_level: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            pop_distr: PopDistr::BetaNegBin,
            dispersion: 1.5,
            ci_level: 0.9,
            seed: 1,
            workers: 1,
        }
    }
}

const MIN_DETECTION: f64 = 1e-9;

/// Gamma-Poisson draw with the given mean and Gamma scale.
fn gamma_poisson(mean: f64, scale: f64, rng: &mut impl Rng) -> Result<f64> {
    if mean <= 0.0 {
        return Ok(0.0);
    }
    let shape = mean / scale;
    let lambda = Gamma::new(shape, scale)
        .map_err(|e| Error::Numerical(format!("gamma(shape {shape}, scale {scale}): {e}")))?
        .sample(rng);
    if lambda <= 0.0 {
        return Ok(0.0);
    }
    let m: f64 = Poisson::new(lambda)
        .map_err(|e| Error::Numerical(format!("poisson({lambda}): {e}")))?
        .sample(rng);
    Ok(m)
}

/// Undetected individuals `M` given `n` detected ones.
///
/// `NegBin`: `M ~ NB(n + 1, p)`. `BetaNegBin`: the same after drawing
/// `p ~ Beta(alpha, beta)`. `STNegBin`: same mean as `NegBin`, variance
/// multiplied by `dispersion`. Full detection gives `M = 0`.
pub fn sample_undetected(
    n: f64,
    params: &RegionParams,
    distr: PopDistr,
    dispersion: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut p = params.p;
    if p >= 1.0 {
        return Ok(0.0);
    }
    if distr == PopDistr::BetaNegBin && params.alpha > 0.0 && params.beta > 0.0 {
        p = Beta::new(params.alpha, params.beta)
            .map_err(|e| Error::Numerical(format!("beta({}, {}): {e}", params.alpha, params.beta)))?
            .sample(rng);
        if p >= 1.0 {
            return Ok(0.0);
        }
    }
    let p = p.max(MIN_DETECTION);
    let mean = (n + 1.0) * (1.0 - p) / p;
    let scale = match distr {
        PopDistr::STNegBin => (dispersion / p - 1.0).max(f64::MIN_POSITIVE),
        _ => (1.0 - p) / p,
    };
    gamma_poisson(mean, scale, rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationDraw {
    pub region: u32,
    pub iter: u32,
    /// Detected count of the aggregation draw.
    pub n: f64,
    pub npop: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PopulationDraws {
    pub rows: Vec<PopulationDraw>,
}

impl PopulationDraws {
    /// Population vectors by draw index, indexed by `region - 1`.
    pub fn by_iter(&self, n_regions: usize) -> BTreeMap<u32, Vec<f64>> {
        let mut out: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for d in &self.rows {
            out.entry(d.iter).or_insert_with(|| vec![0.0; n_regions])[d.region as usize - 1] = d.npop;
        }
        out
    }

    pub fn n_regions(&self) -> usize {
        self.rows.iter().map(|d| d.region).max().unwrap_or(0) as usize
    }
}

fn stats_table<K: Ord + Clone>(groups: BTreeMap<K, Vec<f64>>, ci_level: f64) -> StatsTable<K> {
    let rows: Vec<(K, Summary)> = groups
        .into_iter()
        .filter_map(|(k, v)| compute_stats(&v, ci_level).map(|s| (k, s)))
        .collect();
    let zero_mean = rows.iter().filter(|(_, s)| s.mean == 0.0).count();
    if zero_mean > 0 {
        log::warn!("{zero_mean} of {} rows have zero mean; their CV is reported as 0", rows.len());
    }
    StatsTable { rows }
}

/// Population draws at `t0` (the earliest time in `nnet` when `None`) and their statistics.
pub fn compute_initial_population(
    nnet: &CountDraws,
    t0: Option<i64>,
    params: &DistrParams,
    config: &InferenceConfig,
) -> Result<(StatsTable<u32>, PopulationDraws)> {
    let t0 = match t0.or_else(|| nnet.times().first().copied()) {
        Some(t) => t,
        None => return Err(Error::invalid("no detected-count draws")),
    };
    let mut inputs: Vec<(u32, u32, f64)> = nnet
        .rows
        .iter()
        .filter(|d| d.time == t0)
        .map(|d| (d.region, d.iter, d.n))
        .collect();
    if inputs.is_empty() {
        return Err(Error::invalid(format!("no detected-count draws at time {t0}")));
    }
    inputs.sort_by_key(|(r, i, _)| (*r, *i));
    for (r, _, _) in &inputs {
        if !params.regions.contains_key(r) {
            return Err(Error::invalid(format!("no distribution parameters for region {r}")));
        }
    }

    let rows = parallel::install(config.workers, || {
        inputs
            .par_iter()
            .map(|&(region, iter, n)| {
                let mut rng = seed::rng_for_index(config.seed, &format!("population/{region}"), iter as u64);
                let m = sample_undetected(n, &params.regions[&region], config.pop_distr, config.dispersion, &mut rng)?;
                Ok(PopulationDraw {
                    region,
                    iter,
                    n,
                    npop: n + m,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for d in &rows {
        groups.entry(d.region).or_default().push(d.npop);
    }
    Ok((stats_table(groups, config.ci_level), PopulationDraws { rows }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionTimeDraw {
    pub time: i64,
    pub region: u32,
    pub iter: u32,
    pub npop: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdPopulationDraw {
    pub time_from: i64,
    pub time_to: i64,
    pub region_from: u32,
    pub region_to: u32,
    pub iter: u32,
    pub npop: f64,
}

/// Rounds `values` to multiples of `unit` at random so that each value is
/// rounded up with probability equal to its fractional part and the rounded
/// sum differs from the exact sum by less than one unit. When the exact sum
/// is a multiple of `unit` it is preserved.
pub fn stochastic_round(values: &[f64], unit: f64, rng: &mut impl Rng) -> Vec<f64> {
    let scaled: Vec<f64> = values.iter().map(|v| v / unit).collect();
    let floors: Vec<f64> = scaled.iter().map(|v| v.floor()).collect();
    let fracs: Vec<f64> = scaled.iter().zip(&floors).map(|(v, f)| v - f).collect();
    let total: f64 = fracs.iter().sum();
    let snapped = if (total - total.round()).abs() < 1e-9 {
        total.round()
    } else {
        total
    };
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut prev = u.floor();
    let mut out = Vec::with_capacity(values.len());
    for (k, (f, fr)) in floors.iter().zip(&fracs).enumerate() {
        cum += fr;
        if k + 1 == fracs.len() {
            cum = snapped;
        }
        let level = (u + cum + 1e-12).floor();
        out.push((f + (level - prev)) * unit);
        prev = level;
    }
    out
}

/// Per-draw redistribution shared by the dynamic and OD population estimates.
#[derive(Debug, Clone)]
struct Evolution {
    times: Vec<i64>,
    /// `[iter][time][region]`
    populations: Vec<Vec<Vec<f64>>>,
    /// `[iter][transition][from][to]`
    flows: Vec<Vec<Vec<Vec<f64>>>>,
    iters: Vec<u32>,
}

fn evolve(nt0: &PopulationDraws, od: &OdDraws, config: &InferenceConfig) -> Result<Evolution> {
    let transitions = od.transitions();
    if transitions.is_empty() {
        return Err(Error::invalid("no origin-destination draws"));
    }
    for w in transitions.windows(2) {
        if w[0].1 != w[1].0 {
            return Err(Error::invalid(format!(
                "origin-destination draws miss the transition starting at {}",
                w[0].1
            )));
        }
    }
    let n_regions = nt0
        .n_regions()
        .max(od.rows.iter().map(|d| d.region_from.max(d.region_to)).max().unwrap_or(0) as usize);
    let starts = nt0.by_iter(n_regions);
    let unit = if nt0.rows.iter().all(|d| d.npop.fract() == 0.0) {
        1.0
    } else {
        0.5
    };

    // flow matrices indexed by (time_from, iter)
    let n_od_iter = od.n_iter();
    let mut matrices: BTreeMap<(i64, u32), Vec<Vec<f64>>> = BTreeMap::new();
    for d in &od.rows {
        matrices
            .entry((d.time_from, d.iter))
            .or_insert_with(|| vec![vec![0.0; n_regions]; n_regions])[d.region_from as usize - 1]
            [d.region_to as usize - 1] += d.n;
    }
    if starts.len() as u32 != n_od_iter {
        log::warn!(
            "{} population draws but {} flow draws; flow draws are reused cyclically",
            starts.len(),
            n_od_iter
        );
    }

    let mut times = vec![transitions[0].0];
    times.extend(transitions.iter().map(|t| t.1));
    let iters: Vec<u32> = starts.keys().copied().collect();
    let run = |iter: u32| -> Result<(Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>)> {
        let od_iter = (iter - 1) % n_od_iter + 1;
        let mut rng = seed::rng_for_index(config.seed, "redistribution", iter as u64);
        let mut pops = vec![starts[&iter].clone()];
        let mut flows = Vec::with_capacity(transitions.len());
        for &(tf, _) in &transitions {
            let m = matrices.get(&(tf, od_iter)).ok_or_else(|| {
                Error::invalid(format!("no flow draw {od_iter} for the transition starting at {tf}"))
            })?;
            let current = pops.last().expect("initial population");
            let mut cells = vec![vec![0.0; n_regions]; n_regions];
            for r in 0..n_regions {
                let out: f64 = m[r].iter().sum();
                if out <= 0.0 {
                    cells[r][r] = current[r];
                    continue;
                }
                let exact: Vec<f64> = m[r].iter().map(|x| current[r] * x / out).collect();
                cells[r] = stochastic_round(&exact, unit, &mut rng);
            }
            let next = (0..n_regions).map(|s| cells.iter().map(|row| row[s]).sum()).collect();
            flows.push(cells);
            pops.push(next);
        }
        Ok((pops, flows))
    };
    let results = parallel::install(config.workers, || {
        iters.par_iter().map(|&i| run(i)).collect::<Result<Vec<_>>>()
    })??;
    let (populations, flows) = results.into_iter().unzip();
    Ok(Evolution {
        times,
        populations,
        flows,
        iters,
    })
}

/// Population draws at every time, starting from the initial draws.
pub fn compute_population_t(
    nt0: &PopulationDraws,
    od: &OdDraws,
    config: &InferenceConfig,
) -> Result<(StatsTable<(i64, u32)>, Vec<RegionTimeDraw>)> {
    let ev = evolve(nt0, od, config)?;
    let mut rows = Vec::new();
    let mut groups: BTreeMap<(i64, u32), Vec<f64>> = BTreeMap::new();
    for (k, &time) in ev.times.iter().enumerate() {
        let n_regions = ev.populations.first().map_or(0, |p| p[k].len());
        for r in 0..n_regions {
            for (i, &iter) in ev.iters.iter().enumerate() {
                let npop = ev.populations[i][k][r];
                rows.push(RegionTimeDraw {
                    time,
                    region: r as u32 + 1,
                    iter,
                    npop,
                });
                groups.entry((time, r as u32 + 1)).or_default().push(npop);
            }
        }
    }
    Ok((stats_table(groups, config.ci_level), rows))
}

/// Origin-destination population draws for every transition.
pub fn compute_population_od(
    nt0: &PopulationDraws,
    od: &OdDraws,
    config: &InferenceConfig,
) -> Result<(StatsTable<(i64, i64, u32, u32)>, Vec<OdPopulationDraw>)> {
    let ev = evolve(nt0, od, config)?;
    let mut rows = Vec::new();
    let mut groups: BTreeMap<(i64, i64, u32, u32), Vec<f64>> = BTreeMap::new();
    for k in 0..ev.times.len() - 1 {
        let (tf, tt) = (ev.times[k], ev.times[k + 1]);
        let n_regions = ev.flows.first().map_or(0, |f| f[k].len());
        for a in 0..n_regions {
            for b in 0..n_regions {
                let key = (tf, tt, a as u32 + 1, b as u32 + 1);
                for (i, &iter) in ev.iters.iter().enumerate() {
                    let npop = ev.flows[i][k][a][b];
                    rows.push(OdPopulationDraw {
                        time_from: tf,
                        time_to: tt,
                        region_from: key.2,
                        region_to: key.3,
                        iter,
                        npop,
                    });
                    groups.entry(key).or_default().push(npop);
                }
            }
        }
    }
    Ok((stats_table(groups, config.ci_level), rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pop_distr_labels() {
        for l in PopDistr::LABELS {
            assert_eq!(l.parse::<PopDistr>().unwrap().to_string(), l);
        }
        let err = "Poisson".parse::<PopDistr>().unwrap_err().to_string();
        assert!(err.contains("BetaNegBin") && err.contains("STNegBin"));
    }

    #[test]
    fn full_detection_adds_nothing() {
        let params = RegionParams {
            p: 1.0,
            alpha: 10.0,
            beta: 0.0,
            n0: 10,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [PopDistr::NegBin, PopDistr::BetaNegBin, PopDistr::STNegBin] {
            assert_eq!(sample_undetected(7.5, &params, d, 1.5, &mut rng).unwrap(), 0.0);
        }
    }

    #[test]
    fn register_example_params() {
        let omega = DeduplicationFactors {
            omega: [(1, 1.0)].into_iter().collect(),
        };
        let reg = RegisterPopulation {
            counts: [(1, 38)].into_iter().collect(),
        };
        let rate = PenetrationRate::new([(1, 0.3684211)].into_iter().collect()).unwrap();
        let p = compute_distr_params(&omega, &reg, &rate).unwrap().regions[&1];
        assert_eq!(p.p, 0.3684211);
        assert!((p.alpha + p.beta - 38.0).abs() < 1e-12);
    }

    #[test]
    fn rounding_preserves_integral_totals() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let v = [3.3, 2.2, 4.5];
            let r = stochastic_round(&v, 1.0, &mut rng);
            assert_eq!(r.iter().sum::<f64>(), 10.0);
            for (a, b) in r.iter().zip(&v) {
                assert!((a - b).abs() < 1.0 && a.fract() == 0.0);
            }
        }
        assert_eq!(stochastic_round(&[2.0, 0.0], 1.0, &mut rng), vec![2.0, 0.0]);
        assert_eq!(stochastic_round(&[2.5], 0.5, &mut rng), vec![2.5]);
    }
}
