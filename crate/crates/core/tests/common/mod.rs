#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use mobcount::datamodel::{Adjacency, DuplicityTable, Grid, PosteriorLocation};
use mobcount::dedup::{compute_duplicity, DedupInputs, DedupMethod, DuplicityConfig};
use mobcount::geolocation::{
    self, emission_from_signal, transition_matrix, DeviceGeolocation, DeviceModel, GeolocationConfig,
    HmmModel, SparseTransition, TransitionParams,
};
use mobcount::simulator::{simulate, Scenario, Simulation};

/// Smoothed quantities by summing over every state path.
pub struct Exhaustive {
    pub posterior: Vec<Vec<f64>>,
    /// `joint[t][i][j]` for ticks `t, t+1`.
    pub joint: Vec<Vec<Vec<f64>>>,
    pub log_likelihood: f64,
}

pub fn exhaustive(initial: &[f64], a: &[Vec<f64>], lik: &[Vec<f64>]) -> Exhaustive {
    let n = initial.len();
    let t_len = lik.len();
    let mut posterior = vec![vec![0.0; n]; t_len];
    let mut joint = vec![vec![vec![0.0; n]; n]; t_len.saturating_sub(1)];
    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    let n_paths = n.pow(t_len as u32);
    for code in 0..n_paths {
        let mut c = code;
        for s in path.iter_mut() {
            *s = c % n;
            c /= n;
        }
        let mut w = initial[path[0]] * lik[0][path[0]];
        for t in 1..t_len {
            w *= a[path[t - 1]][path[t]] * lik[t][path[t]];
        }
        if w == 0.0 {
            continue;
        }
        total += w;
        for t in 0..t_len {
            posterior[t][path[t]] += w;
            if t + 1 < t_len {
                joint[t][path[t]][path[t + 1]] += w;
            }
        }
    }
    for row in posterior.iter_mut() {
        row.iter_mut().for_each(|p| *p /= total);
    }
    for m in joint.iter_mut() {
        for row in m.iter_mut() {
            row.iter_mut().for_each(|p| *p /= total);
        }
    }
    Exhaustive {
        posterior,
        joint,
        log_likelihood: total.ln(),
    }
}

pub struct HmmCase {
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub likelihoods: Vec<Vec<f64>>,
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Random HMM on a grid of at most 4 tiles with at most 4 ticks.
///
/// Half of the cases use the tied grid transition, the rest a dense random
/// stochastic matrix with some structural zeros. Likelihood vectors contain
/// zeros but always leave a feasible path.
pub fn random_case(rng: &mut ChaCha8Rng) -> HmmCase {
    let shapes = [(1, 1), (1, 2), (2, 1), (1, 3), (3, 1), (2, 2), (1, 4), (4, 1)];
    let (nx, ny) = shapes[rng.random_range(0..shapes.len())];
    let grid = Grid::square(nx, ny, 100.0).unwrap();
    let n = grid.n_tiles();
    let ticks = rng.random_range(1..=4);

    let transition = if rng.random_bool(0.5) {
        let adjacency = if rng.random_bool(0.5) {
            Adjacency::Queen
        } else {
            Adjacency::Rook
        };
        let params = TransitionParams {
            p_stay: rng.random_range(0.01..0.99),
            p_diag_ratio: rng.random_range(0.0..1.0),
        };
        transition_matrix(&grid, adjacency, params).to_dense()
    } else {
        (0..n)
            .map(|i| {
                let row = (0..n)
                    .map(|j| {
                        if i != j && rng.random_bool(0.3) {
                            0.0
                        } else {
                            rng.random_range(0.05..1.0)
                        }
                    })
                    .collect();
                normalized(row)
            })
            .collect()
    };

    let initial = normalized((0..n).map(|_| rng.random_range(0.01..1.0)).collect());

    // a hidden path keeps the observation sequence feasible
    let mut state = rng.random_range(0..n);
    let mut likelihoods = Vec::with_capacity(ticks);
    for t in 0..ticks {
        if t > 0 {
            let row = &transition[state];
            let u: f64 = rng.random::<f64>();
            let mut acc = 0.0;
            let mut next = state;
            for (j, p) in row.iter().enumerate() {
                acc += p;
                if u < acc && *p > 0.0 {
                    next = j;
                    break;
                }
            }
            state = next;
        }
        let lik: Vec<f64> = (0..n)
            .map(|j| {
                if j == state {
                    rng.random_range(0.1..1.0)
                } else if rng.random_bool(0.3) {
                    0.0
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        likelihoods.push(lik);
    }
    HmmCase {
        initial,
        transition,
        likelihoods,
    }
}

impl HmmCase {
    pub fn model(&self) -> HmmModel {
        HmmModel::new(
            self.initial.clone(),
            SparseTransition::from_dense(&self.transition).unwrap(),
        )
        .unwrap()
    }
}

/// Largest deviation between fast and exhaustive smoothing of `case`.
pub fn oracle_error(case: &HmmCase) -> f64 {
    let fast = geolocation::forward_backward(&case.model(), &case.likelihoods).unwrap();
    let slow = exhaustive(&case.initial, &case.transition, &case.likelihoods);
    let mut err: f64 = (fast.log_likelihood - slow.log_likelihood).abs();
    for (f, s) in fast.posterior.iter().zip(&slow.posterior) {
        for (x, y) in f.iter().zip(s) {
            err = err.max((x - y).abs());
        }
    }
    for (t, cells) in fast.joint.iter().enumerate() {
        let mut dense = vec![vec![0.0; case.initial.len()]; case.initial.len()];
        for &(i, j, p) in cells {
            dense[i][j] = p;
        }
        for (f, s) in dense.iter().zip(&slow.joint[t]) {
            for (x, y) in f.iter().zip(s) {
                err = err.max((x - y).abs());
            }
        }
    }
    err
}

pub fn geolocate(sim: &Simulation, workers: usize) -> Vec<DeviceGeolocation> {
    let emission = emission_from_signal(&sim.signal);
    let config = GeolocationConfig {
        workers,
        ..GeolocationConfig::default()
    };
    geolocation::geolocate_all(
        &sim.events,
        &emission,
        &sim.scenario.grid,
        &sim.scenario.time_axis,
        &config,
    )
    .unwrap()
}

pub fn scenario(seed: u64) -> Scenario {
    Scenario {
        seed,
        ..Scenario::default()
    }
}

pub fn duplicity(sim: &Simulation, geo: &[DeviceGeolocation], method: DedupMethod, workers: usize) -> DuplicityTable {
    let models: Vec<DeviceModel> = geo.iter().map(|g| g.model.clone()).collect();
    let posteriors: Vec<PosteriorLocation> = geo.iter().map(|g| g.posterior.clone()).collect();
    let config = DuplicityConfig {
        method,
        prior: 0.2,
        lambda: None,
        workers,
    };
    let inputs = DedupInputs {
        events: &sim.events,
        cells: Some(&sim.cells),
        grid: &sim.scenario.grid,
        adjacency: Adjacency::Queen,
        models: &models,
        posteriors: &posteriors,
    };
    compute_duplicity(&config, &inputs).unwrap()
}

/// Probability that a random true duplicate scores above a random singleton; ties count half.
pub fn ranking_quality(sim: &Simulation, dup: &DuplicityTable) -> Option<f64> {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (d, p) in dup.rows() {
        match sim.truth.is_duplicate(d) {
            Some(true) => pos.push(*p),
            Some(false) => neg.push(*p),
            None => {}
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in &pos {
        for q in &neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

pub fn simulated(seed: u64) -> Simulation {
    simulate(&scenario(seed)).unwrap()
}

/// Largest `|MC mean - direct sum| / standard error` over all `(time, region)` keys.
///
/// Keys whose draws have zero spread must match the direct sum to 1e-9.
pub fn mean_z_score(
    dup: &DuplicityTable,
    regions: &mobcount::datamodel::RegionPartition,
    posteriors: &[PosteriorLocation],
    draws: &mobcount::aggregation::CountDraws,
) -> f64 {
    let mut worst: f64 = 0.0;
    for ((time, region), values) in draws.by_key() {
        let mut expect = 0.0;
        for post in posteriors {
            let w = 1.0 - dup.get(&post.device_id).unwrap() / 2.0;
            for e in post.at(time) {
                if regions.region(e.tile) == region {
                    expect += e.prob * w;
                }
            }
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        if se == 0.0 {
            assert!((mean - expect).abs() < 1e-9, "({time}, {region}): {mean} vs {expect}");
        } else {
            worst = worst.max((mean - expect).abs() / se);
        }
    }
    worst
}

/// Draws whose total flow is a half-integer exactly when an odd number of
/// duplicates was sampled. Returns the number of violating draws.
pub fn parity_violations(
    dup: &DuplicityTable,
    joints: &[mobcount::datamodel::JointPosterior],
    od: &mobcount::aggregation::OdDraws,
    seed: u64,
) -> usize {
    let dup_p: Vec<f64> = joints.iter().map(|j| dup.get(&j.device_id).unwrap()).collect();
    let mut totals: std::collections::BTreeMap<(i64, u32), f64> = std::collections::BTreeMap::new();
    for d in &od.rows {
        *totals.entry((d.time_from, d.iter)).or_default() += d.n;
    }
    let mut bad = 0;
    for iter in 1..=od.n_iter() {
        let z = mobcount::aggregation::sample_duplicity_indicators(&dup_p, seed, iter);
        let odd = z.iter().filter(|x| **x).count() % 2 == 1;
        for (tf, _) in od.transitions() {
            let total = totals.get(&(tf, iter)).copied().unwrap_or(0.0);
            let half = (total - total.floor() - 0.5).abs() < 1e-9;
            if half != odd {
                bad += 1;
            }
        }
    }
    bad
}
