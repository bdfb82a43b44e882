//! Tile-level HMM: sparse transition model and scaled forward-backward.

use serde::{Deserialize, Serialize};

use crate::datamodel::{Adjacency, Grid};
use crate::error::{Error, Result};

/// Tied transition parameters shared by every tile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionParams {
    /// Probability of staying in the current tile.
    pub p_stay: f64,
    /// Weight of a diagonal move relative to an orthogonal one (queen only).
    pub p_diag_ratio: f64,
}

impl Default for TransitionParams {
    fn default() -> Self {
        TransitionParams {
            p_stay: 0.5,
            p_diag_ratio: 0.5,
        }
    }
}

/// Row-stochastic matrix stored as per-row `(column, probability)` lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTransition {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseTransition {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            let mut sum = 0.0;
            for &(j, p) in row {
                if j >= n || !(p.is_finite() && p >= 0.0) {
                    return Err(Error::invalid(format!(
                        "transition row {i} has invalid entry ({j}, {p})"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("transition row {i} sums to {sum}")));
            }
        }
        Ok(SparseTransition { rows })
    }

    /// Keeps the nonzero entries of a dense row-stochastic matrix.
    pub fn from_dense(dense: &[Vec<f64>]) -> Result<Self> {
        let rows = dense
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, p)| **p != 0.0)
                    .map(|(j, p)| (j, *p))
                    .collect()
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|(c, _)| *c == j)
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n_states();
        self.rows
            .iter()
            .map(|r| {
                let mut d = vec![0.0; n];
                for &(j, p) in r {
                    d[j] += p;
                }
                d
            })
            .collect()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Builds the tied-parameter transition matrix of a grid.
///
/// Each tile keeps `p_stay` on itself and spreads `1 - p_stay` over its
/// neighbours, orthogonal ones with weight 1 and diagonal ones with weight
/// `p_diag_ratio`. Border tiles renormalize over the neighbours they have; a
/// tile with no reachable neighbour stays put with probability 1.
pub fn transition_matrix(grid: &Grid, adjacency: Adjacency, params: TransitionParams) -> SparseTransition {
    let p_stay = params.p_stay.clamp(0.0, 1.0);
    let diag = params.p_diag_ratio.clamp(0.0, 1.0);
    let rows = (0..grid.n_tiles())
        .map(|i| {
            let neigh = grid.neighbors(i, adjacency).expect("tile in range");
            let weights: Vec<(usize, f64)> = neigh
                .iter()
                .map(|n| (n.tile, if n.diagonal { diag } else { 1.0 }))
                .filter(|(_, w)| *w > 0.0)
                .collect();
            let total: f64 = weights.iter().map(|(_, w)| w).sum();
            if total <= 0.0 || p_stay >= 1.0 {
                return vec![(i, 1.0)];
            }
            let move_mass = 1.0 - p_stay;
            let mut row = Vec::with_capacity(weights.len() + 1);
            if p_stay > 0.0 {
                row.push((i, p_stay));
            }
            row.extend(weights.iter().map(|&(j, w)| (j, move_mass * w / total)));
            row.sort_by_key(|(j, _)| *j);
            row
        })
        .collect();
    SparseTransition { rows }
}

/// Initial distribution plus transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    pub initial: Vec<f64>,
    pub transition: SparseTransition,
}

impl HmmModel {
    pub fn new(initial: Vec<f64>, transition: SparseTransition) -> Result<Self> {
        if initial.len() != transition.n_states() {
            return Err(Error::invalid(format!(
                "initial distribution has {} states, transition matrix {}",
                initial.len(),
                transition.n_states()
            )));
        }
        let s: f64 = initial.iter().sum();
        if initial.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("initial distribution sums to {s}")));
        }
        Ok(HmmModel {
            initial,
            transition,
        })
    }

    pub fn n_states(&self) -> usize {
        self.initial.len()
    }
}

/// Smoothed output of forward-backward over one observation sequence.
#[derive(Debug, Clone)]
pub struct Smoothed {
    /// `posterior[t][i]` = P(state i at tick t | all observations).
    pub posterior: Vec<Vec<f64>>,
    /// `joint[t]` lists `(i, j, P(state i at t, state j at t+1 | all))`, nonzero entries only.
    pub joint: Vec<Vec<(usize, usize, f64)>>,
    pub log_likelihood: f64,
}

fn check_shapes(model: &HmmModel, likelihoods: &[Vec<f64>]) -> Result<()> {
    if likelihoods.is_empty() {
        return Err(Error::invalid("forward-backward needs at least one tick"));
    }
    if let Some((t, _)) = likelihoods
        .iter()
        .enumerate()
        .find(|(_, l)| l.len() != model.n_states())
    {
        return Err(Error::invalid(format!(
            "likelihood vector at tick {t} has wrong length"
        )));
    }
    Ok(())
}

/// Scaled forward pass. Returns normalized alphas and the scaling constants.
fn forward(model: &HmmModel, likelihoods: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = model.n_states();
    let mut alphas: Vec<Vec<f64>> = Vec::with_capacity(likelihoods.len());
    let mut scales = Vec::with_capacity(likelihoods.len());
    let mut pred = model.initial.clone();
    for (t, lik) in likelihoods.iter().enumerate() {
        if t > 0 {
            pred.iter_mut().for_each(|p| *p = 0.0);
            let prev = &alphas[t - 1];
            for (i, &a) in prev.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for &(j, p) in model.transition.row(i) {
                    pred[j] += a * p;
                }
            }
        }
        let mut alpha: Vec<f64> = pred.iter().zip(lik).map(|(p, l)| p * l).collect();
        let c: f64 = alpha.iter().sum();
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::ImpossibleObservation { tick: t });
        }
        alpha.iter_mut().for_each(|a| *a /= c);
        debug_assert_eq!(alpha.len(), n);
        alphas.push(alpha);
        scales.push(c);
    }
    Ok((alphas, scales))
}

/// Log-likelihood of the observations, `sum_t ln c_t`.
pub fn log_likelihood(model: &HmmModel, likelihoods: &[Vec<f64>]) -> Result<f64> {
    check_shapes(model, likelihoods)?;
    let n = model.n_states();
    let mut alpha = vec![0.0; n];
    let mut pred = model.initial.clone();
    let mut ll = 0.0;
    for (t, lik) in likelihoods.iter().enumerate() {
        if t > 0 {
            pred.iter_mut().for_each(|p| *p = 0.0);
            for (i, &a) in alpha.iter().enumerate() {
                if a != 0.0 {
                    for &(j, p) in model.transition.row(i) {
                        pred[j] += a * p;
                    }
                }
            }
        }
        let mut c = 0.0;
        for ((a, p), l) in alpha.iter_mut().zip(&pred).zip(lik) {
            *a = p * l;
            c += *a;
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::ImpossibleObservation { tick: t });
        }
        alpha.iter_mut().for_each(|a| *a /= c);
        ll += c.ln();
    }
    Ok(ll)
}

/// Scaled forward-backward smoothing.
pub fn forward_backward(model: &HmmModel, likelihoods: &[Vec<f64>]) -> Result<Smoothed> {
    check_shapes(model, likelihoods)?;
    let n = model.n_states();
    let n_ticks = likelihoods.len();
    let (alphas, scales) = forward(model, likelihoods)?;

    // beta_hat[t](i) = sum_j T(i,j) L_{t+1}(j) beta_hat[t+1](j) / c_{t+1}
    let mut betas = vec![vec![1.0; n]; n_ticks];
    for t in (0..n_ticks - 1).rev() {
        let weighted: Vec<f64> = likelihoods[t + 1]
            .iter()
            .zip(&betas[t + 1])
            .map(|(l, b)| l * b / scales[t + 1])
            .collect();
        for (i, beta) in betas[t].iter_mut().enumerate() {
            *beta = model
                .transition
                .row(i)
                .iter()
                .map(|&(j, p)| p * weighted[j])
                .sum();
        }
    }

    let posterior: Vec<Vec<f64>> = alphas
        .iter()
        .zip(&betas)
        .map(|(a, b)| {
            let mut g: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
            let s: f64 = g.iter().sum();
            if s > 0.0 {
                g.iter_mut().for_each(|x| *x /= s);
            }
            g
        })
        .collect();

    let mut joint = Vec::with_capacity(n_ticks.saturating_sub(1));
    for t in 0..n_ticks.saturating_sub(1) {
        let mut cells = Vec::new();
        let mut total = 0.0;
        for (i, &a) in alphas[t].iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for &(j, p) in model.transition.row(i) {
                let v = a * p * likelihoods[t + 1][j] * betas[t + 1][j] / scales[t + 1];
                if v > 0.0 {
                    cells.push((i, j, v));
                    total += v;
                }
            }
        }
        if total > 0.0 {
            cells.iter_mut().for_each(|c| c.2 /= total);
        }
        joint.push(cells);
    }

    Ok(Smoothed {
        posterior,
        joint,
        log_likelihood: scales.iter().map(|c| c.ln()).sum(),
    })
}
