//! Maximum-likelihood fit of the transition parameters with random restarts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Adjacency, Grid};
use crate::error::{Error, Result};

use super::hmm::{log_likelihood, transition_matrix, HmmModel, TransitionParams};

/// Box constraints on `(p_stay, p_diag_ratio)`.
pub const P_STAY_BOUNDS: (f64, f64) = (0.01, 0.99);
pub const P_DIAG_BOUNDS: (f64, f64) = (0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub max_iter: usize,
    /// Stop once the simplex's objective spread drops below this.
    pub f_tol: f64,
    /// Initial simplex edge length.
    pub step: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iter: 200,
            f_tol: 1e-8,
            step: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: TransitionParams,
    pub log_likelihood: f64,
    pub restarts_used: usize,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Nelder-Mead on a box: every trial point is clamped back into `[lower, upper]`.
///
/// Non-finite objective values are treated as `+inf`.
pub fn nelder_mead_box(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    settings: &OptimizerSettings,
) -> Minimum {
    let n = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut start = x0.to_vec();
    project(&mut start, lower, upper);
    let mut simplex: Vec<Vec<f64>> = vec![start.clone()];
    for k in 0..n {
        let mut v = start.clone();
        let up = v[k] + settings.step;
        v[k] = if up <= upper[k] { up } else { v[k] - settings.step };
        project(&mut v, lower, upper);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    while iterations < settings.max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        if spread.is_finite() && spread.abs() < settings.f_tol {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|x| x[k]).sum::<f64>() / n as f64)
            .collect();
        let toward = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> = (0..n)
                .map(|k| centroid[k] + coef * (simplex[n][k] - centroid[k]))
                .collect();
            project(&mut p, lower, upper);
            p
        };

        let reflected = toward(-alpha);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = toward(-alpha * gamma);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = toward(-alpha * rho);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = toward(rho);
            let fc = eval(&c);
            (c, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for i in 1..=n {
            let mut p: Vec<f64> = (0..n)
                .map(|k| best[k] + sigma * (simplex[i][k] - best[k]))
                .collect();
            project(&mut p, lower, upper);
            values[i] = eval(&p);
            simplex[i] = p;
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        fx: values[best],
        iterations,
    }
}

fn params_from(x: &[f64], adjacency: Adjacency) -> TransitionParams {
    TransitionParams {
        p_stay: x[0],
        p_diag_ratio: match adjacency {
            Adjacency::Queen => x[1],
            Adjacency::Rook => 0.0,
        },
    }
}

/// Log-likelihood of `likelihoods` under the grid HMM with parameters `params`.
pub fn model_log_likelihood(
    grid: &Grid,
    adjacency: Adjacency,
    initial: &[f64],
    params: TransitionParams,
    likelihoods: &[Vec<f64>],
) -> Result<f64> {
    let model = HmmModel {
        initial: initial.to_vec(),
        transition: transition_matrix(grid, adjacency, params),
    };
    log_likelihood(&model, likelihoods)
}

/// Maximizes the forward log-likelihood over the transition parameters.
///
/// Runs `retrain` projected Nelder-Mead searches from random starting points
/// drawn from `rng` and keeps the one with the highest likelihood. Rook
/// adjacency optimizes `p_stay` alone.
pub fn fit(
    grid: &Grid,
    adjacency: Adjacency,
    initial: &[f64],
    likelihoods: &[Vec<f64>],
    retrain: usize,
    settings: &OptimizerSettings,
    rng: &mut impl Rng,
) -> Result<FitResult> {
    if retrain == 0 {
        return Err(Error::invalid("retrain must be at least 1"));
    }
    let (lower, upper): (Vec<f64>, Vec<f64>) = match adjacency {
        Adjacency::Queen => (
            vec![P_STAY_BOUNDS.0, P_DIAG_BOUNDS.0],
            vec![P_STAY_BOUNDS.1, P_DIAG_BOUNDS.1],
        ),
        Adjacency::Rook => (vec![P_STAY_BOUNDS.0], vec![P_STAY_BOUNDS.1]),
    };

    let mut best: Option<FitResult> = None;
    let mut last_error = None;
    for _ in 0..retrain {
        let x0: Vec<f64> = lower
            .iter()
            .zip(&upper)
            .map(|(lo, hi)| rng.random_range(*lo..=*hi))
            .collect();
        let mut err = None;
        let min = nelder_mead_box(
            |x| match model_log_likelihood(grid, adjacency, initial, params_from(x, adjacency), likelihoods) {
                Ok(ll) => -ll,
                Err(e) => {
                    err.get_or_insert(e);
                    f64::INFINITY
                }
            },
            &x0,
            &lower,
            &upper,
            settings,
        );
        if !min.fx.is_finite() {
            last_error = err;
            continue;
        }
        let candidate = FitResult {
            params: params_from(&min.x, adjacency),
            log_likelihood: -min.fx,
            restarts_used: retrain,
        };
        if best
            .as_ref()
            .is_none_or(|b| candidate.log_likelihood > b.log_likelihood)
        {
            best = Some(candidate);
        }
    }
    best.ok_or_else(|| Error::OptimizerFailed {
        message: last_error.map_or_else(|| "objective never finite".to_string(), |e| e.to_string()),
        best: None,
    })
}
