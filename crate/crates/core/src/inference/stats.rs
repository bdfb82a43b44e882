use serde::Serialize;

/// Descriptive statistics of a set of draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub mode: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub sd: f64,
    /// Coefficient of variation in percent.
    pub cv: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Keyed rows of [`Summary`] values.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsTable<K> {
    pub rows: Vec<(K, Summary)>,
}

impl<K: PartialEq> StatsTable<K> {
    pub fn get(&self, key: &K) -> Option<&Summary> {
        self.rows.iter().find(|(k, _)| k == key).map(|(_, s)| s)
    }
}

/// Quantile with linear interpolation between order statistics (`h = (n-1) q`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Smallest most frequent value after rounding to the nearest integer.
pub fn mode(values: &[f64]) -> f64 {
    let mut rounded: Vec<i64> = values.iter().map(|v| v.round() as i64).collect();
    rounded.sort_unstable();
    let (mut best, mut best_count) = (rounded[0], 0);
    let mut i = 0;
    while i < rounded.len() {
        let j = rounded[i..].partition_point(|v| *v == rounded[i]) + i;
        if j - i > best_count {
            best = rounded[i];
            best_count = j - i;
        }
        i = j;
    }
    best as f64
}

/// Summary of `values` with an equal-tailed interval at `ci_level`.
///
/// The coefficient of variation of zero-mean draws is reported as 0.
/// Returns `None` for an empty slice.
pub fn compute_stats(values: &[f64], ci_level: f64) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = if sorted.len() > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let cv = if mean == 0.0 {
        0.0
    } else {
        100.0 * sd / mean
    };
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let tail = (1.0 - ci_level) / 2.0;
    Some(Summary {
        mean,
        mode: mode(&sorted),
        median: quantile_sorted(&sorted, 0.5),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        q1,
        q3,
        iqr: q3 - q1,
        sd,
        cv,
        ci_low: quantile_sorted(&sorted, tail),
        ci_high: quantile_sorted(&sorted, 1.0 - tail),
    })
}
