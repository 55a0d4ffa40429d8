use crate::config::TwinConfig;
use crate::tables::{Control, TwinTables};
use crate::TwinError;

/// Probability vector aligned to a [`TwinConfig::state_grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    weights: Vec<f64>,
}

const NORM_TOL: f64 = 1e-9;

impl Belief {
    pub fn uniform(n: usize) -> Self {
        Belief {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(n: usize, index: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[index] = 1.0;
        Belief { weights }
    }

    /// Builds a belief from weights that must already be a probability
    /// vector.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self, TwinError> {
        if weights.is_empty() {
            return Err(TwinError::InvalidBelief("empty weight vector".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(TwinError::InvalidBelief(format!("weight {w} is not a probability")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(TwinError::InvalidBelief(format!("weights sum to {total}")));
        }
        Ok(Belief { weights })
    }

    /// Normalizes arbitrary nonnegative weights with positive total.
    pub fn normalized(weights: Vec<f64>) -> Result<Self, TwinError> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(TwinError::InvalidBelief(format!("cannot normalize weights summing to {total}")));
        }
        Ok(Belief {
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mean(&self, grid: &[f64]) -> f64 {
        self.weights.iter().zip(grid).map(|(w, s)| w * s).sum()
    }

    /// Index of the largest weight; the first on ties.
    pub fn mode_index(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.weights.iter().enumerate() {
            if *w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    /// Total-variation distance to another belief of the same length.
    pub fn tv_distance(&self, other: &Belief) -> f64 {
        0.5 * self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

fn check_len(belief: &Belief, cfg: &TwinConfig) -> Result<(), TwinError> {
    if belief.len() != cfg.state_grid.len() {
        return Err(TwinError::InvalidBelief(format!(
            "belief has {} weights but the grid has {} points",
            belief.len(),
            cfg.state_grid.len()
        )));
    }
    Ok(())
}

/// One step of the transition model. Each cell sends `p_dec`, `p_stay` and
/// `p_inc` of its mass to the cells 0.4 below, at, and above it. A move that
/// would leave the grid keeps its mass in place, so a symmetric kernel
/// leaves the uniform belief fixed.
///
/// The kernel does not depend on the control; `_u` is accepted so callers
/// can treat the model as conditioned on `U(t)`.
pub fn predict(belief: &Belief, _u: Control, cfg: &TwinConfig) -> Result<Belief, TwinError> {
    check_len(belief, cfg)?;
    let n = belief.len();
    let k = cfg.step_cells();
    let [p_dec, p_stay, p_inc] = cfg.transition_probs;
    let mut out = vec![0.0; n];
    for (i, &w) in belief.weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        out[i] += w * p_stay;
        if i >= k {
            out[i - k] += w * p_dec;
        } else {
            out[i] += w * p_dec;
        }
        if i + k < n {
            out[i + k] += w * p_inc;
        } else {
            out[i] += w * p_inc;
        }
    }
    Belief::normalized(out)
}

/// Log-likelihood of an observed queue length at each grid state.
fn log_likelihoods(obs_lq: f64, u: Control, cfg: &TwinConfig, tables: &TwinTables) -> Vec<f64> {
    let ln_obs = obs_lq.ln();
    let denom = 2.0 * cfg.obs_sigma * cfg.obs_sigma;
    cfg.state_grid
        .iter()
        .map(|&s| {
            let d = ln_obs - tables.observe(s, u).ln();
            -(d * d) / denom
        })
        .collect()
}

/// Bayes update with a Gaussian likelihood in log queue length.
///
/// Weights are formed in log space relative to the best-supported state, so
/// a far-off observation does not underflow the whole posterior. If the
/// product is still degenerate the likelihood alone is returned.
pub fn correct(
    belief: &Belief,
    obs_lq: f64,
    u: Control,
    cfg: &TwinConfig,
    tables: &TwinTables,
) -> Result<Belief, TwinError> {
    check_len(belief, cfg)?;
    if !(obs_lq.is_finite() && obs_lq > 0.0) {
        return Err(TwinError::NonPositiveObservation(obs_lq));
    }
    let ll = log_likelihoods(obs_lq, u, cfg, tables);
    let peak = ll
        .iter()
        .zip(&belief.weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let posterior: Vec<f64> = ll
        .iter()
        .zip(&belief.weights)
        .map(|(l, w)| w * (l - peak).exp())
        .collect();
    match Belief::normalized(posterior) {
        Ok(b) => Ok(b),
        Err(_) => {
            let top = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Belief::normalized(ll.iter().map(|l| (l - top).exp()).collect())
        }
    }
}

/// Log-distance from an observation to a control's interpolated
/// observation curve. The curve is continuous and monotone over `[0, 4]`, so
/// the minimum is zero inside its range and the nearer endpoint otherwise.
fn curve_distance(obs_lq: f64, u: Control, tables: &TwinTables) -> f64 {
    let (lo, hi) = tables.obs_range(u);
    if obs_lq < lo {
        (lo / obs_lq).ln()
    } else if obs_lq > hi {
        (obs_lq / hi).ln()
    } else {
        0.0
    }
}

/// The control whose observation curve best explains `obs_lq`. Ties go to
/// 16 threads.
pub fn estimate_control(obs_lq: f64, tables: &TwinTables) -> Result<Control, TwinError> {
    if !(obs_lq.is_finite() && obs_lq > 0.0) {
        return Err(TwinError::NonPositiveObservation(obs_lq));
    }
    let d16 = curve_distance(obs_lq, Control::Threads16, tables);
    let d32 = curve_distance(obs_lq, Control::Threads32, tables);
    Ok(if d32 < d16 { Control::Threads32 } else { Control::Threads16 })
}

/// 32 threads once the posterior-mean state reaches the threshold.
pub fn recommend_control(belief: &Belief, cfg: &TwinConfig) -> Control {
    if belief.mean(&cfg.state_grid) >= cfg.control_threshold {
        Control::Threads32
    } else {
        Control::Threads16
    }
}
