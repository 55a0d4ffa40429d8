use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tables::Control;
use crate::TwinError;

/// How the artificial ground truth evolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthMode {
    /// The piecewise rise/hold/fall schedule.
    #[default]
    Piecewise,
    /// State never changes from `initial_state`.
    Frozen,
}

/// Filter and experiment parameters. Loadable from TOML; every field is
/// optional and defaults as below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwinConfig {
    /// Ordered, evenly spaced state values. Default: 0.0, 0.2, ..., 4.0.
    pub state_grid: Vec<f64>,
    /// Std-dev of the log-queue-length likelihood.
    pub obs_sigma: f64,
    /// `(p_dec, p_stay, p_inc)` over steps of -0.4, 0, +0.4.
    pub transition_probs: [f64; 3],
    /// Posterior-mean state at or above which 32 threads is recommended.
    pub control_threshold: f64,
    #[serde(alias = "horizon_T")]
    pub horizon_t: u32,
    pub initial_state: f64,
    pub initial_control: Control,
    pub ground_truth: GroundTruthMode,
    /// Std-dev of multiplicative log-normal observation noise; 0 disables.
    pub obs_noise_sigma: f64,
    pub seed: u64,
}

impl Default for TwinConfig {
    fn default() -> Self {
        TwinConfig {
            state_grid: (0..=20).map(|i| i as f64 * 0.2).collect(),
            obs_sigma: 0.1,
            transition_probs: [0.25, 0.5, 0.25],
            control_threshold: 2.5,
            horizon_t: 80,
            initial_state: 0.0,
            initial_control: Control::Threads16,
            ground_truth: GroundTruthMode::Piecewise,
            obs_noise_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Ground-truth step magnitude the transition kernel moves by.
pub(crate) const STATE_STEP: f64 = 0.4;

impl TwinConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, TwinError> {
        let cfg: TwinConfig = toml::from_str(text).map_err(|e| TwinError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TwinError> {
        let text = std::fs::read_to_string(path).map_err(|e| TwinError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn grid_step(&self) -> f64 {
        self.state_grid[1] - self.state_grid[0]
    }

    /// Number of grid cells one ±0.4 move spans.
    pub fn step_cells(&self) -> usize {
        (STATE_STEP / self.grid_step()).round() as usize
    }

    pub fn validate(&self) -> Result<(), TwinError> {
        let bad = |m: String| Err(TwinError::InvalidConfig(m));
        let grid = &self.state_grid;
        if grid.len() < 2 {
            return bad("state_grid needs at least two points".into());
        }
        if grid.iter().any(|v| !v.is_finite()) {
            return bad("state_grid values must be finite".into());
        }
        let step = grid[1] - grid[0];
        if step <= 0.0 {
            return bad("state_grid must be increasing".into());
        }
        for (i, w) in grid.windows(2).enumerate() {
            if ((w[1] - w[0]) - step).abs() > 1e-9 {
                return bad(format!("state_grid is not evenly spaced at index {}", i + 1));
            }
        }
        let cells = STATE_STEP / step;
        if (cells - cells.round()).abs() > 1e-9 || cells.round() < 1.0 {
            return bad(format!("grid step {step} does not divide {STATE_STEP}"));
        }
        if self.obs_sigma.is_nan() || self.obs_sigma <= 0.0 {
            return bad(format!("obs_sigma must be positive, got {}", self.obs_sigma));
        }
        if self.transition_probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("transition_probs must be nonnegative".into());
        }
        let total: f64 = self.transition_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("transition_probs sum to {total}, not 1"));
        }
        if !self.control_threshold.is_finite() {
            return bad("control_threshold must be finite".into());
        }
        if !(self.obs_noise_sigma.is_finite() && self.obs_noise_sigma >= 0.0) {
            return bad("obs_noise_sigma must be a nonnegative number".into());
        }
        if !(0.0..=4.0).contains(&self.initial_state) {
            return bad(format!("initial_state {} is outside [0, 4]", self.initial_state));
        }
        Ok(())
    }
}
