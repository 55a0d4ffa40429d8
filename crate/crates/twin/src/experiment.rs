use std::io::Write;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::config::{GroundTruthMode, TwinConfig};
use crate::filter::{correct, estimate_control, predict, recommend_control, Belief};
use crate::ground_truth::ground_truth_step;
use crate::tables::{Control, TwinTables};
use crate::TwinError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub t: u32,
    pub true_state: f64,
    /// Capacity the queue ran with this step.
    pub physical_control: Control,
    pub obs_lq: f64,
    pub posterior_mean: f64,
    /// Control inferred from the raw observation alone.
    pub estimated_control: Control,
    /// Recommendation from the filtered belief; applied next step.
    pub predicted_control: Control,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentLog {
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Maximal runs of at least `min_len` consecutive steps whose true state
    /// satisfies `pred`.
    pub fn state_runs(&self, min_len: usize, pred: impl Fn(f64) -> bool) -> Vec<Range<usize>> {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, row) in self.rows.iter().enumerate() {
            match (pred(row.true_state), start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    if i - s >= min_len {
                        runs.push(s..i);
                    }
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            if self.rows.len() - s >= min_len {
                runs.push(s..self.rows.len());
            }
        }
        runs
    }

    /// Steps from the start of `run` until the predicted control equals
    /// `target` and stays there to the end of the run. `None` if it never
    /// settles.
    pub fn settle_lag(&self, run: &Range<usize>, target: Control) -> Option<usize> {
        let rows = &self.rows[run.clone()];
        let tail = rows.iter().rev().take_while(|r| r.predicted_control == target).count();
        (tail > 0).then(|| rows.len() - tail)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TwinError> {
        let mut w = csv::Writer::from_writer(out);
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER).map_err(io_err)?;
        }
        for row in &self.rows {
            w.serialize(row).map_err(io_err)?;
        }
        w.flush().map_err(|e| TwinError::Io(e.to_string()))
    }

    pub fn to_csv_string(&self) -> Result<String, TwinError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| TwinError::Io(e.to_string()))
    }
}

const CSV_HEADER: [&str; 7] = [
    "t",
    "true_state",
    "physical_control",
    "obs_lq",
    "posterior_mean",
    "estimated_control",
    "predicted_control",
];

fn io_err(e: csv::Error) -> TwinError {
    TwinError::Io(e.to_string())
}

/// Runs the closed loop for `cfg.horizon_t` steps. The belief starts
/// uniform; the queue starts on `cfg.initial_control` and thereafter runs on
/// the previous step's recommendation.
pub fn run_experiment(cfg: &TwinConfig) -> Result<ExperimentLog, TwinError> {
    cfg.validate()?;
    let tables = TwinTables::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = if cfg.obs_noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.obs_noise_sigma).map_err(|e| TwinError::InvalidConfig(e.to_string()))?)
    } else {
        None
    };

    let mut belief = Belief::uniform(cfg.state_grid.len());
    let mut state = cfg.initial_state;
    let mut control = cfg.initial_control;
    let mut rows = Vec::with_capacity(cfg.horizon_t as usize);

    for t in 0..cfg.horizon_t {
        if cfg.ground_truth == GroundTruthMode::Piecewise {
            state = ground_truth_step(t, state);
        }
        let mut obs = tables.observe(state, control);
        if let Some(n) = &noise {
            obs *= n.sample(&mut rng).exp();
        }
        belief = correct(&predict(&belief, control, cfg)?, obs, control, cfg, &tables)?;
        let predicted = recommend_control(&belief, cfg);
        rows.push(ExperimentRow {
            t,
            true_state: state,
            physical_control: control,
            obs_lq: obs,
            posterior_mean: belief.mean(&cfg.state_grid),
            estimated_control: estimate_control(obs, &tables)?,
            predicted_control: predicted,
        });
        control = predicted;
    }
    Ok(ExperimentLog { rows })
}
