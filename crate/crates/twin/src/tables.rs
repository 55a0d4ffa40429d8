use std::fmt;

use serde::{Deserialize, Serialize};

/// Processing capacity applied to the queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u32", try_from = "u32")]
pub enum Control {
    Threads16,
    Threads32,
}

impl Control {
    pub const ALL: [Control; 2] = [Control::Threads16, Control::Threads32];

    pub fn threads(self) -> u32 {
        match self {
            Control::Threads16 => 16,
            Control::Threads32 => 32,
        }
    }
}

impl From<Control> for u32 {
    fn from(c: Control) -> u32 {
        c.threads()
    }
}

impl TryFrom<u32> for Control {
    type Error = String;

    fn try_from(v: u32) -> Result<Self, String> {
        match v {
            16 => Ok(Control::Threads16),
            32 => Ok(Control::Threads32),
            other => Err(format!("control must be 16 or 32, got {other}")),
        }
    }
}

impl fmt::Display for Control {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.threads())
    }
}

/// One measured operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TableRow {
    pub state: u32,
    pub lambda_hz: f64,
    pub mu_hz: f64,
    pub proc_units: u32,
    /// Measured queue length.
    pub obs_lq: f64,
    /// Queue length as recorded alongside the measurement. Kept verbatim;
    /// for the 16-thread table it does not agree with the M/M/1 formula.
    pub calc_lq: f64,
}

const fn row(state: u32, lambda_hz: f64, mu_hz: f64, proc_units: u32, obs_lq: f64, calc_lq: f64) -> TableRow {
    TableRow {
        state,
        lambda_hz,
        mu_hz,
        proc_units,
        obs_lq,
        calc_lq,
    }
}

const THREADS_16: [TableRow; 5] = [
    row(0, 162.0, 167.0, 16, 32.0, 33.74),
    row(1, 163.0, 167.0, 16, 41.0, 43.48),
    row(2, 164.0, 167.0, 16, 58.0, 60.52),
    row(3, 165.0, 167.0, 16, 97.0, 98.01),
    row(4, 166.0, 167.0, 16, 241.0, 248.00),
];

const THREADS_32: [TableRow; 5] = [
    row(0, 162.0, 222.0, 32, 1.56, 1.96),
    row(1, 163.0, 222.0, 32, 2.5, 2.02),
    row(2, 164.0, 222.0, 32, 2.56, 2.08),
    row(3, 165.0, 222.0, 32, 3.5, 2.14),
    row(4, 166.0, 222.0, 32, 3.56, 2.21),
];

/// Calibration tables, one per control, five rows each (states 0..=4).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwinTables {
    pub threads_16: [TableRow; 5],
    pub threads_32: [TableRow; 5],
}

impl Default for TwinTables {
    fn default() -> Self {
        TwinTables::builtin()
    }
}

impl TwinTables {
    pub const fn builtin() -> Self {
        TwinTables {
            threads_16: THREADS_16,
            threads_32: THREADS_32,
        }
    }

    pub fn rows(&self, control: Control) -> &[TableRow; 5] {
        match control {
            Control::Threads16 => &self.threads_16,
            Control::Threads32 => &self.threads_32,
        }
    }

    /// Smallest and largest observed queue length for a control.
    pub fn obs_range(&self, control: Control) -> (f64, f64) {
        let rows = self.rows(control);
        let min = rows.iter().map(|r| r.obs_lq).fold(f64::INFINITY, f64::min);
        let max = rows.iter().map(|r| r.obs_lq).fold(f64::NEG_INFINITY, f64::max);
        (min, max)
    }

    /// Linear interpolation of the observed queue length between adjacent
    /// integer states. `state` is clamped to `[0, 4]`.
    pub fn observe(&self, state: f64, control: Control) -> f64 {
        let rows = self.rows(control);
        let s = state.clamp(0.0, 4.0);
        let lower = (s.floor() as usize).min(3);
        let frac = s - lower as f64;
        rows[lower].obs_lq + frac * (rows[lower + 1].obs_lq - rows[lower].obs_lq)
    }
}

/// [`TwinTables::observe`] over the built-in tables.
pub fn observe(state: f64, control: Control) -> f64 {
    TwinTables::builtin().observe(state, control)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn observe_at_table_points() {
        assert_eq!(observe(0.0, Control::Threads32), 1.56);
        assert_eq!(observe(4.0, Control::Threads16), 241.0);
        for c in Control::ALL {
            for r in TwinTables::builtin().rows(c) {
                assert_eq!(observe(r.state as f64, c), r.obs_lq);
            }
        }
    }

    #[test]
    fn observe_midpoint() {
        // halfway between 32 and 41
        assert!((observe(0.5, Control::Threads16) - 36.5).abs() < 1e-12);
    }

    #[test]
    fn table_invariants() {
        let tables = TwinTables::builtin();
        for c in Control::ALL {
            let rows = tables.rows(c);
            for w in rows.windows(2) {
                assert!(w[0].lambda_hz < w[1].lambda_hz);
            }
            for r in rows {
                assert!(r.lambda_hz < r.mu_hz);
                assert_eq!(r.proc_units, c.threads());
            }
        }
    }

    #[test]
    fn control_serde() {
        assert_eq!(Control::try_from(16), Ok(Control::Threads16));
        assert!(Control::try_from(8).is_err());
        assert_eq!(u32::from(Control::Threads32), 32);
    }

    proptest! {
        #[test]
        fn observe_is_monotone(a in 0.0f64..4.0, b in 0.0f64..4.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for c in Control::ALL {
                prop_assert!(observe(lo, c) <= observe(hi, c));
            }
        }
    }
}
