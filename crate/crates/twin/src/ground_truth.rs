/// Per-step state change of the artificial ground truth.
///
/// Rises by 0.4 for `t < 10` and `40 <= t < 50`, falls by 0.4 for
/// `20 <= t < 30` and `60 <= t < 70`, and holds otherwise. Intervals are
/// half-open.
fn ground_truth_delta(t: u32) -> f64 {
    match t {
        0..=9 | 40..=49 => 0.4,
        20..=29 | 60..=69 => -0.4,
        _ => 0.0,
    }
}

/// Advances the ground-truth state by one step, clamped to `[0, 4]`.
pub fn ground_truth_step(t: u32, state: f64) -> f64 {
    // Round to the 0.2 grid's precision so repeated ±0.4 steps do not drift.
    let next = ((state + ground_truth_delta(t)) * 1e9).round() / 1e9;
    next.clamp(0.0, 4.0)
}
