use crate::error::{Error, Result};

/// Realizes duty `u` as an on/off schedule: on for the leading
/// `round(u·n_sub)` sub-steps, off for the rest.
pub fn pwm(u: f64, control_step: i64, sub_step: i64) -> Result<Vec<bool>> {
    if sub_step <= 0 || control_step <= 0 || control_step % sub_step != 0 {
        return Err(Error::invalid(format!(
            "sub-step {sub_step}s must divide control step {control_step}s"
        )));
    }
    let n_sub = (control_step / sub_step) as usize;
    let on = pulses(u, n_sub);
    Ok((0..n_sub).map(|k| k < on).collect())
}

/// Number of leading on sub-steps out of `n_sub`.
pub fn pulses(u: f64, n_sub: usize) -> usize {
    let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0) };
    ((u * n_sub as f64).round() as usize).min(n_sub)
}
