use crate::error::{ensure, Result};

/// Noise floor normalised to a 1 Hz bandwidth:
/// `floor · √(n_sequences · t_cycle)` with `t_cycle` in seconds.
pub fn sensitivity_report(noise_floor_ut: f64, integration_per_cycle_ms: f64, n_sequences: u32) -> Result<f64> {
    ensure(noise_floor_ut > 0.0, "noise_floor_ut", "must be > 0")?;
    ensure(integration_per_cycle_ms > 0.0, "integration_per_cycle_ms", "must be > 0")?;
    ensure(n_sequences > 0, "n_sequences", "must be > 0")?;
    Ok(noise_floor_ut * (n_sequences as f64 * integration_per_cycle_ms * 1e-3).sqrt())
}

/// Sample standard deviation (`n − 1` normalisation) of the finite values.
pub fn noise_floor(values: &[f64]) -> Option<f64> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 {
        return None;
    }
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    Some((finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}
