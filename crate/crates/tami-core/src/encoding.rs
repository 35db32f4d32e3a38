//! Cosine time encoding of temporal differences, with an optional
//! logarithmic rescale of the input and analytic frequency gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeEncodeMode {
    /// Encode the raw temporal difference.
    Original,
    /// Encode `ln(1 + dt)` instead; compresses heavy-tailed differences.
    Log,
}

/// Frequency vector at construction: `omega_i = sqrt(d)^(-(i-1)/sqrt(d))`,
/// strictly decreasing with `omega_1 = 1`.
pub fn init_frequencies(d_t: usize) -> Vec<f64> {
    let base = (d_t as f64).sqrt();
    (0..d_t)
        .map(|i| base.powf(-(i as f64) / base))
        .collect()
}

/// Maps a temporal difference to a vector of cosines of frequency-scaled
/// arguments. Frequencies may be trainable; gradient updates can drive them
/// negative, which is fine because cosine is even.
///
/// ```
/// use tami_core::encoding::{TimeEncoder, TimeEncodeMode};
///
/// let enc = TimeEncoder::new(4, TimeEncodeMode::Log, false).unwrap();
/// assert_eq!(enc.encode(0.0).unwrap(), vec![1.0; 4]); // cos(0)
/// assert!(enc.encode(1e9).unwrap().iter().all(|z| z.abs() <= 1.0));
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEncoder {
    pub mode: TimeEncodeMode,
    pub trainable: bool,
    pub omega: Vec<f64>,
}

impl TimeEncoder {
    pub fn new(d_t: usize, mode: TimeEncodeMode, trainable: bool) -> Result<Self> {
        if d_t == 0 {
            return Err(Error::Config("time encoding dimension must be >= 1".into()));
        }
        Ok(TimeEncoder {
            mode,
            trainable,
            omega: init_frequencies(d_t),
        })
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    /// The scalar actually multiplied with the frequencies: `dt` in original
    /// mode, `ln(1+dt)` in log mode (`ln_1p` keeps small differences exact).
    pub fn rescale(&self, dt: f64) -> Result<f64> {
        if dt.is_nan() || dt < 0.0 {
            return Err(Error::Domain(format!(
                "temporal difference must be non-negative, got {dt}"
            )));
        }
        Ok(match self.mode {
            TimeEncodeMode::Original => dt,
            TimeEncodeMode::Log => dt.ln_1p(),
        })
    }

    pub fn encode_into(&self, dt: f64, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.omega.len());
        let s = self.rescale(dt)?;
        for (o, &w) in out.iter_mut().zip(&self.omega) {
            *o = (s * w).cos();
        }
        Ok(())
    }

    pub fn encode(&self, dt: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.omega.len()];
        self.encode_into(dt, &mut out)?;
        Ok(out)
    }

    /// Encoding plus the diagonal gradient `dz_i/domega_i = -s sin(s omega_i)`
    /// (each component depends on exactly one frequency).
    pub fn encode_with_grad(&self, dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if !self.trainable {
            return Err(Error::Config(
                "frequency gradients requested from a non-trainable encoder".into(),
            ));
        }
        let s = self.rescale(dt)?;
        let mut z = vec![0.0; self.omega.len()];
        let mut dz = vec![0.0; self.omega.len()];
        for (i, &w) in self.omega.iter().enumerate() {
            z[i] = (s * w).cos();
            dz[i] = -s * (s * w).sin();
        }
        Ok((z, dz))
    }

    /// Accumulates `upstream_i * dz_i/domega_i` for a pre-rescaled argument
    /// `s`, used by the training backward pass.
    pub fn accumulate_omega_grad(&self, s: f64, upstream: &[f64], grad: &mut [f64]) {
        for i in 0..self.omega.len() {
            grad[i] += upstream[i] * (-s * (s * self.omega[i]).sin());
        }
    }
}
