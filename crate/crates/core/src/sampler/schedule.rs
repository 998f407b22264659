use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SD_BETA_START: f64 = 0.00085;
pub const SD_BETA_END: f64 = 0.012;

/// How per-step noise variances are laid out across training timesteps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaProfile {
    /// `beta_t` linear in `t`.
    Linear,
    /// `sqrt(beta_t)` linear in `t` (Stable Diffusion 1.x).
    ScaledLinear,
}

impl BetaProfile {
    pub fn betas(self, num_train_steps: usize) -> Vec<f64> {
        let n = num_train_steps;
        let lerp = |a: f64, b: f64, i: usize| {
            if n == 1 {
                a
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            }
        };
        (0..n)
            .map(|i| match self {
                BetaProfile::Linear => lerp(SD_BETA_START, SD_BETA_END, i),
                BetaProfile::ScaledLinear => {
                    lerp(SD_BETA_START.sqrt(), SD_BETA_END.sqrt(), i).powi(2)
                }
            })
            .collect()
    }
}

/// Cumulative signal levels plus the inference timesteps, in sampling order.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    num_train_steps: usize,
    alphas_cumprod: Vec<f64>,
    selected_timesteps: Vec<usize>,
}

impl NoiseSchedule {
    pub fn num_train_steps(&self) -> usize {
        self.num_train_steps
    }

    pub fn alphas_cumprod(&self) -> &[f64] {
        &self.alphas_cumprod
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alphas_cumprod[t]
    }

    /// Descending timesteps visited by the sampler.
    pub fn timesteps(&self) -> &[usize] {
        &self.selected_timesteps
    }

    pub fn contains(&self, t: usize) -> bool {
        self.selected_timesteps.contains(&t)
    }
}

/// Builds the cumulative-product table and `steps` evenly spaced descending
/// timesteps (`i * (T / steps)` for `i = steps-1 .. 0`).
pub fn build_schedule(num_train_steps: usize, steps: usize, profile: BetaProfile) -> Result<NoiseSchedule> {
    if steps == 0 || steps > num_train_steps {
        return Err(Error::Parameter(format!(
            "step count {steps} must lie in [1, {num_train_steps}]"
        )));
    }
    let mut acc = 1.0f64;
    let alphas_cumprod = profile
        .betas(num_train_steps)
        .into_iter()
        .map(|beta| {
            acc *= 1.0 - beta;
            acc
        })
        .collect();
    let stride = num_train_steps / steps;
    let selected_timesteps = (0..steps).rev().map(|i| i * stride).collect();
    Ok(NoiseSchedule {
        num_train_steps,
        alphas_cumprod,
        selected_timesteps,
    })
}
