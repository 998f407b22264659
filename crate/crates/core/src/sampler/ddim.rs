use super::{Latent, NoiseSchedule};
use crate::error::{Error, Result};

/// Classifier-free guidance, `uncond + scale * (cond - uncond)`, evaluated as
/// `(1 - scale) * uncond + scale * cond` so that scales 0 and 1 return the
/// respective input exactly. Equal predictions pass through unchanged.
pub fn cfg_combine(uncond: &Latent, cond: &Latent, scale: f32) -> Result<Latent> {
    uncond.check_same_shape(cond, "conditional prediction")?;
    let keep = 1.0 - scale;
    let data = uncond
        .as_slice()
        .iter()
        .zip(cond.as_slice())
        .map(|(&u, &c)| if u == c { u } else { keep * u + scale * c })
        .collect();
    Latent::new(uncond.shape(), data)
}

/// Clean-latent estimate `(x_t - sqrt(1 - a_t) eps) / sqrt(a_t)`.
pub fn predict_x0(latent: &Latent, noise_pred: &Latent, alpha_bar: f64) -> Result<Latent> {
    latent.check_same_shape(noise_pred, "noise prediction")?;
    let (sa, sb) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let data = latent
        .as_slice()
        .iter()
        .zip(noise_pred.as_slice())
        .map(|(&x, &e)| ((f64::from(x) - sb * f64::from(e)) / sa) as f32)
        .collect();
    Latent::new(latent.shape(), data)
}

/// Deterministic DDIM update (eta = 0) from `t` to `t_prev`. `None` marks the
/// final step, which lands on the clean-latent estimate (alpha_bar = 1).
pub fn ddim_step(
    latent: &Latent,
    noise_pred: &Latent,
    t: usize,
    t_prev: Option<usize>,
    schedule: &NoiseSchedule,
) -> Result<Latent> {
    if !schedule.contains(t) {
        return Err(Error::Parameter(format!("timestep {t} is not in the schedule")));
    }
    let alpha_prev = match t_prev {
        Some(p) if !schedule.contains(p) => {
            return Err(Error::Parameter(format!("timestep {p} is not in the schedule")))
        }
        Some(p) if p >= t => {
            return Err(Error::Parameter(format!(
                "previous timestep {p} must precede {t}"
            )))
        }
        Some(p) => schedule.alpha_bar(p),
        None => 1.0,
    };
    latent.check_same_shape(noise_pred, "noise prediction")?;
    let alpha_t = schedule.alpha_bar(t);
    let (sa, sb) = (alpha_t.sqrt(), (1.0 - alpha_t).sqrt());
    let (pa, pb) = (alpha_prev.sqrt(), (1.0 - alpha_prev).sqrt());
    let data = latent
        .as_slice()
        .iter()
        .zip(noise_pred.as_slice())
        .map(|(&x, &e)| {
            let e = f64::from(e);
            let x0 = (f64::from(x) - sb * e) / sa;
            (pa * x0 + pb * e) as f32
        })
        .collect();
    Latent::new(latent.shape(), data)
}
