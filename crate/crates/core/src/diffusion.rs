//! Noise schedule, forward diffusion, the epsilon-prediction objective,
//! and ancestral sampling over flat latent states.
//!
//! States are plain `&[f64]` slices; the denoiser handles its own
//! tokenization. Every noise draw comes from a stream keyed by
//! `(seed, sample index, timestep)`, so samples are bitwise reproducible
//! and independent samples can be generated concurrently.

use serde::{Deserialize, Serialize};

use crate::rng::{fill_standard_normal, stream};
use crate::{par, Error, Result};

/// Cumulative signal coefficients for t = 0..=T, with the per-step
/// quantities derived from them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub t_max: usize,
    /// alphabar[0] = 1; strictly decreasing.
    pub alphabar: Vec<f64>,
    /// alpha[t] = alphabar[t] / alphabar[t-1]; alpha[0] = 1 (unused).
    pub alpha: Vec<f64>,
    /// beta[t] = 1 - alpha[t]; beta[0] = 0.
    pub beta: Vec<f64>,
    /// Posterior variances beta_tilde[t] = beta[t] (1 - alphabar[t-1]) / (1 - alphabar[t]).
    pub posterior_var: Vec<f64>,
}

pub const COSINE_S_OFFSET: f64 = 0.008;
const BETA_CLIP: f64 = 0.999;

/// Squared-cosine schedule: alphabar_t = f(t)/f(0) with
/// f(t) = cos^2(((t/T + s)/(1+s)) * pi/2), per-step beta clipped at 0.999
/// and alphabar re-accumulated after clipping.
pub fn cosine_schedule(t_max: usize, s_offset: f64) -> Result<NoiseSchedule> {
    if t_max == 0 {
        return Err(Error::config("schedule needs at least one timestep"));
    }
    if s_offset <= 0.0 {
        return Err(Error::config("s_offset must be positive"));
    }
    let f = |t: f64| -> f64 {
        let x = ((t / t_max as f64 + s_offset) / (1.0 + s_offset)) * std::f64::consts::FRAC_PI_2;
        x.cos() * x.cos()
    };
    let f0 = f(0.0);
    let mut alphabar = vec![1.0; t_max + 1];
    let mut alpha = vec![1.0; t_max + 1];
    let mut beta = vec![0.0; t_max + 1];
    let mut posterior_var = vec![0.0; t_max + 1];
    let mut prev_raw = 1.0;
    for t in 1..=t_max {
        let raw = f(t as f64) / f0;
        let b = (1.0 - raw / prev_raw).min(BETA_CLIP);
        prev_raw = raw;
        beta[t] = b;
        alpha[t] = 1.0 - b;
        alphabar[t] = alphabar[t - 1] * alpha[t];
        posterior_var[t] = if t == 1 {
            0.0
        } else {
            b * (1.0 - alphabar[t - 1]) / (1.0 - alphabar[t])
        };
    }
    let schedule = NoiseSchedule { t_max, alphabar, alpha, beta, posterior_var };
    schedule.validate()?;
    Ok(schedule)
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.alphabar.len() != self.t_max + 1 || self.alphabar[0] != 1.0 {
            return Err(Error::numeric("alphabar must start at exactly 1"));
        }
        for t in 1..=self.t_max {
            let ab = self.alphabar[t];
            if !(ab > 0.0 && ab <= 1.0) || ab >= self.alphabar[t - 1] {
                return Err(Error::numeric(format!(
                    "alphabar must be strictly decreasing in (0,1]; violated at t={t}"
                )));
            }
            if !(self.beta[t] > 0.0 && self.beta[t] < 1.0) {
                return Err(Error::numeric(format!("beta out of (0,1) at t={t}")));
            }
        }
        Ok(())
    }
}

/// Forward diffusion: `x_t = sqrt(alphabar_t) x0 + sqrt(1 - alphabar_t) eps`.
/// `t = 0` returns `x0` unchanged.
pub fn q_sample(x0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if x0.len() != eps.len() {
        return Err(Error::shape(format!(
            "x0 has {} elements but eps has {}",
            x0.len(),
            eps.len()
        )));
    }
    if t > schedule.t_max {
        return Err(Error::config(format!("t={t} exceeds schedule T={}", schedule.t_max)));
    }
    let ab = schedule.alphabar[t];
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| sa * x + sn * e).collect())
}

/// A denoiser that predicts the noise component of `x_t`.
pub trait EpsModel: Sync {
    fn predict_eps(&self, x: &[f64], t: usize) -> Vec<f64>;
}

/// Closed-form denoiser for `x0 ~ N(mu, sigma2 I)`: the exact posterior
/// mean under the forward process, used as a sampler-correctness oracle.
#[derive(Debug, Clone, Copy)]
pub struct GaussianEpsModel<'a> {
    pub mu: f64,
    pub sigma2: f64,
    pub schedule: &'a NoiseSchedule,
}

impl EpsModel for GaussianEpsModel<'_> {
    fn predict_eps(&self, x: &[f64], t: usize) -> Vec<f64> {
        let ab = self.schedule.alphabar[t];
        let denom = ab * self.sigma2 + 1.0 - ab;
        x.iter()
            .map(|&xt| {
                let m = (ab.sqrt() * self.sigma2 * xt + (1.0 - ab) * self.mu) / denom;
                (xt - ab.sqrt() * m) / (1.0 - ab).sqrt()
            })
            .collect()
    }
}

/// Per-sample training draws: uniform timestep in 1..=T and standard
/// normal noise, both from the `(seed, sample index)` stream.
pub fn training_draws(
    seed: u64,
    sample_index: usize,
    numel: usize,
    schedule: &NoiseSchedule,
) -> (usize, Vec<f64>) {
    use rand::Rng;
    let mut rng = stream(seed, &[sample_index as u64, 0x74726e]);
    let t = rng.gen_range(1..=schedule.t_max);
    let mut eps = vec![0.0; numel];
    fill_standard_normal(&mut rng, &mut eps);
    (t, eps)
}

/// Mean epsilon-prediction MSE over the batch, with seed-deterministic
/// timestep and noise draws.
pub fn training_loss<M: EpsModel>(
    model: &M,
    x0_batch: &[Vec<f64>],
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    if x0_batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let losses = par::par_map_range(x0_batch.len(), |i| -> Result<f64> {
        let x0 = &x0_batch[i];
        let (t, eps) = training_draws(seed, i, x0.len(), schedule);
        let xt = q_sample(x0, t, &eps, schedule)?;
        let eps_hat = model.predict_eps(&xt, t);
        let mse = eps
            .iter()
            .zip(&eps_hat)
            .map(|(e, eh)| (e - eh) * (e - eh))
            .sum::<f64>()
            / eps.len() as f64;
        Ok(mse)
    });
    let mut total = 0.0;
    for l in losses {
        let l = l?;
        if !l.is_finite() {
            return Err(Error::numeric("non-finite training loss"));
        }
        total += l;
    }
    Ok(total / x0_batch.len() as f64)
}

/// One ancestral update from `x_t` to `x_{t-1}`; `noise` must be zero at
/// `t = 1` (the posterior variance is zero there by construction).
pub fn ddpm_step(
    x_t: &[f64],
    eps_hat: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    noise: &[f64],
) -> Result<Vec<f64>> {
    if t == 0 || t > schedule.t_max {
        return Err(Error::config(format!("t={t} out of 1..={}", schedule.t_max)));
    }
    if x_t.len() != eps_hat.len() || x_t.len() != noise.len() {
        return Err(Error::shape("ddpm_step operand length mismatch"));
    }
    let a = schedule.alpha[t];
    let ab = schedule.alphabar[t];
    let inv_sqrt_a = 1.0 / a.sqrt();
    let coef = schedule.beta[t] / (1.0 - ab).sqrt();
    let sigma = schedule.posterior_var[t].sqrt();
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .zip(noise)
        .map(|((x, e), n)| inv_sqrt_a * (x - coef * e) + sigma * n)
        .collect())
}

/// Draws `x_T ~ N(0, I)` and iterates [`ddpm_step`] down to `x_0`.
/// Fully determined by `(seed, sample_index)`.
pub fn sample<M: EpsModel>(
    model: &M,
    numel: usize,
    schedule: &NoiseSchedule,
    seed: u64,
    sample_index: usize,
) -> Result<Vec<f64>> {
    let mut x = vec![0.0; numel];
    let mut rng = stream(seed, &[sample_index as u64, u64::MAX]);
    fill_standard_normal(&mut rng, &mut x);
    let mut noise = vec![0.0; numel];
    for t in (1..=schedule.t_max).rev() {
        let eps_hat = model.predict_eps(&x, t);
        if t > 1 {
            let mut rng = stream(seed, &[sample_index as u64, t as u64]);
            fill_standard_normal(&mut rng, &mut noise);
        } else {
            noise.iter_mut().for_each(|v| *v = 0.0);
        }
        x = ddpm_step(&x, &eps_hat, t, schedule, &noise)?;
        if let Some(idx) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite state at timestep {t}, element {idx}"
            )));
        }
    }
    Ok(x)
}

/// Generates `n` independent samples, parallel over the sample index.
pub fn sample_batch<M: EpsModel>(
    model: &M,
    n: usize,
    numel: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    par::par_map_range(n, |i| sample(model, numel, schedule, seed, i))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_invariants_hold() {
        for t_max in [10, 50, 300] {
            let s = cosine_schedule(t_max, COSINE_S_OFFSET).unwrap();
            assert_eq!(s.alphabar[0], 1.0);
            for t in 1..=t_max {
                assert!(s.alphabar[t] < s.alphabar[t - 1]);
                assert!(s.alphabar[t] > 0.0);
                assert!(s.beta[t] > 0.0 && s.beta[t] < 1.0);
            }
        }
        let s = cosine_schedule(300, COSINE_S_OFFSET).unwrap();
        assert!(s.alphabar[300] < 1e-3);
    }

    #[test]
    fn schedule_matches_closed_form_at_midpoint() {
        // Independent evaluation of the closed form, compared to the
        // cumulative-product construction.
        let s = cosine_schedule(300, 0.008).unwrap();
        let f = |t: f64| {
            let x = ((t / 300.0 + 0.008) / 1.008) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let oracle = f(150.0) / f(0.0);
        assert!((s.alphabar[150] - oracle).abs() < 1e-9, "{} vs {oracle}", s.alphabar[150]);
        assert!((oracle - 0.494).abs() < 1e-3);
    }

    #[test]
    fn q_sample_identity_at_t0() {
        let s = cosine_schedule(50, COSINE_S_OFFSET).unwrap();
        let x0 = vec![0.3, -1.2, 7.0];
        let eps = vec![1.0, 1.0, 1.0];
        assert_eq!(q_sample(&x0, 0, &eps, &s).unwrap(), x0);
    }

    #[test]
    fn posterior_variance_zero_at_t1() {
        let s = cosine_schedule(300, COSINE_S_OFFSET).unwrap();
        assert_eq!(s.posterior_var[1], 0.0);
    }

    #[test]
    fn ddpm_step_zero_fixed_point() {
        let s = cosine_schedule(300, COSINE_S_OFFSET).unwrap();
        let x = ddpm_step(&[0.0], &[0.0], 1, &s, &[0.0]).unwrap();
        assert_eq!(x, vec![0.0]);
    }

    struct ZeroModel;
    impl EpsModel for ZeroModel {
        fn predict_eps(&self, x: &[f64], _t: usize) -> Vec<f64> {
            vec![0.0; x.len()]
        }
    }

    struct PerfectModel {
        seed: u64,
        schedule_t: usize,
    }
    impl EpsModel for PerfectModel {
        fn predict_eps(&self, x: &[f64], _t: usize) -> Vec<f64> {
            // Replays the training draw for sample 0.
            let s = cosine_schedule(self.schedule_t, COSINE_S_OFFSET).unwrap();
            let (_, eps) = training_draws(self.seed, 0, x.len(), &s);
            eps
        }
    }

    #[test]
    fn perfect_oracle_gives_zero_loss() {
        let s = cosine_schedule(20, COSINE_S_OFFSET).unwrap();
        let x0 = vec![vec![0.5; 16]];
        let model = PerfectModel { seed: 9, schedule_t: 20 };
        let loss = training_loss(&model, &x0, &s, 9).unwrap();
        assert!(loss < 1e-24);
    }

    #[test]
    fn training_loss_is_seed_deterministic() {
        let s = cosine_schedule(50, COSINE_S_OFFSET).unwrap();
        let x0 = vec![vec![0.1; 8], vec![-0.4; 8]];
        let a = training_loss(&ZeroModel, &x0, &s, 123).unwrap();
        let b = training_loss(&ZeroModel, &x0, &s, 123).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn single_step_chain_is_closed_form() {
        // T = 1 with eps_hat = 0: x_0 = x_1 / sqrt(alpha_1), and the
        // initial draw is determined by (seed, index).
        let s = cosine_schedule(1, COSINE_S_OFFSET).unwrap();
        let out = sample(&ZeroModel, 4, &s, 5, 0).unwrap();
        let mut x1 = vec![0.0; 4];
        let mut rng = stream(5, &[0, u64::MAX]);
        fill_standard_normal(&mut rng, &mut x1);
        for (o, x) in out.iter().zip(&x1) {
            assert!((o - x / s.alpha[1].sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn sampling_is_bitwise_deterministic() {
        let s = cosine_schedule(25, COSINE_S_OFFSET).unwrap();
        let a = sample(&ZeroModel, 8, &s, 7, 3).unwrap();
        let b = sample(&ZeroModel, 8, &s, 7, 3).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn forward_marginal_variance_smoke() {
        // Var(x_t) = alphabar_t Var(x0) + (1 - alphabar_t) for independent
        // x0 and eps; small-n smoke version of the acceptance check.
        let s = cosine_schedule(100, COSINE_S_OFFSET).unwrap();
        let t = 40;
        let n = 20_000;
        let mut rng = stream(11, &[0]);
        let var0: f64 = 2.0;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let x0 = [crate::rng::standard_normal(&mut rng) * var0.sqrt()];
            let eps = [crate::rng::standard_normal(&mut rng)];
            let xt = q_sample(&x0, t, &eps, &s).unwrap()[0];
            acc += xt;
            acc2 += xt * xt;
        }
        let mean = acc / n as f64;
        let var = acc2 / n as f64 - mean * mean;
        let expect = s.alphabar[t] * var0 + (1.0 - s.alphabar[t]);
        let se = expect * (2.0 / n as f64).sqrt();
        assert!((var - expect).abs() < 4.0 * se, "{var} vs {expect}");
    }
}
