//! Noise schedules, forward diffusion, guided sampling and mask blending.
//!
//! Two timestep conventions meet here. Schedule indices `0..T` address
//! `alpha_bar` and are what the denoiser sees during training. Sampling
//! *states* run `0..=T`, where state `0` is the clean image and state
//! `t >= 1` carries the noise level `alpha_bar[t - 1]`. The denoiser is
//! always queried at schedule index `state - 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta ramp from `beta_start` to `beta_end` over `steps` entries.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::contract("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::contract(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::contract("betas must be nonempty and inside (0, 1)"));
        }
        let mut acc = 1.0;
        let alpha_bar = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(NoiseSchedule { betas, alpha_bar })
    }

    /// Training timestep count `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Signal level of sampling state `state` (1 for the clean state).
    pub fn state_level(&self, state: usize) -> f64 {
        if state == 0 {
            1.0
        } else {
            self.alpha_bar[state - 1]
        }
    }
}

impl Default for NoiseSchedule {
    /// 100 steps, betas ramped from 1e-3 to 0.2.
    fn default() -> Self {
        Self::linear(100, 1e-3, 0.2).expect("valid default schedule")
    }
}

/// `√ᾱ_t · x0 + √(1 − ᾱ_t) · eps` at schedule index `t`.
pub fn forward_diffuse(
    schedule: &NoiseSchedule,
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
) -> Result<Tensor> {
    if t >= schedule.len() {
        return Err(Error::Range(format!(
            "timestep {t} outside schedule of {} steps",
            schedule.len()
        )));
    }
    mix(schedule.alpha_bar(t), x0, eps)
}

/// Forward diffusion to a sampling state; state 0 returns `x0` unchanged.
pub fn diffuse_to_state(
    schedule: &NoiseSchedule,
    x0: &Tensor,
    state: usize,
    eps: &Tensor,
) -> Result<Tensor> {
    if state > schedule.len() {
        return Err(Error::Range(format!(
            "state {state} beyond T = {}",
            schedule.len()
        )));
    }
    if state == 0 {
        x0.check_same(eps, "diffuse_to_state")?;
        return Ok(x0.clone());
    }
    mix(schedule.alpha_bar(state - 1), x0, eps)
}

fn mix(level: f64, x0: &Tensor, eps: &Tensor) -> Result<Tensor> {
    let (a, b) = (level.sqrt(), (1.0 - level).sqrt());
    x0.zip_map(eps, "forward_diffuse", |x, e| a * x + b * e)
}

/// Classifier-free guidance: `u + scale · (c − u)`.
pub fn cfg_combine(eps_uncond: &Tensor, eps_cond: &Tensor, scale: f64) -> Result<Tensor> {
    eps_uncond.zip_map(eps_cond, "cfg_combine", |u, c| u + scale * (c - u))
}

/// `Y_gen ⊙ M + Y_known ⊙ (1 − M)` with a per-pixel mask broadcast over
/// channels. Images are `C×h×w`; the mask is `1×h×w` (or `h×w`) and binary.
pub fn blend_step(generated: &Tensor, known: &Tensor, mask: &Tensor) -> Result<Tensor> {
    generated.check_same(known, "blend_step")?;
    let plane = mask.numel();
    if !generated.numel().is_multiple_of(plane) || generated.shape().last() != mask.shape().last() {
        return Err(Error::shape("blend_step", generated.shape(), mask.shape()));
    }
    if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::contract("blend mask must be binary"));
    }
    let data = generated
        .data()
        .iter()
        .zip(known.data())
        .enumerate()
        .map(|(i, (&g, &k))| if mask.data()[i % plane] == 1.0 { g } else { k })
        .collect();
    Tensor::new(generated.shape().to_vec(), data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub value: Tensor,
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// Deterministic first-order step in the σ parameterisation.
    #[default]
    Euler,
    /// Posterior sampling over the strided sub-schedule.
    Ancestral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    pub schedule: NoiseSchedule,
    pub kind: SamplerKind,
    /// Clamp the running `x0` estimate to `[-1, 1]`.
    pub clip_x0: bool,
    states: Vec<usize>,
}

impl Sampler {
    /// Evenly strided sub-schedule of `steps` transitions from `T` to 0.
    pub fn new(schedule: NoiseSchedule, steps: usize, kind: SamplerKind) -> Result<Self> {
        let t = schedule.len();
        if steps == 0 || steps > t {
            return Err(Error::contract(format!(
                "sampler steps must be in 1..={t}, got {steps}"
            )));
        }
        let states = (0..=steps).rev().map(|k| t * k / steps).collect();
        Ok(Sampler {
            schedule,
            kind,
            clip_x0: true,
            states,
        })
    }

    /// Sampling states visited, descending from `T` to 0.
    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// One transition `state.t → t_prev` given the noise prediction at
    /// `state.t`. Noise is drawn from `rng` only for ancestral steps that do
    /// not land on the clean state.
    pub fn step(
        &self,
        state: &LatentState,
        eps_hat: &Tensor,
        t_prev: usize,
        rng: &mut rng::Rng,
    ) -> Result<LatentState> {
        if state.t == 0 {
            return Err(Error::contract("cannot step from the clean state"));
        }
        if t_prev >= state.t {
            return Err(Error::contract(format!(
                "step must decrease t ({} -> {t_prev})",
                state.t
            )));
        }
        state.value.check_same(eps_hat, "sample_step")?;
        let a = self.schedule.state_level(state.t);
        let a_prev = self.schedule.state_level(t_prev);
        let (sa, sb) = (a.sqrt(), (1.0 - a).sqrt());

        let mut x0 = state
            .value
            .zip_map(eps_hat, "sample_step", |x, e| (x - sb * e) / sa)?;
        let mut eps = eps_hat.clone();
        if self.clip_x0 {
            x0 = x0.map(|v| v.clamp(-1.0, 1.0));
            eps = state
                .value
                .zip_map(&x0, "sample_step", |x, x0| (x - sa * x0) / sb)?;
        }
        if t_prev == 0 {
            return Ok(LatentState { value: x0, t: 0 });
        }

        let value = match self.kind {
            SamplerKind::Euler => {
                let (pa, pb) = (a_prev.sqrt(), (1.0 - a_prev).sqrt());
                x0.zip_map(&eps, "sample_step", |x, e| pa * x + pb * e)?
            }
            SamplerKind::Ancestral => {
                let var = ((1.0 - a_prev) / (1.0 - a)) * (1.0 - a / a_prev);
                let sigma = var.max(0.0).sqrt();
                let dir = (1.0 - a_prev - var).max(0.0).sqrt();
                let pa = a_prev.sqrt();
                let mean = x0.zip_map(&eps, "sample_step", |x, e| pa * x + dir * e)?;
                let mut out = mean;
                for v in out.data_mut() {
                    *v += sigma * rng::normal(rng);
                }
                out
            }
        };
        Ok(LatentState { value, t: t_prev })
    }

    /// Full reverse loop from `init` at state `T`. `predict(x_t, index)`
    /// returns the (already guided) noise estimate at schedule index
    /// `index`. With `blend = Some((known, mask))` every intermediate state
    /// is fused with the forward-diffused known image, using fresh noise
    /// from a per-step sub-stream of `seed`.
    pub fn run<F>(
        &self,
        init: Tensor,
        blend: Option<(&Tensor, &Tensor)>,
        seed: u64,
        mut predict: F,
    ) -> Result<Tensor>
    where
        F: FnMut(&Tensor, usize) -> Result<Tensor>,
    {
        let mut state = LatentState {
            value: init,
            t: self.schedule.len(),
        };
        for (k, pair) in self.states.windows(2).enumerate() {
            let (t, t_prev) = (pair[0], pair[1]);
            debug_assert_eq!(state.t, t);
            let eps_hat = predict(&state.value, t - 1)?;
            let mut step_rng = rng::stream(seed, &[tag::SAMPLE_STEP, k as u64]);
            state = self.step(&state, &eps_hat, t_prev, &mut step_rng)?;
            if let Some((known, mask)) = blend {
                let mut noise_rng = rng::stream(seed, &[tag::BLEND, k as u64]);
                let noise = rng::normal_tensor(&mut noise_rng, known.shape(), 1.0);
                let known_t = diffuse_to_state(&self.schedule, known, t_prev, &noise)?;
                state.value = blend_step(&state.value, &known_t, mask)?;
            }
        }
        Ok(state.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64]) -> Tensor {
        Tensor::new(vec![data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn schedule_hand_cases() {
        let s = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5]);
        let s = NoiseSchedule::linear(2, 0.1, 0.1).unwrap();
        assert!((s.alpha_bar(0) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(1) - 0.81).abs() < 1e-15);
    }

    #[test]
    fn default_schedule_strictly_decreasing() {
        let s = NoiseSchedule::default();
        assert_eq!(s.len(), 100);
        assert!(s.alpha_bar(0) > 0.0 && s.alpha_bar(0) <= 1.0);
        assert!(s.alpha_bar(99) > 0.0);
        for w in s.alpha_bars().windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn invalid_schedule_ranges() {
        assert!(NoiseSchedule::linear(10, 0.0, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
    }

    #[test]
    fn forward_diffuse_cases() {
        let s = NoiseSchedule::from_betas(vec![0.75]).unwrap();
        let out = forward_diffuse(&s, &t(&[2.0, 2.0]), 0, &t(&[0.0, 0.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 1.0]);
        let zero = forward_diffuse(&s, &t(&[0.0]), 0, &t(&[3.0])).unwrap();
        assert!((zero.data()[0] - 0.75f64.sqrt() * 3.0).abs() < 1e-15);
        assert!(matches!(
            forward_diffuse(&s, &t(&[0.0]), 1, &t(&[0.0])),
            Err(Error::Range(_))
        ));
        // The clean state is the identity.
        assert_eq!(
            diffuse_to_state(&s, &t(&[0.3]), 0, &t(&[9.0]))
                .unwrap()
                .data(),
            &[0.3]
        );
    }

    #[test]
    fn cfg_cases() {
        let u = t(&[1.0, -2.0]);
        let c = t(&[2.0, 5.0]);
        assert_eq!(cfg_combine(&u, &c, 1.0).unwrap(), c);
        assert_eq!(cfg_combine(&u, &c, 0.0).unwrap(), u);
        let eight = cfg_combine(&t(&[1.0]), &t(&[2.0]), 7.0).unwrap();
        assert_eq!(eight.data(), &[8.0]);
    }

    #[test]
    fn blend_cases() {
        let g = Tensor::new(vec![1, 1, 2], vec![5.0, 6.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 2], vec![9.0, 10.0]).unwrap();
        let ones = Tensor::ones(&[1, 1, 2]);
        let zeros = Tensor::zeros(&[1, 1, 2]);
        assert_eq!(blend_step(&g, &k, &ones).unwrap(), g);
        assert_eq!(blend_step(&g, &k, &zeros).unwrap(), k);
        let m = Tensor::new(vec![1, 1, 2], vec![1.0, 0.0]).unwrap();
        assert_eq!(blend_step(&g, &k, &m).unwrap().data(), &[5.0, 10.0]);
        let bad = Tensor::new(vec![1, 1, 2], vec![0.5, 0.0]).unwrap();
        assert!(matches!(blend_step(&g, &k, &bad), Err(Error::Contract(_))));
    }

    #[test]
    fn blend_broadcasts_over_channels() {
        let g = Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::zeros(&[2, 1, 2]);
        let m = Tensor::new(vec![1, 1, 2], vec![0.0, 1.0]).unwrap();
        assert_eq!(
            blend_step(&g, &k, &m).unwrap().data(),
            &[0.0, 2.0, 0.0, 4.0]
        );
    }

    #[test]
    fn single_step_inverts_one_step_algebra() {
        let s = NoiseSchedule::from_betas(vec![0.36]).unwrap();
        let mut sampler = Sampler::new(s, 1, SamplerKind::Ancestral).unwrap();
        sampler.clip_x0 = false;
        let xt = t(&[0.7, -0.2]);
        let eps = t(&[0.1, 0.4]);
        let mut r = rng::stream(0, &[]);
        let out = sampler
            .step(
                &LatentState {
                    value: xt.clone(),
                    t: 1,
                },
                &eps,
                0,
                &mut r,
            )
            .unwrap();
        let a: f64 = 0.64;
        for i in 0..2 {
            let expect = (xt.data()[i] - (1.0 - a).sqrt() * eps.data()[i]) / a.sqrt();
            assert!((out.value.data()[i] - expect).abs() < 1e-15);
        }
        assert_eq!(out.t, 0);
    }

    #[test]
    fn stepping_from_clean_state_is_an_error() {
        let sampler = Sampler::new(NoiseSchedule::default(), 30, SamplerKind::Euler).unwrap();
        let mut r = rng::stream(0, &[]);
        let st = LatentState {
            value: t(&[0.0]),
            t: 0,
        };
        assert!(matches!(
            sampler.step(&st, &t(&[0.0]), 0, &mut r),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn thirty_step_sub_schedule() {
        let sampler = Sampler::new(NoiseSchedule::default(), 30, SamplerKind::Euler).unwrap();
        let st = sampler.states();
        assert_eq!(st.len(), 31);
        assert_eq!(st[0], 100);
        assert_eq!(*st.last().unwrap(), 0);
        assert!(st.windows(2).all(|w| w[0] > w[1]));
    }
}
