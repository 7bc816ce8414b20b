use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Additive bus noise: white Gaussian plus Poisson-arriving rectangular
/// spikes of random polarity. Fully determined by `seed`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub gaussian_sigma_v: f64,
    pub spike_rate_hz: f64,
    pub spike_amplitude_v: f64,
    pub spike_width_s: f64,
    pub seed: u64,
}

const GAUSSIAN_STREAM: u64 = 1;
const SPIKE_STREAM: u64 = 2;

impl NoiseModel {
    pub fn quiet() -> Self {
        Self::default()
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        NoiseModel {
            gaussian_sigma_v: sigma,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.gaussian_sigma_v,
            self.spike_rate_hz,
            self.spike_amplitude_v,
            self.spike_width_s,
        ];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("noise parameters must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn is_quiet(&self) -> bool {
        self.gaussian_sigma_v == 0.0 && (self.spike_rate_hz == 0.0 || self.spike_amplitude_v == 0.0)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        NoiseModel { seed, ..self.clone() }
    }

    /// `len` samples of noise at `sample_rate`.
    pub fn generate(&self, len: usize, sample_rate: f64) -> Vec<f64> {
        let mut out = vec![0.0; len];
        if self.gaussian_sigma_v > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(GAUSSIAN_STREAM);
            let normal = Normal::new(0.0, self.gaussian_sigma_v).expect("sigma checked");
            for v in &mut out {
                *v = normal.sample(&mut rng);
            }
        }
        for spike in self.spikes(len, sample_rate) {
            for v in &mut out[spike.start..spike.end] {
                *v += spike.amplitude;
            }
        }
        out
    }

    /// Spike placements for a window of `len` samples.
    pub fn spikes(&self, len: usize, sample_rate: f64) -> Vec<Spike> {
        if self.spike_rate_hz <= 0.0 || self.spike_amplitude_v == 0.0 || len == 0 {
            return Vec::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(SPIKE_STREAM);
        let gap = Exp::new(self.spike_rate_hz).expect("rate checked");
        let width = ((self.spike_width_s * sample_rate).round() as usize).max(1);
        let duration = len as f64 / sample_rate;
        let mut t = 0.0;
        let mut spikes = Vec::new();
        loop {
            t += gap.sample(&mut rng);
            if t >= duration {
                break;
            }
            let start = (t * sample_rate) as usize;
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            spikes.push(Spike {
                start,
                end: (start + width).min(len),
                amplitude: sign * self.spike_amplitude_v,
            });
        }
        spikes
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Spike {
    pub start: usize,
    pub end: usize,
    pub amplitude: f64,
}
