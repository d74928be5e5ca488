//! Synthetic EEG with gaze positions planted in a few channels.
//!
//! Labels are drawn uniformly from a 5×5 grid spanning the screen corners.
//! Every channel carries unit-variance smoothed Gaussian noise scaled by
//! `noise_std`. Channels 0..16 add `x/400 − 1` and channels 16..32 add
//! `y/300 − 1`, each times `signal_gain` and a fixed per-channel sinusoidal
//! modulation `1 + sin(2π·f·t/T + φ)/2`. The modulation keeps a positive
//! mean, so the coordinate also shows in the time-averaged signal.

use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, SCREEN};
use crate::error::{Error, Result};

/// Moving-average window of the noise, in samples.
const SMOOTH: usize = 8;
const PLANTED: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub noise_std: f32,
    pub signal_gain: f32,
    pub seed: u64,
    pub channels: usize,
    pub timesteps: usize,
    /// Participant ids are assigned round-robin when nonzero.
    pub participants: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_samples: 2048,
            noise_std: 1.0,
            signal_gain: 1.0,
            seed: 7,
            channels: 129,
            timesteps: 500,
            participants: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::config("n_samples must be at least 1"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) || !self.signal_gain.is_finite() {
            return Err(Error::config(format!(
                "noise_std {} must be finite and nonnegative, signal_gain {} finite",
                self.noise_std, self.signal_gain
            )));
        }
        if self.channels < 2 * PLANTED || self.timesteps == 0 {
            return Err(Error::config(format!(
                "need at least {} channels and one timestep, got {}x{}",
                2 * PLANTED,
                self.channels,
                self.timesteps
            )));
        }
        Ok(())
    }
}

/// The 25 grid positions, row-major from the top-left corner.
pub fn grid_positions() -> Vec<[f32; 2]> {
    let mut out = Vec::with_capacity(25);
    for row in 0..5 {
        for col in 0..5 {
            out.push([SCREEN.0 * col as f32 / 4.0, SCREEN.1 * row as f32 / 4.0]);
        }
    }
    out
}

fn modulation(c: usize, t: usize, timesteps: usize) -> f32 {
    let k = c % PLANTED;
    let freq = 1.0 + k as f32;
    let phase = 0.7 * k as f32 + if c >= PLANTED { 0.35 } else { 0.0 };
    1.0 + 0.5 * (TAU * freq * t as f32 / timesteps as f32 + phase).sin()
}

pub fn generate_synthetic(s: &SyntheticSpec) -> Result<Dataset> {
    s.validate()?;
    let (n, ch, tl) = (s.n_samples, s.channels, s.timesteps);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let grid = grid_positions();
    let mods: Vec<f32> = (0..2 * PLANTED)
        .flat_map(|c| (0..tl).map(move |t| modulation(c, t, tl)))
        .collect();
    let norm = (SMOOTH as f32).sqrt() / SMOOTH as f32;
    let mut eeg = Vec::with_capacity(n * ch * tl);
    let mut labels = Vec::with_capacity(2 * n);
    let mut raw = vec![0.0f32; tl + SMOOTH - 1];
    for _ in 0..n {
        let [x, y] = grid[rng.random_range(0..grid.len())];
        labels.extend_from_slice(&[x, y]);
        let coef = [x / (SCREEN.0 / 2.0) - 1.0, y / (SCREEN.1 / 2.0) - 1.0];
        for c in 0..ch {
            for v in raw.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let mut window: f32 = raw[..SMOOTH].iter().sum();
            for t in 0..tl {
                if t > 0 {
                    window += raw[t + SMOOTH - 1] - raw[t - 1];
                }
                let mut v = s.noise_std * window * norm;
                if c < 2 * PLANTED {
                    v += s.signal_gain * coef[c / PLANTED] * mods[c * tl + t];
                }
                eeg.push(v);
            }
        }
    }
    let participants = (s.participants > 0).then(|| (0..n as u32).map(|i| i % s.participants).collect());
    Dataset::new(ch, tl, eeg, labels, participants)
}
