//! EEG datasets: the in-memory container, its "EEGT" file format, label
//! filtering, splitting, and a synthetic generator.

mod container;
mod split;
mod synthetic;

pub use container::{read_container, write_container, HEADER_LEN, MAGIC, VERSION};
pub use split::{split, split_indices, SplitIndices, SplitSpec, Splits};
pub use synthetic::{generate_synthetic, grid_positions, SyntheticSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Screen size in pixels; labels outside `[0, W] × [0, H]` are invalid.
pub const SCREEN: (f32, f32) = (800.0, 600.0);

/// `n` samples of `channels × timesteps` EEG with `(x, y)` pixel labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    channels: usize,
    timesteps: usize,
    eeg: Vec<f32>,
    labels: Vec<f32>,
    participants: Option<Vec<u32>>,
}

impl Dataset {
    pub fn new(
        channels: usize,
        timesteps: usize,
        eeg: Vec<f32>,
        labels: Vec<f32>,
        participants: Option<Vec<u32>>,
    ) -> Result<Dataset> {
        if channels == 0 || timesteps == 0 {
            return Err(Error::Contract("channels and timesteps must be positive".into()));
        }
        if !labels.len().is_multiple_of(2) {
            return Err(Error::Contract(format!(
                "{} label values do not form (x, y) pairs",
                labels.len()
            )));
        }
        let n = labels.len() / 2;
        if eeg.len() != n * channels * timesteps {
            return Err(Error::Contract(format!(
                "eeg has {} values, expected {n}×{channels}×{timesteps}",
                eeg.len()
            )));
        }
        if let Some(p) = &participants {
            if p.len() != n {
                return Err(Error::Contract(format!("{} participant ids for {n} samples", p.len())));
            }
        }
        Ok(Dataset {
            channels,
            timesteps,
            eeg,
            labels,
            participants,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn eeg(&self) -> &[f32] {
        &self.eeg
    }

    /// Flat `(x, y)` pairs.
    pub fn labels(&self) -> &[f32] {
        &self.labels
    }

    pub fn participants(&self) -> Option<&[u32]> {
        self.participants.as_deref()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let per = self.channels * self.timesteps;
        &self.eeg[i * per..(i + 1) * per]
    }

    pub fn label(&self, i: usize) -> [f32; 2] {
        [self.labels[2 * i], self.labels[2 * i + 1]]
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let per = self.channels * self.timesteps;
        let mut eeg = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len() * 2);
        for &i in indices {
            eeg.extend_from_slice(self.sample(i));
            labels.extend_from_slice(&self.label(i));
        }
        Dataset {
            channels: self.channels,
            timesteps: self.timesteps,
            eeg,
            labels,
            participants: self
                .participants
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
        }
    }

    /// `([B, C, T], [B, 2])` tensors for the samples at `indices`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let per = self.channels * self.timesteps;
        let mut x = Vec::with_capacity(indices.len() * per);
        let mut y = Vec::with_capacity(indices.len() * 2);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Contract(format!(
                    "sample {i} out of range for {} samples",
                    self.len()
                )));
            }
            x.extend_from_slice(self.sample(i));
            y.extend_from_slice(&self.label(i));
        }
        let b = indices.len();
        Ok((
            Tensor::new(vec![b, self.channels, self.timesteps], x)?,
            Tensor::new(vec![b, 2], y)?,
        ))
    }

    /// All EEG as one `[n, C, T]` tensor.
    pub fn eeg_tensor(&self) -> Result<Tensor> {
        Tensor::new(vec![self.len(), self.channels, self.timesteps], self.eeg.clone())
    }

    pub fn labels_tensor(&self) -> Result<Tensor> {
        Tensor::new(vec![self.len(), 2], self.labels.clone())
    }

    /// Per-coordinate mean and population standard deviation of the labels.
    pub fn label_stats(&self) -> Result<([f32; 2], [f32; 2])> {
        if self.is_empty() {
            return Err(Error::Contract("label statistics of an empty dataset".into()));
        }
        let n = self.len() as f64;
        let mut mean = [0.0f64; 2];
        for pair in self.labels.chunks_exact(2) {
            mean[0] += pair[0] as f64;
            mean[1] += pair[1] as f64;
        }
        mean = mean.map(|m| m / n);
        let mut var = [0.0f64; 2];
        for pair in self.labels.chunks_exact(2) {
            var[0] += (pair[0] as f64 - mean[0]).powi(2);
            var[1] += (pair[1] as f64 - mean[1]).powi(2);
        }
        Ok((mean.map(|m| m as f32), var.map(|v| (v / n).sqrt() as f32)))
    }
}

fn on_screen(label: [f32; 2]) -> bool {
    (0.0..=SCREEN.0).contains(&label[0]) && (0.0..=SCREEN.1).contains(&label[1])
}

/// Keeps exactly the samples whose label lies on screen, bounds included.
pub fn filter_valid_labels(d: &Dataset) -> Dataset {
    let keep: Vec<usize> = (0..d.len()).filter(|&i| on_screen(d.label(i))).collect();
    d.subset(&keep)
}
