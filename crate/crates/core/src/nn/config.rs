use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temporal convolution and feature-extraction settings shared by both
/// architectures.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontEnd {
    pub in_channels: usize,
    pub timesteps: usize,
    pub tcn_channels: Vec<usize>,
    pub tcn_kernel: usize,
    pub tcn_dropout: f32,
    pub fe1_out: usize,
    pub fe1_kernel: (usize, usize),
    pub fe1_stride: (usize, usize),
    pub fe1_padding: (usize, usize),
    pub fe2_out: usize,
}

impl FrontEnd {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.timesteps == 0 {
            return Err(Error::config("in_channels and timesteps must be positive"));
        }
        if self.tcn_channels.is_empty() || self.tcn_channels.contains(&0) {
            return Err(Error::config("tcn_channels must be a nonempty list of positive sizes"));
        }
        if self.tcn_kernel == 0 {
            return Err(Error::config("tcn_kernel must be positive"));
        }
        if !(0.0..1.0).contains(&self.tcn_dropout) {
            return Err(Error::config(format!(
                "tcn_dropout {} outside [0, 1)",
                self.tcn_dropout
            )));
        }
        if self.fe1_out == 0 || self.fe2_out == 0 {
            return Err(Error::config("feature-extraction widths must be positive"));
        }
        let (kh, kw) = self.fe1_kernel;
        let (sh, sw) = self.fe1_stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(Error::config("fe1 kernel and stride must be positive"));
        }
        let (h, w) = self.map_size();
        let (ph, pw) = self.fe1_padding;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::config(format!(
                "fe1 kernel {:?} larger than padded map {}x{}",
                self.fe1_kernel,
                h + 2 * ph,
                w + 2 * pw
            )));
        }
        Ok(())
    }

    /// Height and width of the one-channel map fed to the first conv.
    pub fn map_size(&self) -> (usize, usize) {
        (*self.tcn_channels.last().unwrap_or(&0), self.timesteps)
    }

    /// Output height and width of the first feature conv.
    pub fn fe1_out_size(&self) -> (usize, usize) {
        let (h, w) = self.map_size();
        let out = |n: usize, k: usize, s: usize, p: usize| (n + 2 * p - k) / s + 1;
        (
            out(h, self.fe1_kernel.0, self.fe1_stride.0, self.fe1_padding.0),
            out(w, self.fe1_kernel.1, self.fe1_stride.1, self.fe1_padding.1),
        )
    }

    /// The second conv spans the full height of the first conv's output.
    pub fn fe2_kernel(&self) -> (usize, usize) {
        (self.fe1_out_size().0, 1)
    }

    /// Shape `[C, H, W]` of the feature map per sample.
    pub fn feature_shape(&self) -> [usize; 3] {
        [self.fe2_out, 1, self.fe1_out_size().1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub in_channels: usize,
    pub timesteps: usize,
    pub tcn_channels: Vec<usize>,
    pub tcn_kernel: usize,
    pub tcn_dropout: f32,
    pub fe1_out: usize,
    pub fe1_kernel: (usize, usize),
    pub fe1_stride: (usize, usize),
    pub fe1_padding: (usize, usize),
    pub fe2_out: usize,
    pub mvit_blocks: usize,
    pub mvit_transformer_layers: usize,
    pub mvit_dim: usize,
    pub mvit_ffn_expansion: usize,
    pub mvit_conv_kernel: (usize, usize),
    pub mvit_patch: (usize, usize),
    pub head_dropout: f32,
    pub out_dim: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            in_channels: 129,
            timesteps: 500,
            tcn_channels: vec![64, 128, 256],
            tcn_kernel: 3,
            tcn_dropout: 0.75,
            fe1_out: 256,
            fe1_kernel: (1, 36),
            fe1_stride: (1, 36),
            fe1_padding: (0, 2),
            fe2_out: 768,
            mvit_blocks: 1,
            mvit_transformer_layers: 1,
            mvit_dim: 768,
            mvit_ffn_expansion: 2,
            mvit_conv_kernel: (3, 3),
            mvit_patch: (1, 1),
            head_dropout: 0.1,
            out_dim: 2,
        }
    }
}

impl StudentConfig {
    /// Small configuration for desk-scale runs and tests.
    pub fn tiny() -> Self {
        StudentConfig {
            tcn_channels: vec![8, 8, 8],
            tcn_dropout: 0.1,
            fe1_out: 16,
            fe2_out: 32,
            mvit_dim: 32,
            ..Self::default()
        }
    }

    pub fn front(&self) -> FrontEnd {
        FrontEnd {
            in_channels: self.in_channels,
            timesteps: self.timesteps,
            tcn_channels: self.tcn_channels.clone(),
            tcn_kernel: self.tcn_kernel,
            tcn_dropout: self.tcn_dropout,
            fe1_out: self.fe1_out,
            fe1_kernel: self.fe1_kernel,
            fe1_stride: self.fe1_stride,
            fe1_padding: self.fe1_padding,
            fe2_out: self.fe2_out,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let front = self.front();
        front.validate()?;
        if self.mvit_dim == 0 || self.mvit_ffn_expansion == 0 {
            return Err(Error::config("mvit_dim and mvit_ffn_expansion must be positive"));
        }
        let (kh, kw) = self.mvit_conv_kernel;
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::config(format!(
                "mvit_conv_kernel {:?} must be odd",
                self.mvit_conv_kernel
            )));
        }
        let [_, h, w] = front.feature_shape();
        let (ph, pw) = self.mvit_patch;
        if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
            return Err(Error::config(format!(
                "mvit_patch {:?} does not tile a {h}x{w} map",
                self.mvit_patch
            )));
        }
        check_head(self.head_dropout, self.out_dim)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub in_channels: usize,
    pub timesteps: usize,
    pub tcn_channels: Vec<usize>,
    pub tcn_kernel: usize,
    pub tcn_dropout: f32,
    pub fe1_out: usize,
    pub fe1_kernel: (usize, usize),
    pub fe1_stride: (usize, usize),
    pub fe1_padding: (usize, usize),
    pub fe2_out: usize,
    pub vit_dim: usize,
    pub vit_layers: usize,
    pub vit_heads: usize,
    pub vit_mlp: usize,
    pub head_dropout: f32,
    pub out_dim: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        let s = StudentConfig::default();
        TeacherConfig {
            in_channels: s.in_channels,
            timesteps: s.timesteps,
            tcn_channels: s.tcn_channels,
            tcn_kernel: s.tcn_kernel,
            tcn_dropout: s.tcn_dropout,
            fe1_out: s.fe1_out,
            fe1_kernel: s.fe1_kernel,
            fe1_stride: s.fe1_stride,
            fe1_padding: s.fe1_padding,
            fe2_out: s.fe2_out,
            vit_dim: 768,
            vit_layers: 12,
            vit_heads: 12,
            vit_mlp: 3072,
            head_dropout: 0.1,
            out_dim: 2,
        }
    }
}

impl TeacherConfig {
    /// Small configuration for desk-scale runs, wider than
    /// [`StudentConfig::tiny`] so it can outperform the tiny student.
    pub fn tiny() -> Self {
        TeacherConfig {
            tcn_channels: vec![32, 32, 32],
            tcn_dropout: 0.1,
            fe1_out: 16,
            fe2_out: 64,
            vit_dim: 64,
            vit_layers: 2,
            vit_heads: 4,
            vit_mlp: 128,
            ..Self::default()
        }
    }

    pub fn front(&self) -> FrontEnd {
        FrontEnd {
            in_channels: self.in_channels,
            timesteps: self.timesteps,
            tcn_channels: self.tcn_channels.clone(),
            tcn_kernel: self.tcn_kernel,
            tcn_dropout: self.tcn_dropout,
            fe1_out: self.fe1_out,
            fe1_kernel: self.fe1_kernel,
            fe1_stride: self.fe1_stride,
            fe1_padding: self.fe1_padding,
            fe2_out: self.fe2_out,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.front().validate()?;
        if self.vit_heads == 0 || !self.vit_dim.is_multiple_of(self.vit_heads) {
            return Err(Error::config(format!(
                "vit_dim {} not divisible by vit_heads {}",
                self.vit_dim, self.vit_heads
            )));
        }
        if self.fe2_out != self.vit_dim {
            return Err(Error::config(format!(
                "fe2_out {} must equal vit_dim {}",
                self.fe2_out, self.vit_dim
            )));
        }
        if self.vit_mlp == 0 {
            return Err(Error::config("vit_mlp must be positive"));
        }
        check_head(self.head_dropout, self.out_dim)
    }
}

fn check_head(dropout: f32, out_dim: usize) -> Result<()> {
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::config(format!("head_dropout {dropout} outside [0, 1)")));
    }
    if out_dim != 2 {
        return Err(Error::config(format!(
            "out_dim must be 2 for position regression, got {out_dim}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_feature_map_is_768_by_1_by_14() {
        let f = StudentConfig::default().front();
        assert_eq!(f.fe1_out_size(), (256, 14));
        assert_eq!(f.fe2_kernel(), (256, 1));
        assert_eq!(f.feature_shape(), [768, 1, 14]);
    }

    #[test]
    fn teacher_rejects_indivisible_heads() {
        let cfg = TeacherConfig {
            vit_heads: 5,
            ..TeacherConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn toml_roundtrip_and_unknown_keys() {
        let cfg = StudentConfig::tiny();
        let text = toml::to_string(&cfg).unwrap();
        let back: StudentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(toml::from_str::<StudentConfig>("mvit_width = 3").is_err());
        let partial: StudentConfig = toml::from_str("mvit_dim = 64").unwrap();
        assert_eq!(partial.mvit_dim, 64);
        assert_eq!(partial.fe2_out, 768);
    }
}
