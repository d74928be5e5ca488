//! Distance metrics, the mean-label baseline, inference timing and reports.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::Tensor;

/// Default pixel-to-millimetre factor of the reference display.
pub const PX_TO_MM: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Mean over samples of the Euclidean distance.
    #[default]
    MeanEuclidean,
    /// Square root of the mean squared Euclidean distance.
    RootMeanSquare,
}

/// Distance between `[B, 2]` predictions and targets, times `px_to_mm`.
pub fn distance(pred: &[f32], target: &[f32], px_to_mm: f64, metric: Metric) -> Result<f64> {
    if pred.len() != target.len() || !pred.len().is_multiple_of(2) {
        return Err(Error::Shape {
            op: "distance",
            detail: format!("{} predictions vs {} targets", pred.len(), target.len()),
        });
    }
    if pred.is_empty() {
        return Err(Error::Contract("distance over an empty set".into()));
    }
    let n = (pred.len() / 2) as f64;
    let sq = pred.chunks_exact(2).zip(target.chunks_exact(2)).map(|(p, t)| {
        let (dx, dy) = (p[0] as f64 - t[0] as f64, p[1] as f64 - t[1] as f64);
        dx * dx + dy * dy
    });
    let d = match metric {
        Metric::MeanEuclidean => sq.map(f64::sqrt).sum::<f64>() / n,
        Metric::RootMeanSquare => (sq.sum::<f64>() / n).sqrt(),
    };
    Ok(d * px_to_mm)
}

/// Eval-mode predictions over `data` in chunks of `batch` samples.
pub fn predict(model: &Model, data: &Dataset, batch: usize) -> Result<Tensor> {
    if data.is_empty() {
        return Err(Error::Contract("evaluation on an empty dataset".into()));
    }
    model.predict_batched(&data.eeg_tensor()?, batch)
}

pub fn rmse_eval(model: &Model, data: &Dataset, px_to_mm: f64, metric: Metric, batch: usize) -> Result<f64> {
    let pred = predict(model, data, batch)?;
    distance(pred.data(), data.labels(), px_to_mm, metric)
}

/// Distance of the constant predictor that always answers the mean
/// training label.
pub fn naive_baseline(train: &Dataset, eval: &Dataset, px_to_mm: f64, metric: Metric) -> Result<f64> {
    let (mean, _) = train.label_stats()?;
    let pred: Vec<f32> = (0..eval.len()).flat_map(|_| mean).collect();
    distance(&pred, eval.labels(), px_to_mm, metric)
}

/// Benchmark protocol settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Full sweeps over the evaluation set per timed run.
    pub passes: usize,
    pub runs: usize,
    pub batch: usize,
    pub px_to_mm: f64,
    pub metric: Metric,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            passes: 10,
            runs: 5,
            batch: 64,
            px_to_mm: PX_TO_MM,
            metric: Metric::MeanEuclidean,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.batch == 0 {
            return Err(Error::Config(format!(
                "bench runs {} and batch {} must be positive",
                self.runs, self.batch
            )));
        }
        if !(self.px_to_mm.is_finite() && self.px_to_mm > 0.0) {
            return Err(Error::Config(format!("px_to_mm {} must be positive", self.px_to_mm)));
        }
        Ok(())
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Timing {
    /// Seconds per run, each run being `passes` full sweeps.
    pub runs: Vec<f64>,
    pub mean_s: f64,
    pub std_s: f64,
}

/// Times `runs` runs of `passes` full eval sweeps over `data`. One untimed
/// sweep warms up first.
pub fn latency_bench(model: &Model, data: &Dataset, passes: usize, runs: usize, batch: usize) -> Result<Timing> {
    if runs == 0 || batch == 0 {
        return Err(Error::Contract(format!(
            "latency bench needs runs ≥ 1 and batch ≥ 1, got {runs} and {batch}"
        )));
    }
    let x = data.eeg_tensor()?;
    if passes > 0 {
        model.predict_batched(&x, batch)?;
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        for _ in 0..passes {
            std::hint::black_box(model.predict_batched(&x, batch)?);
        }
        times.push(start.elapsed().as_secs_f64());
    }
    let (mean_s, std_s) = mean_std(&times);
    Ok(Timing {
        runs: times,
        mean_s,
        std_s,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub params: usize,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub runtime_mean_min: f64,
    pub runtime_std_min: f64,
    pub runs: usize,
    pub passes: usize,
    pub hardware: String,
}

impl BenchReport {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.rmse_mean,
            self.rmse_std,
            self.runtime_mean_min,
            self.runtime_std_min,
        ];
        if finite.iter().any(|v| !v.is_finite()) || self.rmse_std < 0.0 || self.runtime_std_min < 0.0 {
            return Err(Error::Contract(format!(
                "report for {} has invalid statistics",
                self.model
            )));
        }
        if self.runs == 0 || self.runtime_mean_min < 0.0 {
            return Err(Error::Contract(format!(
                "report for {} needs runs ≥ 1 and runtime ≥ 0",
                self.model
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        self.validate()?;
        toml::to_string(self).map_err(|e| Error::Contract(format!("serializing report: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<BenchReport> {
        let r: BenchReport = toml::from_str(text).map_err(|e| Error::Config(format!("report: {e}")))?;
        r.validate()?;
        Ok(r)
    }
}

pub fn emit_report(r: &BenchReport, path: &Path) -> Result<()> {
    std::fs::write(path, r.to_toml()?)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<BenchReport> {
    BenchReport::from_toml(&std::fs::read_to_string(path)?)
}

/// Aligned text table of the reports, fastest first.
pub fn comparison_table(reports: &[BenchReport]) -> String {
    let mut rows: Vec<&BenchReport> = reports.iter().collect();
    rows.sort_by(|a, b| a.runtime_mean_min.total_cmp(&b.runtime_mean_min));
    let cells: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                format!("{:.1} M", r.params as f64 / 1e6),
                format!("{:.1} ± {:.1}", r.rmse_mean, r.rmse_std),
                format!("{:.3} ± {:.3}", r.runtime_mean_min, r.runtime_std_min),
            ]
        })
        .collect();
    let header = ["Model", "Params", "RMSE (mm)", "Runtime (min)"];
    let mut width = header.map(str::len);
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: [&str; 4]| {
        let padded: Vec<String> = row
            .iter()
            .zip(width)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&mut out, header);
    let rule: Vec<String> = width.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut out, [&rule[0], &rule[1], &rule[2], &rule[3]]);
    for row in &cells {
        line(&mut out, [&row[0], &row[1], &row[2], &row[3]]);
    }
    out
}
