use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use eegmobile::bench::{comparison_table, emit_report, latency_bench, naive_baseline, rmse_eval, BenchReport};
use eegmobile::data::{
    filter_valid_labels, generate_synthetic, read_container, split, write_container, Dataset, Splits,
};
use eegmobile::nn::{Model, ModelConfig};
use eegmobile::train::{fit, History};

use crate::config::{self, RunConfig};
use crate::{ArchArg, Cli, Command, Part, TrainFlags, UsageError};

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let Cli { common, command } = cli;
    let base = if common.tiny {
        RunConfig::tiny()
    } else {
        RunConfig::default()
    };
    let mut cfg = config::resolve(base, common.config.as_deref(), &common.overrides)?;
    apply_flags(&mut cfg, &command);
    cfg.validate()?;

    let out = common.out_dir;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_resolved(&out, &cfg)?;

    match command {
        Command::GenData { out: path, .. } => gen_data(&cfg, &path.unwrap_or_else(|| out.join("data.eegt"))),
        Command::TrainTeacher { data, .. } => train_teacher(&cfg, &data, &out),
        Command::Distill { data, teacher, .. } => distill(&cfg, &data, teacher.as_deref(), &out),
        Command::Eval { model, data, split } => eval(&cfg, &model, &data, split),
        Command::Params { arch } => params(&cfg, arch),
        Command::Bench { models, data, .. } => bench(&cfg, &models, data.as_deref(), &out),
    }
}

/// Subcommand flags take precedence over the file and `--set` values.
fn apply_flags(cfg: &mut RunConfig, command: &Command) {
    let train = |cfg: &mut RunConfig, t: &TrainFlags| {
        if let Some(e) = t.epochs {
            cfg.kd.epochs = e;
        }
        if let Some(s) = t.seed {
            cfg.kd.seed = s;
        }
    };
    match command {
        Command::GenData {
            n,
            seed,
            channels,
            timesteps,
            ..
        } => {
            let s = &mut cfg.synthetic;
            s.n_samples = n.unwrap_or(s.n_samples);
            s.seed = seed.unwrap_or(s.seed);
            s.channels = channels.unwrap_or(s.channels);
            s.timesteps = timesteps.unwrap_or(s.timesteps);
        }
        Command::TrainTeacher { train: t, .. } => {
            train(cfg, t);
            // the teacher only ever sees the true loss
            cfg.kd.lambda = 0.0;
        }
        Command::Distill {
            lambda,
            temperature,
            train: t,
            ..
        } => {
            train(cfg, t);
            cfg.kd.lambda = lambda.unwrap_or(cfg.kd.lambda);
            cfg.kd.temperature = temperature.unwrap_or(cfg.kd.temperature);
        }
        Command::Bench { passes, runs, .. } => {
            cfg.bench.passes = passes.unwrap_or(cfg.bench.passes);
            cfg.bench.runs = runs.unwrap_or(cfg.bench.runs);
        }
        Command::Eval { .. } | Command::Params { .. } => {}
    }
}

fn write_resolved(out: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    let argv: Vec<String> = std::env::args().collect();
    let text = format!("# {}\n{}", argv.join(" "), cfg.to_toml()?);
    let path = out.join("resolved_config.toml");
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn sidecar(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

/// Checkpoint plus a `<path>.toml` sidecar holding the model configuration.
fn save_model(model: &Model, path: &Path) -> anyhow::Result<()> {
    model
        .save(path)
        .with_context(|| format!("writing {}", path.display()))?;
    fs::write(sidecar(path), toml::to_string(model.config())?)?;
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<Model> {
    let side = sidecar(path);
    let text = fs::read_to_string(&side).with_context(|| format!("reading model config {}", side.display()))?;
    let config: ModelConfig = toml::from_str(&text).with_context(|| format!("parsing {}", side.display()))?;
    Model::load(path, config).with_context(|| format!("loading {}", path.display()))
}

fn load_data(path: &Path) -> anyhow::Result<Dataset> {
    let raw = read_container(path).with_context(|| format!("reading {}", path.display()))?;
    let kept = filter_valid_labels(&raw);
    if kept.len() < raw.len() {
        eprintln!("dropped {} samples with off-screen labels", raw.len() - kept.len());
    }
    Ok(kept)
}

fn load_splits(cfg: &RunConfig, path: &Path) -> anyhow::Result<Splits> {
    let data = load_data(path)?;
    let s = split(&data, &cfg.split)?;
    eprintln!("split {} / {} / {}", s.train.len(), s.val.len(), s.test.len());
    Ok(s)
}

fn check_shape(model: &Model, data: &Dataset) -> anyhow::Result<()> {
    let front = model.config().front();
    if (front.in_channels, front.timesteps) != (data.channels(), data.timesteps()) {
        bail!(UsageError(format!(
            "model expects {} channels x {} samples but the data has {} x {}",
            front.in_channels,
            front.timesteps,
            data.channels(),
            data.timesteps()
        )));
    }
    Ok(())
}

fn gen_data(cfg: &RunConfig, path: &Path) -> anyhow::Result<()> {
    let data = generate_synthetic(&cfg.synthetic)?;
    write_container(path, &data).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "wrote {} samples of {} x {} to {}",
        data.len(),
        data.channels(),
        data.timesteps(),
        path.display()
    );
    Ok(())
}

fn train_and_save(
    cfg: &RunConfig,
    model: &mut Model,
    teacher: Option<&Model>,
    splits: &Splits,
    out: &Path,
    name: &str,
) -> anyhow::Result<History> {
    let log_path = out.join(format!("{name}_history.jsonl"));
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let history = fit(model, teacher, &splits.train, &splits.val, &cfg.kd, Some(&mut log))?;
    log.flush()?;
    let ckpt = out.join(format!("{name}.ckpt"));
    save_model(model, &ckpt)?;
    let naive = naive_baseline(&splits.train, &splits.val, 1.0, cfg.bench.metric)?;
    println!(
        "{name}: best val {:.3} px at epoch {} (naive {naive:.3} px), saved {}",
        history.best_val_rmse(),
        history.best_epoch,
        ckpt.display()
    );
    Ok(history)
}

fn train_teacher(cfg: &RunConfig, data: &Path, out: &Path) -> anyhow::Result<()> {
    let splits = load_splits(cfg, data)?;
    let mut model = Model::build_teacher(cfg.teacher.clone(), cfg.kd.seed)?;
    check_shape(&model, &splits.train)?;
    train_and_save(cfg, &mut model, None, &splits, out, "teacher")?;
    Ok(())
}

fn distill(cfg: &RunConfig, data: &Path, teacher: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let teacher = match (teacher, cfg.kd.lambda > 0.0) {
        (Some(p), _) => Some(load_model(p)?),
        (None, true) => bail!(UsageError(format!("lambda {} needs --teacher", cfg.kd.lambda))),
        (None, false) => None,
    };
    let splits = load_splits(cfg, data)?;
    let mut model = Model::build_student(cfg.student.clone(), cfg.kd.seed)?;
    check_shape(&model, &splits.train)?;
    if let Some(t) = &teacher {
        check_shape(t, &splits.train)?;
    }
    train_and_save(cfg, &mut model, teacher.as_ref(), &splits, out, "student")?;
    Ok(())
}

fn eval(cfg: &RunConfig, model: &Path, data: &Path, part: Part) -> anyhow::Result<()> {
    let model = load_model(model)?;
    let splits = load_splits(cfg, data)?;
    let set = match part {
        Part::Train => &splits.train,
        Part::Val => &splits.val,
        Part::Test => &splits.test,
        Part::All => &load_data(data)?,
    };
    check_shape(&model, set)?;
    let b = &cfg.bench;
    let px = rmse_eval(&model, set, 1.0, b.metric, b.batch)?;
    let naive = naive_baseline(&splits.train, set, 1.0, b.metric)?;
    println!(
        "{part:?} ({} samples): {:.3} mm ({px:.3} px), naive {:.3} mm",
        set.len(),
        px * b.px_to_mm,
        naive * b.px_to_mm
    );
    Ok(())
}

fn params(cfg: &RunConfig, arch: ArchArg) -> anyhow::Result<()> {
    let model = match arch {
        ArchArg::Student => Model::build_student(cfg.student.clone(), 0)?,
        ArchArg::Teacher => Model::build_teacher(cfg.teacher.clone(), 0)?,
    };
    let c = model.param_count();
    println!("{arch:?} parameters");
    for (name, n) in [
        ("tcn", c.tcn),
        ("features", c.features),
        ("backbone", c.backbone),
        ("head", c.head),
        ("total", c.total()),
    ] {
        println!("  {name:<10}{n:>12}");
    }
    Ok(())
}

fn hardware() -> String {
    let cpu = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    format!("{cpu}, {}, 1 thread", std::env::consts::OS)
}

fn bench(cfg: &RunConfig, models: &[PathBuf], data: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let b = &cfg.bench;
    let given = data.map(|p| load_splits(cfg, p).map(|s| s.test)).transpose()?;
    let mut reports = Vec::new();
    for path in models {
        let model = load_model(path)?;
        let set = match &given {
            Some(d) => d.clone(),
            None => {
                let front = model.config().front();
                let mut spec = cfg.synthetic.clone();
                spec.channels = front.in_channels;
                spec.timesteps = front.timesteps;
                generate_synthetic(&spec)?
            }
        };
        check_shape(&model, &set)?;
        let before = model.params.clone();
        let rmse = rmse_eval(&model, &set, b.px_to_mm, b.metric, b.batch)?;
        let timing = latency_bench(&model, &set, b.passes, b.runs, b.batch)?;
        debug_assert!(model.params.iter().all(|(k, t)| t.bit_eq(&before[k])));
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        let report = BenchReport {
            model: name.clone(),
            params: model.param_count().total(),
            rmse_mean: rmse,
            rmse_std: 0.0,
            runtime_mean_min: timing.mean_s / 60.0,
            runtime_std_min: timing.std_s / 60.0,
            runs: b.runs,
            passes: b.passes,
            hardware: hardware(),
        };
        let report_path = out.join(format!("{name}_report.toml"));
        emit_report(&report, &report_path)?;
        eprintln!("wrote {}", report_path.display());
        reports.push(report);
    }
    print!("{}", comparison_table(&reports));
    Ok(())
}
