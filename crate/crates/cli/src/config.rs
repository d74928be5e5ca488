//! Layered run configuration: built-in defaults, then an optional TOML
//! file, then `section.key=value` overrides.

use std::path::Path;

use anyhow::{bail, Context};
use eegmobile::bench::BenchConfig;
use eegmobile::data::{SplitSpec, SyntheticSpec};
use eegmobile::nn::{StudentConfig, TeacherConfig};
use eegmobile::train::KdConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::UsageError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub student: StudentConfig,
    pub teacher: TeacherConfig,
    pub kd: KdConfig,
    pub split: SplitSpec,
    pub synthetic: SyntheticSpec,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn tiny() -> Self {
        RunConfig {
            student: StudentConfig::tiny(),
            teacher: TeacherConfig::tiny(),
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> eegmobile::Result<()> {
        self.student.validate()?;
        self.teacher.validate()?;
        self.kd.validate()?;
        self.split.validate()?;
        self.synthetic.validate()?;
        self.bench.validate()
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Start from `base`, merge the file at `path` over it, then apply the
/// overrides in order. Unknown sections or keys are rejected.
pub fn resolve(base: RunConfig, path: Option<&Path>, overrides: &[String]) -> anyhow::Result<RunConfig> {
    let mut table = Table::try_from(&base)?;
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file: Table = toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        merge(&mut table, file, "")?;
    }
    for item in overrides {
        apply_override(&mut table, item)?;
    }
    RunConfig::deserialize(table).map_err(|e| UsageError(e.to_string()).into())
}

fn merge(into: &mut Table, from: Table, prefix: &str) -> anyhow::Result<()> {
    for (key, value) in from {
        let path = format!("{prefix}{key}");
        match (into.get_mut(&key), value) {
            (Some(Value::Table(dst)), Value::Table(src)) => merge(dst, src, &format!("{path}."))?,
            (Some(slot), v) => *slot = v,
            (None, _) => bail!(UsageError(format!("unknown config key `{path}`"))),
        }
    }
    Ok(())
}

fn apply_override(table: &mut Table, item: &str) -> anyhow::Result<()> {
    let Some((key, raw)) = item.split_once('=') else {
        bail!(UsageError(format!("override `{item}` is not key=value")));
    };
    let value = parse_value(raw.trim());
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty());
    let Some(last) = last else {
        bail!(UsageError(format!("override `{item}` has an empty key")));
    };
    let mut cur = table;
    for p in parts {
        cur = match cur.get_mut(p) {
            Some(Value::Table(t)) => t,
            _ => bail!(UsageError(format!("unknown config section `{p}` in `{key}`"))),
        };
    }
    match cur.get_mut(last) {
        Some(slot) => *slot = value,
        None => bail!(UsageError(format!("unknown config key `{key}`"))),
    }
    Ok(())
}

/// A TOML literal when it parses as one, a bare string otherwise.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
