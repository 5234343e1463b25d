//! On-disk formats and the built-in model table.
//!
//! Profile files carry measured per-stage pass times in milliseconds (the
//! unit they are usually quoted in); internally everything runs on integer
//! microseconds. Schedule files wrap the library's schedule artifact with a
//! schema version so older files fail loudly instead of misparsing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ppsched::core::{MemoryModel, Profile, Schedule, TimeUs};
use ppsched::costmodel::{derive_memory_model, TransformerConfig};

use crate::CliError;

/// A measured pass-time profile: times in milliseconds.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ProfileFile {
    /// Model the measurement belongs to (e.g. "6.2B"); resolves memory and
    /// layer counts through the built-in table when recognized.
    pub model: String,
    pub p: u32,
    pub m: u32,
    pub t_f: f64,
    pub t_b: f64,
    pub t_w: f64,
    pub t_comm: f64,
}

impl ProfileFile {
    pub fn load(path: &Path) -> Result<ProfileFile, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Computation(format!(
            "cannot read profile {}: {e}",
            path.display()
        )))?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Computation(format!("profile {} is malformed: {e}", path.display()))
        })
    }

    /// Times converted to integer microseconds.
    pub fn profile(&self) -> Result<Profile, CliError> {
        let us = |ms: f64, what: &str| -> Result<TimeUs, CliError> {
            if !ms.is_finite() || ms < 0.0 {
                return Err(CliError::Computation(format!("{what} = {ms} ms is not a valid time")));
            }
            Ok(TimeUs::from_ms(ms))
        };
        Ok(Profile::new(
            us(self.t_f, "t_f")?,
            us(self.t_b, "t_b")?,
            us(self.t_w, "t_w")?,
            us(self.t_comm, "t_comm")?,
        ))
    }
}

/// Versioned schedule file: the schema field guards the layout of everything
/// after it.
#[derive(Serialize, Deserialize)]
pub struct ScheduleFile {
    pub schema: u32,
    #[serde(flatten)]
    pub schedule: Schedule,
}

pub const SCHEDULE_SCHEMA: u32 = 1;

impl ScheduleFile {
    pub fn to_json(schedule: &Schedule) -> String {
        let file = ScheduleFile { schema: SCHEDULE_SCHEMA, schedule: schedule.clone() };
        let mut text = serde_json::to_string_pretty(&file).expect("schedules always serialize");
        text.push('\n');
        text
    }

    pub fn load(path: &Path) -> Result<Schedule, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Computation(format!(
            "cannot read schedule {}: {e}",
            path.display()
        )))?;
        let file: ScheduleFile = serde_json::from_str(&text).map_err(|e| {
            CliError::Computation(format!("schedule {} is malformed: {e}", path.display()))
        })?;
        if file.schema != SCHEDULE_SCHEMA {
            return Err(CliError::Computation(format!(
                "schedule {} uses schema {}, this build reads schema {SCHEDULE_SCHEMA}",
                path.display(),
                file.schema
            )));
        }
        Ok(file.schedule)
    }
}

/// Built-in description of the models the bundled profiles measure.
#[derive(Copy, Clone, Debug)]
pub struct ModelSpec {
    pub name: &'static str,
    pub layers: u32,
    pub hidden: u64,
    pub heads: u64,
}

/// Transformer configurations behind the bundled profiles (sequence length
/// 1024, microbatch size 1).
pub const MODELS: [ModelSpec; 4] = [
    ModelSpec { name: "1.5B", layers: 22, hidden: 2304, heads: 24 },
    ModelSpec { name: "6.2B", layers: 30, hidden: 4096, heads: 32 },
    ModelSpec { name: "14.6B", layers: 46, hidden: 5120, heads: 40 },
    ModelSpec { name: "28.3B", layers: 62, hidden: 6144, heads: 48 },
];

pub fn model_by_name(name: &str) -> Option<ModelSpec> {
    MODELS.iter().copied().find(|m| m.name == name)
}

impl ModelSpec {
    pub fn transformer(&self) -> TransformerConfig {
        TransformerConfig::new(1024, 1, self.hidden, self.heads)
    }

    /// Activation/weight-gradient memory accounting for one microbatch.
    pub fn memory(&self) -> Result<MemoryModel, CliError> {
        derive_memory_model(&self.transformer())
            .map_err(|e| CliError::Computation(format!("memory model for {}: {e}", self.name)))
    }

    /// Interleaving depth used by the multi-chunk baselines: stages hold
    /// `(layers + 2) / p` chunks (embedding and head count as one layer
    /// each).
    pub fn chunks(&self, p: u32) -> Result<u32, CliError> {
        let total = self.layers + 2;
        if p == 0 || total % p != 0 {
            return Err(CliError::Computation(format!(
                "{} cannot interleave: {} layer slots do not divide across {p} stages",
                self.name, total
            )));
        }
        Ok(total / p)
    }
}

/// Default accounting when no model is recognized: one forward holds two
/// units, the backward's input-gradient half releases one, the weight half
/// releases the other.
pub fn normalized_memory() -> MemoryModel {
    MemoryModel::new(2, 1, None)
}

/// A memory-limit argument: a multiple of the per-stage forward footprint
/// (`pMB`, `2pMB`, ...) or an absolute amount in the model's units.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum LimitSpec {
    PerStageForwards(i64),
    Absolute(i64),
}

impl LimitSpec {
    pub fn parse(text: &str) -> Result<LimitSpec, CliError> {
        let t = text.trim();
        if let Some(head) = t.strip_suffix("pMB") {
            let mult = if head.is_empty() {
                1
            } else {
                head.parse().map_err(|_| {
                    CliError::Usage(format!("bad memory limit {t:?}: expected e.g. pMB, 2pMB, or a number"))
                })?
            };
            if mult < 1 {
                return Err(CliError::Usage(format!("memory limit multiplier in {t:?} must be at least 1")));
            }
            return Ok(LimitSpec::PerStageForwards(mult));
        }
        t.parse()
            .map(LimitSpec::Absolute)
            .map_err(|_| CliError::Usage(format!("bad memory limit {t:?}: expected e.g. pMB, 2pMB, or a number")))
    }

    /// Resolve against the pipeline depth and the model's forward footprint.
    pub fn resolve(&self, p: u32, m_b: i64) -> i64 {
        match *self {
            LimitSpec::PerStageForwards(k) => k * p as i64 * m_b,
            LimitSpec::Absolute(v) => v,
        }
    }
}

impl std::fmt::Display for LimitSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            LimitSpec::PerStageForwards(1) => write!(f, "pMB"),
            LimitSpec::PerStageForwards(k) => write!(f, "{k}pMB"),
            LimitSpec::Absolute(v) => write!(f, "{v}"),
        }
    }
}

/// Resolves an output path: relative paths land in `PPSCHED_OUT_DIR` when
/// that variable is set.
pub fn out_path(raw: &Path) -> PathBuf {
    if raw.is_absolute() {
        return raw.to_path_buf();
    }
    match std::env::var_os("PPSCHED_OUT_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(raw),
        _ => raw.to_path_buf(),
    }
}

pub fn write_out(path: &Path, content: &str) -> Result<PathBuf, CliError> {
    let resolved = out_path(path);
    if let Some(parent) = resolved.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| {
                CliError::Computation(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    fs::write(&resolved, content).map_err(|e| {
        CliError::Computation(format!("cannot write {}: {e}", resolved.display()))
    })?;
    Ok(resolved)
}
