//! Run configuration: profile defaults, a flat `section.key = value` file, and
//! command-line overrides, plus the hash that tags every output.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fom::{build_time_schedule, SolverSettings, TimeSchedule};
use crate::materials::LogNormalFieldSpec;
use crate::mlp::{Activation, TrainSettings};
use crate::pipeline::cases::CaseId;
use crate::pod::PodVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Laptop scale: 20×20 mesh, M = 25, N^t = 50, 2000 epochs.
    Desk,
    /// Reference scale: 2370 cells, M = 100, N^t = 200, 20000 epochs.
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Profile> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile '{s}' (expected desk or paper)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Squares per edge of the structured mesh.
    pub n: usize,
    /// Use the 2370-cell reference mesh instead (ignores `n`).
    pub reference: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub dt0: f64,
    pub dt_mult: f64,
    pub dt_max: f64,
    pub final_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PodKind {
    Standard,
    Nested,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Mass,
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PodConfig {
    pub variant: PodKind,
    pub n_int: usize,
    /// Modes kept per field.
    pub n: usize,
    pub norm: NormKind,
}

impl PodConfig {
    pub fn variant(&self) -> PodVariant {
        match self.variant {
            PodKind::Standard => PodVariant::Standard,
            PodKind::Nested => PodVariant::Nested { n_int: self.n_int },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnConfig {
    pub n_hl: usize,
    pub n_nn: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub case: CaseId,
    pub seed: u64,
    /// Output directory; not part of the hash.
    pub out: PathBuf,
    /// Run every phase on one thread; not part of the hash.
    pub serial: bool,
    /// Worker threads for the snapshot batch (default: all cores); not part
    /// of the hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub mesh: MeshConfig,
    pub time: TimeConfig,
    pub sampling: SamplingConfig,
    pub pod: PodConfig,
    pub ann: AnnConfig,
    pub solver: SolverSettings,
    /// Heterogeneous field of case 4, generated unless `field_file` is set.
    pub field: LogNormalFieldSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// Training parameters `M`; a perfect square.
    pub m: usize,
}

impl PipelineConfig {
    pub fn profile(profile: Profile, case: CaseId) -> PipelineConfig {
        let desk = profile == Profile::Desk;
        PipelineConfig {
            profile,
            case,
            seed: 0,
            out: PathBuf::from(format!("runs/case{}-{profile}", case.number())),
            serial: false,
            workers: None,
            mesh: MeshConfig { n: 20, reference: !desk },
            time: TimeConfig {
                dt0: 20.0,
                dt_mult: 1.0,
                dt_max: 20.0,
                final_time: if desk { 1000.0 } else { 4000.0 },
            },
            sampling: SamplingConfig { m: if desk { 25 } else { 100 } },
            pod: PodConfig { variant: PodKind::Nested, n_int: 5, n: 5, norm: NormKind::Mass },
            ann: AnnConfig {
                n_hl: 3,
                n_nn: 7,
                epochs: if desk { 2000 } else { 20_000 },
                batch_size: 32,
                learning_rate: 1e-3,
                validation_fraction: 0.2,
                activation: Activation::Tanh,
            },
            solver: SolverSettings::default(),
            field: LogNormalFieldSpec::default(),
            field_file: None,
        }
    }

    /// Profile defaults, then `file` (if any), then `overrides` as
    /// `section.key = value` pairs. A `profile` or `case` key in the file or
    /// overrides selects the defaults they are applied to.
    pub fn load(
        profile: Option<Profile>,
        case: Option<CaseId>,
        file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<PipelineConfig> {
        let mut entries: Vec<(String, toml::Value)> = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let table: toml::Table =
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            flatten("", &toml::Value::Table(table), &mut entries);
        }
        for (k, v) in overrides {
            entries.push((k.clone(), parse_value(v)));
        }
        let pick = |key: &str| entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.clone());
        let profile = match (profile, pick("profile")) {
            (Some(p), _) => p,
            (None, Some(v)) => v.as_str().ok_or_else(|| Error::Config("profile must be a string".into()))?.parse()?,
            (None, None) => Profile::Desk,
        };
        let case = match (case, pick("case")) {
            (Some(c), _) => c,
            (None, Some(v)) => {
                let n = v.as_integer().ok_or_else(|| Error::Config("case must be an integer".into()))?;
                CaseId::try_from(u8::try_from(n).map_err(|_| Error::Config(format!("unknown case {n}")))?)?
            }
            (None, None) => CaseId::Isotropic,
        };
        let base = PipelineConfig::profile(profile, case);
        let mut table = match toml::Value::try_from(&base).map_err(|e| Error::Config(e.to_string()))? {
            toml::Value::Table(t) => t,
            _ => unreachable!("config serialises to a table"),
        };
        for (key, value) in entries {
            if key == "profile" || key == "case" {
                continue;
            }
            set_dotted(&mut table, &key, value)?;
        }
        let cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mesh.reference && (self.mesh.n < 2 || !self.mesh.n.is_multiple_of(2)) {
            return Err(Error::Config(format!("mesh.n = {} must be even and at least 2", self.mesh.n)));
        }
        self.schedule()?;
        if self.pod.n == 0 || self.pod.n_int == 0 {
            return Err(Error::Config("pod.n and pod.n_int must be at least 1".into()));
        }
        if self.ann.epochs == 0 || self.ann.batch_size == 0 {
            return Err(Error::Config("ann.epochs and ann.batch_size must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<TimeSchedule> {
        let t = &self.time;
        build_time_schedule(t.dt0, t.dt_mult, t.dt_max, t.final_time)
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.ann.epochs,
            batch_size: self.ann.batch_size,
            learning_rate: self.ann.learning_rate,
            validation_fraction: self.ann.validation_fraction,
            seed: self.seed,
        }
    }

    /// The config with run-local settings cleared: what the hash covers and
    /// what artifacts embed.
    pub fn canonical(&self) -> PipelineConfig {
        PipelineConfig { out: PathBuf::new(), serial: false, workers: None, ..self.clone() }
    }

    /// SHA-256 (hex) of the canonical config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.canonical()).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, toml::Value)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

/// Parses a command-line value as TOML, falling back to a bare string.
fn parse_value(s: &str) -> toml::Value {
    let wrapped = format!("v = {s}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(s.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut cur = table;
    for p in parts {
        cur = match cur.get_mut(p) {
            Some(toml::Value::Table(t)) => t,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        };
    }
    // Optional fields are absent from the defaults; allow the known ones.
    let optional = matches!(key, "workers" | "field_file" | "field.zinn_harvey");
    if !cur.contains_key(last) && !optional {
        return Err(Error::Config(format!("unknown config key '{key}'")));
    }
    let value = match (cur.get(last), value) {
        // Let integers stand in for floats.
        (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    };
    cur.insert(last.to_string(), value);
    Ok(())
}
