//! Run configuration: one flat-sectioned TOML file plus `--set` overrides.
//!
//! Every section maps onto one config struct. A section only lists the keys
//! it changes; everything else keeps the preset or default value. Values
//! are scalars or arrays of scalars, never tables.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::augmentation::AugPolicy;
use crate::contrastive::ContrastiveConfig;
use crate::data::SyntheticShapesSpec;
use crate::engine::{PretrainConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::finetune::{DepthHeadConfig, FinetuneConfig, FinetuneSchedule, SegHeadConfig, Task};
use crate::vit::VitConfig;

pub const SECTIONS: [&str; 9] = [
    "model",
    "contrastive",
    "augment",
    "train",
    "finetune",
    "seg",
    "depth",
    "data",
    "io",
];

/// Dataset generation and locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    #[serde(flatten)]
    pub shapes: SyntheticShapesSpec,
    pub val_count: usize,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/train.tsv`.
    pub train_manifest: Option<PathBuf>,
    /// Defaults to `<out_dir>/val.tsv`.
    pub val_manifest: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            shapes: SyntheticShapesSpec::default(),
            val_count: 50,
            out_dir: PathBuf::from("data"),
            train_manifest: None,
            val_manifest: None,
        }
    }
}

impl DataConfig {
    pub fn train_manifest(&self) -> PathBuf {
        self.train_manifest.clone().unwrap_or_else(|| self.out_dir.join("train.tsv"))
    }

    pub fn val_manifest(&self) -> PathBuf {
        self.val_manifest.clone().unwrap_or_else(|| self.out_dir.join("val.tsv"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    /// Checkpoint to resume, initialise from or evaluate.
    pub checkpoint: Option<PathBuf>,
    /// Where `eval` writes its report; stdout only when unset.
    pub report: Option<PathBuf>,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs"),
            checkpoint: None,
            report: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: VitConfig,
    pub contrastive: ContrastiveConfig,
    pub augment: AugPolicy,
    pub train: TrainConfig,
    pub finetune: FinetuneSchedule,
    /// Fine-tuning resolution; positional embeddings are resampled to it.
    pub finetune_image_size: usize,
    pub seg: SegHeadConfig,
    pub depth: DepthHeadConfig,
    pub data: DataConfig,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_table(&toml::Table::new()).expect("defaults are valid")
    }
}

/// Parses one `--set` argument, `section.key=value`. The value is read as a
/// TOML value and falls back to a bare string.
pub fn parse_override(arg: &str) -> Result<(String, String, toml::Value)> {
    let (path, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{arg}` is not section.key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .filter(|(s, k)| !s.is_empty() && !k.is_empty() && !k.contains('.'))
        .ok_or_else(|| Error::config(format!("override key `{path}` must be section.key")))?;
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    check_flat_value(section, key, &value)?;
    Ok((section.to_string(), key.to_string(), value))
}

fn check_flat_value(section: &str, key: &str, value: &toml::Value) -> Result<()> {
    let nested = match value {
        toml::Value::Table(_) => true,
        toml::Value::Array(items) => items.iter().any(|v| matches!(v, toml::Value::Table(_) | toml::Value::Array(_))),
        _ => false,
    };
    if nested {
        return Err(Error::config(format!("{section}.{key}: nested values are not supported")));
    }
    Ok(())
}

fn check_flat(table: &toml::Table) -> Result<()> {
    for (section, body) in table {
        if !SECTIONS.contains(&section.as_str()) {
            return Err(Error::config(format!("unknown section [{section}]")));
        }
        let body = body
            .as_table()
            .ok_or_else(|| Error::config(format!("`{section}` must be a [section], not a value")))?;
        for (key, value) in body {
            check_flat_value(section, key, value)?;
        }
    }
    Ok(())
}

/// Applies `keys` over `base`, rejecting keys the struct does not have.
fn overlay<T: Serialize + DeserializeOwned>(section: &str, base: &T, keys: &Map<String, Value>) -> Result<T> {
    let Value::Object(mut merged) = serde_json::to_value(base)? else {
        unreachable!("config structs serialise to objects")
    };
    for (k, v) in keys {
        if !merged.contains_key(k) {
            let known: Vec<&str> = merged.keys().map(String::as_str).collect();
            return Err(Error::config(format!(
                "unknown key {section}.{k} (expected one of: {})",
                known.join(", ")
            )));
        }
        merged.insert(k.clone(), v.clone());
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::config(format!("[{section}] {e}")))
}

fn section_keys(table: &toml::Table, name: &str) -> Result<Map<String, Value>> {
    match table.get(name) {
        None => Ok(Map::new()),
        Some(v) => match serde_json::to_value(v)? {
            Value::Object(m) => Ok(m),
            _ => Err(Error::config(format!("`{name}` must be a [section]"))),
        },
    }
}

fn take_string(keys: &mut Map<String, Value>, section: &str, key: &str) -> Result<Option<String>> {
    match keys.remove(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(Error::config(format!("{section}.{key} must be a string, got {other}"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::config(format!("config syntax: {e}")))?;
        Self::from_table(&table)
    }

    /// Reads `path` (or starts from defaults) and applies `overrides` in
    /// order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for arg in overrides {
            let (section, key, value) = parse_override(arg)?;
            let body = table
                .entry(section.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            body.as_table_mut()
                .ok_or_else(|| Error::config(format!("`{section}` must be a [section]")))?
                .insert(key, value);
        }
        Self::from_table(&table)
    }

    pub fn from_table(table: &toml::Table) -> Result<Self> {
        check_flat(table)?;

        let mut keys = section_keys(table, "model")?;
        let preset = take_string(&mut keys, "model", "preset")?.unwrap_or_else(|| "micro".into());
        let base = VitConfig::by_name(&preset)
            .ok_or_else(|| Error::config(format!("unknown model.preset `{preset}` (micro, mini, tiny, small, base)")))?;
        let model: VitConfig = overlay("model", &base, &keys)?;

        let contrastive = overlay("contrastive", &ContrastiveConfig::default(), &section_keys(table, "contrastive")?)?;

        let mut keys = section_keys(table, "augment")?;
        let policy = take_string(&mut keys, "augment", "policy")?.unwrap_or_else(|| "simclr".into());
        let base = match policy.as_str() {
            "simclr" => AugPolicy::simclr(model.image_size),
            "micro" => AugPolicy::micro(model.image_size),
            "identity" => AugPolicy::identity(model.image_size),
            other => return Err(Error::config(format!("unknown augment.policy `{other}` (simclr, micro, identity)"))),
        };
        let augment = overlay("augment", &base, &keys)?;

        let train = overlay("train", &TrainConfig::default(), &section_keys(table, "train")?)?;

        let mut keys = section_keys(table, "finetune")?;
        let finetune_image_size = match keys.remove("image_size") {
            None => model.image_size,
            Some(v) => v
                .as_u64()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::config(format!("finetune.image_size must be a positive integer, got {v}")))?
                as usize,
        };
        let finetune = overlay("finetune", &FinetuneSchedule::default(), &keys)?;
        let seg = overlay("seg", &SegHeadConfig::default(), &section_keys(table, "seg")?)?;
        let depth = overlay("depth", &DepthHeadConfig::default(), &section_keys(table, "depth")?)?;

        let data = overlay("data", &DataConfig::default(), &section_keys(table, "data")?)?;
        let io = overlay("io", &IoConfig::default(), &section_keys(table, "io")?)?;

        Ok(Self {
            model,
            contrastive,
            augment,
            train,
            finetune,
            finetune_image_size,
            seg,
            depth,
            data,
            io,
        })
    }

    pub fn pretrain_config(&self) -> Result<PretrainConfig> {
        let cfg = PretrainConfig {
            vit: self.model.clone(),
            contrastive: self.contrastive.clone(),
            augment: self.augment.clone(),
            train: self.train.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn finetune_config(&self, task: Task) -> Result<FinetuneConfig> {
        let cfg = FinetuneConfig {
            task,
            vit: VitConfig {
                image_size: self.finetune_image_size,
                ..self.model.clone()
            },
            seg: self.seg.clone(),
            depth: self.depth.clone(),
            schedule: self.finetune.clone(),
        };
        cfg.vit.validate()?;
        cfg.schedule.validate()?;
        Ok(cfg)
    }
}
