//! Flat `key = value` settings shared by every subcommand.

use std::path::Path;

use anyhow::{Context, Result};
use toml::{Table, Value};

use claimrank::corpus::{TextView, ViewMode};
use claimrank::{FusionConfig, FusionMethod, LossKind, Pooling, TrainConfig};

use crate::args::{Mode, TrainFlags};
use crate::UsageError;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub view: TextView,
    pub fusion: FusionConfig,
    pub k: usize,
    pub negative_fraction: f64,
}

impl Settings {
    pub fn for_mode(mode: Mode) -> Self {
        let (train, view) = match mode {
            Mode::Multilingual => (TrainConfig::multilingual(), TextView::new(ViewMode::Source)),
            Mode::Crosslingual => (
                TrainConfig::crosslingual(),
                TextView::new(ViewMode::English),
            ),
        };
        Self {
            train,
            view,
            fusion: FusionConfig::default(),
            k: 10,
            negative_fraction: 1.0,
        }
    }

    pub fn load(path: &Path) -> Result<Table> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        text.parse::<Table>()
            .map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }

    /// Apply every key of a flat table; unknown keys and wrong types are
    /// usage errors.
    pub fn apply(&mut self, table: &Table) -> Result<()> {
        for (key, value) in table {
            self.set(key, value)
                .map_err(|msg| UsageError(format!("config key {key:?}: {msg}")))?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &Value) -> std::result::Result<(), String> {
        let t = &mut self.train;
        match key {
            "batch_size" => t.batch_size = count(value)?,
            "epochs" => t.epochs = count(value)?,
            "warmup_steps" => t.warmup_steps = count(value)?,
            "lr_backbone" => t.lr_backbone = real(value)?,
            "lr_custom" => t.lr_custom = real(value)?,
            "weight_decay" => t.weight_decay = real(value)?,
            "clip_value" => t.clip_value = real(value)?,
            "temperature" => t.temperature = real(value)?,
            "seed" => t.seed = count(value)? as u64,
            "loss" => t.loss = parsed::<LossKind>(value)?,
            "max_steps" => t.max_steps = count(value)?,
            "freeze_backbone" => t.freeze_backbone = flag(value)?,
            "freeze_custom" => t.freeze_custom = flag(value)?,
            "folds" => t.folds = count(value)?,
            "drop_noisy" => t.drop_noisy = flag(value)?,
            "pooling" => t.pooling = parsed::<Pooling>(value)?,
            "dim" => t.dim = count(value)?,
            "hidden" => t.hidden = count(value)?,
            "max_len" => t.max_len = count(value)?,
            "min_count" => t.min_count = count(value)?,
            "mode" | "view" => {
                self.view.mode = match text(value)? {
                    "source" => ViewMode::Source,
                    "english" => ViewMode::English,
                    other => return Err(format!("unknown view {other:?}")),
                }
            }
            "include_title" => self.view.include_title = flag(value)?,
            "min_tokens" => self.view.cleaning.min_tokens = count(value)?,
            "min_alnum_ratio" => self.view.cleaning.min_alnum_ratio = real(value)?,
            "method" => self.fusion.method = parsed::<FusionMethod>(value)?,
            "rrf_constant" => self.fusion.rrf_constant = real(value)?,
            "k_out" => self.fusion.k_out = count(value)?,
            "min_max" => self.fusion.min_max = flag(value)?,
            "k" => self.k = count(value)?,
            "negative_fraction" => self.negative_fraction = real(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    pub fn apply_flags(&mut self, flags: &TrainFlags) -> Result<()> {
        let t = &mut self.train;
        let usage = |e: claimrank::Error| UsageError(e.to_string());
        if let Some(v) = &flags.pooling {
            t.pooling = v.parse().map_err(usage)?;
        }
        if let Some(v) = &flags.loss {
            t.loss = v.parse().map_err(usage)?;
        }
        let overrides = [
            (flags.epochs, &mut t.epochs),
            (flags.batch_size, &mut t.batch_size),
            (flags.max_steps, &mut t.max_steps),
            (flags.warmup_steps, &mut t.warmup_steps),
            (flags.dim, &mut t.dim),
            (flags.hidden, &mut t.hidden),
            (flags.folds, &mut t.folds),
        ];
        for (flag, slot) in overrides {
            if let Some(v) = flag {
                *slot = v;
            }
        }
        if let Some(v) = flags.lr_backbone {
            t.lr_backbone = v;
        }
        if let Some(v) = flags.lr_custom {
            t.lr_custom = v;
        }
        Ok(())
    }

    /// Flat snapshot with the same keys [`Settings::apply`] reads.
    pub fn to_table(&self) -> Table {
        let t = &self.train;
        let mut m = Table::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        put("batch_size", (t.batch_size as i64).into());
        put("epochs", (t.epochs as i64).into());
        put("warmup_steps", (t.warmup_steps as i64).into());
        put("lr_backbone", t.lr_backbone.into());
        put("lr_custom", t.lr_custom.into());
        put("weight_decay", t.weight_decay.into());
        put("clip_value", t.clip_value.into());
        put("temperature", t.temperature.into());
        put("seed", (t.seed as i64).into());
        put("loss", t.loss.to_string().into());
        put("max_steps", (t.max_steps as i64).into());
        put("freeze_backbone", t.freeze_backbone.into());
        put("freeze_custom", t.freeze_custom.into());
        put("folds", (t.folds as i64).into());
        put("drop_noisy", t.drop_noisy.into());
        put("pooling", t.pooling.to_string().into());
        put("dim", (t.dim as i64).into());
        put("hidden", (t.hidden as i64).into());
        put("max_len", (t.max_len as i64).into());
        put("min_count", (t.min_count as i64).into());
        let view = match self.view.mode {
            ViewMode::Source => "source",
            ViewMode::English => "english",
        };
        put("view", view.into());
        put("include_title", self.view.include_title.into());
        put("min_tokens", (self.view.cleaning.min_tokens as i64).into());
        put("min_alnum_ratio", self.view.cleaning.min_alnum_ratio.into());
        put("method", self.fusion.method.to_string().into());
        put("rrf_constant", self.fusion.rrf_constant.into());
        put("k_out", (self.fusion.k_out as i64).into());
        put("min_max", self.fusion.min_max.into());
        put("k", (self.k as i64).into());
        put("negative_fraction", self.negative_fraction.into());
        m
    }
}

fn count(v: &Value) -> std::result::Result<usize, String> {
    v.as_integer()
        .and_then(|i| usize::try_from(i).ok())
        .ok_or_else(|| format!("expected a non-negative integer, got {v}"))
}

fn real(v: &Value) -> std::result::Result<f64, String> {
    v.as_float()
        .or_else(|| v.as_integer().map(|i| i as f64))
        .ok_or_else(|| format!("expected a number, got {v}"))
}

fn flag(v: &Value) -> std::result::Result<bool, String> {
    v.as_bool()
        .ok_or_else(|| format!("expected true or false, got {v}"))
}

fn text(v: &Value) -> std::result::Result<&str, String> {
    v.as_str()
        .ok_or_else(|| format!("expected a string, got {v}"))
}

fn parsed<T: std::str::FromStr<Err = claimrank::Error>>(
    v: &Value,
) -> std::result::Result<T, String> {
    text(v)?
        .parse()
        .map_err(|e: claimrank::Error| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trips() {
        let mut s = Settings::for_mode(Mode::Crosslingual);
        s.train.pooling = Pooling::Attention;
        s.fusion.min_max = true;
        let table = s.to_table();
        let text = toml::to_string(&table).unwrap();
        let mut back = Settings::for_mode(Mode::Multilingual);
        back.apply(&text.parse::<Table>().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_unknown_and_mistyped_keys() {
        let mut s = Settings::for_mode(Mode::Multilingual);
        assert!(s.apply(&"colour = 3".parse().unwrap()).is_err());
        assert!(s.apply(&"epochs = \"many\"".parse().unwrap()).is_err());
        s.apply(&"epochs = 3\nlr_custom = 1\nloss = \"mnr\"".parse().unwrap())
            .unwrap();
        assert_eq!(s.train.epochs, 3);
        assert_eq!(s.train.lr_custom, 1.0);
        assert_eq!(s.train.loss, LossKind::Mnr);
    }
}
