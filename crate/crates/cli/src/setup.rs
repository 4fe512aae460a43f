//! Run configuration: one flat `key=value` namespace.
//!
//! ```text
//! seed=0                 # the only seed; data and training derive theirs
//! data.path=runs/data    # a stored dataset, or data.<spec key>=... to synthesise
//! model.operator=tvconv
//! train.epochs=30
//! ablate.runs=5
//! ```

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use tvconv::config::Config;
use tvconv::data::{gen_layout_dataset, read_dataset, LayoutDataset, LayoutDatasetSpec};
use tvconv::report::KeyValues;
use tvconv::train::{ModelSpec, TrainConfig};

use crate::ConfigArgs;

/// Which top-level sections a command accepts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sections {
    Data,
    Train,
    Ablate,
}

impl Sections {
    fn allows(self, section: &str) -> bool {
        match section {
            "data" => true,
            "model" | "train" => self != Sections::Data,
            "ablate" => self == Sections::Ablate,
            _ => false,
        }
    }
}

pub fn load(args: &ConfigArgs, sections: Sections) -> Result<Config> {
    let mut cfg = match &args.config {
        Some(path) => Config::read(path)?,
        None => Config::new(),
    };
    for o in &args.overrides {
        cfg.set_override(o)?;
    }
    let bad = cfg.keys().find(|k| {
        if *k == "seed" {
            return false;
        }
        if matches!(*k, "data.seed" | "train.seed") {
            return true;
        }
        match k.split_once('.') {
            Some((section, rest)) => !sections.allows(section) || rest.is_empty(),
            None => true,
        }
    });
    if let Some(k) = bad {
        return Err(tvconv::Error::UnknownKey(k.to_string()).into());
    }
    Ok(cfg)
}

pub fn seed(cfg: &Config) -> Result<u64> {
    Ok(cfg.get("seed")?.unwrap_or(0))
}

pub fn data_spec(cfg: &Config) -> Result<LayoutDatasetSpec> {
    let mut data = cfg.section("data");
    data.set("seed", seed(cfg)?);
    within("data", LayoutDatasetSpec::from_config(&data, ""))
}

/// The stored dataset under `data.path`, or a freshly generated one.
pub fn dataset(cfg: &Config) -> Result<LayoutDataset> {
    let data = cfg.section("data");
    if let Some(path) = data.get_str("path") {
        if let Some(k) = data.keys().find(|k| *k != "path") {
            bail!("`data.{k}` cannot be combined with `data.path`");
        }
        let path = PathBuf::from(path);
        return read_dataset(&path).with_context(|| format!("reading dataset {}", path.display()));
    }
    Ok(gen_layout_dataset(&data_spec(cfg)?)?)
}

/// Model spec; input shape and class count follow the dataset unless set.
pub fn model_spec(cfg: &Config, data: &LayoutDataset) -> Result<ModelSpec> {
    let mut section = cfg.section("model");
    let s = &data.spec;
    if !section.contains("input") {
        section.set("input", format!("{}x{}x{}", s.channels, s.height, s.width));
    }
    if !section.contains("classes") {
        section.set("classes", s.classes);
    }
    within("model", ModelSpec::from_config(&section))
}

pub fn train_config(cfg: &Config) -> Result<TrainConfig> {
    let mut section = cfg.section("train");
    section.set("seed", seed(cfg)?);
    within("train", TrainConfig::from_config(&section))
}

/// Restores the section prefix on unknown-key errors from a narrowed config.
pub fn within<T>(section: &str, r: tvconv::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        tvconv::Error::UnknownKey(k) => tvconv::Error::UnknownKey(format!("{section}.{k}")).into(),
        e => e.into(),
    })
}

/// Every resolved value, for `config.txt`.
pub fn resolved(seed: u64, data: &LayoutDataset, model: Option<&ModelSpec>, train: Option<&TrainConfig>) -> Result<KeyValues> {
    let mut kv = KeyValues::new();
    kv.push("seed", seed);
    prefixed(&mut kv, "data", &data.spec.to_key_values()?);
    if let Some(m) = model {
        prefixed(&mut kv, "model", &m.to_key_values());
    }
    if let Some(t) = train {
        prefixed(&mut kv, "train", &t.to_key_values());
    }
    Ok(kv)
}

fn prefixed(kv: &mut KeyValues, prefix: &str, inner: &KeyValues) {
    for (k, v) in inner.entries() {
        if k != "seed" {
            kv.push(format!("{prefix}.{k}"), v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(file: Option<PathBuf>, overrides: &[&str]) -> ConfigArgs {
        ConfigArgs {
            config: file,
            overrides: overrides.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn overrides_beat_file_and_seed_fans_out() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "seed=2\ntrain.lr=0.1\ndata.train=24\n").unwrap();
        let cfg = load(&args(Some(path), &["train.lr=0.2", "seed=9"]), Sections::Train).unwrap();
        let tc = train_config(&cfg).unwrap();
        assert_eq!((tc.lr, tc.seed), (0.2, 9));
        let spec = data_spec(&cfg).unwrap();
        assert_eq!((spec.train, spec.seed), (24, 9));
    }

    #[test]
    fn sections_are_per_command() {
        assert!(load(&args(None, &["model.stem=4"]), Sections::Data).is_err());
        assert!(load(&args(None, &["ablate.runs=2"]), Sections::Train).is_err());
        assert!(load(&args(None, &["ablate.runs=2"]), Sections::Ablate).is_ok());
        assert!(load(&args(None, &["lr=2"]), Sections::Ablate).is_err());
        assert!(load(&args(None, &["train.seed=2"]), Sections::Ablate).is_err());
    }

    #[test]
    fn model_follows_dataset_shape() {
        let cfg = load(&args(None, &["data.classes=4", "data.height=16", "data.width=16", "data.train=8", "data.test=8"]), Sections::Train).unwrap();
        let ds = dataset(&cfg).unwrap();
        let m = model_spec(&cfg, &ds).unwrap();
        assert_eq!((m.input, m.classes), ((1, 16, 16), 4));
    }
}
