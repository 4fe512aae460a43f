//! Model checkpoints: a directory with `model.txt` and one `TVTENSOR`
//! file per parameter.
//!
//! `model.txt` holds the spec under `spec.`, a `frozen` flag and one
//! `param.<name>=<file>` line per parameter, in [`Model::params`] order.

use std::fs;
use std::path::Path;

use super::model::{AffinityInit, Model, ModelSpec};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::report::KeyValues;
use crate::seed::rng_for;
use crate::tensor::{read_tensor_file, write_tensor_file};

pub fn save_model(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut kv = KeyValues::new();
    for (k, v) in model.spec.to_key_values().entries() {
        kv.push(format!("spec.{k}"), v);
    }
    kv.push("frozen", model.is_frozen());
    for p in model.params() {
        let file = format!("{}.tvt", p.name);
        write_tensor_file(p.value, dir.join(&file))?;
        kv.push(format!("param.{}", p.name), file);
    }
    let manifest = dir.join("model.txt");
    fs::write(&manifest, kv.to_string()).map_err(|e| Error::io(&manifest, e))
}

pub fn load_model(dir: &Path) -> Result<Model> {
    let manifest = dir.join("model.txt");
    let cfg = Config::read(&manifest)?;
    cfg.reject_unknown(|k| k == "frozen" || k.starts_with("spec.") || k.starts_with("param."))?;
    let spec = ModelSpec::from_config(&cfg.section("spec"))?;
    let skeleton = ModelSpec {
        affinity_init: AffinityInit::Constant(0.0),
        ..spec.clone()
    };
    let mut model = Model::init(&skeleton, &[], &mut rng_for(0, "init"))?;
    model.spec = spec;
    let files = cfg.section("param");
    let mut expected = 0;
    for p in model.params_mut() {
        expected += 1;
        let file = files.get_str(&p.name).ok_or_else(|| Error::Format(format!(
            "{}: missing parameter `{}`",
            manifest.display(),
            p.name
        )))?;
        let t = read_tensor_file(dir.join(file))?.into_f64();
        if t.dims() != p.value.dims() {
            return Err(Error::shape(
                format!("checkpoint parameter `{}`", p.name),
                "file",
                t.dims(),
                "model",
                p.value.dims(),
            ));
        }
        *p.value = t;
    }
    if files.keys().count() != expected {
        return Err(Error::Format(format!(
            "{}: {} parameter files for {expected} model parameters",
            manifest.display(),
            files.keys().count()
        )));
    }
    if cfg.get::<bool>("frozen")?.unwrap_or(false) {
        model.freeze()?;
    }
    Ok(model)
}
