use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use tvconv::config::Config;
use tvconv::cost::{network_cost, ArchSpec, Operator};
use tvconv::data::{read_dataset, variance_stats, write_dataset, Perturbation};
use tvconv::grad::suite::run_suite;
use tvconv::report::{KeyValues, Table};
use tvconv::train::{
    evaluate, load_model, run_ablation_affine, run_ablation_generator, run_ablation_init, run_ablation_stage, save_model,
    train_with, Experiment, GeneratorPoint,
};
use tvconv::tvconv::export_affinity as write_affinity;

use crate::setup::{self, Sections};
use crate::{Ablation, ConfigArgs, Verbosity};

const DEFAULT_GENERATOR_GRID: &str = "1:16:4:3,2:16:4:3,3:16:4:3,2:8:4:3,2:32:4:3,2:16:1:3,2:16:8:3,2:16:4:1";
const DEFAULT_AFFINE_GRID: &str =
    "translate:0,translate:0.2,translate:0.4,rotate:15,rotate:30,shear:0.2,shear:0.4,scale:1.2,scale:1.4";

fn write(dir: &Path, name: &str, contents: impl std::fmt::Display) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents.to_string()).with_context(|| format!("writing {}", path.display()))
}

fn say(v: Verbosity, at: Verbosity, text: impl std::fmt::Display) {
    if v >= at {
        println!("{}", text.to_string().trim_end());
    }
}

pub fn synth(args: &ConfigArgs, out: &Path, v: Verbosity) -> Result<()> {
    let cfg = setup::load(args, Sections::Data)?;
    if cfg.section("data").contains("path") {
        bail!("`data.path` names an existing dataset; synth generates one");
    }
    let ds = setup::dataset(&cfg)?;
    write_dataset(&ds, out)?;
    let stats = variance_stats(&ds.train.images)?;
    let mut kv = KeyValues::new();
    kv.push("train", ds.train.len())
        .push("test", ds.test.len())
        .push("intra_image_var", stats.intra_image_var)
        .push("cross_image_var", stats.cross_image_var)
        .push("variance_ratio", stats.ratio());
    write(out, "stats.txt", &kv)?;
    write(out, "config.txt", setup::resolved(setup::seed(&cfg)?, &ds, None, None)?)?;
    say(v, Verbosity::Normal, format_args!("wrote {} images to {}", ds.train.len() + ds.test.len(), out.display()));
    say(v, Verbosity::Verbose, &kv);
    Ok(())
}

pub fn train(args: &ConfigArgs, out: &Path, v: Verbosity) -> Result<()> {
    let cfg = setup::load(args, Sections::Train)?;
    let ds = setup::dataset(&cfg)?;
    let spec = setup::model_spec(&cfg, &ds)?;
    let tc = setup::train_config(&cfg)?;
    let outcome = train_with(&spec, &ds.train, &ds.test, &tc, |r| {
        say(
            v,
            Verbosity::Verbose,
            format_args!(
                "epoch {:3}  lr {:.5}  loss {:.4}  test acc {:.4}",
                r.epoch, r.lr, r.train_loss, r.test_accuracy
            ),
        )
    })?;
    save_model(&outcome.model, &out.join("model"))?;
    let mut history = Table::new(["epoch", "lr", "train_loss", "test_accuracy"]);
    for r in &outcome.history {
        history.row([r.epoch.to_string(), r.lr.to_string(), r.train_loss.to_string(), r.test_accuracy.to_string()]);
    }
    write(out, "history.txt", &history)?;
    let cost = network_cost(&spec.to_arch())?;
    let mut kv = KeyValues::new();
    kv.push("test_accuracy", outcome.test_accuracy)
        .push("train_accuracy", evaluate(&outcome.model, &ds.train)?)
        .push("params", outcome.model.param_count())
        .push("total_macs", cost.total_macs)
        .push("one_time_generation_macs", cost.one_time_generation_macs);
    write(out, "report.txt", &kv)?;
    write(out, "config.txt", setup::resolved(setup::seed(&cfg)?, &ds, Some(&spec), Some(&tc))?)?;
    say(v, Verbosity::Normal, format_args!("test accuracy {:.4}", outcome.test_accuracy));
    Ok(())
}

pub fn eval(checkpoint: &Path, dataset: &Path, out: &Path, v: Verbosity) -> Result<()> {
    let model = load_model(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let ds = read_dataset(dataset).with_context(|| format!("reading dataset {}", dataset.display()))?;
    let mut kv = KeyValues::new();
    kv.push("test_accuracy", evaluate(&model, &ds.test)?)
        .push("train_accuracy", evaluate(&model, &ds.train)?);
    write(out, "eval.txt", &kv)?;
    say(v, Verbosity::Normal, &kv);
    Ok(())
}

pub fn count(arch: &Path, out: &Path, v: Verbosity) -> Result<()> {
    let spec = ArchSpec::read(arch)?;
    let cost = network_cost(&spec)?;
    let kv = cost.key_values();
    let table = cost.table();
    write(out, "cost.txt", &kv)?;
    write(out, "blocks.txt", &table)?;
    say(v, Verbosity::Verbose, &table);
    say(v, Verbosity::Normal, &kv);
    Ok(())
}

pub fn gradcheck(seed: u64, tol: f64, instances: usize, out: &Path, v: Verbosity) -> Result<()> {
    if instances == 0 {
        bail!("--instances must be at least 1");
    }
    let checks = run_suite(seed, instances, tol)?;
    let mut table = Table::new(["op", "result", "instances", "failures", "max_rel_err", "max_abs_err"]);
    for c in &checks {
        table.row([
            c.op.to_string(),
            if c.pass() { "PASS" } else { "FAIL" }.to_string(),
            c.instances.to_string(),
            c.failures.to_string(),
            format!("{:.3e}", c.max_rel_err),
            format!("{:.3e}", c.max_abs_err),
        ]);
    }
    write(out, "gradcheck.txt", &table)?;
    say(v, Verbosity::Normal, &table);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass()).map(|c| c.op).collect();
    if !failed.is_empty() {
        bail!("gradient check failed for {} of {} ops: {}", failed.len(), checks.len(), failed.join(", "));
    }
    Ok(())
}

pub fn export_affinity(checkpoint: &Path, out: &Path, v: Verbosity) -> Result<()> {
    let model = load_model(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let mut kv = KeyValues::new();
    let mut files = 0;
    for (i, layer) in model.tvconv_layers() {
        let maps = layer.affinity();
        let prefix = format!("block{i}_affinity");
        files += write_affinity(maps.tensor(), out, &prefix)?.len();
        let plane = maps.height() * maps.width();
        let stds: Vec<String> = maps
            .tensor()
            .data()
            .chunks(plane)
            .map(|p| format!("{:.6}", tvconv::report::mean_and_std(p).1))
            .collect();
        kv.push(format!("{prefix}.position_std"), stds.join(","));
    }
    if files == 0 {
        bail!("checkpoint {} has no tvconv layers", checkpoint.display());
    }
    write(out, "affinity.txt", &kv)?;
    say(v, Verbosity::Normal, format_args!("wrote {files} files to {}", out.display()));
    say(v, Verbosity::Verbose, &kv);
    Ok(())
}

fn ablate_keys(cfg: &Config, name: Ablation) -> Result<Config> {
    let section = cfg.section("ablate");
    let grid_key = match name {
        Ablation::Init => None,
        Ablation::Generator | Ablation::Affine => Some("grid"),
        Ablation::Stage => Some("stages"),
    };
    setup::within("ablate", section.reject_unknown(|k| k == "runs" || Some(k) == grid_key))?;
    Ok(section)
}

pub fn ablate(name: Ablation, args: &ConfigArgs, out: &Path, v: Verbosity) -> Result<()> {
    let cfg = setup::load(args, Sections::Ablate)?;
    let section = ablate_keys(&cfg, name)?;
    let ds = setup::dataset(&cfg)?;
    let model = setup::model_spec(&cfg, &ds)?;
    let train = setup::train_config(&cfg)?;
    let exp = Experiment {
        model: model.clone(),
        train: train.clone(),
        runs: section.get("runs")?.unwrap_or(5),
    };
    let (kv, table) = match name {
        Ablation::Init => {
            let c = run_ablation_init(&ds.train, &ds.test, &exp)?;
            (c.key_values(), c.table())
        }
        Ablation::Generator => {
            let mut grid_cfg = section.clone();
            if !grid_cfg.contains("grid") {
                grid_cfg.set("grid", DEFAULT_GENERATOR_GRID);
            }
            let grid: Vec<GeneratorPoint> = grid_cfg.get_list("grid")?.unwrap_or_default();
            let c = run_ablation_generator(&ds.train, &ds.test, &exp, &grid)?;
            (c.key_values(), c.table())
        }
        Ablation::Stage => {
            let configs = section
                .get_list::<String>("stages")?
                .unwrap_or_default()
                .iter()
                .map(|item| {
                    item.split('+')
                        .map(|op| {
                            Operator::parse(op.trim())
                                .with_context(|| format!("`ablate.stages`: unknown operator `{op}` in `{item}`"))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let c = run_ablation_stage(&ds.train, &ds.test, &exp, &configs)?;
            (c.key_values(), c.table())
        }
        Ablation::Affine => {
            let mut grid_cfg = section.clone();
            if !grid_cfg.contains("grid") {
                grid_cfg.set("grid", DEFAULT_AFFINE_GRID);
            }
            let grid: Vec<Perturbation> = grid_cfg.get_list("grid")?.unwrap_or_default();
            let c = run_ablation_affine(&ds.train, &ds.test, &exp, &grid)?;
            (c.key_values(), c.table())
        }
    };
    write(out, "report.txt", &kv)?;
    write(out, "table.txt", &table)?;
    let mut resolved = setup::resolved(setup::seed(&cfg)?, &ds, Some(&model), Some(&train))?;
    resolved.push("ablate.runs", exp.runs);
    write(out, "config.txt", &resolved)?;
    say(v, Verbosity::Normal, &table);
    Ok(())
}
