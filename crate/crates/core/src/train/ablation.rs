//! Multi-seed runners behind every reported comparison.
//!
//! Run `i` of an experiment uses seed `train.seed + i`, which fixes its
//! init, batch order and augmentation draws; the dataset stays fixed.
//! Numbers are test error in percent, mean and population std over runs.

use super::fit::{train, TrainConfig, TrainOutcome};
use super::model::{AffinityInit, ModelSpec};
use crate::cost::{network_cost, Operator};
use crate::data::{Dataset, Perturbation};
use crate::error::{Error, Result};
use crate::report::{mean_and_std, mean_std, KeyValues, Table};
use crate::seed::rng_for;
use crate::tvconv::GeneratorConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub runs: usize,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            runs: 5,
        }
    }
}

pub fn run_seeds(spec: &ModelSpec, train_set: &Dataset, test: &Dataset, cfg: &TrainConfig, runs: usize) -> Result<Vec<TrainOutcome>> {
    if runs == 0 {
        return Err(Error::InvalidArgument("at least one run is required".into()));
    }
    (0..runs)
        .map(|i| {
            let cfg = TrainConfig {
                seed: cfg.seed + i as u64,
                ..cfg.clone()
            };
            train(spec, train_set, test, &cfg)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub label: String,
    /// Final frozen-model test accuracy of each run, in `[0, 1]`.
    pub accuracies: Vec<f64>,
}

impl RunSummary {
    pub fn new(label: impl Into<String>, outcomes: &[TrainOutcome]) -> Self {
        RunSummary {
            label: label.into(),
            accuracies: outcomes.iter().map(|o| o.test_accuracy).collect(),
        }
    }

    pub fn mean_accuracy(&self) -> f64 {
        mean_and_std(&self.accuracies).0
    }

    /// `(mean, std)` of the error in percent.
    pub fn error_pct(&self) -> (f64, f64) {
        let errors: Vec<f64> = self.accuracies.iter().map(|a| 100.0 * (1.0 - a)).collect();
        mean_and_std(&errors)
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn split(text: &str, key: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("`{key}`: bad accuracy `{v}`")))
        })
        .collect()
}

/// Labelled multi-seed results.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub title: String,
    pub rows: Vec<RunSummary>,
}

impl Comparison {
    pub fn row(&self, label: &str) -> Option<&RunSummary> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("title", &self.title).push("rows", self.rows.len());
        for (i, r) in self.rows.iter().enumerate() {
            let (mean, std) = r.error_pct();
            kv.push(format!("row{i}.label"), &r.label)
                .push(format!("row{i}.error_mean"), format!("{mean:.4}"))
                .push(format!("row{i}.error_std"), format!("{std:.4}"))
                .push(format!("row{i}.accuracies"), join(&r.accuracies));
        }
        kv
    }

    /// Inverse of [`Comparison::key_values`].
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let need = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("report is missing `{k}`")))
        };
        let n: usize = need("rows")?
            .parse()
            .map_err(|_| Error::InvalidArgument("`rows` is not a count".into()))?;
        let rows = (0..n)
            .map(|i| {
                let key = format!("row{i}.accuracies");
                Ok(RunSummary {
                    label: need(&format!("row{i}.label"))?.to_string(),
                    accuracies: split(need(&key)?, &key)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Comparison {
            title: need("title")?.to_string(),
            rows,
        })
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(["setting", "error (%)", "runs"]);
        for r in &self.rows {
            let (mean, std) = r.error_pct();
            t.row([r.label.clone(), mean_std(mean, std, 2), r.accuracies.len().to_string()]);
        }
        t
    }
}

/// A depthwise twin of a TVConv model at matched steady-state MACs.
#[derive(Clone, Debug, PartialEq)]
pub struct MacMatch {
    pub spec: ModelSpec,
    pub factor: f64,
    pub tvconv_macs: u64,
    pub depthwise_macs: u64,
}

/// Widens the all-depthwise version of `tv` by the smallest factor in
/// steps of 1/64 whose MACs are within `tol` (relative) of `tv`'s.
pub fn matched_depthwise(tv: &ModelSpec, tol: f64) -> Result<MacMatch> {
    let target = network_cost(&tv.to_arch())?.total_macs;
    let base = tv.clone().with_operator(Operator::Depthwise);
    for step in 0..=256 {
        let factor = 1.0 + step as f64 / 64.0;
        let spec = base.clone().widened(factor);
        let macs = network_cost(&spec.to_arch())?.total_macs;
        if (macs as f64 / target as f64 - 1.0).abs() <= tol {
            return Ok(MacMatch {
                spec,
                factor,
                tvconv_macs: target,
                depthwise_macs: macs,
            });
        }
        if macs > target {
            break;
        }
    }
    Err(Error::InvalidArgument(format!(
        "no depthwise widening within {:.1}% of {target} MACs",
        100.0 * tol
    )))
}

/// Constant vs statistics-initialised affinity maps.
pub fn run_ablation_init(train_set: &Dataset, test: &Dataset, exp: &Experiment) -> Result<Comparison> {
    let constant = match exp.model.affinity_init {
        AffinityInit::Constant(v) => v,
        AffinityInit::Stats => 1.0,
    };
    let mut rows = Vec::new();
    for init in [AffinityInit::Constant(constant), AffinityInit::Stats] {
        let spec = ModelSpec {
            affinity_init: init,
            ..exp.model.clone()
        };
        let outcomes = run_seeds(&spec, train_set, test, &exp.train, exp.runs)?;
        rows.push(RunSummary::new(init.to_string(), &outcomes));
    }
    Ok(Comparison {
        title: "affinity initialisation".into(),
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorPoint {
    pub layers: usize,
    pub channels: usize,
    pub affinity_channels: usize,
    pub kernel: usize,
}

impl GeneratorPoint {
    pub fn label(&self) -> String {
        format!(
            "L={} c_B={} c_A={} k_B={}",
            self.layers, self.channels, self.affinity_channels, self.kernel
        )
    }

    pub fn apply(&self, spec: &ModelSpec) -> ModelSpec {
        ModelSpec {
            affinity_channels: self.affinity_channels,
            generator: GeneratorConfig {
                layers: self.layers,
                channels: self.channels,
                kernel: self.kernel,
            },
            ..spec.clone()
        }
    }
}

impl std::str::FromStr for GeneratorPoint {
    type Err = String;

    /// `layers:channels:affinity_channels:kernel`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let v: Vec<usize> = s.split(':').filter_map(|p| p.trim().parse().ok()).collect();
        match v[..] {
            [layers, channels, affinity_channels, kernel] => Ok(GeneratorPoint {
                layers,
                channels,
                affinity_channels,
                kernel,
            }),
            _ => Err(format!("expected layers:channels:affinity_channels:kernel, got `{s}`")),
        }
    }
}

/// One row per generator shape.
pub fn run_ablation_generator(train_set: &Dataset, test: &Dataset, exp: &Experiment, grid: &[GeneratorPoint]) -> Result<Comparison> {
    let rows = grid
        .iter()
        .map(|p| {
            let spec = p.apply(&exp.model);
            Ok(RunSummary::new(p.label(), &run_seeds(&spec, train_set, test, &exp.train, exp.runs)?))
        })
        .collect::<Result<_>>()?;
    Ok(Comparison {
        title: "weight-generating block".into(),
        rows,
    })
}

/// All depthwise, TVConv in each single stage, TVConv everywhere.
pub fn default_stage_configs(stages: usize) -> Vec<Vec<Operator>> {
    let mut v = vec![vec![Operator::Depthwise; stages]];
    for s in 0..stages {
        let mut c = vec![Operator::Depthwise; stages];
        c[s] = Operator::TvConv;
        v.push(c);
    }
    if stages > 1 {
        v.push(vec![Operator::TvConv; stages]);
    }
    v
}

fn stage_label(ops: &[Operator]) -> String {
    let tv: Vec<String> = ops
        .iter()
        .enumerate()
        .filter(|(_, &o)| o == Operator::TvConv)
        .map(|(i, _)| (i + 1).to_string())
        .collect();
    if tv.is_empty() {
        "tvconv in none".into()
    } else {
        format!("tvconv in {}", tv.join("+"))
    }
}

/// One row per stage placement; an empty `configs` uses
/// [`default_stage_configs`].
pub fn run_ablation_stage(train_set: &Dataset, test: &Dataset, exp: &Experiment, configs: &[Vec<Operator>]) -> Result<Comparison> {
    let defaults;
    let configs = if configs.is_empty() {
        defaults = default_stage_configs(exp.model.stages.len());
        &defaults[..]
    } else {
        configs
    };
    let rows = configs
        .iter()
        .map(|ops| {
            let spec = exp.model.clone().with_stage_operators(ops)?;
            Ok(RunSummary::new(stage_label(ops), &run_seeds(&spec, train_set, test, &exp.train, exp.runs)?))
        })
        .collect::<Result<_>>()?;
    Ok(Comparison {
        title: "tvconv stage placement".into(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffinePoint {
    pub perturbation: Perturbation,
    pub depthwise: RunSummary,
    pub tvconv: RunSummary,
}

impl AffinePoint {
    /// TVConv minus depthwise mean accuracy, in points.
    pub fn gap(&self) -> f64 {
        100.0 * (self.tvconv.mean_accuracy() - self.depthwise.mean_accuracy())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineCurves {
    pub points: Vec<AffinePoint>,
}

impl AffineCurves {
    pub fn key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("points", self.points.len());
        for (i, p) in self.points.iter().enumerate() {
            kv.push(format!("point{i}.transform"), p.perturbation)
                .push(format!("point{i}.depthwise.accuracies"), join(&p.depthwise.accuracies))
                .push(format!("point{i}.tvconv.accuracies"), join(&p.tvconv.accuracies))
                .push(format!("point{i}.gap"), format!("{:.4}", p.gap()));
        }
        kv
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(["transform", "depthwise error (%)", "tvconv error (%)", "gap (points)"]);
        for p in &self.points {
            let (dm, ds) = p.depthwise.error_pct();
            let (tm, ts) = p.tvconv.error_pct();
            t.row([
                p.perturbation.to_string(),
                mean_std(dm, ds, 2),
                mean_std(tm, ts, 2),
                format!("{:.2}", p.gap()),
            ]);
        }
        t
    }
}

/// The test split under one fixed draw of `p` per image, from the run
/// seed's `test-augment` stream.
pub fn perturbed(test: &Dataset, p: &Perturbation, seed: u64) -> Result<Dataset> {
    let mut rng = rng_for(seed, "test-augment");
    test.map_images(|img| p.apply(img, &mut rng))
}

/// Trains both operators with `p` as training augmentation and evaluates
/// them on an equally perturbed test split. The depthwise model is the
/// matched-MAC twin of `exp.model`.
pub fn run_ablation_affine(train_set: &Dataset, test: &Dataset, exp: &Experiment, grid: &[Perturbation]) -> Result<AffineCurves> {
    let tv_spec = exp.model.clone().with_operator(Operator::TvConv);
    let dw_spec = matched_depthwise(&tv_spec, 0.02)?.spec;
    let mut points = Vec::new();
    for p in grid {
        let cfg = TrainConfig {
            augment: (!p.is_identity()).then_some(*p),
            ..exp.train.clone()
        };
        let mut summaries = Vec::new();
        for spec in [&dw_spec, &tv_spec] {
            let outcomes = (0..exp.runs.max(1))
                .map(|i| {
                    let cfg = TrainConfig {
                        seed: cfg.seed + i as u64,
                        ..cfg.clone()
                    };
                    train(spec, train_set, &perturbed(test, p, cfg.seed)?, &cfg)
                })
                .collect::<Result<Vec<_>>>()?;
            summaries.push(RunSummary::new(spec.stages[0].operator.name(), &outcomes));
        }
        let tvconv = summaries.pop().expect("two summaries");
        let depthwise = summaries.pop().expect("two summaries");
        points.push(AffinePoint {
            perturbation: *p,
            depthwise,
            tvconv,
        });
    }
    Ok(AffineCurves { points })
}
