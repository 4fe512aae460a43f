use rand::seq::SliceRandom;

use super::model::{Model, ModelSpec, ParamKind};
use super::optim::{sgd_step, SgdHyper, SgdParam, SgdState};
use crate::config::Config;
use crate::data::{Dataset, Perturbation};
use crate::error::{Error, Result};
use crate::grad::{ParamId, Tape};
use crate::report::KeyValues;
use crate::seed::rng_for;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Apply weight decay to affinity maps too.
    pub decay_affinity: bool,
    pub epochs: usize,
    pub batch_size: usize,
    /// `(epoch, divisor)`: from that 0-based epoch on, the rate is divided.
    pub schedule: Vec<(usize, f64)>,
    pub seed: u64,
    /// Random perturbation redrawn for every training image in every batch.
    pub augment: Option<Perturbation>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_affinity: false,
            epochs: 30,
            batch_size: 32,
            schedule: vec![(20, 10.0), (26, 10.0)],
            seed: 0,
            augment: None,
        }
    }
}

const TRAIN_KEYS: [&str; 9] = [
    "lr",
    "momentum",
    "weight_decay",
    "decay_affinity",
    "epochs",
    "batch_size",
    "schedule",
    "seed",
    "augment",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if let Some((e, d)) = self.schedule.iter().find(|(_, d)| !(*d > 0.0)) {
            return bad(format!("schedule divisor at epoch {e} must be > 0, got {d}"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|(e, _)| epoch >= *e)
            .fold(self.lr, |lr, (_, d)| lr / d)
    }

    pub fn hyper(&self, epoch: usize) -> SgdHyper {
        SgdHyper {
            lr: self.lr_at(epoch),
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn to_key_values(&self) -> KeyValues {
        let schedule: Vec<String> = self.schedule.iter().map(|(e, d)| format!("{e}:{d}")).collect();
        let mut kv = KeyValues::new();
        kv.push("lr", self.lr)
            .push("momentum", self.momentum)
            .push("weight_decay", self.weight_decay)
            .push("decay_affinity", self.decay_affinity)
            .push("epochs", self.epochs)
            .push("batch_size", self.batch_size)
            .push("schedule", schedule.join(","))
            .push("seed", self.seed)
            .push("augment", self.augment.map_or("none".to_string(), |p| p.to_string()));
        kv
    }

    /// Reads `cfg` (already narrowed to the train section) over the defaults.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        cfg.reject_unknown(|k| TRAIN_KEYS.contains(&k))?;
        let mut t = TrainConfig::default();
        cfg.update("lr", &mut t.lr)?;
        cfg.update("momentum", &mut t.momentum)?;
        cfg.update("weight_decay", &mut t.weight_decay)?;
        cfg.update("decay_affinity", &mut t.decay_affinity)?;
        cfg.update("epochs", &mut t.epochs)?;
        cfg.update("batch_size", &mut t.batch_size)?;
        cfg.update("seed", &mut t.seed)?;
        if let Some(items) = cfg.get_list::<String>("schedule")? {
            t.schedule = items
                .iter()
                .map(|item| {
                    item.split_once(':')
                        .and_then(|(e, d)| Some((e.trim().parse().ok()?, d.trim().parse().ok()?)))
                        .ok_or_else(|| Error::InvalidArgument(format!("`schedule`: expected epoch:divisor, got `{item}`")))
                })
                .collect::<Result<_>>()?;
        }
        match cfg.get_str("augment") {
            None | Some("none") => {}
            Some(v) => t.augment = Some(v.parse()?),
        }
        t.validate()?;
        Ok(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean cross-entropy over the epoch's training samples.
    pub train_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Frozen after training.
    pub model: Model,
    /// Accuracy of the frozen model on the test split.
    pub test_accuracy: f64,
}

pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation split has no images".into()));
    }
    let pred = model.predict(&data.images)?;
    let correct = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / data.len() as f64)
}

/// The frozen-model accuracy, as used for every reported number.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    if model.is_frozen() || model.tvconv_layers().next().is_none() {
        return accuracy(model, data);
    }
    let mut frozen = model.clone();
    frozen.freeze()?;
    accuracy(&frozen, data)
}

fn check_data(spec: &ModelSpec, train: &Dataset, classes: usize) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Empty("training split has no images".into()));
    }
    let (c, h, w) = spec.input;
    if let Some(bad) = train.images.iter().find(|t| t.dims() != [c, h, w]) {
        return Err(Error::shape("training data", "image", bad.dims(), "model input", &[c, h, w]));
    }
    if let Some(l) = train.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!("label {l} but the model has {classes} classes")));
    }
    Ok(())
}

/// Mean loss of one mini-batch and its parameter gradients, in
/// [`Model::params`] order.
pub fn batch_gradients(model: &Model, images: &[Tensor], labels: &[usize]) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let logits = model.record(&mut tape, images)?;
    let scale = 1.0 / images.len() as f64;
    let mut loss = 0.0;
    let mut seeds = Vec::with_capacity(logits.len());
    for (&z, &label) in logits.iter().zip(labels) {
        let l = tape.softmax_cross_entropy(z, label)?;
        loss += tape.value(l).data()[0];
        seeds.push((l, Tensor::scalar(scale)));
    }
    let grads = tape.backward_from(seeds)?;
    let n = model.params().len();
    let grads = (0..n)
        .map(|i| {
            grads
                .param(ParamId(i))
                .cloned()
                .ok_or_else(|| Error::Tape(format!("no gradient for parameter {i}")))
        })
        .collect::<Result<_>>()?;
    Ok((loss * scale, grads))
}

/// One SGD step on `model`.
pub fn apply_step(model: &mut Model, grads: &[Tensor], state: &mut SgdState, cfg: &TrainConfig, epoch: usize) -> Result<()> {
    let mut slots: Vec<SgdParam<'_>> = model
        .params_mut()
        .into_iter()
        .map(|p| SgdParam {
            decay: p.kind != ParamKind::Affinity || cfg.decay_affinity,
            trainable: p.trainable,
            value: p.value,
        })
        .collect();
    sgd_step(&mut slots, grads, state, cfg.hyper(epoch))
}

pub fn train(spec: &ModelSpec, train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(spec, train, test, cfg, |_| {})
}

/// Trains from a fresh init, calling `on_epoch` after each epoch.
///
/// Streams derived from `cfg.seed`: `init` for parameters, `shuffle` for
/// the batch order and `augment` for training perturbations.
pub fn train_with(
    spec: &ModelSpec,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    check_data(spec, train, spec.classes)?;
    check_data(spec, test, spec.classes)?;
    let mut model = Model::init(spec, &train.images, &mut rng_for(cfg.seed, "init"))?;
    let mut shuffle = rng_for(cfg.seed, "shuffle");
    let mut augment = rng_for(cfg.seed, "augment");
    let mut state = SgdState::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let images: Vec<Tensor> = idx
                .iter()
                .map(|&i| match &cfg.augment {
                    Some(p) => p.apply(&train.images[i], &mut augment),
                    None => Ok(train.images[i].clone()),
                })
                .collect::<Result<_>>()?;
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let (loss, grads) = batch_gradients(&model, &images, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: batch + 1,
                    loss,
                });
            }
            total += loss * idx.len() as f64;
            apply_step(&mut model, &grads, &mut state, cfg, epoch)?;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            lr: cfg.lr_at(epoch),
            train_loss: total / train.len() as f64,
            test_accuracy: accuracy(&model, test)?,
        };
        on_epoch(&record);
        history.push(record);
    }
    model.freeze()?;
    let test_accuracy = accuracy(&model, test)?;
    Ok(TrainOutcome {
        history,
        model,
        test_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::Operator;
    use crate::train::model::StageSpec;
    use crate::tvconv::GeneratorConfig;

    fn tiny_spec() -> ModelSpec {
        ModelSpec {
            input: (1, 6, 6),
            stem: 2,
            stages: vec![StageSpec { channels: 3, blocks: 1, operator: Operator::TvConv, stride: 2 }],
            classes: 2,
            affinity_channels: 1,
            generator: GeneratorConfig { layers: 1, channels: 2, kernel: 3 },
            ..ModelSpec::default()
        }
    }

    fn toy(n: usize) -> Dataset {
        let images = (0..n)
            .map(|i| Tensor::from_fn(&[1, 6, 6], |j| if (j % 6 < 3) == (i % 2 == 0) { 1.0 } else { -1.0 }).unwrap())
            .collect();
        Dataset { images, labels: (0..n).map(|i| i % 2).collect() }
    }

    #[test]
    fn lr_schedule_divides() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 0.05);
        assert_eq!(cfg.lr_at(19), 0.05);
        assert!((cfg.lr_at(20) - 0.005).abs() < 1e-15);
        assert!((cfg.lr_at(29) - 0.0005).abs() < 1e-15);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = TrainConfig { augment: Some("translate:0.4".parse().unwrap()), ..TrainConfig::default() };
        let back = TrainConfig::from_config(&Config::parse(&cfg.to_key_values().to_string(), "t").unwrap()).unwrap();
        assert_eq!(back, cfg);
        for bad in ["lr=-1", "momentum=1", "schedule=5:0", "batch_size=0", "rate=1"] {
            assert!(TrainConfig::from_config(&Config::parse(bad, "t").unwrap()).is_err(), "{bad}");
        }
    }

    #[test]
    fn zero_lr_keeps_params_at_init() {
        let cfg = TrainConfig { lr: 0.0, epochs: 2, batch_size: 3, ..TrainConfig::default() };
        let out = train(&tiny_spec(), &toy(8), &toy(4), &cfg).unwrap();
        let mut init = Model::init(&tiny_spec(), &toy(8).images, &mut rng_for(0, "init")).unwrap();
        init.freeze().unwrap();
        assert_eq!(out.model, init);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig { epochs: 3, batch_size: 4, ..TrainConfig::default() };
        let a = train(&tiny_spec(), &toy(10), &toy(4), &cfg).unwrap();
        let b = train(&tiny_spec(), &toy(10), &toy(4), &cfg).unwrap();
        assert_eq!(a, b);
        let c = train(&tiny_spec(), &toy(10), &toy(4), &TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn affinity_decay_changes_only_affinity() {
        let spec = tiny_spec();
        let data = toy(4);
        let model = Model::init(&spec, &[], &mut rng_for(5, "init")).unwrap();
        let (_, grads) = batch_gradients(&model, &data.images, &data.labels).unwrap();
        let mut runs = Vec::new();
        for decay_affinity in [false, true] {
            let cfg = TrainConfig { decay_affinity, weight_decay: 0.1, ..TrainConfig::default() };
            let mut m = model.clone();
            apply_step(&mut m, &grads, &mut SgdState::default(), &cfg, 0).unwrap();
            runs.push(m);
        }
        for ((a, b), p) in runs[0].params().iter().zip(runs[1].params()).zip(model.params()) {
            if p.kind == ParamKind::Affinity {
                assert_ne!(a.value, b.value, "{}", p.name);
            } else {
                assert_eq!(a.value, b.value, "{}", p.name);
            }
        }
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut data = toy(4);
        data.images[1].data_mut()[0] = f64::NAN;
        let cfg = TrainConfig { epochs: 1, batch_size: 4, ..TrainConfig::default() };
        let err = train(&tiny_spec(), &data, &toy(2), &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, batch: 1, .. }), "{err}");
    }

    #[test]
    fn shape_and_label_errors() {
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let mut wrong = toy(2);
        wrong.images[0] = Tensor::zeros(&[1, 5, 5]).unwrap();
        assert!(matches!(train(&tiny_spec(), &wrong, &toy(2), &cfg), Err(Error::ShapeMismatch { .. })));
        let mut labels = toy(2);
        labels.labels[0] = 7;
        assert!(train(&tiny_spec(), &labels, &toy(2), &cfg).is_err());
        assert!(train(&tiny_spec(), &Dataset::default(), &toy(2), &cfg).is_err());
    }
}
