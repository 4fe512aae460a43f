//! Small classification networks built from depthwise or TVConv blocks.
//!
//! Layout: a 3x3 stem conv, then per block `spatial op -> subsample ->
//! pointwise conv -> layer norm -> ReLU`, then global mean pooling and a
//! linear classifier. The stride of a stage is applied by its first block.

use rand::Rng;

use crate::config::Config;
use crate::cost::{ArchSpec, Block as ArchBlock, BlockKind, Operator};
use crate::error::{Error, Result};
use crate::grad::{NodeId, ParamId, Tape};
use crate::report::KeyValues;
use crate::tensor::ops::{self, DEFAULT_LN_EPS};
use crate::tensor::Tensor;
use crate::tvconv::{
    he_normal, init_affinity_constant, init_affinity_from_stats, tvconv_apply, GeneratorConfig, GeneratorParams,
    TvConvLayer, WeightField,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AffinityInit {
    Constant(f64),
    /// Per-pixel mean / std of the training images.
    Stats,
}

impl std::fmt::Display for AffinityInit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AffinityInit::Constant(v) => write!(f, "constant:{v}"),
            AffinityInit::Stats => write!(f, "stats"),
        }
    }
}

impl std::str::FromStr for AffinityInit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "stats" {
            return Ok(AffinityInit::Stats);
        }
        s.strip_prefix("constant:")
            .and_then(|v| v.parse().ok())
            .map(AffinityInit::Constant)
            .ok_or_else(|| "expected `constant:<value>` or `stats`".to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageSpec {
    pub channels: usize,
    pub blocks: usize,
    pub operator: Operator,
    pub stride: usize,
}

impl std::fmt::Display for StageSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}:{}", self.channels, self.blocks, self.operator.name(), self.stride)
    }
}

impl std::str::FromStr for StageSpec {
    type Err = String;

    /// `channels:blocks:operator:stride`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("expected channels:blocks:operator:stride, got `{s}`");
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let [c, b, op, st] = parts[..] else {
            return Err(bad());
        };
        Ok(StageSpec {
            channels: c.parse().map_err(|_| bad())?,
            blocks: b.parse().map_err(|_| bad())?,
            operator: Operator::parse(op).ok_or_else(bad)?,
            stride: st.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    /// `(c, h, w)` of the input images.
    pub input: (usize, usize, usize),
    pub stem: usize,
    /// Spatial kernel of the stem and of every block operator.
    pub kernel: usize,
    pub stages: Vec<StageSpec>,
    pub classes: usize,
    pub affinity_channels: usize,
    pub affinity_init: AffinityInit,
    pub generator: GeneratorConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let stage = |channels, stride| StageSpec {
            channels,
            blocks: 1,
            operator: Operator::TvConv,
            stride,
        };
        ModelSpec {
            input: (1, 32, 32),
            stem: 8,
            kernel: 3,
            stages: vec![stage(16, 2), stage(32, 2), stage(32, 1)],
            classes: 8,
            affinity_channels: 4,
            affinity_init: AffinityInit::Constant(1.0),
            generator: GeneratorConfig {
                layers: 2,
                channels: 16,
                kernel: 3,
            },
        }
    }
}

/// Shape of one block at construction time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockShape {
    pub stage: usize,
    pub c_in: usize,
    pub c_out: usize,
    /// Input resolution; TVConv weight fields are fixed to it.
    pub h: usize,
    pub w: usize,
    pub stride: usize,
    pub operator: Operator,
}

const MODEL_KEYS: [&str; 11] = [
    "input",
    "stem",
    "kernel",
    "stages",
    "operator",
    "classes",
    "affinity.channels",
    "affinity.init",
    "generator.layers",
    "generator.channels",
    "generator.kernel",
];

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 || self.stem == 0 || self.classes == 0 {
            return bad("input dims, stem and classes must be >= 1".into());
        }
        ops::odd_kernel(self.kernel)?;
        if self.stages.is_empty() {
            return bad("a model needs at least one stage".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0 || s.blocks == 0 || s.stride == 0 {
                return bad(format!("stage {i}: channels, blocks and stride must be >= 1"));
            }
        }
        if self.uses_tvconv() {
            if self.affinity_channels == 0 {
                return bad("affinity channels must be >= 1".into());
            }
            ops::odd_kernel(self.generator.kernel)?;
            if self.generator.layers > 0 && self.generator.channels == 0 {
                return bad("generator channels must be >= 1".into());
            }
        }
        Ok(())
    }

    pub fn uses_tvconv(&self) -> bool {
        self.stages.iter().any(|s| s.operator == Operator::TvConv)
    }

    pub fn block_shapes(&self) -> Vec<BlockShape> {
        let (_, mut h, mut w) = self.input;
        let mut c = self.stem;
        let mut out = Vec::new();
        for (stage, s) in self.stages.iter().enumerate() {
            for b in 0..s.blocks {
                let stride = if b == 0 { s.stride } else { 1 };
                out.push(BlockShape {
                    stage,
                    c_in: c,
                    c_out: s.channels,
                    h,
                    w,
                    stride,
                    operator: s.operator,
                });
                c = s.channels;
                h = h.div_ceil(stride);
                w = w.div_ceil(stride);
            }
        }
        out
    }

    pub fn with_operator(mut self, op: Operator) -> Self {
        for s in &mut self.stages {
            s.operator = op;
        }
        self
    }

    /// One operator per stage.
    pub fn with_stage_operators(mut self, ops: &[Operator]) -> Result<Self> {
        if ops.len() != self.stages.len() {
            return Err(Error::InvalidArgument(format!(
                "{} operators for {} stages",
                ops.len(),
                self.stages.len()
            )));
        }
        for (s, &op) in self.stages.iter_mut().zip(ops) {
            s.operator = op;
        }
        Ok(self)
    }

    /// Stem and stage widths multiplied by `factor`, rounded, at least 1.
    pub fn widened(mut self, factor: f64) -> Self {
        let scale = |c: usize| ((c as f64 * factor).round() as usize).max(1);
        self.stem = scale(self.stem);
        for s in &mut self.stages {
            s.channels = scale(s.channels);
        }
        self
    }

    /// The same network for the cost model, with exact channel counts.
    pub fn to_arch(&self) -> ArchSpec {
        let mut arch = ArchSpec::new(self.input);
        arch.divisor = 1;
        arch.affinity_channels = self.affinity_channels;
        arch.generator = self.generator;
        arch.push(ArchBlock::new(BlockKind::Conv, self.input.0, self.stem).k(self.kernel));
        for b in self.block_shapes() {
            arch.push(
                ArchBlock::new(BlockKind::Plain, b.c_in, b.c_out)
                    .k(self.kernel)
                    .stride(b.stride)
                    .op(b.operator),
            );
        }
        let c = self.stages.last().map_or(self.stem, |s| s.channels);
        arch.push(ArchBlock::new(BlockKind::Pool, c, c))
            .push(ArchBlock::new(BlockKind::Linear, c, self.classes));
        arch
    }

    pub fn to_key_values(&self) -> KeyValues {
        let (c, h, w) = self.input;
        let stages: Vec<String> = self.stages.iter().map(|s| s.to_string()).collect();
        let mut kv = KeyValues::new();
        kv.push("input", format!("{c}x{h}x{w}"))
            .push("stem", self.stem)
            .push("kernel", self.kernel)
            .push("stages", stages.join(","))
            .push("classes", self.classes)
            .push("affinity.channels", self.affinity_channels)
            .push("affinity.init", self.affinity_init)
            .push("generator.layers", self.generator.layers)
            .push("generator.channels", self.generator.channels)
            .push("generator.kernel", self.generator.kernel);
        kv
    }

    /// Reads `cfg` (already narrowed to the model section) over the
    /// defaults. `operator=` switches every stage after `stages=`.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        cfg.reject_unknown(|k| MODEL_KEYS.contains(&k))?;
        let mut s = ModelSpec::default();
        if let Some(v) = cfg.get_str("input") {
            let dims: Vec<usize> = v.split('x').filter_map(|d| d.trim().parse().ok()).collect();
            let [c, h, w] = dims[..] else {
                return Err(Error::InvalidArgument(format!("`input`: expected CxHxW, got `{v}`")));
            };
            s.input = (c, h, w);
        }
        cfg.update("stem", &mut s.stem)?;
        cfg.update("kernel", &mut s.kernel)?;
        if let Some(stages) = cfg.get_list::<StageSpec>("stages")? {
            s.stages = stages;
        }
        if let Some(op) = cfg.get_str("operator") {
            let op = Operator::parse(op)
                .ok_or_else(|| Error::InvalidArgument(format!("`operator`: expected depthwise or tvconv, got `{op}`")))?;
            s = s.with_operator(op);
        }
        cfg.update("classes", &mut s.classes)?;
        cfg.update("affinity.channels", &mut s.affinity_channels)?;
        cfg.update("affinity.init", &mut s.affinity_init)?;
        cfg.update("generator.layers", &mut s.generator.layers)?;
        cfg.update("generator.channels", &mut s.generator.channels)?;
        cfg.update("generator.kernel", &mut s.generator.kernel)?;
        s.validate()?;
        Ok(s)
    }
}

/// What a parameter is, for weight-decay decisions and reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    ConvWeight,
    NormScale,
    NormShift,
    LinearWeight,
    LinearBias,
    Affinity,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Spatial {
    Depthwise(Tensor),
    TvConv(TvConvLayer),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBlock {
    pub shape: BlockShape,
    pub spatial: Spatial,
    pub pointwise: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub stem: Tensor,
    pub stem_gamma: Tensor,
    pub stem_beta: Tensor,
    pub blocks: Vec<ModelBlock>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

/// One entry of [`Model::params`].
pub struct ParamRef<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub trainable: bool,
    pub value: &'a Tensor,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub trainable: bool,
    pub value: &'a mut Tensor,
}

fn norm(c: usize) -> Result<(Tensor, Tensor)> {
    Ok((Tensor::filled(&[c], 1.0)?, Tensor::zeros(&[c])?))
}

impl Model {
    /// Random init. `images` feed the statistics-based affinity init and
    /// may be empty otherwise.
    pub fn init(spec: &ModelSpec, images: &[Tensor], rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let k = spec.kernel;
        let cin = spec.input.0;
        let stem = he_normal(&[spec.stem, cin, k, k], cin * k * k, rng)?;
        let (stem_gamma, stem_beta) = norm(spec.stem)?;
        let mut blocks = Vec::new();
        for shape in spec.block_shapes() {
            let spatial = match shape.operator {
                Operator::Depthwise => Spatial::Depthwise(he_normal(&[shape.c_in, k, k], k * k, rng)?),
                Operator::TvConv => {
                    let affinity = match spec.affinity_init {
                        AffinityInit::Constant(v) => init_affinity_constant(spec.affinity_channels, shape.h, shape.w, v)?,
                        AffinityInit::Stats => init_affinity_from_stats(images, spec.affinity_channels, shape.h, shape.w)?,
                    };
                    let gen = GeneratorParams::init(spec.affinity_channels, shape.c_in, k, spec.generator, rng)?;
                    Spatial::TvConv(TvConvLayer::new(affinity, gen)?)
                }
            };
            let pointwise = he_normal(&[shape.c_out, shape.c_in, 1, 1], shape.c_in, rng)?;
            let (gamma, beta) = norm(shape.c_out)?;
            blocks.push(ModelBlock {
                shape,
                spatial,
                pointwise,
                gamma,
                beta,
            });
        }
        let c = blocks.last().map_or(spec.stem, |b| b.shape.c_out);
        let bound = 1.0 / (c as f64).sqrt();
        let head_weight = Tensor::from_fn(&[spec.classes, c], |_| rng.gen_range(-bound..bound))?;
        let head_bias = Tensor::from_fn(&[spec.classes], |_| rng.gen_range(-bound..bound))?;
        Ok(Model {
            spec: spec.clone(),
            stem,
            stem_gamma,
            stem_beta,
            blocks,
            head_weight,
            head_bias,
        })
    }

    /// Every parameter in a fixed order.
    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut v = Vec::new();
        let mut put = |name: String, kind, trainable, value| v.push(ParamRef { name, kind, trainable, value });
        put("stem.conv".into(), ParamKind::ConvWeight, true, &self.stem);
        put("stem.gamma".into(), ParamKind::NormScale, true, &self.stem_gamma);
        put("stem.beta".into(), ParamKind::NormShift, true, &self.stem_beta);
        for (i, b) in self.blocks.iter().enumerate() {
            match &b.spatial {
                Spatial::Depthwise(w) => put(format!("block{i}.depthwise"), ParamKind::ConvWeight, true, w),
                Spatial::TvConv(layer) => {
                    let a = layer.affinity();
                    put(format!("block{i}.affinity"), ParamKind::Affinity, a.trainable, a.tensor());
                    let gen = layer.generator();
                    for (name, t) in gen.tensor_names().into_iter().zip(gen.tensors()) {
                        put(format!("block{i}.generator.{name}"), kind_of(&name), true, t);
                    }
                }
            }
            put(format!("block{i}.pointwise"), ParamKind::ConvWeight, true, &b.pointwise);
            put(format!("block{i}.gamma"), ParamKind::NormScale, true, &b.gamma);
            put(format!("block{i}.beta"), ParamKind::NormShift, true, &b.beta);
        }
        put("head.weight".into(), ParamKind::LinearWeight, true, &self.head_weight);
        put("head.bias".into(), ParamKind::LinearBias, true, &self.head_bias);
        v
    }

    /// Same order as [`Model::params`].
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut v = Vec::new();
        let mut put = |name: String, kind, trainable, value| v.push(ParamMut { name, kind, trainable, value });
        put("stem.conv".into(), ParamKind::ConvWeight, true, &mut self.stem);
        put("stem.gamma".into(), ParamKind::NormScale, true, &mut self.stem_gamma);
        put("stem.beta".into(), ParamKind::NormShift, true, &mut self.stem_beta);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            match &mut b.spatial {
                Spatial::Depthwise(w) => put(format!("block{i}.depthwise"), ParamKind::ConvWeight, true, w),
                Spatial::TvConv(layer) => {
                    let names = layer.generator().tensor_names();
                    let trainable = layer.affinity().trainable;
                    let (affinity, generator) = layer.parts_mut();
                    put(format!("block{i}.affinity"), ParamKind::Affinity, trainable, affinity.tensor_mut());
                    for (name, t) in names.into_iter().zip(generator.tensors_mut()) {
                        put(format!("block{i}.generator.{name}"), kind_of(&name), true, t);
                    }
                }
            }
            put(format!("block{i}.pointwise"), ParamKind::ConvWeight, true, &mut b.pointwise);
            put(format!("block{i}.gamma"), ParamKind::NormScale, true, &mut b.gamma);
            put(format!("block{i}.beta"), ParamKind::NormShift, true, &mut b.beta);
        }
        put("head.weight".into(), ParamKind::LinearWeight, true, &mut self.head_weight);
        put("head.bias".into(), ParamKind::LinearBias, true, &mut self.head_bias);
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn tvconv_layers(&self) -> impl Iterator<Item = (usize, &TvConvLayer)> {
        self.blocks.iter().enumerate().filter_map(|(i, b)| match &b.spatial {
            Spatial::TvConv(l) => Some((i, l)),
            Spatial::Depthwise(_) => None,
        })
    }

    /// Caches every TVConv weight field.
    pub fn freeze(&mut self) -> Result<()> {
        for b in &mut self.blocks {
            if let Spatial::TvConv(l) = &mut b.spatial {
                l.freeze()?;
            }
        }
        Ok(())
    }

    pub fn unfreeze(&mut self) {
        for b in &mut self.blocks {
            if let Spatial::TvConv(l) = &mut b.spatial {
                l.unfreeze();
            }
        }
    }

    pub fn is_frozen(&self) -> bool {
        let mut layers = self.tvconv_layers().peekable();
        layers.peek().is_some() && layers.all(|(_, l)| l.mode() == crate::tvconv::Mode::Frozen)
    }

    /// Weight fields per block: cached ones for frozen layers, freshly
    /// generated otherwise.
    pub fn fields(&self) -> Result<Vec<Option<WeightField>>> {
        self.blocks
            .iter()
            .map(|b| match &b.spatial {
                Spatial::Depthwise(_) => Ok(None),
                Spatial::TvConv(l) => match l.mode() {
                    crate::tvconv::Mode::Frozen => l.cached_field().cloned().map(Some),
                    crate::tvconv::Mode::Training => l.generate().map(Some),
                },
            })
            .collect()
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        let (c, h, w) = self.spec.input;
        if image.dims() != [c, h, w] {
            return Err(Error::shape("model input", "image", image.dims(), "model", &[c, h, w]));
        }
        Ok(())
    }

    /// Logits for one image given [`Model::fields`].
    pub fn logits_with(&self, image: &Tensor, fields: &[Option<WeightField>]) -> Result<Tensor> {
        self.check_input(image)?;
        let x = ops::conv2d(image, &self.stem)?;
        let mut x = ops::relu(&ops::layer_norm(&x, &self.stem_gamma, &self.stem_beta, DEFAULT_LN_EPS)?);
        for (b, field) in self.blocks.iter().zip(fields) {
            let y = match (&b.spatial, field) {
                (Spatial::Depthwise(w), _) => ops::depthwise_conv2d(&x, w)?,
                (Spatial::TvConv(_), Some(f)) => tvconv_apply(&x, f)?,
                (Spatial::TvConv(_), None) => return Err(Error::InvalidArgument("missing weight field".into())),
            };
            let y = if b.shape.stride > 1 { ops::subsample(&y, b.shape.stride)? } else { y };
            let y = ops::conv2d(&y, &b.pointwise)?;
            x = ops::relu(&ops::layer_norm(&y, &b.gamma, &b.beta, DEFAULT_LN_EPS)?);
        }
        ops::linear(&ops::global_mean_pool(&x)?, &self.head_weight, &self.head_bias)
    }

    pub fn logits(&self, image: &Tensor) -> Result<Tensor> {
        self.logits_with(image, &self.fields()?)
    }

    pub fn predict(&self, images: &[Tensor]) -> Result<Vec<usize>> {
        let fields = self.fields()?;
        images
            .iter()
            .map(|img| {
                let z = self.logits_with(img, &fields)?;
                Ok(argmax(z.data()))
            })
            .collect()
    }

    /// Records every parameter on `tape` as `ParamId(i)` in
    /// [`Model::params`] order, generates each TVConv field once, and
    /// returns the logits node of every image.
    pub fn record(&self, tape: &mut Tape, images: &[Tensor]) -> Result<Vec<NodeId>> {
        let nodes: Vec<NodeId> = self
            .params()
            .into_iter()
            .enumerate()
            .map(|(i, p)| tape.param(ParamId(i), p.value.clone()))
            .collect();
        let mut next = nodes.into_iter();
        let mut take = |n: usize| -> Vec<NodeId> { next.by_ref().take(n).collect() };
        let stem = take(3);
        let mut blocks = Vec::new();
        for b in &self.blocks {
            let spatial = match &b.spatial {
                Spatial::Depthwise(_) => (take(1)[0], None),
                Spatial::TvConv(l) => {
                    let affinity = take(1)[0];
                    let gen = take(l.generator().tensors().len());
                    (l.generator().record(tape, affinity, &gen)?, Some(l.generator().kernel()))
                }
            };
            blocks.push((spatial, take(3)));
        }
        let head = take(2);
        let mut out = Vec::with_capacity(images.len());
        for img in images {
            self.check_input(img)?;
            let x = tape.constant(img.clone());
            let x = tape.conv2d(x, stem[0])?;
            let x = tape.layer_norm(x, stem[1], stem[2], DEFAULT_LN_EPS)?;
            let mut x = tape.relu(x)?;
            for (b, ((op, kernel), p)) in self.blocks.iter().zip(&blocks) {
                let y = match kernel {
                    None => tape.depthwise_conv2d(x, *op)?,
                    Some(k) => tape.tvconv_apply(x, *op, *k)?,
                };
                let y = if b.shape.stride > 1 { tape.subsample(y, b.shape.stride)? } else { y };
                let y = tape.conv2d(y, p[0])?;
                let y = tape.layer_norm(y, p[1], p[2], DEFAULT_LN_EPS)?;
                x = tape.relu(y)?;
            }
            let pooled = tape.global_mean_pool(x)?;
            out.push(tape.linear(pooled, head[0], head[1])?);
        }
        Ok(out)
    }
}

fn kind_of(generator_tensor: &str) -> ParamKind {
    if generator_tensor.ends_with(".gamma") {
        ParamKind::NormScale
    } else if generator_tensor.ends_with(".beta") {
        ParamKind::NormShift
    } else {
        ParamKind::ConvWeight
    }
}

/// Index of the largest value; the first on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::network_cost;
    use crate::seed::rng_for;

    fn tiny() -> ModelSpec {
        ModelSpec {
            input: (1, 8, 8),
            stem: 3,
            stages: vec![
                StageSpec { channels: 4, blocks: 2, operator: Operator::TvConv, stride: 2 },
                StageSpec { channels: 5, blocks: 1, operator: Operator::Depthwise, stride: 1 },
            ],
            classes: 3,
            affinity_channels: 2,
            generator: GeneratorConfig { layers: 1, channels: 3, kernel: 3 },
            ..ModelSpec::default()
        }
    }

    #[test]
    fn block_shapes_follow_strides() {
        let shapes = tiny().block_shapes();
        let summary: Vec<_> = shapes.iter().map(|b| (b.c_in, b.c_out, b.h, b.stride)).collect();
        assert_eq!(summary, [(3, 4, 8, 2), (4, 4, 4, 1), (4, 5, 4, 1)]);
    }

    #[test]
    fn tape_and_direct_forward_agree() {
        let spec = tiny();
        let model = Model::init(&spec, &[], &mut rng_for(1, "init")).unwrap();
        let images: Vec<Tensor> = (0..3)
            .map(|s| Tensor::from_fn(&[1, 8, 8], |i| ((i + 7 * s) as f64 * 0.3).sin()).unwrap())
            .collect();
        let mut tape = Tape::new();
        let nodes = model.record(&mut tape, &images).unwrap();
        for (img, n) in images.iter().zip(nodes) {
            assert_eq!(tape.value(n), &model.logits(img).unwrap());
        }
    }

    #[test]
    fn frozen_predictions_match_eager() {
        let model = Model::init(&tiny(), &[], &mut rng_for(2, "init")).unwrap();
        let img = Tensor::from_fn(&[1, 8, 8], |i| (i as f64).cos()).unwrap();
        let eager = model.logits(&img).unwrap();
        let mut frozen = model.clone();
        frozen.freeze().unwrap();
        assert!(frozen.is_frozen() && !model.is_frozen());
        assert_eq!(frozen.logits(&img).unwrap(), eager);
    }

    #[test]
    fn params_and_params_mut_agree() {
        let mut model = Model::init(&tiny(), &[], &mut rng_for(3, "init")).unwrap();
        let a: Vec<(String, ParamKind, Vec<usize>)> =
            model.params().iter().map(|p| (p.name.clone(), p.kind, p.value.dims().to_vec())).collect();
        let b: Vec<(String, ParamKind, Vec<usize>)> =
            model.params_mut().iter().map(|p| (p.name.clone(), p.kind, p.value.dims().to_vec())).collect();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|p| p.1 == ParamKind::Affinity).count(), 2);
        assert_eq!(a[3].0, "block0.affinity");
        assert_eq!(a[4].0, "block0.generator.hidden0.conv");
    }

    #[test]
    fn param_count_matches_cost_model() {
        for spec in [tiny(), ModelSpec::default(), ModelSpec::default().with_operator(Operator::Depthwise)] {
            let model = Model::init(&spec, &[], &mut rng_for(0, "init")).unwrap();
            let cost = network_cost(&spec.to_arch()).unwrap();
            // the cost model leaves out block norms and the classifier bias
            let norms = 2 * (spec.stem + spec.block_shapes().iter().map(|b| b.c_out).sum::<usize>());
            assert_eq!(cost.total_params as usize + norms + spec.classes, model.param_count());
        }
    }

    #[test]
    fn spec_config_round_trip() {
        let spec = tiny();
        let back = ModelSpec::from_config(&Config::parse(&spec.to_key_values().to_string(), "m").unwrap()).unwrap();
        assert_eq!(back, spec);
        let cfg = Config::parse("operator=depthwise\nwidth=2\n", "m").unwrap();
        assert_eq!(ModelSpec::from_config(&cfg).unwrap_err().to_string(), "unknown config key `width`");
        let cfg = Config::parse("operator=depthwise\n", "m").unwrap();
        assert!(!ModelSpec::from_config(&cfg).unwrap().uses_tvconv());
    }

    #[test]
    fn steady_state_macs_do_not_depend_on_the_operator() {
        let tv = network_cost(&ModelSpec::default().to_arch()).unwrap();
        let dw = network_cost(&ModelSpec::default().with_operator(Operator::Depthwise).to_arch()).unwrap();
        assert_eq!(tv.total_macs, dw.total_macs);
        assert!(tv.one_time_generation_macs > 0);
    }
}
