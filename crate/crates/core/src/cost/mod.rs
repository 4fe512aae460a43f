//! Analytic cost model: MACs, parameters and activation memory.
//!
//! Counts are closed forms over shapes; nothing is executed. Weight
//! generation for TVConv layers is a one-time cost at freeze and is
//! reported apart from steady-state inference MACs, so a TVConv network
//! has exactly the MACs of the depthwise network it was derived from.

mod arch;
mod network;

pub use arch::{make_divisible, ArchSpec, Block, BlockKind, Operator};
pub use network::{
    mobilenet_v2, network_cost, shufflenet_v2, BlockCost, NetworkCost, EMBEDDING_DIM, FACE_CLASSES,
};

use crate::error::{Error, Result};
use crate::tvconv::GeneratorConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Depthwise,
    Pointwise,
    Conv,
    TvConvApply,
    TvConvGenerate,
    LayerNorm,
    Relu,
    /// Depthwise conv whose kernel covers the whole map, no padding.
    GlobalDepthwise,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Depthwise => "depthwise",
            OpKind::Pointwise => "pointwise",
            OpKind::Conv => "conv",
            OpKind::TvConvApply => "tvconv_apply",
            OpKind::TvConvGenerate => "tvconv_generate",
            OpKind::LayerNorm => "layernorm",
            OpKind::Relu => "relu",
            OpKind::GlobalDepthwise => "gdconv",
        }
    }
}

/// Shape of one operator. `h` and `w` are the input map; strided ops are
/// evaluated at `ceil(h / stride) x ceil(w / stride)` positions. For
/// single-input operators `c_in` is the channel count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OpSpec {
    pub kind: OpKind,
    pub c_in: Option<usize>,
    pub c_out: Option<usize>,
    pub h: Option<usize>,
    pub w: Option<usize>,
    pub k: Option<usize>,
    pub stride: usize,
    pub c_a: Option<usize>,
    pub c_b: Option<usize>,
    pub layers: Option<usize>,
    pub k_b: Option<usize>,
}

impl OpSpec {
    /// A spec with no shape parameters set.
    pub fn empty(kind: OpKind) -> Self {
        OpSpec {
            kind,
            c_in: None,
            c_out: None,
            h: None,
            w: None,
            k: None,
            stride: 1,
            c_a: None,
            c_b: None,
            layers: None,
            k_b: None,
        }
    }

    fn map(kind: OpKind, c: usize, h: usize, w: usize) -> Self {
        OpSpec {
            c_in: Some(c),
            h: Some(h),
            w: Some(w),
            ..OpSpec::empty(kind)
        }
    }

    pub fn depthwise(c: usize, h: usize, w: usize, k: usize) -> Self {
        OpSpec {
            k: Some(k),
            ..OpSpec::map(OpKind::Depthwise, c, h, w)
        }
    }

    pub fn pointwise(c_in: usize, c_out: usize, h: usize, w: usize) -> Self {
        OpSpec {
            c_out: Some(c_out),
            ..OpSpec::map(OpKind::Pointwise, c_in, h, w)
        }
    }

    pub fn conv(c_in: usize, c_out: usize, h: usize, w: usize, k: usize) -> Self {
        OpSpec {
            c_out: Some(c_out),
            k: Some(k),
            ..OpSpec::map(OpKind::Conv, c_in, h, w)
        }
    }

    pub fn tvconv_apply(c: usize, h: usize, w: usize, k: usize, c_a: usize, gen: GeneratorConfig) -> Self {
        OpSpec {
            k: Some(k),
            c_a: Some(c_a),
            c_b: Some(gen.channels),
            layers: Some(gen.layers),
            k_b: Some(gen.kernel),
            ..OpSpec::map(OpKind::TvConvApply, c, h, w)
        }
    }

    pub fn tvconv_generate(c: usize, h: usize, w: usize, k: usize, c_a: usize, gen: GeneratorConfig) -> Self {
        OpSpec {
            kind: OpKind::TvConvGenerate,
            ..OpSpec::tvconv_apply(c, h, w, k, c_a, gen)
        }
    }

    pub fn layernorm(c: usize, h: usize, w: usize) -> Self {
        OpSpec::map(OpKind::LayerNorm, c, h, w)
    }

    pub fn relu(c: usize, h: usize, w: usize) -> Self {
        OpSpec::map(OpKind::Relu, c, h, w)
    }

    pub fn global_depthwise(c: usize, h: usize, w: usize) -> Self {
        OpSpec::map(OpKind::GlobalDepthwise, c, h, w)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    /// Output positions `(ceil(h / s), ceil(w / s))`.
    pub fn out_hw(&self) -> Result<(usize, usize)> {
        let s = positive(Some(self.stride), "stride", self.kind)?;
        let (h, w) = (self.need_h()?, self.need_w()?);
        if self.kind == OpKind::GlobalDepthwise {
            return Ok((1, 1));
        }
        Ok((h.div_ceil(s), w.div_ceil(s)))
    }

    fn need_h(&self) -> Result<usize> {
        positive(self.h, "h", self.kind)
    }

    fn need_w(&self) -> Result<usize> {
        positive(self.w, "w", self.kind)
    }

    fn need_k(&self) -> Result<usize> {
        let k = positive(self.k, "k", self.kind)?;
        if k % 2 == 0 {
            return Err(Error::EvenKernel(k));
        }
        Ok(k)
    }

    fn generator(&self) -> Result<(usize, GeneratorConfig)> {
        let c_a = positive(self.c_a, "c_a", self.kind)?;
        let layers = self
            .layers
            .ok_or_else(|| Error::InvalidArgument(format!("{} op requires layers", self.kind.name())))?;
        let channels = if layers == 0 {
            self.c_b.unwrap_or(0)
        } else {
            positive(self.c_b, "c_b", self.kind)?
        };
        let kernel = positive(self.k_b, "k_b", self.kind)?;
        if kernel % 2 == 0 {
            return Err(Error::EvenKernel(kernel));
        }
        Ok((c_a, GeneratorConfig { layers, channels, kernel }))
    }
}

fn positive(v: Option<usize>, name: &str, kind: OpKind) -> Result<usize> {
    match v {
        Some(n) if n > 0 => Ok(n),
        Some(_) => Err(Error::InvalidArgument(format!("{} op: {name} must be >= 1", kind.name()))),
        None => Err(Error::InvalidArgument(format!("{} op requires {name}", kind.name()))),
    }
}

/// Parameters of a weight-generating block for a layer with `c` channels
/// and apply kernel `k`: hidden convs plus layer-norm affine, then the
/// bias-free output conv.
pub fn generator_params(c: usize, k: usize, c_a: usize, gen: GeneratorConfig) -> u64 {
    let kb2 = (gen.kernel * gen.kernel) as u64;
    let mut prev = c_a as u64;
    let mut n = 0;
    for _ in 0..gen.layers {
        n += gen.channels as u64 * prev * kb2 + 2 * gen.channels as u64;
        prev = gen.channels as u64;
    }
    n + (c * k * k) as u64 * prev * kb2
}

/// Convolution MACs of one weight generation over an `h x w` map.
pub fn generator_macs(c: usize, k: usize, h: usize, w: usize, c_a: usize, gen: GeneratorConfig) -> u64 {
    let hw = (h * w) as u64;
    let kb2 = (gen.kernel * gen.kernel) as u64;
    let mut prev = c_a as u64;
    let mut n = 0;
    for _ in 0..gen.layers {
        n += prev * gen.channels as u64 * hw * kb2;
        prev = gen.channels as u64;
    }
    n + prev * (c * k * k) as u64 * hw * kb2
}

/// Multiply-accumulates of one evaluation. For `TvConvGenerate` this is the
/// one-time generation cost.
pub fn op_macs(spec: &OpSpec) -> Result<u64> {
    let kind = spec.kind;
    let c = positive(spec.c_in, "c_in", kind)? as u64;
    let (h, w) = (spec.need_h()?, spec.need_w()?);
    let (oh, ow) = spec.out_hw()?;
    let out = (oh * ow) as u64;
    Ok(match kind {
        OpKind::Depthwise | OpKind::TvConvApply => {
            if kind == OpKind::TvConvApply {
                spec.generator()?;
            }
            let k = spec.need_k()? as u64;
            c * out * k * k
        }
        OpKind::Pointwise => c * positive(spec.c_out, "c_out", kind)? as u64 * out,
        OpKind::Conv => {
            let k = spec.need_k()? as u64;
            c * positive(spec.c_out, "c_out", kind)? as u64 * out * k * k
        }
        OpKind::TvConvGenerate => {
            let (c_a, gen) = spec.generator()?;
            generator_macs(c as usize, spec.need_k()?, h, w, c_a, gen)
        }
        OpKind::LayerNorm | OpKind::GlobalDepthwise => c * (h * w) as u64,
        OpKind::Relu => 0,
    })
}

/// Learnable parameters. A TVConv layer's affinity maps and generator are
/// attributed to `TvConvApply`; `TvConvGenerate` owns none of its own.
pub fn op_params(spec: &OpSpec) -> Result<u64> {
    let kind = spec.kind;
    let c = positive(spec.c_in, "c_in", kind)? as u64;
    Ok(match kind {
        OpKind::Depthwise => {
            let k = spec.need_k()? as u64;
            c * k * k
        }
        OpKind::Pointwise => c * positive(spec.c_out, "c_out", kind)? as u64,
        OpKind::Conv => {
            let k = spec.need_k()? as u64;
            c * positive(spec.c_out, "c_out", kind)? as u64 * k * k
        }
        OpKind::TvConvApply => {
            let (c_a, gen) = spec.generator()?;
            let (h, w) = (spec.need_h()?, spec.need_w()?);
            (c_a * h * w) as u64 + generator_params(c as usize, spec.need_k()?, c_a, gen)
        }
        OpKind::TvConvGenerate => {
            spec.generator()?;
            0
        }
        OpKind::LayerNorm => 2 * c,
        OpKind::Relu => 0,
        OpKind::GlobalDepthwise => c * (spec.need_h()? * spec.need_w()?) as u64,
    })
}

/// Elements of the weight field a frozen TVConv layer keeps resident.
pub fn cached_weight_elems(spec: &OpSpec) -> Result<u64> {
    match spec.kind {
        OpKind::TvConvApply | OpKind::TvConvGenerate => {
            let c = positive(spec.c_in, "c_in", spec.kind)?;
            let k = spec.need_k()?;
            Ok((c * k * k * spec.need_h()? * spec.need_w()?) as u64)
        }
        _ => Ok(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use crate::tvconv::{param_count_naive, GeneratorParams};

    fn gen(layers: usize, channels: usize, kernel: usize) -> GeneratorConfig {
        GeneratorConfig { layers, channels, kernel }
    }

    #[test]
    fn depthwise_examples() {
        assert_eq!(op_macs(&OpSpec::depthwise(1, 1, 1, 1)).unwrap(), 1);
        assert_eq!(op_macs(&OpSpec::depthwise(16, 8, 8, 3)).unwrap(), 16 * 64 * 9);
        assert_eq!(op_params(&OpSpec::depthwise(8, 4, 4, 3)).unwrap(), 72);
    }

    #[test]
    fn tvconv_apply_costs_as_much_as_depthwise() {
        let tv = OpSpec::tvconv_apply(16, 8, 8, 3, 4, GeneratorConfig::default());
        assert_eq!(op_macs(&tv).unwrap(), 9216);
        assert_eq!(op_macs(&tv.with_stride(2)).unwrap(), op_macs(&OpSpec::depthwise(16, 8, 8, 3).with_stride(2)).unwrap());
    }

    #[test]
    fn tvconv_params_sum_affinity_and_generator() {
        let tv = OpSpec::tvconv_apply(8, 4, 4, 3, 4, gen(0, 0, 1));
        assert_eq!(op_params(&tv).unwrap(), 64 + 72 * 4);
        assert_eq!(param_count_naive(8, 3, 4, 4), 1152);
        assert_eq!(cached_weight_elems(&tv).unwrap(), 1152);
    }

    #[test]
    fn generator_count_matches_materialised_tensors() {
        let mut rng = rng_for(0, "cost");
        for (c_a, c, k, g) in [(4, 8, 3, gen(3, 64, 3)), (1, 3, 1, gen(0, 0, 1)), (2, 5, 3, gen(2, 7, 5))] {
            let p = GeneratorParams::init(c_a, c, k, g, &mut rng).unwrap();
            assert_eq!(generator_params(c, k, c_a, g), p.param_count() as u64);
        }
    }

    #[test]
    fn generation_macs_by_hand() {
        // 4 -> 64 -> 64 -> 64 -> 72 channels, 3x3, on 8x8
        let want = (4 * 64 + 64 * 64 * 2 + 64 * 72) * 64 * 9;
        let spec = OpSpec::tvconv_generate(8, 8, 8, 3, 4, GeneratorConfig::default());
        assert_eq!(op_macs(&spec).unwrap(), want);
        assert_eq!(op_params(&spec).unwrap(), 0);
    }

    #[test]
    fn closed_forms() {
        assert_eq!(op_macs(&OpSpec::pointwise(3, 5, 4, 2)).unwrap(), 120);
        assert_eq!(op_macs(&OpSpec::conv(3, 5, 4, 2, 3)).unwrap(), 1080);
        assert_eq!(op_macs(&OpSpec::conv(3, 5, 5, 5, 3).with_stride(2)).unwrap(), 3 * 5 * 9 * 9);
        assert_eq!(op_params(&OpSpec::conv(3, 5, 4, 2, 3)).unwrap(), 135);
        assert_eq!(op_macs(&OpSpec::layernorm(3, 4, 2)).unwrap(), 24);
        assert_eq!(op_params(&OpSpec::layernorm(3, 4, 2)).unwrap(), 6);
        assert_eq!(op_macs(&OpSpec::relu(3, 4, 2)).unwrap(), 0);
        assert_eq!(op_macs(&OpSpec::global_depthwise(16, 3, 3)).unwrap(), 144);
        assert_eq!(OpSpec::global_depthwise(16, 3, 3).out_hw().unwrap(), (1, 1));
    }

    #[test]
    fn missing_parameters_are_named() {
        let mut spec = OpSpec::depthwise(4, 4, 4, 3);
        spec.k = None;
        assert_eq!(op_macs(&spec).unwrap_err().to_string(), "invalid argument: depthwise op requires k");
        let mut tv = OpSpec::tvconv_apply(4, 4, 4, 3, 4, GeneratorConfig::default());
        tv.c_a = None;
        assert!(op_params(&tv).unwrap_err().to_string().contains("requires c_a"));
        assert!(op_macs(&OpSpec::depthwise(4, 4, 4, 2)).is_err());
        assert!(op_macs(&OpSpec::pointwise(0, 4, 4, 4)).is_err());
    }

    #[test]
    fn degenerate_tvconv_is_no_smaller_than_depthwise() {
        for c in 1..6 {
            for k in [1, 3, 5] {
                let tv = OpSpec::tvconv_apply(c, 1, 1, k, 1, gen(0, 0, 1));
                assert!(op_params(&tv).unwrap() >= op_params(&OpSpec::depthwise(c, 1, 1, k)).unwrap());
            }
        }
    }
}
