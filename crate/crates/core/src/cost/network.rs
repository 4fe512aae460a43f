use super::arch::{ArchSpec, Block, BlockKind, Operator};
use super::{cached_weight_elems, op_macs, op_params, OpKind, OpSpec};
use crate::error::{Error, Result};
use crate::report::{KeyValues, Table};

/// Width of the face embedding in the recognition head.
pub const EMBEDDING_DIM: usize = 512;
/// Identities in the training classifier of the recognition head.
pub const FACE_CLASSES: usize = 10575;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockCost {
    pub index: usize,
    pub kind: BlockKind,
    pub op: Option<Operator>,
    pub c_in: usize,
    pub c_out: usize,
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
    pub macs: u64,
    pub params: u64,
    pub generation_macs: u64,
    pub cached_weight_elems: u64,
    /// Input + output + largest intermediate map.
    pub activation_elems: u64,
    pub ops: Vec<OpSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkCost {
    /// Steady-state inference MACs; weight generation excluded.
    pub total_macs: u64,
    pub total_params: u64,
    pub one_time_generation_macs: u64,
    pub peak_activation_elems: u64,
    pub cached_weight_elems: u64,
    /// `(c, h, w)` after the last block.
    pub output: (usize, usize, usize),
    pub blocks: Vec<BlockCost>,
}

impl NetworkCost {
    pub fn table(&self) -> Table {
        let mut t = Table::new(["#", "block", "op", "cin", "cout", "in", "out", "macs", "params", "gen_macs", "act"]);
        for b in &self.blocks {
            t.row([
                b.index.to_string(),
                b.kind.name().to_string(),
                b.op.map_or("-", Operator::name).to_string(),
                b.c_in.to_string(),
                b.c_out.to_string(),
                format!("{}x{}", b.in_hw.0, b.in_hw.1),
                format!("{}x{}", b.out_hw.0, b.out_hw.1),
                b.macs.to_string(),
                b.params.to_string(),
                b.generation_macs.to_string(),
                b.activation_elems.to_string(),
            ]);
        }
        t.row([
            String::new(),
            "total".into(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            self.total_macs.to_string(),
            self.total_params.to_string(),
            self.one_time_generation_macs.to_string(),
            self.peak_activation_elems.to_string(),
        ]);
        t
    }

    pub fn key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("total_macs", self.total_macs)
            .push("total_macs_m", format!("{:.2}", self.total_macs as f64 / 1e6))
            .push("total_params", self.total_params)
            .push("one_time_generation_macs", self.one_time_generation_macs)
            .push("peak_activation_elems", self.peak_activation_elems)
            .push("cached_weight_elems", self.cached_weight_elems);
        kv
    }
}

fn spatial(op: Operator, c: usize, h: usize, w: usize, k: usize, stride: usize, arch: &ArchSpec) -> Vec<OpSpec> {
    match op {
        Operator::Depthwise => vec![OpSpec::depthwise(c, h, w, k).with_stride(stride)],
        Operator::TvConv => vec![
            OpSpec::tvconv_apply(c, h, w, k, arch.affinity_channels, arch.generator).with_stride(stride),
            OpSpec::tvconv_generate(c, h, w, k, arch.affinity_channels, arch.generator).with_stride(stride),
        ],
    }
}

/// Expands one block into ops at scaled channels. Returns the ops, the
/// largest intermediate map and the output shape.
fn expand(b: &Block, ci: usize, co: usize, h: usize, w: usize, arch: &ArchSpec) -> Result<(Vec<OpSpec>, u64, (usize, usize, usize))> {
    let s = b.stride;
    let (oh, ow) = (h.div_ceil(s), w.div_ceil(s));
    let out_pos = (oh * ow) as u64;
    let mut ops = Vec::new();
    let mut mid = 0u64;
    let out = match b.kind {
        BlockKind::Conv => {
            ops.push(OpSpec::conv(ci, co, h, w, b.k).with_stride(s));
            (co, oh, ow)
        }
        BlockKind::Plain => {
            ops.extend(spatial(b.op, ci, h, w, b.k, s, arch));
            ops.push(OpSpec::pointwise(ci, co, oh, ow));
            mid = ci as u64 * out_pos;
            (co, oh, ow)
        }
        BlockKind::InvertedResidual => {
            let hid = ci * b.expand;
            if b.expand != 1 {
                ops.push(OpSpec::pointwise(ci, hid, h, w));
                mid = (hid * h * w) as u64;
            }
            ops.extend(spatial(b.op, hid, h, w, b.k, s, arch));
            ops.push(OpSpec::pointwise(hid, co, oh, ow));
            mid = mid.max(hid as u64 * out_pos);
            (co, oh, ow)
        }
        BlockKind::Shuffle => {
            if co % 2 != 0 {
                return Err(Error::InvalidArgument(format!("shuffle block needs an even cout, got {co}")));
            }
            let half = co / 2;
            if s == 1 {
                ops.push(OpSpec::pointwise(half, half, h, w));
                ops.extend(spatial(b.op, half, h, w, b.k, 1, arch));
                ops.push(OpSpec::pointwise(half, half, h, w));
                mid = (half * h * w) as u64;
            } else {
                ops.extend(spatial(b.op, ci, h, w, b.k, s, arch));
                ops.push(OpSpec::pointwise(ci, half, oh, ow));
                ops.push(OpSpec::pointwise(ci, half, h, w));
                ops.extend(spatial(b.op, half, h, w, b.k, s, arch));
                ops.push(OpSpec::pointwise(half, half, oh, ow));
                mid = (ci as u64 * out_pos).max((half * h * w) as u64);
            }
            (co, oh, ow)
        }
        BlockKind::Pointwise => {
            ops.push(OpSpec::pointwise(ci, co, h, w));
            (co, h, w)
        }
        BlockKind::MaxPool => (co, oh, ow),
        BlockKind::GdConv => {
            ops.push(OpSpec::global_depthwise(ci, h, w));
            (co, 1, 1)
        }
        BlockKind::Pool => (co, 1, 1),
        BlockKind::Linear => {
            if (h, w) != (1, 1) {
                return Err(Error::InvalidArgument(format!("linear block needs a 1x1 input, got {h}x{w}")));
            }
            ops.push(OpSpec::pointwise(ci, co, 1, 1));
            (co, 1, 1)
        }
    };
    Ok((ops, mid, out))
}

/// Sums op costs over the blocks at width-scaled channels and
/// stride-propagated resolutions.
pub fn network_cost(arch: &ArchSpec) -> Result<NetworkCost> {
    arch.validate()?;
    let (c0, mut h, mut w) = arch.input;
    let mut c = c0;
    let mut blocks = Vec::with_capacity(arch.blocks.len());
    for (index, b) in arch.blocks.iter().enumerate() {
        let co = match b.kind {
            BlockKind::Linear => b.c_out,
            BlockKind::MaxPool | BlockKind::GdConv | BlockKind::Pool => c,
            _ => arch.scale(b.c_out),
        };
        let (ops, mid, (oc, oh, ow)) = expand(b, c, co, h, w, arch).map_err(|e| match (e, b.line) {
            (Error::InvalidArgument(m), line) if line > 0 => Error::Parse {
                path: "arch".into(),
                line,
                message: m,
            },
            (e, _) => e,
        })?;
        let mut cost = BlockCost {
            index,
            kind: b.kind,
            op: b.kind.has_operator().then_some(b.op),
            c_in: c,
            c_out: oc,
            in_hw: (h, w),
            out_hw: (oh, ow),
            macs: 0,
            params: 0,
            generation_macs: 0,
            cached_weight_elems: 0,
            activation_elems: (c * h * w + oc * oh * ow) as u64 + mid,
            ops: Vec::new(),
        };
        for op in &ops {
            let m = op_macs(op)?;
            if op.kind == OpKind::TvConvGenerate {
                cost.generation_macs += m;
            } else {
                cost.macs += m;
                cost.cached_weight_elems += cached_weight_elems(op)?;
            }
            cost.params += op_params(op)?;
        }
        cost.ops = ops;
        blocks.push(cost);
        (c, h, w) = (oc, oh, ow);
    }
    Ok(NetworkCost {
        total_macs: blocks.iter().map(|b| b.macs).sum(),
        total_params: blocks.iter().map(|b| b.params).sum(),
        one_time_generation_macs: blocks.iter().map(|b| b.generation_macs).sum(),
        peak_activation_elems: blocks.iter().map(|b| b.activation_elems).max().unwrap_or((c0 * arch.input.1 * arch.input.2) as u64),
        cached_weight_elems: blocks.iter().map(|b| b.cached_weight_elems).sum(),
        output: (c, h, w),
        blocks,
    })
}

/// Recognition head: global depthwise conv, linear embedding, and the
/// identity classifier.
fn face_head(arch: &mut ArchSpec, c: usize) {
    arch.push(Block::new(BlockKind::GdConv, c, c))
        .push(Block::new(BlockKind::Linear, c, EMBEDDING_DIM))
        .push(Block::new(BlockKind::Linear, EMBEDDING_DIM, FACE_CLASSES));
}

/// MobileNetV2 with a stride-1 stem and the face-recognition head. Every
/// channel count, the 1280-wide last conv included, is scaled by `width`.
pub fn mobilenet_v2(width: f64, resolution: usize, op: Operator) -> ArchSpec {
    // (expand, cout, repeats, first stride)
    const STAGES: [(usize, usize, usize, usize); 7] = [
        (1, 16, 1, 1),
        (6, 24, 2, 2),
        (6, 32, 3, 2),
        (6, 64, 4, 2),
        (6, 96, 3, 1),
        (6, 160, 3, 2),
        (6, 320, 1, 1),
    ];
    let mut arch = ArchSpec::new((3, resolution, resolution)).with_width(width);
    arch.push(Block::new(BlockKind::Conv, 3, 32));
    let mut c = 32;
    for (t, co, n, s) in STAGES {
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            arch.push(Block::new(BlockKind::InvertedResidual, c, co).expand(t).stride(stride).op(op));
            c = co;
        }
    }
    arch.push(Block::new(BlockKind::Pointwise, c, 1280));
    face_head(&mut arch, 1280);
    arch
}

/// ShuffleNetV2 at one of its published scales (0.5, 1.0, 1.5, 2.0) with a
/// stride-1 stem and the face-recognition head.
pub fn shufflenet_v2(scale: f64, resolution: usize, op: Operator) -> Result<ArchSpec> {
    let stages: [usize; 4] = match scale {
        s if s == 0.5 => [48, 96, 192, 1024],
        s if s == 1.0 => [116, 232, 464, 1024],
        s if s == 1.5 => [176, 352, 704, 1024],
        s if s == 2.0 => [244, 488, 976, 2048],
        _ => return Err(Error::InvalidArgument(format!("no ShuffleNetV2 table for scale {scale}"))),
    };
    let mut arch = ArchSpec::new((3, resolution, resolution));
    arch.divisor = 4;
    arch.push(Block::new(BlockKind::Conv, 3, 24))
        .push(Block::new(BlockKind::MaxPool, 24, 24).stride(2));
    let mut c = 24;
    for (co, n) in stages[..3].iter().zip([4, 8, 4]) {
        for i in 0..n {
            let stride = if i == 0 { 2 } else { 1 };
            arch.push(Block::new(BlockKind::Shuffle, c, *co).stride(stride).op(op));
            c = *co;
        }
    }
    arch.push(Block::new(BlockKind::Pointwise, c, stages[3]));
    face_head(&mut arch, stages[3]);
    Ok(arch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_block(op: Operator) -> ArchSpec {
        let mut a = ArchSpec::new((16, 8, 8));
        a.push(Block::new(BlockKind::Plain, 16, 16).op(op));
        a
    }

    #[test]
    fn single_separable_block_by_hand() {
        let cost = network_cost(&one_block(Operator::Depthwise)).unwrap();
        assert_eq!(cost.total_macs, 9216 + 16 * 16 * 64);
        assert_eq!(cost.total_params, 144 + 256);
        assert_eq!(cost.one_time_generation_macs, 0);
        assert_eq!(cost.peak_activation_elems, 3 * 16 * 64);
        let tv = network_cost(&one_block(Operator::TvConv)).unwrap();
        assert_eq!(tv.total_macs, cost.total_macs);
        assert!(tv.one_time_generation_macs > 0);
        assert_eq!(tv.cached_weight_elems, 16 * 9 * 64);
    }

    #[test]
    fn strides_propagate() {
        let mut a = ArchSpec::new((3, 9, 7));
        a.push(Block::new(BlockKind::Conv, 3, 8).stride(2))
            .push(Block::new(BlockKind::InvertedResidual, 8, 16).expand(6).stride(2))
            .push(Block::new(BlockKind::Pool, 16, 16))
            .push(Block::new(BlockKind::Linear, 16, 10));
        let cost = network_cost(&a).unwrap();
        let hw: Vec<_> = cost.blocks.iter().map(|b| b.out_hw).collect();
        assert_eq!(hw, [(5, 4), (3, 2), (1, 1), (1, 1)]);
        assert_eq!(cost.output, (10, 1, 1));
        let ir = &cost.blocks[1];
        assert_eq!(ir.macs, (8 * 48 * 20 + 48 * 9 * 6 + 48 * 16 * 6) as u64);
        assert_eq!(ir.activation_elems, (8 * 20 + 16 * 6 + 48 * 20) as u64);
    }

    #[test]
    fn linear_needs_a_pooled_input() {
        let mut a = ArchSpec::new((3, 4, 4));
        a.push(Block::new(BlockKind::Linear, 3, 10));
        assert!(network_cost(&a).is_err());
    }

    #[test]
    fn report_lists_every_block_and_totals() {
        let cost = network_cost(&mobilenet_v2(0.5, 96, Operator::TvConv)).unwrap();
        let kv = cost.key_values();
        assert_eq!(kv.get("total_macs").unwrap(), cost.total_macs.to_string());
        let table = cost.table().to_string();
        assert_eq!(table.lines().count(), 2 + cost.blocks.len() + 1);
        assert!(table.contains("inverted-residual"));
    }

    #[test]
    fn unsupported_shufflenet_scale() {
        assert!(shufflenet_v2(0.7, 96, Operator::Depthwise).is_err());
    }
}
