use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tvconv::{GeneratorConfig, DEFAULT_AFFINITY_CHANNELS};

/// The spatial operator inside a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operator {
    Depthwise,
    TvConv,
}

impl Operator {
    pub fn name(self) -> &'static str {
        match self {
            Operator::Depthwise => "depthwise",
            Operator::TvConv => "tvconv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "depthwise" => Some(Operator::Depthwise),
            "tvconv" => Some(Operator::TvConv),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    /// Full `k x k` convolution.
    Conv,
    /// Spatial operator then pointwise projection.
    Plain,
    /// Optional pointwise expansion, spatial operator, pointwise projection.
    InvertedResidual,
    /// ShuffleNetV2 unit: channel split at stride 1, two branches at stride 2.
    Shuffle,
    Pointwise,
    MaxPool,
    /// Global depthwise conv to `1 x 1`.
    GdConv,
    /// Global mean pool to `1 x 1`.
    Pool,
    /// Fully connected layer on a `1 x 1` map; its output width is not
    /// scaled by the width multiplier.
    Linear,
}

impl BlockKind {
    pub const ALL: [BlockKind; 9] = [
        BlockKind::Conv,
        BlockKind::Plain,
        BlockKind::InvertedResidual,
        BlockKind::Shuffle,
        BlockKind::Pointwise,
        BlockKind::MaxPool,
        BlockKind::GdConv,
        BlockKind::Pool,
        BlockKind::Linear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Conv => "conv",
            BlockKind::Plain => "plain",
            BlockKind::InvertedResidual => "inverted-residual",
            BlockKind::Shuffle => "shuffle",
            BlockKind::Pointwise => "pointwise",
            BlockKind::MaxPool => "maxpool",
            BlockKind::GdConv => "gdconv",
            BlockKind::Pool => "pool",
            BlockKind::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        BlockKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Blocks whose spatial operator can be swapped.
    pub fn has_operator(self) -> bool {
        matches!(self, BlockKind::Plain | BlockKind::InvertedResidual | BlockKind::Shuffle)
    }
}

/// One line of an architecture. Channel counts are at width 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub kind: BlockKind,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub expand: usize,
    pub op: Operator,
    /// Source line, 0 when built in code.
    pub line: usize,
}

impl Block {
    pub fn new(kind: BlockKind, c_in: usize, c_out: usize) -> Self {
        Block {
            kind,
            c_in,
            c_out,
            k: 3,
            stride: 1,
            expand: 1,
            op: Operator::Depthwise,
            line: 0,
        }
    }

    pub fn k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn expand(mut self, expand: usize) -> Self {
        self.expand = expand;
        self
    }

    pub fn op(mut self, op: Operator) -> Self {
        self.op = op;
        self
    }
}

/// Round `v` to the nearest multiple of `divisor` (at least `divisor`),
/// stepping up once if that loses more than 10%.
pub fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut n = (((v + d / 2.0) / d).floor() * d).max(d);
    if n < 0.9 * v {
        n += d;
    }
    n as usize
}

/// A network for the cost model: an input shape, a width multiplier, and
/// blocks chained at width 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub width: f64,
    /// `(c, h, w)`.
    pub input: (usize, usize, usize),
    /// Channel counts are scaled and rounded to multiples of this.
    pub divisor: usize,
    pub affinity_channels: usize,
    pub generator: GeneratorConfig,
    pub blocks: Vec<Block>,
}

impl ArchSpec {
    pub fn new(input: (usize, usize, usize)) -> Self {
        ArchSpec {
            width: 1.0,
            input,
            divisor: 8,
            affinity_channels: DEFAULT_AFFINITY_CHANNELS,
            generator: GeneratorConfig::default(),
            blocks: Vec::new(),
        }
    }

    pub fn push(&mut self, block: Block) -> &mut Self {
        self.blocks.push(block);
        self
    }

    /// Scaled channel count.
    pub fn scale(&self, c: usize) -> usize {
        make_divisible(c as f64 * self.width, self.divisor)
    }

    pub fn with_width(mut self, width: f64) -> Self {
        self.width = width;
        self
    }

    pub fn with_resolution(mut self, h: usize, w: usize) -> Self {
        self.input.1 = h;
        self.input.2 = w;
        self
    }

    /// Every block with a spatial operator switched to `op`.
    pub fn with_operator(mut self, op: Operator) -> Self {
        for b in &mut self.blocks {
            if b.kind.has_operator() {
                b.op = op;
            }
        }
        self
    }

    /// Checks the channel chain and per-block invariants.
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(i, message)| match self.blocks.get(i) {
            Some(b) if b.line > 0 => Error::Parse {
                path: "arch".into(),
                line: b.line,
                message,
            },
            _ => Error::InvalidArgument(format!("block {i}: {message}")),
        })
    }

    pub(crate) fn check(&self) -> std::result::Result<(), (usize, String)> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err((0, format!("input {c}x{h}x{w} has a zero dim")));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err((0, format!("width {} must be positive", self.width)));
        }
        if self.divisor == 0 || self.affinity_channels == 0 || self.generator.kernel % 2 == 0 {
            return Err((0, "divisor, affinity channels and an odd generator kernel are required".into()));
        }
        if self.generator.layers > 0 && self.generator.channels == 0 {
            return Err((0, "generator channels must be >= 1".into()));
        }
        let mut prev = c;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.c_in != prev {
                return Err((i, format!("cin={} does not chain from previous cout={prev}", b.c_in)));
            }
            if b.c_in == 0 || b.c_out == 0 || b.stride == 0 || b.expand == 0 {
                return Err((i, "channels, stride and expand must be >= 1".into()));
            }
            if b.k % 2 == 0 {
                return Err((i, format!("kernel k={} must be odd", b.k)));
            }
            if !b.kind.has_operator() && b.op != Operator::Depthwise {
                return Err((i, format!("{} blocks take no op=", b.kind.name())));
            }
            let same = matches!(b.kind, BlockKind::MaxPool | BlockKind::GdConv | BlockKind::Pool);
            if same && b.c_in != b.c_out {
                return Err((i, format!("{} keeps channels, got cin={} cout={}", b.kind.name(), b.c_in, b.c_out)));
            }
            if b.kind == BlockKind::Shuffle && b.stride == 1 && b.c_in != b.c_out {
                return Err((i, "stride-1 shuffle keeps channels".into()));
            }
            if matches!(b.kind, BlockKind::Pointwise | BlockKind::Linear) && b.stride != 1 {
                return Err((i, format!("{} blocks have stride 1", b.kind.name())));
            }
            prev = b.c_out;
        }
        Ok(())
    }

    /// Parses the line format:
    ///
    /// ```text
    /// width=0.5
    /// input=3x96x96
    /// block conv cin=3 cout=32 k=3 stride=1
    /// block inverted-residual cin=32 cout=16 k=3 stride=1 expand=1 op=tvconv
    /// ```
    ///
    /// Optional headers: `divisor=`, `affinity=`, `generator.layers=`,
    /// `generator.channels=`, `generator.kernel=`. `#` starts a comment.
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_string(),
            line,
            message,
        };
        let mut arch = ArchSpec::new((0, 0, 0));
        let mut have_input = false;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut words = body.split_whitespace();
            let first = words.next().unwrap_or("");
            if first == "block" {
                let kind_name = words.next().ok_or_else(|| err(line, "block needs a type".into()))?;
                let kind = BlockKind::parse(kind_name).ok_or_else(|| err(line, format!("unknown block type `{kind_name}`")))?;
                let mut b = Block::new(kind, 0, 0);
                b.line = line;
                let mut seen: Vec<&str> = Vec::new();
                for word in words {
                    let (k, v) = word
                        .split_once('=')
                        .ok_or_else(|| err(line, format!("expected key=value, got `{word}`")))?;
                    if seen.contains(&k) {
                        return Err(err(line, format!("duplicate key `{k}`")));
                    }
                    seen.push(k);
                    if k == "op" {
                        b.op = Operator::parse(v).ok_or_else(|| err(line, format!("unknown op `{v}`")))?;
                        continue;
                    }
                    let n: usize = v.parse().map_err(|_| err(line, format!("`{k}` expects an integer, got `{v}`")))?;
                    match k {
                        "cin" => b.c_in = n,
                        "cout" => b.c_out = n,
                        "k" => b.k = n,
                        "stride" => b.stride = n,
                        "expand" => b.expand = n,
                        _ => return Err(err(line, format!("unknown block key `{k}`"))),
                    }
                }
                for key in ["cin", "cout"] {
                    if !seen.contains(&key) {
                        return Err(err(line, format!("block is missing {key}=")));
                    }
                }
                arch.blocks.push(b);
                continue;
            }
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected header key=value or block, got `{body}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let int = || v.parse::<usize>().map_err(|_| err(line, format!("`{k}` expects an integer, got `{v}`")));
            match k {
                "width" => {
                    arch.width = v.parse().map_err(|_| err(line, format!("bad width `{v}`")))?;
                }
                "input" => {
                    let dims: Vec<usize> = v
                        .split('x')
                        .map(|d| d.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| err(line, format!("input expects CxHxW, got `{v}`")))?;
                    let [c, h, w] = dims[..] else {
                        return Err(err(line, format!("input expects CxHxW, got `{v}`")));
                    };
                    arch.input = (c, h, w);
                    have_input = true;
                }
                "divisor" => arch.divisor = int()?,
                "affinity" => arch.affinity_channels = int()?,
                "generator.layers" => arch.generator.layers = int()?,
                "generator.channels" => arch.generator.channels = int()?,
                "generator.kernel" => arch.generator.kernel = int()?,
                _ => return Err(err(line, format!("unknown header `{k}`"))),
            }
        }
        if !have_input {
            return Err(err(text.lines().count().max(1), "missing input=CxHxW header".into()));
        }
        arch.check().map_err(|(i, message)| err(arch.blocks.get(i).map_or(1, |b| b.line), message))?;
        Ok(arch)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ArchSpec::parse(&text, &path.display().to_string())
    }

    /// Serialises to the line format; `parse` inverts it.
    pub fn to_text(&self) -> String {
        let (c, h, w) = self.input;
        let g = self.generator;
        let mut s = format!(
            "width={}\ninput={c}x{h}x{w}\ndivisor={}\naffinity={}\ngenerator.layers={}\ngenerator.channels={}\ngenerator.kernel={}\n",
            self.width, self.divisor, self.affinity_channels, g.layers, g.channels, g.kernel
        );
        for b in &self.blocks {
            let _ = write!(
                s,
                "block {} cin={} cout={} k={} stride={} expand={}",
                b.kind.name(),
                b.c_in,
                b.c_out,
                b.k,
                b.stride,
                b.expand
            );
            if b.kind.has_operator() {
                let _ = write!(s, " op={}", b.op.name());
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_BLOCK: &str = "# a single separable block\nwidth=1\ninput=16x8x8\n\nblock plain cin=16 cout=16 k=3 op=tvconv  # trailing\n";

    #[test]
    fn parses_headers_and_blocks() {
        let a = ArchSpec::parse(ONE_BLOCK, "one.arch").unwrap();
        assert_eq!(a.input, (16, 8, 8));
        assert_eq!(a.blocks.len(), 1);
        let b = &a.blocks[0];
        assert_eq!((b.kind, b.c_in, b.c_out, b.k, b.stride, b.op, b.line), (BlockKind::Plain, 16, 16, 3, 1, Operator::TvConv, 5));
    }

    #[test]
    fn text_round_trips() {
        let mut a = ArchSpec::new((3, 32, 32)).with_width(0.75);
        a.generator = GeneratorConfig { layers: 1, channels: 8, kernel: 1 };
        a.push(Block::new(BlockKind::Conv, 3, 32).stride(2))
            .push(Block::new(BlockKind::InvertedResidual, 32, 24).expand(6).op(Operator::TvConv))
            .push(Block::new(BlockKind::Pool, 24, 24))
            .push(Block::new(BlockKind::Linear, 24, 10));
        let mut back = ArchSpec::parse(&a.to_text(), "mem").unwrap();
        for b in &mut back.blocks {
            b.line = 0;
        }
        assert_eq!(back, a);
    }

    #[test]
    fn errors_name_file_and_line() {
        let cases = [
            ("input=3x8x8\nblock warp cin=3 cout=3\n", "f.arch:2: unknown block type `warp`"),
            ("input=3x8x8\nblock conv cin=3 cout=x\n", "f.arch:2: `cout` expects an integer, got `x`"),
            ("input=3x8x8\nblock conv cin=3\n", "f.arch:2: block is missing cout="),
            ("input=3x8\n", "f.arch:1: input expects CxHxW, got `3x8`"),
            ("input=3x8x8\nblock conv cin=3 cout=8\n\nblock pointwise cin=16 cout=8\n", "f.arch:4: cin=16 does not chain from previous cout=8"),
            ("input=3x8x8\nblock conv cin=3 cout=8 k=2\n", "f.arch:2: kernel k=2 must be odd"),
            ("input=3x8x8\nblock conv cin=3 cout=8 op=tvconv\n", "f.arch:2: conv blocks take no op="),
            ("input=3x8x8\nspeed=9\n", "f.arch:2: unknown header `speed`"),
            ("width=1\n", "f.arch:1: missing input=CxHxW header"),
        ];
        for (text, want) in cases {
            assert_eq!(ArchSpec::parse(text, "f.arch").unwrap_err().to_string(), want);
        }
    }

    #[test]
    fn make_divisible_reference_values() {
        // values from the usual MobileNet rounding helper
        assert_eq!(make_divisible(3.2, 8), 8);
        assert_eq!(make_divisible(32.0, 8), 32);
        assert_eq!(make_divisible(12.0, 8), 16);
        assert_eq!(make_divisible(9.0, 8), 16);
        assert_eq!(make_divisible(8.8, 8), 8);
        assert_eq!(make_divisible(35.0, 8), 32);
        assert_eq!(make_divisible(36.0, 8), 40);
        assert_eq!(make_divisible(116.0, 4), 116);
    }

    #[test]
    fn operator_swap_touches_only_spatial_blocks() {
        let mut a = ArchSpec::new((3, 8, 8));
        a.push(Block::new(BlockKind::Conv, 3, 8)).push(Block::new(BlockKind::Plain, 8, 8));
        let tv = a.clone().with_operator(Operator::TvConv);
        assert_eq!(tv.blocks[0].op, Operator::Depthwise);
        assert_eq!(tv.blocks[1].op, Operator::TvConv);
    }
}
