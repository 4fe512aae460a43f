//! The TVConv operator.
//!
//! A layer serving a `c x h x w` feature map holds affinity maps
//! `A: [c_A, h, w]` and a generator `B`. Training evaluates `W = B(A)` (a
//! `[c*k*k, h, w]` weight field) and applies one `k x k` depthwise filter per
//! position. Freezing runs `B` once and serves every later inference from
//! the cached field, so steady-state cost equals a depthwise conv.
//!
//! With constant affinity maps and a `k_B = 1` generator every position
//! receives the same filter and the layer is exactly a depthwise conv. With
//! `k_B > 1` the same holds on the interior, at least `(L + 1) * (k_B / 2)` pixels
//! from every edge; zero padding makes border filters differ.

mod affinity;
mod export;
mod field;
mod generator;
mod layer;

pub use affinity::{init_affinity_constant, init_affinity_from_stats, AffinityMaps};
pub use export::{decode_pgm, encode_pgm, export_affinity, to_gray8};
pub use field::{
    factorized_weights, param_count_factorized, param_count_naive, reduction_ratio, tvconv_apply,
    tvconv_naive_oracle, WeightField,
};
pub use generator::{generate_weights, he_normal, GeneratorConfig, GeneratorParams, HiddenUnit};
pub use layer::{Mode, TvConvLayer};

/// Default apply-step kernel.
pub const DEFAULT_KERNEL: usize = 3;
/// Default number of affinity channels.
pub const DEFAULT_AFFINITY_CHANNELS: usize = 4;
