use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use super::affinity::AffinityMaps;
use super::field::{tvconv_apply, WeightField};
use super::generator::{generate_weights, GeneratorParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Training,
    Frozen,
}

impl Mode {
    fn label(self) -> &'static str {
        match self {
            Mode::Training => "training",
            Mode::Frozen => "frozen",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Cache {
    field: WeightField,
    fingerprint: u64,
}

/// A TVConv layer: affinity maps plus generator, with an optional cached
/// weight field once frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct TvConvLayer {
    affinity: AffinityMaps,
    generator: GeneratorParams,
    cache: Option<Cache>,
}

fn hash_tensor(h: &mut DefaultHasher, t: &Tensor) {
    for &d in t.dims() {
        h.write_usize(d);
    }
    for &v in t.data() {
        h.write_u64(v.to_bits());
    }
}

impl TvConvLayer {
    pub fn new(affinity: AffinityMaps, generator: GeneratorParams) -> Result<Self> {
        if affinity.channels() != generator.affinity_channels() {
            return Err(Error::InvalidArgument(format!(
                "affinity has {} channels, generator reads {}",
                affinity.channels(),
                generator.affinity_channels()
            )));
        }
        Ok(TvConvLayer {
            affinity,
            generator,
            cache: None,
        })
    }

    pub fn mode(&self) -> Mode {
        if self.cache.is_some() {
            Mode::Frozen
        } else {
            Mode::Training
        }
    }

    pub fn affinity(&self) -> &AffinityMaps {
        &self.affinity
    }

    pub fn generator(&self) -> &GeneratorParams {
        &self.generator
    }

    /// Mutable access is allowed in either mode; a frozen layer detects the
    /// change on its next cached inference.
    pub fn affinity_mut(&mut self) -> &mut AffinityMaps {
        &mut self.affinity
    }

    pub fn generator_mut(&mut self) -> &mut GeneratorParams {
        &mut self.generator
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut AffinityMaps, &mut GeneratorParams) {
        (&mut self.affinity, &mut self.generator)
    }

    /// Content hash of every parameter byte.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        hash_tensor(&mut h, self.affinity.tensor());
        for t in self.generator.tensors() {
            hash_tensor(&mut h, t);
        }
        h.finish()
    }

    pub fn generate(&self) -> Result<WeightField> {
        generate_weights(&self.affinity, &self.generator)
    }

    /// Runs weight generation once and caches the field.
    pub fn freeze(&mut self) -> Result<()> {
        if self.cache.is_some() {
            return Err(Error::Mode {
                expected: Mode::Training.label(),
                actual: Mode::Frozen.label(),
            });
        }
        let field = self.generate()?;
        self.cache = Some(Cache {
            field,
            fingerprint: self.fingerprint(),
        });
        Ok(())
    }

    pub fn frozen(mut self) -> Result<Self> {
        self.freeze()?;
        Ok(self)
    }

    /// Drops the cache and returns to training mode.
    pub fn unfreeze(&mut self) {
        self.cache = None;
    }

    /// The cached field, after checking it still matches the parameters.
    pub fn cached_field(&self) -> Result<&WeightField> {
        let cache = self.cache.as_ref().ok_or(Error::Mode {
            expected: Mode::Frozen.label(),
            actual: Mode::Training.label(),
        })?;
        let current = self.fingerprint();
        if current != cache.fingerprint {
            return Err(Error::StaleCache {
                cached: cache.fingerprint,
                current,
            });
        }
        Ok(&cache.field)
    }

    pub fn infer_cached(&self, input: &Tensor) -> Result<Tensor> {
        tvconv_apply(input, self.cached_field()?)
    }

    /// Generate-then-apply, regardless of mode.
    pub fn infer_eager(&self, input: &Tensor) -> Result<Tensor> {
        tvconv_apply(input, &self.generate()?)
    }
}
