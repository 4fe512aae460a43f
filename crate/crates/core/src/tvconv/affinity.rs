use crate::error::{Error, Result};
use crate::tensor::ops::downsample_mean;
use crate::tensor::Tensor;

/// Learnable `c_A x h x w` layout tensor; its spatial size is fixed to the
/// feature map of the layer it serves.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMaps {
    maps: Tensor,
    pub trainable: bool,
}

impl AffinityMaps {
    pub fn new(maps: Tensor) -> Result<Self> {
        maps.chw("affinity maps")?;
        Ok(AffinityMaps {
            maps,
            trainable: true,
        })
    }

    pub fn channels(&self) -> usize {
        self.maps.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.maps.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.maps.dims()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.maps
    }

    /// Mutable access to the values; shape stays fixed.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.maps.data_mut()
    }

    pub(crate) fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.maps
    }

    /// Replaces the values, keeping the construction-time shape.
    pub fn replace(&mut self, maps: Tensor) -> Result<()> {
        if maps.dims() != self.maps.dims() {
            return Err(Error::shape(
                "affinity maps are fixed-size",
                "current",
                self.maps.dims(),
                "replacement",
                maps.dims(),
            ));
        }
        self.maps = maps;
        Ok(())
    }
}

pub fn init_affinity_constant(c_a: usize, h: usize, w: usize, value: f64) -> Result<AffinityMaps> {
    AffinityMaps::new(Tensor::filled(&[c_a, h, w], value)?)
}

/// Per-pixel mean and population std over `images` (channels averaged to
/// grey first), each downsampled to `h x w`, alternated across the `c_A`
/// channels as mean, std, mean, ...
pub fn init_affinity_from_stats(images: &[Tensor], c_a: usize, h: usize, w: usize) -> Result<AffinityMaps> {
    let first = images
        .first()
        .ok_or_else(|| Error::Empty("affinity statistics need at least one image".into()))?;
    let (_, ih, iw) = first.chw("image")?;
    if c_a == 0 {
        return Err(Error::InvalidArgument("c_A must be >= 1".into()));
    }
    let plane = ih * iw;
    let mut sum = vec![0.0; plane];
    let mut sq = vec![0.0; plane];
    for img in images {
        if img.dims()[1..] != first.dims()[1..] || img.ndim() != 3 {
            return Err(Error::shape("dataset images differ in size", "first", first.dims(), "image", img.dims()));
        }
        let c = img.dims()[0];
        for p in 0..plane {
            let mut g = 0.0;
            for ch in 0..c {
                g += img.data()[ch * plane + p];
            }
            g /= c as f64;
            sum[p] += g;
            sq[p] += g * g;
        }
    }
    let n = images.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std: Vec<f64> = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / n - m * m).max(0.0).sqrt())
        .collect();
    let mean = downsample_mean(&Tensor::new(vec![1, ih, iw], mean)?, h, w)?;
    let std = downsample_mean(&Tensor::new(vec![1, ih, iw], std)?, h, w)?;
    let mut data = Vec::with_capacity(c_a * h * w);
    for ch in 0..c_a {
        data.extend_from_slice(if ch % 2 == 0 { mean.data() } else { std.data() });
    }
    AffinityMaps::new(Tensor::new(vec![c_a, h, w], data)?)
}
