//! Synthetic layout datasets.
//!
//! Every image shares one spatial layout: a `g x g` grid of cells with fixed
//! base intensities. A class is a set of small oriented bars drawn in
//! class-specific cells, and each image adds Gaussian noise. Classes differ
//! only in *where* their bars sit, which a translation-equivariant network
//! followed by global pooling can only recover indirectly.

mod affine;
mod store;

pub use affine::{apply_affine, random_translation, AffineTransform, Perturbation, TransformKind};
pub use store::{read_dataset, write_dataset};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::report::KeyValues;
use crate::seed::rng_for;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Orientation {
    Horizontal,
    Vertical,
    Diagonal,
    AntiDiagonal,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Orientation::Horizontal,
        Orientation::Vertical,
        Orientation::Diagonal,
        Orientation::AntiDiagonal,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Orientation::ALL.get(code).copied()
    }
}

/// A bar drawn in one grid cell (row-major cell index).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pattern {
    pub cell: usize,
    pub orientation: Orientation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayoutDatasetSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub grid: usize,
    pub classes: usize,
    /// Bars per class when assignments are derived.
    pub patterns_per_class: usize,
    /// Explicit per-class patterns; empty means derive them from the seed.
    pub assignments: Vec<Vec<Pattern>>,
    /// Cell base intensities are uniform in `[-a, a]`.
    pub background_amplitude: f64,
    pub pattern_amplitude: f64,
    pub noise_std: f64,
    pub train: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for LayoutDatasetSpec {
    fn default() -> Self {
        LayoutDatasetSpec {
            channels: 1,
            height: 32,
            width: 32,
            grid: 4,
            classes: 8,
            patterns_per_class: 1,
            assignments: Vec::new(),
            background_amplitude: 0.5,
            pattern_amplitude: 1.0,
            noise_std: 0.1,
            train: 200,
            test: 200,
            seed: 0,
        }
    }
}

const SPEC_KEYS: [&str; 12] = [
    "channels",
    "height",
    "width",
    "grid",
    "classes",
    "patterns_per_class",
    "background_amplitude",
    "pattern_amplitude",
    "noise_std",
    "train",
    "test",
    "seed",
];

impl LayoutDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.channels == 0 || self.grid == 0 || self.classes == 0 {
            return bad("channels, grid and classes must be >= 1".into());
        }
        if self.height / self.grid < 4 || self.width / self.grid < 4 {
            return bad(format!(
                "{}x{} image with a {g}x{g} grid leaves cells under 4 pixels",
                self.height,
                self.width,
                g = self.grid
            ));
        }
        for (name, v) in [
            ("background_amplitude", self.background_amplitude),
            ("pattern_amplitude", self.pattern_amplitude),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        let cells = self.grid * self.grid;
        if self.assignments.is_empty() {
            if self.patterns_per_class == 0 {
                return bad("patterns_per_class must be >= 1".into());
            }
            let capacity = cells / self.patterns_per_class;
            if self.classes > capacity {
                return bad(format!(
                    "{} classes exceed the {capacity} disjoint assignments of {} patterns in {cells} cells",
                    self.classes, self.patterns_per_class
                ));
            }
        } else {
            if self.assignments.len() != self.classes {
                return bad(format!("{} assignments for {} classes", self.assignments.len(), self.classes));
            }
            let mut seen: Vec<Vec<(usize, usize)>> = Vec::new();
            for (k, a) in self.assignments.iter().enumerate() {
                if let Some(p) = a.iter().find(|p| p.cell >= cells) {
                    return bad(format!("class {k} uses cell {} of {cells}", p.cell));
                }
                let mut key: Vec<(usize, usize)> = a.iter().map(|p| (p.cell, p.orientation.code())).collect();
                key.sort_unstable();
                key.dedup();
                if seen.contains(&key) {
                    return bad(format!("class {k} repeats an earlier class's patterns"));
                }
                seen.push(key);
            }
        }
        Ok(())
    }

    /// Per-class patterns: explicit ones, or disjoint cell groups from a
    /// seeded permutation with orientations cycling through
    /// [`Orientation::ALL`], so every class has the same bars.
    pub fn resolved_assignments(&self) -> Result<Vec<Vec<Pattern>>> {
        self.validate()?;
        if !self.assignments.is_empty() {
            return Ok(self.assignments.clone());
        }
        let mut cells: Vec<usize> = (0..self.grid * self.grid).collect();
        cells.shuffle(&mut rng_for(self.seed, "layout/cells"));
        let p = self.patterns_per_class;
        Ok((0..self.classes)
            .map(|k| {
                (0..p)
                    .map(|j| Pattern {
                        cell: cells[k * p + j],
                        orientation: Orientation::ALL[j % 4],
                    })
                    .collect()
            })
            .collect())
    }

    /// Base intensity of each cell, row-major.
    pub fn base_levels(&self) -> Vec<f64> {
        let mut rng = rng_for(self.seed, "layout/base");
        let a = self.background_amplitude;
        (0..self.grid * self.grid)
            .map(|_| if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 })
            .collect()
    }

    /// Row and column bounds of cell `index`.
    pub fn cell_bounds(&self, index: usize) -> ((usize, usize), (usize, usize)) {
        let g = self.grid;
        let (r, c) = (index / g, index % g);
        (
            (r * self.height / g, (r + 1) * self.height / g),
            (c * self.width / g, (c + 1) * self.width / g),
        )
    }

    /// Serialises every field, including the resolved assignments.
    pub fn to_key_values(&self) -> Result<KeyValues> {
        let mut kv = KeyValues::new();
        kv.push("channels", self.channels)
            .push("height", self.height)
            .push("width", self.width)
            .push("grid", self.grid)
            .push("classes", self.classes)
            .push("patterns_per_class", self.patterns_per_class)
            .push("background_amplitude", self.background_amplitude)
            .push("pattern_amplitude", self.pattern_amplitude)
            .push("noise_std", self.noise_std)
            .push("train", self.train)
            .push("test", self.test)
            .push("seed", self.seed);
        for (k, a) in self.resolved_assignments()?.iter().enumerate() {
            let v: Vec<String> = a.iter().map(|p| format!("{}:{}", p.cell, p.orientation.code())).collect();
            kv.push(format!("assignment.{k}"), v.join(","));
        }
        Ok(kv)
    }

    /// Reads keys under `prefix` (empty for top level) over the defaults.
    /// Unknown keys under the prefix are rejected. Assignments equal to the
    /// seed-derived ones read back as derived.
    pub fn from_config(cfg: &Config, prefix: &str) -> Result<Self> {
        let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
        let mut s = LayoutDatasetSpec::default();
        cfg.update(&key("channels"), &mut s.channels)?;
        cfg.update(&key("height"), &mut s.height)?;
        cfg.update(&key("width"), &mut s.width)?;
        cfg.update(&key("grid"), &mut s.grid)?;
        cfg.update(&key("classes"), &mut s.classes)?;
        cfg.update(&key("patterns_per_class"), &mut s.patterns_per_class)?;
        cfg.update(&key("background_amplitude"), &mut s.background_amplitude)?;
        cfg.update(&key("pattern_amplitude"), &mut s.pattern_amplitude)?;
        cfg.update(&key("noise_std"), &mut s.noise_std)?;
        cfg.update(&key("train"), &mut s.train)?;
        cfg.update(&key("test"), &mut s.test)?;
        cfg.update(&key("seed"), &mut s.seed)?;
        let mut explicit = Vec::new();
        while let Some(list) = cfg.get_list::<String>(&key(&format!("assignment.{}", explicit.len())))? {
            let mut patterns = Vec::new();
            for item in list {
                let parsed = item.split_once(':').and_then(|(c, o)| {
                    let orientation = Orientation::from_code(o.parse().ok()?)?;
                    Some(Pattern {
                        cell: c.parse().ok()?,
                        orientation,
                    })
                });
                patterns.push(parsed.ok_or_else(|| {
                    Error::InvalidArgument(format!("assignment entry `{item}` is not cell:orientation (0-3)"))
                })?);
            }
            explicit.push(patterns);
        }
        s.assignments = explicit;
        let n = s.assignments.len();
        cfg.reject_unknown(|k| {
            let Some(rest) = (if prefix.is_empty() { Some(k) } else { k.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) }) else {
                return true;
            };
            SPEC_KEYS.contains(&rest)
                || rest
                    .strip_prefix("assignment.")
                    .and_then(|i| i.parse::<usize>().ok())
                    .is_some_and(|i| i < n)
        })?;
        s.validate()?;
        if !s.assignments.is_empty() {
            let derived = LayoutDatasetSpec {
                assignments: Vec::new(),
                ..s.clone()
            };
            if derived.validate().is_ok() && derived.resolved_assignments()? == s.assignments {
                return Ok(derived);
            }
        }
        Ok(s)
    }
}

/// Images with integer labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_dims(&self) -> Option<&[usize]> {
        self.images.first().map(|t| t.dims())
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn map_images(&self, f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<Dataset> {
        Ok(Dataset {
            images: self.images.iter().map(f).collect::<Result<_>>()?,
            labels: self.labels.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayoutDataset {
    pub spec: LayoutDatasetSpec,
    pub train: Dataset,
    pub test: Dataset,
}

fn draw_bar(spec: &LayoutDatasetSpec, plane: &mut [f64], p: Pattern) {
    let ((r0, r1), (c0, c1)) = spec.cell_bounds(p.cell);
    let (ch, cw) = (r1 - r0, c1 - c0);
    let a = spec.pattern_amplitude;
    let w = spec.width;
    let mut put = |y: usize, x: usize| plane[(r0 + y) * w + c0 + x] += a;
    match p.orientation {
        Orientation::Horizontal => {
            for x in 1..cw - 1 {
                put(ch / 2 - 1, x);
                put(ch / 2, x);
            }
        }
        Orientation::Vertical => {
            for y in 1..ch - 1 {
                put(y, cw / 2 - 1);
                put(y, cw / 2);
            }
        }
        Orientation::Diagonal => {
            for t in 1..ch.min(cw) - 1 {
                put(t, t);
                put(t, t + 1);
            }
        }
        Orientation::AntiDiagonal => {
            for t in 1..ch.min(cw) - 1 {
                put(t, cw - 1 - t);
                put(t, cw - 2 - t);
            }
        }
    }
}

/// The noiseless image of each class.
pub fn class_templates(spec: &LayoutDatasetSpec) -> Result<Vec<Tensor>> {
    let assignments = spec.resolved_assignments()?;
    let levels = spec.base_levels();
    let (h, w) = (spec.height, spec.width);
    let mut base = vec![0.0; h * w];
    for (cell, level) in levels.iter().enumerate() {
        let ((r0, r1), (c0, c1)) = spec.cell_bounds(cell);
        for y in r0..r1 {
            base[y * w + c0..y * w + c1].fill(*level);
        }
    }
    assignments
        .iter()
        .map(|patterns| {
            let mut plane = base.clone();
            for &p in patterns {
                draw_bar(spec, &mut plane, p);
            }
            let data = plane.repeat(spec.channels);
            Tensor::new(vec![spec.channels, h, w], data)
        })
        .collect()
}

fn split(spec: &LayoutDatasetSpec, templates: &[Tensor], n: usize, purpose: &str) -> Result<Dataset> {
    let mut rng = rng_for(spec.seed, purpose);
    let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut ds = Dataset::default();
    for i in 0..n {
        let label = i % spec.classes;
        let mut img = templates[label].clone();
        if spec.noise_std > 0.0 {
            for v in img.data_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        ds.images.push(img);
        ds.labels.push(label);
    }
    Ok(ds)
}

/// Generates both splits. Labels cycle `i % classes`, so class counts
/// differ by at most one.
pub fn gen_layout_dataset(spec: &LayoutDatasetSpec) -> Result<LayoutDataset> {
    let templates = class_templates(spec)?;
    Ok(LayoutDataset {
        spec: spec.clone(),
        train: split(spec, &templates, spec.train, "data/train")?,
        test: split(spec, &templates, spec.test, "data/test")?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceStats {
    /// Mean over images of the spatial variance within each image.
    pub intra_image_var: f64,
    /// Mean over positions of the variance across images.
    pub cross_image_var: f64,
}

impl VarianceStats {
    pub fn ratio(&self) -> f64 {
        self.intra_image_var / self.cross_image_var
    }
}

/// Population variances over all channels and positions.
pub fn variance_stats(images: &[Tensor]) -> Result<VarianceStats> {
    if images.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "variance statistics need at least 2 images, got {}",
            images.len()
        )));
    }
    let dims = images[0].dims();
    let m = images[0].len();
    let mut sum = vec![0.0; m];
    let mut intra = 0.0;
    for img in images {
        if img.dims() != dims {
            return Err(Error::shape("dataset images differ", "first", dims, "image", img.dims()));
        }
        let d = img.data();
        let mean = d.iter().sum::<f64>() / m as f64;
        intra += d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
        for (s, v) in sum.iter_mut().zip(d) {
            *s += v;
        }
    }
    let n = images.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut cross = 0.0;
    for img in images {
        for (v, mu) in img.data().iter().zip(&mean) {
            cross += (v - mu).powi(2);
        }
    }
    Ok(VarianceStats {
        intra_image_var: intra / n,
        cross_image_var: cross / (n * m as f64),
    })
}
