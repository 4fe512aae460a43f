//! Spatial perturbations of `[c, h, w]` images.
//!
//! Every transform is an inverse mapping about the image centre
//! `((h - 1) / 2, (w - 1) / 2)` with bilinear sampling; samples that fall
//! outside the image read zero.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AffineTransform {
    /// Shift by `(dy, dx)` pixels, `|d|` at most the image size.
    Translate { dy: f64, dx: f64 },
    /// Counter-clockwise rotation in degrees, `|deg| <= 360`.
    Rotate { degrees: f64 },
    /// Horizontal shear `x' = x + f (y - cy)`, `|f| <= 1`.
    Shear { factor: f64 },
    /// Isotropic zoom, ratio in `[0.25, 4]`.
    Scale { ratio: f64 },
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform::Translate { dy: 0.0, dx: 0.0 }
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        let ok = match *self {
            AffineTransform::Translate { dy, dx } => dy.abs() <= h as f64 && dx.abs() <= w as f64,
            AffineTransform::Rotate { degrees } => degrees.abs() <= 360.0,
            AffineTransform::Shear { factor } => factor.abs() <= 1.0,
            AffineTransform::Scale { ratio } => (0.25..=4.0).contains(&ratio),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{self:?} is out of range for a {h}x{w} image")))
        }
    }

    /// Source coordinate read by output pixel `(y, x)`.
    fn source(&self, y: f64, x: f64, cy: f64, cx: f64) -> (f64, f64) {
        let (ry, rx) = (y - cy, x - cx);
        match *self {
            AffineTransform::Translate { dy, dx } => (y - dy, x - dx),
            AffineTransform::Rotate { degrees } => {
                let (s, c) = degrees.to_radians().sin_cos();
                (cy + c * ry + s * rx, cx - s * ry + c * rx)
            }
            AffineTransform::Shear { factor } => (y, x - factor * ry),
            AffineTransform::Scale { ratio } => (cy + ry / ratio, cx + rx / ratio),
        }
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

pub fn apply_affine(image: &Tensor, t: AffineTransform) -> Result<Tensor> {
    let (c, h, w) = image.chw("image")?;
    t.check(h, w)?;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let src = image.data();
    let mut out = vec![0.0; c * h * w];
    let read = |ch: usize, y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            src[(ch * h + y as usize) * w + x as usize]
        }
    };
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = t.source(y as f64, x as f64, cy, cx);
            let (sy, sx) = (snap(sy), snap(sx));
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            for ch in 0..c {
                let mut v = (1.0 - fy) * (1.0 - fx) * read(ch, y0, x0);
                if fx > 0.0 {
                    v += (1.0 - fy) * fx * read(ch, y0, x0 + 1);
                }
                if fy > 0.0 {
                    v += fy * (1.0 - fx) * read(ch, y0 + 1, x0);
                    if fx > 0.0 {
                        v += fy * fx * read(ch, y0 + 1, x0 + 1);
                    }
                }
                out[(ch * h + y) * w + x] = v;
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Integer shift with each component `round(U(-m, m) * size)`.
pub fn random_translation(image: &Tensor, max_frac: f64, rng: &mut impl Rng) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&max_frac) {
        return Err(Error::InvalidArgument(format!("translation fraction {max_frac} is outside [0, 1]")));
    }
    let (_, h, w) = image.chw("image")?;
    if max_frac == 0.0 {
        return Ok(image.clone());
    }
    let dy = rng.gen_range(-max_frac..=max_frac) * h as f64;
    let dx = rng.gen_range(-max_frac..=max_frac) * w as f64;
    apply_affine(
        image,
        AffineTransform::Translate {
            dy: dy.round(),
            dx: dx.round(),
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Translate,
    Rotate,
    Shear,
    Scale,
}

impl TransformKind {
    pub const ALL: [TransformKind; 4] = [
        TransformKind::Translate,
        TransformKind::Rotate,
        TransformKind::Shear,
        TransformKind::Scale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Translate => "translate",
            TransformKind::Rotate => "rotate",
            TransformKind::Shear => "shear",
            TransformKind::Scale => "scale",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        TransformKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// A random transform family of bounded magnitude:
/// - translate: integer shifts up to `m` times the image size per axis
/// - rotate: uniform angle in `[-m, m]` degrees
/// - shear: uniform factor in `[-m, m]`
/// - scale: log-uniform ratio in `[1/m, m]`, `m >= 1`
///
/// Zero magnitude (or scale 1) is the identity and draws nothing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation {
    pub kind: TransformKind,
    pub magnitude: f64,
}

impl Perturbation {
    pub fn new(kind: TransformKind, magnitude: f64) -> Result<Self> {
        let ok = match kind {
            TransformKind::Translate => (0.0..=1.0).contains(&magnitude),
            TransformKind::Rotate => (0.0..=360.0).contains(&magnitude),
            TransformKind::Shear => (0.0..=1.0).contains(&magnitude),
            TransformKind::Scale => (1.0..=4.0).contains(&magnitude),
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "{} magnitude {magnitude} is out of range",
                kind.name()
            )));
        }
        Ok(Perturbation { kind, magnitude })
    }

    pub fn is_identity(&self) -> bool {
        match self.kind {
            TransformKind::Scale => self.magnitude == 1.0,
            _ => self.magnitude == 0.0,
        }
    }

    /// Draws one transform for an `h x w` image.
    pub fn sample(&self, h: usize, w: usize, rng: &mut impl Rng) -> AffineTransform {
        let m = self.magnitude;
        if self.is_identity() {
            return AffineTransform::identity();
        }
        match self.kind {
            TransformKind::Translate => AffineTransform::Translate {
                dy: (rng.gen_range(-m..=m) * h as f64).round(),
                dx: (rng.gen_range(-m..=m) * w as f64).round(),
            },
            TransformKind::Rotate => AffineTransform::Rotate {
                degrees: rng.gen_range(-m..=m),
            },
            TransformKind::Shear => AffineTransform::Shear {
                factor: rng.gen_range(-m..=m),
            },
            TransformKind::Scale => AffineTransform::Scale {
                ratio: rng.gen_range(-m.ln()..=m.ln()).exp().clamp(1.0 / m, m),
            },
        }
    }

    pub fn apply(&self, image: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        if self.is_identity() {
            return Ok(image.clone());
        }
        let (_, h, w) = image.chw("image")?;
        apply_affine(image, self.sample(h, w, rng))
    }
}

impl std::fmt::Display for Perturbation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.kind.name(), self.magnitude)
    }
}

impl std::str::FromStr for Perturbation {
    type Err = Error;

    /// `kind:magnitude`, e.g. `translate:0.4`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("expected kind:magnitude (translate, rotate, shear, scale), got `{s}`"));
        let (k, m) = s.split_once(':').ok_or_else(bad)?;
        let kind = TransformKind::parse(k.trim()).ok_or_else(bad)?;
        let magnitude = m.trim().parse().map_err(|_| bad())?;
        Perturbation::new(kind, magnitude)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_fn(&[c, h, w], |i| (i as f64 * 0.37).sin() + 1.5).unwrap()
    }

    #[test]
    fn identity_is_exact() {
        let img = ramp(2, 7, 9);
        assert_eq!(apply_affine(&img, AffineTransform::identity()).unwrap(), img);
        assert_eq!(apply_affine(&img, AffineTransform::Scale { ratio: 1.0 }).unwrap(), img);
        assert_eq!(apply_affine(&img, AffineTransform::Shear { factor: 0.0 }).unwrap(), img);
    }

    #[test]
    fn integral_translation_shifts_and_zero_fills() {
        let img = ramp(1, 5, 6);
        let out = apply_affine(&img, AffineTransform::Translate { dy: 1.0, dx: -2.0 }).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                let want = if y >= 1 && x + 2 < 6 { img.get(&[0, y - 1, x + 2]).unwrap() } else { 0.0 };
                assert_eq!(out.get(&[0, y, x]).unwrap(), want);
            }
        }
        let gone = apply_affine(&img, AffineTransform::Translate { dy: 5.0, dx: 0.0 }).unwrap();
        assert!(gone.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_pixel_translation_averages_neighbours() {
        let img = Tensor::new(vec![1, 1, 3], vec![2.0, 4.0, 8.0]).unwrap();
        let out = apply_affine(&img, AffineTransform::Translate { dy: 0.0, dx: 0.5 }).unwrap();
        assert_eq!(out.data(), &[1.0, 3.0, 6.0]);
    }

    #[test]
    fn quarter_turn_matches_index_rotation() {
        let img = ramp(2, 6, 6);
        let out = apply_affine(&img, AffineTransform::Rotate { degrees: 90.0 }).unwrap();
        // counter-clockwise: out[y][x] = in[x][n - 1 - y]
        for ch in 0..2 {
            for y in 0..6 {
                for x in 0..6 {
                    let want = img.get(&[ch, x, 5 - y]).unwrap();
                    assert!((out.get(&[ch, y, x]).unwrap() - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn full_turns_return_the_image() {
        let img = ramp(1, 8, 8);
        let mut x = img.clone();
        for _ in 0..4 {
            x = apply_affine(&x, AffineTransform::Rotate { degrees: 90.0 }).unwrap();
        }
        assert!(x.max_abs_diff(&img).unwrap() < 1e-6);
        let full = apply_affine(&img, AffineTransform::Rotate { degrees: 360.0 }).unwrap();
        assert!(full.max_abs_diff(&img).unwrap() < 1e-6);
    }

    #[test]
    fn zoom_in_keeps_the_centre() {
        let img = ramp(1, 9, 9);
        let out = apply_affine(&img, AffineTransform::Scale { ratio: 2.0 }).unwrap();
        assert_eq!(out.get(&[0, 4, 4]).unwrap(), img.get(&[0, 4, 4]).unwrap());
        assert_eq!(out.get(&[0, 6, 4]).unwrap(), img.get(&[0, 5, 4]).unwrap());
    }

    #[test]
    fn shear_moves_rows_by_their_offset() {
        let img = ramp(1, 5, 9);
        let out = apply_affine(&img, AffineTransform::Shear { factor: 1.0 }).unwrap();
        // row y shifts right by y - 2
        assert_eq!(out.get(&[0, 4, 5]).unwrap(), img.get(&[0, 4, 3]).unwrap());
        assert_eq!(out.get(&[0, 0, 2]).unwrap(), img.get(&[0, 0, 4]).unwrap());
        assert_eq!(out.get(&[0, 2, 7]).unwrap(), img.get(&[0, 2, 7]).unwrap());
    }

    #[test]
    fn out_of_range_parameters_are_rejected() {
        let img = ramp(1, 4, 4);
        for t in [
            AffineTransform::Translate { dy: 5.0, dx: 0.0 },
            AffineTransform::Rotate { degrees: 400.0 },
            AffineTransform::Shear { factor: 1.5 },
            AffineTransform::Scale { ratio: 0.1 },
        ] {
            assert!(apply_affine(&img, t).is_err(), "{t:?}");
        }
    }

    #[test]
    fn random_translation_is_an_integer_shift() {
        let img = ramp(1, 10, 10);
        let mut rng = rng_for(3, "t");
        for _ in 0..20 {
            let out = random_translation(&img, 0.3, &mut rng).unwrap();
            let found = (-3i32..=3).flat_map(|dy| (-3i32..=3).map(move |dx| (dy, dx))).any(|(dy, dx)| {
                let t = AffineTransform::Translate { dy: dy as f64, dx: dx as f64 };
                apply_affine(&img, t).unwrap() == out
            });
            assert!(found);
        }
        assert_eq!(random_translation(&img, 0.0, &mut rng).unwrap(), img);
    }

    #[test]
    fn perturbations_parse_and_stay_in_range() {
        let p: Perturbation = "rotate:15".parse().unwrap();
        assert_eq!(p.to_string(), "rotate:15");
        assert!("scale:0.5".parse::<Perturbation>().is_err());
        assert!("blur:1".parse::<Perturbation>().is_err());
        let mut rng = rng_for(0, "p");
        for _ in 0..50 {
            match "scale:2".parse::<Perturbation>().unwrap().sample(8, 8, &mut rng) {
                AffineTransform::Scale { ratio } => assert!((0.5..=2.0).contains(&ratio)),
                t => panic!("{t:?}"),
            }
            match "translate:0.25".parse::<Perturbation>().unwrap().sample(8, 8, &mut rng) {
                AffineTransform::Translate { dy, dx } => {
                    assert!(dy.abs() <= 2.0 && dx.abs() <= 2.0 && dy.fract() == 0.0 && dx.fract() == 0.0)
                }
                t => panic!("{t:?}"),
            }
        }
        let img = ramp(1, 6, 6);
        let id = Perturbation::new(TransformKind::Shear, 0.0).unwrap();
        assert_eq!(id.apply(&img, &mut rng).unwrap(), img);
    }
}
