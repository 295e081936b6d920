//! Synthetic segmentation scenes of rectangles and disks.
//!
//! Labels are sampled at pixel centres of the label grid. The image is
//! rendered by 4x4 supersampled box filtering, shifted by a per-sample
//! sub-pixel phase drawn uniformly from `[-jitter/2, jitter/2]` on each
//! axis, so edges in the image sit slightly off the label edges.

use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Dims, Tensor};

const SUPERSAMPLE: usize = 4;
pub const NOISE_STD: f64 = 0.05;
pub const MAX_OBJECTS: usize = 3;
pub const MAX_JITTER: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// Half-open box `[y0, y1) x [x0, x1)` in pixel units.
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Disk { cy: f64, cx: f64, r: f64 },
}

impl Shape {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Disk { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Object {
    pub shape: Shape,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    /// (1, 3, H, W) in [0, 1].
    pub image: Tensor,
    pub label: LabelMap,
    /// Painted in order; later objects cover earlier ones.
    pub objects: Vec<Object>,
    /// Image phase `(dy, dx)` relative to the label grid.
    pub phase: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub jitter: usize,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(32) || !self.width.is_multiple_of(32) {
            return Err(Error::config(
                "height",
                format!("image size {}x{} must be a nonzero multiple of 32", self.height, self.width),
            ));
        }
        if self.classes < 2 {
            return Err(Error::config("classes", "need background plus at least one object class"));
        }
        if self.jitter > MAX_JITTER {
            return Err(Error::config("jitter", format!("must be 0, 1 or 2, got {}", self.jitter)));
        }
        Ok(())
    }

    /// Prior over object classes `1..classes` (uniform).
    pub fn class_priors(&self) -> Vec<f64> {
        let k = self.classes - 1;
        let mut p = vec![1.0 / k as f64; self.classes];
        p[0] = 0.0;
        p
    }
}

/// Base colour of a class. Class 0 is the background.
pub fn class_color(class: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 8] = [
        [0.2, 0.2, 0.2],
        [0.85, 0.25, 0.2],
        [0.2, 0.7, 0.3],
        [0.25, 0.35, 0.9],
        [0.9, 0.8, 0.2],
        [0.7, 0.3, 0.8],
        [0.2, 0.8, 0.85],
        [0.95, 0.6, 0.7],
    ];
    if class < PALETTE.len() {
        return PALETTE[class];
    }
    let mut r = Rng::new(class as u64);
    [r.uniform(0.1, 0.9), r.uniform(0.1, 0.9), r.uniform(0.1, 0.9)]
}

fn class_at(objects: &[Object], y: f64, x: f64) -> usize {
    objects.iter().rev().find(|o| o.shape.contains(y, x)).map_or(0, |o| o.class)
}

/// Labels at pixel centres.
pub fn render_label(objects: &[Object], h: usize, w: usize) -> LabelMap {
    LabelMap::from_fn(h, w, |y, x| class_at(objects, y as f64 + 0.5, x as f64 + 0.5))
}

/// Noise-free image with the scene shifted by `phase`.
pub fn render_image(objects: &[Object], h: usize, w: usize, phase: (f64, f64)) -> Tensor {
    let mut img = Tensor::zeros(Dims { n: 1, c: 3, h, w });
    let plane = h * w;
    let step = 1.0 / SUPERSAMPLE as f64;
    let norm = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    let data = img.data_mut();
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let py = y as f64 + (sy as f64 + 0.5) * step + phase.0;
                    let px = x as f64 + (sx as f64 + 0.5) * step + phase.1;
                    let c = class_color(class_at(objects, py, px));
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            for k in 0..3 {
                data[k * plane + y * w + x] = acc[k] / norm;
            }
        }
    }
    img
}

fn random_object(rng: &mut Rng, spec: &SynthSpec) -> Object {
    let (h, w) = (spec.height as f64, spec.width as f64);
    let class = 1 + rng.below(spec.classes - 1);
    let shape = if rng.below(2) == 0 {
        let bh = rng.uniform(h / 8.0, h / 2.0);
        let bw = rng.uniform(w / 8.0, w / 2.0);
        let y0 = rng.uniform(0.0, h - bh);
        let x0 = rng.uniform(0.0, w - bw);
        Shape::Rect {
            y0,
            x0,
            y1: y0 + bh,
            x1: x0 + bw,
        }
    } else {
        let r = rng.uniform(h.min(w) / 12.0, h.min(w) / 4.0);
        Shape::Disk {
            cy: rng.uniform(r, h - r),
            cx: rng.uniform(r, w - r),
            r,
        }
    };
    Object { shape, class }
}

/// One sample from its own generator.
pub fn generate_sample(rng: &mut Rng, spec: &SynthSpec) -> SynthSample {
    let (h, w) = (spec.height, spec.width);
    let (objects, label) = loop {
        let count = 1 + rng.below(MAX_OBJECTS);
        let objects: Vec<Object> = (0..count).map(|_| random_object(rng, spec)).collect();
        let label = render_label(&objects, h, w);
        let has_bg = label.data().contains(&0);
        let has_fg = label.data().iter().any(|&c| c != 0);
        if has_bg && has_fg {
            break (objects, label);
        }
    };
    let j = spec.jitter as f64;
    let phase = if spec.jitter == 0 {
        (0.0, 0.0)
    } else {
        (rng.uniform(-j / 2.0, j / 2.0), rng.uniform(-j / 2.0, j / 2.0))
    };
    let mut image = render_image(&objects, h, w, phase);
    for v in image.data_mut() {
        *v = (*v + NOISE_STD * rng.normal()).clamp(0.0, 1.0);
    }
    SynthSample {
        image,
        label,
        objects,
        phase,
    }
}

/// `count` samples; sample `i` uses its own seed derived from `(seed, i)`.
pub fn generate_dataset(seed: u64, count: usize, spec: &SynthSpec) -> Result<Vec<SynthSample>> {
    spec.validate()?;
    let base = derive_seed(seed, "sample");
    Ok((0..count)
        .map(|i| {
            let mut rng = Rng::new(base.wrapping_add(i as u64));
            generate_sample(&mut rng, spec)
        })
        .collect())
}

/// FNV-1a over image bits and labels.
pub fn checksum(samples: &[SynthSample]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for s in samples {
        for v in s.image.data() {
            eat(&v.to_le_bytes());
        }
        for &l in s.label.data() {
            eat(&(l as u64).to_le_bytes());
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(jitter: usize) -> SynthSpec {
        SynthSpec {
            height: 64,
            width: 64,
            classes: 4,
            jitter,
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_dataset(9, 6, &spec(1)).unwrap();
        let b = generate_dataset(9, 6, &spec(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(checksum(&a), checksum(&b));
        let c = generate_dataset(10, 6, &spec(1)).unwrap();
        assert_ne!(checksum(&a), checksum(&c));
    }

    #[test]
    fn full_frame_rectangle_is_all_foreground() {
        let obj = Object {
            shape: Shape::Rect {
                y0: 0.0,
                x0: 0.0,
                y1: 64.0,
                x1: 64.0,
            },
            class: 2,
        };
        let label = render_label(&[obj], 64, 64);
        assert!(label.data().iter().all(|&c| c == 2));
        let img = render_image(&[obj], 64, 64, (0.0, 0.0));
        assert!((img.at(0, 0, 10, 10) - class_color(2)[0]).abs() < 1e-15);
    }

    #[test]
    fn invariants_hold() {
        for s in generate_dataset(3, 40, &spec(2)).unwrap() {
            assert!(s.label.data().iter().all(|&c| c < 4));
            assert!(s.label.data().contains(&0));
            assert!(s.label.data().iter().any(|&c| c > 0));
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(s.phase.0.abs() <= 1.0 && s.phase.1.abs() <= 1.0);
        }
    }

    #[test]
    fn zero_jitter_has_zero_phase() {
        for s in generate_dataset(4, 10, &spec(0)).unwrap() {
            assert_eq!(s.phase, (0.0, 0.0));
        }
    }

    #[test]
    fn class_histogram_matches_priors() {
        let sp = spec(1);
        let samples = generate_dataset(5, 500, &sp).unwrap();
        let mut counts = vec![0usize; sp.classes];
        let mut total = 0usize;
        for s in &samples {
            for o in &s.objects {
                counts[o.class] += 1;
                total += 1;
            }
        }
        for (c, &p) in sp.class_priors().iter().enumerate() {
            let mean = p * total as f64;
            let sd = (total as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (counts[c] as f64 - mean).abs() <= 3.0 * sd,
                "class {c}: {} vs {mean} +- {sd}",
                counts[c]
            );
        }
    }

    #[test]
    fn bad_sizes_are_config_errors() {
        let mut sp = spec(1);
        sp.height = 48;
        assert!(matches!(generate_dataset(0, 1, &sp), Err(Error::Config { .. })));
        let mut sp = spec(3);
        sp.jitter = 3;
        assert!(matches!(generate_dataset(0, 1, &sp), Err(Error::Config { .. })));
    }

    #[test]
    fn phase_shifts_image_edges() {
        let obj = Object {
            shape: Shape::Rect {
                y0: 0.0,
                x0: 16.0,
                y1: 64.0,
                x1: 64.0,
            },
            class: 1,
        };
        let img = render_image(&[obj], 64, 64, (0.0, 0.5));
        let (bg, fg) = (class_color(0)[0], class_color(1)[0]);
        // Pixel 15 now covers [15.5, 16.5): half background, half object.
        assert!((img.at(0, 0, 5, 15) - 0.5 * (bg + fg)).abs() < 1e-12);
        assert!((img.at(0, 0, 5, 16) - fg).abs() < 1e-12);
    }
}
