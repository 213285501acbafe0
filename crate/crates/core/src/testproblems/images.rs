//! Synthetic training images for the spherical-means problem.
//!
//! Each image lives inside a centred disk mask. The interior is a sum of
//! `TERMS` sine-squared plane waves,
//!
//! ```text
//!     s(u, v) = Σ_t c_t · sin²( π (f_t u + g_t v) / 128² + π φ_t / 128 )
//! ```
//!
//! where `(u, v)` are pixel-centre coordinates rescaled to a 128-pixel
//! image, `c_t ~ U(0.5, 1)` and `f_t, g_t, φ_t ~ U(0, 128)`. The sum is
//! min–max normalized to `[0, 1]` over the mask. Training images are then
//! contaminated with white disks ("freckles") of radii 3 and 4 (scaled by
//! `size / 128`) whose centres are uniform in the mask.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TERMS: usize = 4;
const REFERENCE_SIZE: f64 = 128.0;

/// Freckle counts per radius, in reference (128-pixel) units.
#[derive(Clone, Debug, PartialEq)]
pub struct FreckleSpec {
    pub groups: Vec<(usize, f64)>,
}

impl Default for FreckleSpec {
    fn default() -> Self {
        Self {
            groups: vec![(5, 3.0), (3, 4.0)],
        }
    }
}

impl FreckleSpec {
    pub fn none() -> Self {
        Self { groups: vec![] }
    }

    pub fn count(&self) -> usize {
        self.groups.iter().map(|g| g.0).sum()
    }
}

#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub images: Vec<DVector<f64>>,
    pub size: usize,
    pub seed: u64,
    pub freckles: FreckleSpec,
}

/// Whether pixel `(ix, iy)` of a `size × size` image lies in the mask.
pub fn in_mask(size: usize, ix: usize, iy: usize) -> bool {
    let c = size as f64 / 2.0;
    let (x, y) = (ix as f64 + 0.5 - c, iy as f64 + 0.5 - c);
    x * x + y * y <= c * c
}

/// Row-major 0/1 mask.
pub fn disk_mask(size: usize) -> Vec<bool> {
    (0..size * size)
        .map(|i| in_mask(size, i % size, i / size))
        .collect()
}

/// One freckle-free image drawn from `rng`.
pub fn smooth_image(size: usize, rng: &mut impl Rng) -> DVector<f64> {
    let terms: Vec<[f64; 4]> = (0..TERMS)
        .map(|_| {
            [
                rng.gen_range(0.5..1.0),
                rng.gen_range(0.0..REFERENCE_SIZE),
                rng.gen_range(0.0..REFERENCE_SIZE),
                rng.gen_range(0.0..REFERENCE_SIZE),
            ]
        })
        .collect();
    let mask = disk_mask(size);
    let scale = REFERENCE_SIZE / size as f64;
    let r2 = REFERENCE_SIZE * REFERENCE_SIZE;
    let mut img = DVector::from_fn(size * size, |i, _| {
        if !mask[i] {
            return 0.0;
        }
        let u = ((i % size) as f64 + 0.5) * scale;
        let v = ((i / size) as f64 + 0.5) * scale;
        terms
            .iter()
            .map(|&[c, f, g, phi]| {
                let s = (std::f64::consts::PI * ((f * u + g * v) / r2 + phi / REFERENCE_SIZE)).sin();
                c * s * s
            })
            .sum()
    });
    let inside = || img.iter().zip(&mask).filter(|(_, &m)| m).map(|(v, _)| *v);
    let lo = inside().fold(f64::INFINITY, f64::min);
    let hi = inside().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for (v, &m) in img.iter_mut().zip(&mask) {
        *v = if !m {
            0.0
        } else if span > 0.0 {
            ((*v - lo) / span).clamp(0.0, 1.0)
        } else {
            0.5
        };
    }
    img
}

/// Paints white disks onto `img` (mask pixels only).
pub fn add_freckles(img: &mut DVector<f64>, size: usize, spec: &FreckleSpec, rng: &mut impl Rng) {
    let c = size as f64 / 2.0;
    let scale = size as f64 / REFERENCE_SIZE;
    for &(count, radius) in &spec.groups {
        let r = radius * scale;
        for _ in 0..count {
            // Uniform origin in the mask disk.
            let (ox, oy) = loop {
                let x = rng.gen_range(-c..c);
                let y = rng.gen_range(-c..c);
                if x * x + y * y <= c * c {
                    break (x + c, y + c);
                }
            };
            let (x0, x1) = ((ox - r).floor().max(0.0) as usize, ((ox + r).ceil() as usize).min(size));
            let (y0, y1) = ((oy - r).floor().max(0.0) as usize, ((oy + r).ceil() as usize).min(size));
            for iy in y0..y1 {
                for ix in x0..x1 {
                    let (dx, dy) = (ix as f64 + 0.5 - ox, iy as f64 + 0.5 - oy);
                    if dx * dx + dy * dy <= r * r && in_mask(size, ix, iy) {
                        img[iy * size + ix] = 1.0;
                    }
                }
            }
        }
    }
}

/// `count` freckled training images, deterministic in `seed`.
pub fn gen_training_images(count: usize, size: usize, seed: u64) -> TrainingSet {
    let freckles = FreckleSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = (0..count)
        .map(|_| {
            let mut img = smooth_image(size, &mut rng);
            add_freckles(&mut img, size, &freckles, &mut rng);
            img
        })
        .collect();
    TrainingSet {
        images,
        size,
        seed,
        freckles,
    }
}
