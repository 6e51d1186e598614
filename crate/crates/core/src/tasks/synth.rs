//! Procedural grayscale corpora: textured scenes with shapes, and
//! foreground/background scenes with ground-truth masks.

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

struct Canvas {
    size: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Self {
            size,
            px: vec![0.0; size * size],
        }
    }

    fn coords(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        let s = self.size as f64;
        (0..self.size * self.size).map(move |i| {
            let (m, n) = (i / self.size, i % self.size);
            (i, m as f64 / s, n as f64 / s)
        })
    }

    fn gradient(&mut self, rng: &mut ChaCha8Rng, amp: f64) {
        let (a, b, c) = (rng.random_range(-amp..amp), rng.random_range(-amp..amp), rng.random_range(90.0..170.0));
        let vals: Vec<_> = self.coords().map(|(i, u, v)| (i, c + a * u + b * v)).collect();
        for (i, v) in vals {
            self.px[i] += v;
        }
    }

    fn grating(&mut self, rng: &mut ChaCha8Rng, amp: f64) {
        let f = rng.random_range(1.0..9.0) * std::f64::consts::TAU;
        let th = rng.random_range(0.0..std::f64::consts::PI);
        let ph = rng.random_range(0.0..std::f64::consts::TAU);
        let a = rng.random_range(0.3..1.0) * amp;
        let (c, s) = (th.cos(), th.sin());
        let vals: Vec<_> = self.coords().map(|(i, u, v)| (i, a * (f * (c * u + s * v) + ph).sin())).collect();
        for (i, v) in vals {
            self.px[i] += v;
        }
    }

    /// Soft-edged ellipse; returns its coverage in `[0, 1]` per pixel.
    fn ellipse(&mut self, rng: &mut ChaCha8Rng, level: f64) -> Vec<f64> {
        let (cu, cv) = (rng.random_range(0.15..0.85), rng.random_range(0.15..0.85));
        let (ru, rv) = (rng.random_range(0.08..0.3), rng.random_range(0.08..0.3));
        let th = rng.random_range(0.0..std::f64::consts::PI);
        let (c, s) = (th.cos(), th.sin());
        let soft = 1.5 / self.size as f64;
        let cover: Vec<f64> = self
            .coords()
            .map(|(_, u, v)| {
                let (du, dv) = (u - cu, v - cv);
                let (a, b) = ((c * du + s * dv) / ru, (-s * du + c * dv) / rv);
                let d = ((a * a + b * b).sqrt() - 1.0) * ru.min(rv);
                (0.5 - d / soft).clamp(0.0, 1.0)
            })
            .collect();
        for (p, &k) in self.px.iter_mut().zip(&cover) {
            *p = *p * (1.0 - k) + level * k;
        }
        cover
    }

    fn rectangle(&mut self, rng: &mut ChaCha8Rng, level: f64) {
        let (u0, v0) = (rng.random_range(0.0..0.7), rng.random_range(0.0..0.7));
        let (du, dv) = (rng.random_range(0.1..0.4), rng.random_range(0.1..0.4));
        let hits: Vec<usize> = self
            .coords()
            .filter(|&(_, u, v)| u >= u0 && u < u0 + du && v >= v0 && v < v0 + dv)
            .map(|(i, ..)| i)
            .collect();
        for i in hits {
            self.px[i] = level;
        }
    }

    fn noise(&mut self, rng: &mut ChaCha8Rng, sigma: f64) {
        let d = Normal::new(0.0, sigma).unwrap();
        for p in self.px.iter_mut() {
            *p += d.sample(rng);
        }
    }

    fn box_blur(&mut self) {
        let s = self.size;
        let src = self.px.clone();
        for m in 0..s {
            for n in 0..s {
                let (mut acc, mut cnt) = (0.0, 0.0);
                for a in m.saturating_sub(1)..(m + 2).min(s) {
                    for b in n.saturating_sub(1)..(n + 2).min(s) {
                        acc += src[a * s + b];
                        cnt += 1.0;
                    }
                }
                self.px[m * s + n] = acc / cnt;
            }
        }
    }

    fn to_image(&self) -> GrayImage {
        let s = self.size as u32;
        GrayImage::from_fn(s, s, |x, y| {
            let v = self.px[(y * s + x) as usize];
            Luma([v.round().clamp(0.0, 255.0) as u8])
        })
    }
}

/// Textured scene: gradient background, gratings, and a handful of shapes.
pub fn texture_image(size: usize, seed: u64, index: usize) -> GrayImage {
    let mut rng = image_rng(seed, index);
    let mut c = Canvas::new(size);
    c.gradient(&mut rng, 60.0);
    for _ in 0..rng.random_range(1..3) {
        c.grating(&mut rng, 25.0);
    }
    for _ in 0..rng.random_range(2..6) {
        let level = rng.random_range(10.0..245.0);
        if rng.random_bool(0.5) {
            c.ellipse(&mut rng, level);
        } else {
            c.rectangle(&mut rng, level);
        }
    }
    c.box_blur();
    c.noise(&mut rng, 2.0);
    c.to_image()
}

/// Scene plus mask: one to three bright, finely textured ellipses over a
/// darker, cluttered background.
pub fn segmentation_pair(size: usize, seed: u64, index: usize) -> (GrayImage, GrayImage) {
    let mut rng = image_rng(seed, index);
    let mut c = Canvas::new(size);
    c.gradient(&mut rng, 40.0);
    for p in c.px.iter_mut() {
        *p -= 40.0;
    }
    c.grating(&mut rng, 20.0);
    for _ in 0..rng.random_range(1..4) {
        let level = rng.random_range(20.0..130.0);
        c.rectangle(&mut rng, level);
    }
    let mut mask = vec![0.0f64; size * size];
    for _ in 0..rng.random_range(1..4) {
        let level = rng.random_range(150.0..235.0);
        let cover = c.ellipse(&mut rng, level);
        for (m, k) in mask.iter_mut().zip(cover) {
            *m = m.max(k);
        }
    }
    c.noise(&mut rng, 12.0);
    let s = size as u32;
    let mask_img = GrayImage::from_fn(s, s, |x, y| {
        Luma([if mask[(y * s + x) as usize] >= 0.5 { 255 } else { 0 }])
    });
    (c.to_image(), mask_img)
}

pub fn texture_corpus(n: usize, size: usize, seed: u64) -> Vec<GrayImage> {
    (0..n).map(|i| texture_image(size, seed, i)).collect()
}

pub fn segmentation_corpus(n: usize, size: usize, seed: u64) -> Vec<(GrayImage, GrayImage)> {
    (0..n).map(|i| segmentation_pair(size, seed, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variance(img: &GrayImage) -> f64 {
        let v: Vec<f64> = img.pixels().map(|p| p.0[0] as f64).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn textures_are_deterministic_and_varied() {
        let a = texture_corpus(5, 60, 1);
        assert_eq!(a, texture_corpus(5, 60, 1));
        assert_eq!(a[3], texture_image(60, 1, 3));
        assert_ne!(a[0], a[1]);
        for img in &a {
            assert_eq!(img.dimensions(), (60, 60));
            assert!(variance(img) > 50.0);
        }
    }

    #[test]
    fn segmentation_masks_are_binary_and_nonempty() {
        for (img, mask) in segmentation_corpus(6, 60, 2) {
            assert_eq!(img.dimensions(), mask.dimensions());
            let pos = mask.pixels().filter(|p| p.0[0] == 255).count();
            assert!(mask.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
            assert!(pos > 0 && pos < 3600);
        }
    }
}
