//! Frozen patch-embedding extractor, images, and crop features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::OrientedBox;
use crate::nn::Matrix;

/// RGB image with channel values in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::invalid(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        Self {
            height,
            width,
            pixels: vec![rgb; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        self.pixels[row * self.width + col] = rgb;
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centres at
    /// half-integers), clamped at the border.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = self.get(y0, x0)[c] * (1.0 - tx) + self.get(y0, x1)[c] * tx;
            let bottom = self.get(y1, x0)[c] * (1.0 - tx) + self.get(y1, x1)[c] * tx;
            *o = top * (1.0 - ty) + bottom * ty;
        }
        out
    }

    /// Resamples the axis-aligned region `[x0, x1] × [y0, y1]` to an
    /// `out_h × out_w` image.
    pub fn crop_resize(&self, region: [f64; 4], out_h: usize, out_w: usize) -> Image {
        let [x0, y0, x1, y1] = region;
        let mut pixels = Vec::with_capacity(out_h * out_w);
        for i in 0..out_h {
            let y = y0 + (i as f64 + 0.5) * (y1 - y0) / out_h as f64;
            for j in 0..out_w {
                let x = x0 + (j as f64 + 0.5) * (x1 - x0) / out_w as f64;
                pixels.push(self.sample(x, y));
            }
        }
        Image {
            height: out_h,
            width: out_w,
            pixels,
        }
    }
}

/// One strided patch-embedding scale.
#[derive(Debug, Clone, PartialEq)]
struct PatchScale {
    patch: usize,
    weight: Matrix,
}

/// Fixed random patch embeddings at two strides, `tanh(W·(patch − ½))`.
/// The weights never enter a parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBackbone {
    image_size: usize,
    dim: usize,
    scales: Vec<PatchScale>,
}

pub const PATCH_SIZES: [usize; 2] = [4, 8];

impl FrozenBackbone {
    pub fn new(image_size: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scales = Vec::with_capacity(PATCH_SIZES.len());
        for patch in PATCH_SIZES {
            if image_size == 0 || !image_size.is_multiple_of(patch) {
                return Err(Error::Config(format!(
                    "image size {image_size} is not a multiple of patch size {patch}"
                )));
            }
            let fan_in = patch * patch * 3;
            let bound = (3.0 / fan_in as f64).sqrt() * 2.0;
            let weight = Matrix::from_shape_fn((dim, fan_in), |_| rng.random_range(-bound..bound));
            scales.push(PatchScale { patch, weight });
        }
        Ok(Self {
            image_size,
            dim,
            scales,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Side length of each scale's token grid.
    pub fn grids(&self) -> Vec<usize> {
        self.scales.iter().map(|s| self.image_size / s.patch).collect()
    }

    pub fn num_tokens(&self) -> usize {
        self.grids().iter().map(|g| g * g).sum()
    }

    /// `K×C` tokens, scale by scale, row-major within a scale.
    pub fn forward(&self, image: &Image) -> Result<Matrix> {
        if image.height() != self.image_size || image.width() != self.image_size {
            return Err(Error::invalid(format!(
                "backbone expects {0}x{0} images, got {1}x{2}",
                self.image_size,
                image.height(),
                image.width()
            )));
        }
        let mut tokens = Matrix::zeros((self.num_tokens(), self.dim));
        let mut row = 0;
        for s in &self.scales {
            let grid = self.image_size / s.patch;
            let mut patch = vec![0.0; s.patch * s.patch * 3];
            for gy in 0..grid {
                for gx in 0..grid {
                    let mut k = 0;
                    for py in 0..s.patch {
                        for px in 0..s.patch {
                            let rgb = image.get(gy * s.patch + py, gx * s.patch + px);
                            for v in rgb {
                                patch[k] = v - 0.5;
                                k += 1;
                            }
                        }
                    }
                    for c in 0..self.dim {
                        let w = s.weight.row(c);
                        let acc: f64 = w.iter().zip(&patch).map(|(a, b)| a * b).sum();
                        tokens[[row, c]] = acc.tanh();
                    }
                    row += 1;
                }
            }
        }
        Ok(tokens)
    }

    /// Raw crop feature of a box: the enclosing axis-aligned region is
    /// resized to the backbone input size, embedded, and each scale is
    /// average-pooled; the pooled vectors are concatenated (`2C` values).
    pub fn embed_crop(&self, image: &Image, bbox: &OrientedBox) -> Result<Vec<f64>> {
        let [x0, y0, x1, y1] = bbox.aabb();
        let region = [
            x0.max(0.0),
            y0.max(0.0),
            x1.min(image.width() as f64),
            y1.min(image.height() as f64),
        ];
        if !(region[2] > region[0] && region[3] > region[1]) {
            return Err(Error::DegenerateInput("box lies outside the image".into()));
        }
        let crop = image.crop_resize(region, self.image_size, self.image_size);
        let tokens = self.forward(&crop)?;
        let mut out = Vec::with_capacity(self.dim * self.scales.len());
        let mut start = 0;
        for g in self.grids() {
            let n = g * g;
            for c in 0..self.dim {
                let mut acc = 0.0;
                for r in start..start + n {
                    acc += tokens[[r, c]];
                }
                out.push(acc / n as f64);
            }
            start += n;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(size: usize) -> Image {
        let mut img = Image::filled(size, size, [0.0; 3]);
        for r in 0..size {
            for c in 0..size {
                img.set(r, c, [r as f64 / size as f64, c as f64 / size as f64, 0.5]);
            }
        }
        img
    }

    #[test]
    fn token_count_and_repeatability() {
        let b = FrozenBackbone::new(32, 16, 7).unwrap();
        assert_eq!(b.num_tokens(), 8 * 8 + 4 * 4);
        let img = gradient_image(32);
        let t1 = b.forward(&img).unwrap();
        let t2 = b.forward(&img).unwrap();
        assert_eq!(t1.dim(), (80, 16));
        assert_eq!(t1, t2);
    }

    #[test]
    fn wrong_size_rejected() {
        let b = FrozenBackbone::new(32, 16, 7).unwrap();
        assert!(matches!(b.forward(&gradient_image(16)), Err(Error::InvalidArgument(_))));
        assert!(FrozenBackbone::new(30, 16, 7).is_err());
    }

    #[test]
    fn crop_feature_width() {
        let b = FrozenBackbone::new(16, 8, 1).unwrap();
        let img = gradient_image(16);
        let bx = OrientedBox::new(8.0, 8.0, 6.0, 3.0, 0.4).unwrap();
        let f = b.embed_crop(&img, &bx).unwrap();
        assert_eq!(f.len(), 16);
        assert!(f.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    #[test]
    fn bilinear_sampling_reproduces_pixels() {
        let img = gradient_image(8);
        assert_eq!(img.sample(3.5, 2.5), img.get(2, 3));
        let same = img.crop_resize([0.0, 0.0, 8.0, 8.0], 8, 8);
        assert_eq!(same, img);
    }
}
