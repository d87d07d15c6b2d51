//! Minimal 2D image type and separable Gaussian filtering.

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel count does not match dims");
        Image2D { width, height, pixels }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image2D { width, height, pixels: vec![value; width * height] }
    }

    pub fn from_f32(width: usize, height: usize, data: &[f32]) -> Self {
        Image2D::new(width, height, data.iter().map(|&v| v as f64).collect())
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn same_dims(&self, other: &Image2D) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn max(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Gaussian blur with edge replication. `sigma <= 0` returns a copy.
pub fn gaussian_blur(img: &Image2D, sigma: f64) -> Image2D {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = k.len() / 2;
    let (w, h) = (img.width, img.height);
    let mut tmp = vec![0.0; img.pixels.len()];
    let mut padded = vec![0.0; w + 2 * r];
    for y in 0..h {
        let row = &img.pixels[y * w..(y + 1) * w];
        for (i, p) in padded.iter_mut().enumerate() {
            *p = row[i.saturating_sub(r).min(w - 1)];
        }
        for (x, t) in tmp[y * w..(y + 1) * w].iter_mut().enumerate() {
            *t = k.iter().zip(&padded[x..]).map(|(kv, v)| kv * v).sum();
        }
    }
    let mut out = vec![0.0; img.pixels.len()];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (i, kv) in k.iter().enumerate() {
            let yy = (y + i).saturating_sub(r).min(h - 1);
            let src = &tmp[yy * w..(yy + 1) * w];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += kv * s);
        }
    }
    Image2D::new(img.width, img.height, out)
}

/// Difference of Gaussians, `G(small) - G(large)`; bright blobs respond positively.
pub fn difference_of_gaussians(img: &Image2D, sigma_small: f64, sigma_large: f64) -> Image2D {
    let a = gaussian_blur(img, sigma_small);
    let b = gaussian_blur(img, sigma_large);
    let pixels = a.pixels.iter().zip(&b.pixels).map(|(p, q)| p - q).collect();
    Image2D::new(img.width, img.height, pixels)
}
