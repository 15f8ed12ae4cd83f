use std::path::Path;

use image::imageops::{self, FilterType};
use image::RgbImage;

use crate::attributes::Vocab;
use crate::error::Result;
use crate::numcore::{RngStream, Scalar, Tensor};

pub const INPUT_HEIGHT: usize = 384;
pub const INPUT_WIDTH: usize = 128;
pub const NORM_MEAN: f64 = 0.5;
pub const NORM_STD: f64 = 0.5;
pub const FLIP_PROB: f64 = 0.5;

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

/// Bilinear resize to `height×width`, then `(x − 0.5) / 0.5` per channel, as `[3×H×W]`.
pub fn image_to_tensor<T: Scalar>(image: &RgbImage, height: usize, width: usize) -> Tensor<T> {
    let resized = if image.dimensions() == (width as u32, height as u32) {
        image.clone()
    } else {
        imageops::resize(image, width as u32, height as u32, FilterType::Triangle)
    };
    let plane = height * width;
    let mut data = vec![T::zero(); 3 * plane];
    for (i, px) in resized.pixels().enumerate() {
        for c in 0..3 {
            let v = px.0[c] as f64 / 255.0;
            data[c * plane + i] = T::from_f64_lossy((v - NORM_MEAN) / NORM_STD);
        }
    }
    Tensor::new(vec![3, height, width], data).expect("shape matches data")
}

/// Mirrors a `[3×H×W]` tensor left to right.
pub fn hflip<T: Scalar>(pixels: &Tensor<T>) -> Tensor<T> {
    let s = pixels.shape();
    let (h, w) = (s[1], s[2]);
    let mut out = pixels.clone();
    let src = pixels.data();
    let dst = out.data_mut();
    for c in 0..s[0] {
        for y in 0..h {
            let row = c * h * w + y * w;
            for x in 0..w {
                dst[row + x] = src[row + w - 1 - x];
            }
        }
    }
    out
}

/// Model-ready pixels and tokens. In training mode the image is flipped with
/// probability 0.5 using `rng`; evaluation mode is deterministic.
pub fn prepare_input<T: Scalar>(
    image: &RgbImage,
    caption: &str,
    vocab: &Vocab,
    size: (usize, usize),
    train: Option<&mut RngStream>,
) -> (Tensor<T>, Vec<u32>) {
    let mut pixels = image_to_tensor(image, size.0, size.1);
    if let Some(rng) = train {
        if rng.coin(FLIP_PROB) {
            pixels = hflip(&pixels);
        }
    }
    (pixels, vocab.tokenize(caption))
}
