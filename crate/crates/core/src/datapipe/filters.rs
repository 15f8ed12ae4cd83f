use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub const MIN_FILE_BYTES: u64 = 24_000;
/// Mean channel-difference variance below which an image counts as grayscale.
pub const GRAYSCALE_THRESHOLD: f64 = 1e-3;

/// The rule that removed a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Unreadable,
    FileSize,
    CorruptImage,
    Grayscale,
    NoPerson,
    MultiplePersons,
    ClientTimeout,
    ClientError,
}

impl DropReason {
    pub const ALL: [DropReason; 8] = [
        DropReason::Unreadable,
        DropReason::FileSize,
        DropReason::CorruptImage,
        DropReason::Grayscale,
        DropReason::NoPerson,
        DropReason::MultiplePersons,
        DropReason::ClientTimeout,
        DropReason::ClientError,
    ];
}

/// Keeps files of at least `threshold` bytes.
pub fn filter_filesize(path: &Path, threshold: u64) -> Result<(), DropReason> {
    match std::fs::metadata(path) {
        Ok(m) if m.len() < threshold => Err(DropReason::FileSize),
        Ok(_) => Ok(()),
        Err(e) => {
            log::error!("cannot read {}: {e}", path.display());
            Err(DropReason::Unreadable)
        }
    }
}

/// Mean over pixels of the variance of (r−g, g−b, b−r), channels scaled to [0, 1].
pub fn grayscale_statistic(image: &RgbImage) -> f64 {
    let n = (image.width() as usize * image.height() as usize).max(1);
    let total: f64 = image
        .pixels()
        .map(|p| {
            let [r, g, b] = p.0.map(|c| c as f64 / 255.0);
            let d = [r - g, g - b, b - r];
            let mean = (d[0] + d[1] + d[2]) / 3.0;
            d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 3.0
        })
        .sum();
    total / n as f64
}

/// Drops images whose channel-difference statistic is below `threshold`.
pub fn filter_grayscale(image: &image::DynamicImage, threshold: f64) -> Result<(), DropReason> {
    use image::ColorType::*;
    match image.color() {
        Rgb8 | Rgba8 | Rgb16 | Rgba16 | Rgb32F | Rgba32F => {}
        other => {
            log::info!("dropping {other:?} image: not 3-channel");
            return Err(DropReason::Grayscale);
        }
    }
    if grayscale_statistic(&image.to_rgb8()) < threshold {
        Err(DropReason::Grayscale)
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{imageops, DynamicImage, Rgb};

    #[test]
    fn gray_is_zero_and_pure_red_is_two_thirds() {
        let gray = RgbImage::from_fn(8, 4, |x, y| {
            let v = (x * 30 + y) as u8;
            Rgb([v, v, v])
        });
        assert_eq!(grayscale_statistic(&gray), 0.0);
        assert!(filter_grayscale(&DynamicImage::ImageRgb8(gray), GRAYSCALE_THRESHOLD).is_err());

        let red = RgbImage::from_pixel(4, 4, Rgb([255, 0, 0]));
        assert!((grayscale_statistic(&red) - 2.0 / 3.0).abs() < 1e-12);
        assert!(filter_grayscale(&DynamicImage::ImageRgb8(red), GRAYSCALE_THRESHOLD).is_ok());
    }

    #[test]
    fn statistic_is_flip_invariant() {
        let img = RgbImage::from_fn(9, 5, |x, y| Rgb([(x * 20) as u8, (y * 40) as u8, ((x + y) * 9) as u8]));
        let flipped = imageops::flip_horizontal(&img);
        assert!((grayscale_statistic(&img) - grayscale_statistic(&flipped)).abs() < 1e-12);
    }

    #[test]
    fn single_channel_input_is_dropped() {
        let luma = DynamicImage::ImageLuma8(image::GrayImage::new(4, 4));
        assert_eq!(filter_grayscale(&luma, 0.0), Err(DropReason::Grayscale));
    }

    #[test]
    fn filesize_boundary() {
        let dir = tempfile::tempdir().unwrap();
        let small = dir.path().join("s");
        let exact = dir.path().join("e");
        std::fs::write(&small, vec![0u8; 10_000]).unwrap();
        std::fs::write(&exact, vec![0u8; 24_000]).unwrap();
        assert_eq!(filter_filesize(&small, MIN_FILE_BYTES), Err(DropReason::FileSize));
        assert_eq!(filter_filesize(&exact, MIN_FILE_BYTES), Ok(()));
        assert_eq!(filter_filesize(&small, 0), Ok(()));
        assert_eq!(filter_filesize(&dir.path().join("missing"), 0), Err(DropReason::Unreadable));
    }
}
