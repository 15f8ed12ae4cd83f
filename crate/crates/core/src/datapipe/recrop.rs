use image::{imageops, RgbImage};

use crate::error::Error;

use super::clients::{with_retries, Person, PoseClient};
use super::filters::DropReason;

pub const DEFAULT_MARGIN: f64 = 0.1;
/// Keypoints below this confidence are ignored.
pub const MIN_CONFIDENCE: f32 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub enum Recrop {
    /// The padded box covers the whole frame.
    Unchanged,
    Cropped(RgbImage),
}

/// `(x0, y0, x1, y1)` half-open pixel box around confident keypoints, grown by
/// `margin` of its size on every side and clamped to the image.
pub fn keypoint_box(person: &Person, width: u32, height: u32, margin: f64) -> Option<(u32, u32, u32, u32)> {
    let pts: Vec<(f64, f64)> = person
        .keypoints
        .iter()
        .filter(|k| k[2] >= MIN_CONFIDENCE && k[0].is_finite() && k[1].is_finite())
        .map(|k| (k[0] as f64, k[1] as f64))
        .collect();
    if pts.is_empty() {
        return None;
    }
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let (mx, my) = ((x1 - x0) * margin, (y1 - y0) * margin);
    let clamp = |v: f64, hi: u32| v.max(0.0).min(hi as f64);
    let bx0 = clamp((x0 - mx).floor(), width) as u32;
    let by0 = clamp((y0 - my).floor(), height) as u32;
    let bx1 = clamp((x1 + mx).floor() + 1.0, width) as u32;
    let by1 = clamp((y1 + my).floor() + 1.0, height) as u32;
    (bx1 > bx0 && by1 > by0).then_some((bx0, by0, bx1, by1))
}

/// Crops to the single detected person; zero or several persons drop the image.
pub fn recrop(image: &RgbImage, client: &dyn PoseClient, margin: f64, retries: u32) -> Result<Recrop, DropReason> {
    let persons = match with_retries(retries, || client.detect(image)) {
        Ok(p) => p,
        Err(Error::Timeout { attempts }) => {
            log::warn!("pose client timed out after {attempts} attempts");
            return Err(DropReason::ClientTimeout);
        }
        Err(e) => {
            log::error!("pose client failed: {e}");
            return Err(DropReason::ClientError);
        }
    };
    let person = match persons.as_slice() {
        [] => return Err(DropReason::NoPerson),
        [one] => one,
        _ => return Err(DropReason::MultiplePersons),
    };
    let (w, h) = image.dimensions();
    let (x0, y0, x1, y1) = keypoint_box(person, w, h, margin).ok_or(DropReason::NoPerson)?;
    if (x0, y0, x1, y1) == (0, 0, w, h) {
        return Ok(Recrop::Unchanged);
    }
    Ok(Recrop::Cropped(imageops::crop_imm(image, x0, y0, x1 - x0, y1 - y0).to_image()))
}
