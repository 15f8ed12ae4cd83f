//! Pose-keypoint and caption-calibration services.
//!
//! Wire format: the image is POSTed as PNG. The pose endpoint answers
//! `{"persons": [{"keypoints": [[x, y, confidence], ...]}, ...]}` in pixel
//! coordinates; the caption endpoint receives the caption in the
//! `x-caption` header and answers `{"caption": "..."}`.

use std::io::Cursor;
use std::sync::atomic::{AtomicU32, Ordering};
use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POSE_URL_ENV: &str = "APTM_POSE_URL";
pub const CAPTION_URL_ENV: &str = "APTM_CAPTION_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Person {
    /// `[x, y, confidence]` per keypoint.
    pub keypoints: Vec<[f32; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PoseResponse {
    persons: Vec<Person>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CaptionResponse {
    caption: String,
}

pub trait PoseClient: Sync {
    fn detect(&self, image: &RgbImage) -> Result<Vec<Person>>;
}

pub trait CaptionClient: Sync {
    fn calibrate(&self, image: &RgbImage, caption: &str) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub pose_url: Option<String>,
    pub caption_url: Option<String>,
    pub timeout_ms: u64,
    /// Extra attempts after a timeout.
    pub retries: u32,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            pose_url: None,
            caption_url: None,
            timeout_ms: 10_000,
            retries: 2,
        }
    }
}

impl ClientConfig {
    /// Environment variables take precedence over configured endpoints.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var(POSE_URL_ENV) {
            self.pose_url = Some(url);
        }
        if let Ok(url) = std::env::var(CAPTION_URL_ENV) {
            self.caption_url = Some(url);
        }
        self
    }
}

/// Calls `f` until it succeeds or the retry budget is spent; only timeouts are retried.
pub fn with_retries<R>(retries: u32, mut f: impl FnMut() -> Result<R>) -> Result<R> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match f() {
            Err(Error::Timeout { .. }) if attempts <= retries => {
                log::warn!("client timed out (attempt {attempts}); retrying");
            }
            Err(Error::Timeout { .. }) => return Err(Error::Timeout { attempts }),
            other => return other,
        }
    }
}

/// Canned pose responses.
#[derive(Debug)]
pub enum StubPoseClient {
    /// One person whose keypoints span the whole frame.
    FullFrame,
    /// The same persons for every image, in pixel coordinates.
    Fixed(Vec<Person>),
    /// Times out this many times, then behaves like `FullFrame`.
    TimeoutTimes(AtomicU32),
}

impl StubPoseClient {
    pub fn timeouts(n: u32) -> Self {
        StubPoseClient::TimeoutTimes(AtomicU32::new(n))
    }
}

fn full_frame(image: &RgbImage) -> Vec<Person> {
    let (w, h) = (image.width() as f32 - 1.0, image.height() as f32 - 1.0);
    vec![Person {
        keypoints: vec![[0.0, 0.0, 1.0], [w, h, 1.0]],
    }]
}

impl PoseClient for StubPoseClient {
    fn detect(&self, image: &RgbImage) -> Result<Vec<Person>> {
        match self {
            StubPoseClient::FullFrame => Ok(full_frame(image)),
            StubPoseClient::Fixed(p) => Ok(p.clone()),
            StubPoseClient::TimeoutTimes(left) => {
                let prev = left.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1));
                match prev {
                    Ok(_) => Err(Error::Timeout { attempts: 1 }),
                    Err(_) => Ok(full_frame(image)),
                }
            }
        }
    }
}

/// Returns captions unchanged.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoCaptionClient;

impl CaptionClient for EchoCaptionClient {
    fn calibrate(&self, _image: &RgbImage, caption: &str) -> Result<String> {
        Ok(caption.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct HttpPoseClient {
    agent: ureq::Agent,
    url: String,
}

#[derive(Debug, Clone)]
pub struct HttpCaptionClient {
    agent: ureq::Agent,
    url: String,
}

fn agent(timeout_ms: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(timeout_ms)))
        .build()
        .into()
}

fn png_bytes(image: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    image.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

fn map_ureq(e: ureq::Error) -> Error {
    match e {
        ureq::Error::Timeout(_) => Error::Timeout { attempts: 1 },
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => Error::Timeout { attempts: 1 },
        other => Error::Client(other.to_string()),
    }
}

impl HttpPoseClient {
    pub fn new(url: impl Into<String>, timeout_ms: u64) -> Self {
        Self {
            agent: agent(timeout_ms),
            url: url.into(),
        }
    }

    pub fn from_config(cfg: &ClientConfig) -> Option<Self> {
        cfg.pose_url.as_ref().map(|u| Self::new(u.clone(), cfg.timeout_ms))
    }
}

impl PoseClient for HttpPoseClient {
    fn detect(&self, image: &RgbImage) -> Result<Vec<Person>> {
        let body = png_bytes(image)?;
        let text = self
            .agent
            .post(&self.url)
            .header("content-type", "image/png")
            .send(&body[..])
            .map_err(map_ureq)?
            .body_mut()
            .read_to_string()
            .map_err(map_ureq)?;
        let resp: PoseResponse = serde_json::from_str(&text)?;
        Ok(resp.persons)
    }
}

impl HttpCaptionClient {
    pub fn new(url: impl Into<String>, timeout_ms: u64) -> Self {
        Self {
            agent: agent(timeout_ms),
            url: url.into(),
        }
    }

    pub fn from_config(cfg: &ClientConfig) -> Option<Self> {
        cfg.caption_url.as_ref().map(|u| Self::new(u.clone(), cfg.timeout_ms))
    }
}

impl CaptionClient for HttpCaptionClient {
    fn calibrate(&self, image: &RgbImage, caption: &str) -> Result<String> {
        let body = png_bytes(image)?;
        let text = self
            .agent
            .post(&self.url)
            .header("content-type", "image/png")
            .header("x-caption", caption)
            .send(&body[..])
            .map_err(map_ureq)?
            .body_mut()
            .read_to_string()
            .map_err(map_ureq)?;
        let resp: CaptionResponse = serde_json::from_str(&text)?;
        Ok(resp.caption)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retries_only_timeouts() {
        let stub = StubPoseClient::timeouts(2);
        let img = RgbImage::new(4, 8);
        assert!(with_retries(2, || stub.detect(&img)).is_ok());

        let stub = StubPoseClient::timeouts(5);
        match with_retries(2, || stub.detect(&img)) {
            Err(Error::Timeout { attempts }) => assert_eq!(attempts, 3),
            other => panic!("{other:?}"),
        }

        let mut calls = 0;
        let r: Result<()> = with_retries(3, || {
            calls += 1;
            Err(Error::Client("refused".into()))
        });
        assert!(r.is_err());
        assert_eq!(calls, 1);
    }

    #[test]
    fn echo_returns_input() {
        let img = RgbImage::new(2, 2);
        assert_eq!(EchoCaptionClient.calibrate(&img, "a man").unwrap(), "a man");
    }

    #[test]
    fn unreachable_endpoint_is_a_client_error() {
        let c = HttpPoseClient::new("http://127.0.0.1:9/pose", 500);
        let err = c.detect(&RgbImage::new(2, 2)).unwrap_err();
        assert!(matches!(err, Error::Client(_) | Error::Timeout { .. }), "{err}");
    }
}
