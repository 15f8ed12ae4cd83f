//! Filters a directory of images: drops small, corrupt and grayscale files and
//! re-crops to the single detected person.
//!
//! Uses the pose service at `APTM_POSE_URL` when set, otherwise a stand-in that
//! sees one person spanning the frame.

use aptm::datapipe::{
    filter_manifest, write_filtered, ClientConfig, FilterConfig, HttpPoseClient, Manifest, ManifestRecord, PoseClient,
    Services, StubPoseClient,
};
use aptm::numcore::RngStream;
use aptm::Result;
use image::{Rgb, RgbImage};

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("aptm_filter_example");
    std::fs::create_dir_all(&dir)?;
    let mut rng = RngStream::new(1, 0);
    let mut noise = |gray: bool, w: u32, h: u32| {
        RgbImage::from_fn(w, h, |_, _| {
            let c = [rng.below(256) as u8, rng.below(256) as u8, rng.below(256) as u8];
            Rgb(if gray { [c[0]; 3] } else { c })
        })
    };
    noise(false, 128, 384).save(dir.join("color.png"))?;
    noise(true, 128, 384).save(dir.join("gray.png"))?;
    noise(false, 16, 48).save(dir.join("small.png"))?;
    let records = ["color.png", "gray.png", "small.png"]
        .iter()
        .map(|name| ManifestRecord {
            image: name.to_string(),
            caption: "a person walking.".into(),
            person_id: None,
            attributes: None,
            provenance: None,
        })
        .collect();
    let manifest = Manifest::new(&dir, records);

    let cfg = FilterConfig {
        clients: ClientConfig::default().with_env_overrides(),
        ..Default::default()
    };
    let http = HttpPoseClient::from_config(&cfg.clients);
    let stub = StubPoseClient::FullFrame;
    let pose: &dyn PoseClient = match &http {
        Some(c) => c,
        None => &stub,
    };
    let result = filter_manifest(&manifest, &cfg, Services { pose: Some(pose), caption: None });
    println!("{}", serde_json::to_string_pretty(&result.report)?);
    let out = write_filtered(&result, &manifest, &dir.join("filtered").join("manifest.jsonl"))?;
    for r in &out.records {
        println!("kept {}", r.image);
    }
    Ok(())
}
