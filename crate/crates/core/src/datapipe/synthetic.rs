//! Toy pedestrian images whose captions and pixels both encode the attributes.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::attributes::{AttributeSpace, AttributeVector, Lexicon};
use crate::error::{Error, Result};
use crate::numcore::{site, RngStream};

use super::manifest::{Manifest, ManifestRecord};

const UPPER: [(&str, [u8; 3]); 8] = [
    ("black", [20, 20, 20]),
    ("white", [235, 235, 235]),
    ("red", [200, 30, 30]),
    ("purple", [120, 40, 160]),
    ("yellow", [230, 210, 40]),
    ("blue", [30, 60, 200]),
    ("green", [40, 160, 60]),
    ("gray", [128, 128, 128]),
];

const LOWER: [(&str, [u8; 3]); 9] = [
    ("black", [20, 20, 20]),
    ("white", [235, 235, 235]),
    ("purple", [120, 40, 160]),
    ("yellow", [230, 210, 40]),
    ("blue", [30, 60, 200]),
    ("green", [40, 160, 60]),
    ("pink", [240, 140, 180]),
    ("gray", [128, 128, 128]),
    ("brown", [120, 70, 30]),
];

const SKIN: [u8; 3] = [224, 172, 140];
const HAIR: [u8; 3] = [60, 40, 25];
const HAT: [u8; 3] = [150, 20, 60];
const PACK: [u8; 3] = [90, 60, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lower {
    Pants,
    Shorts,
    Skirt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Person {
    male: bool,
    young: bool,
    long_hair: bool,
    hat: bool,
    backpack: bool,
    short_sleeves: bool,
    upper: usize,
    lower_color: usize,
    lower: Lower,
}

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub image: RgbImage,
    pub caption: String,
    pub person_id: String,
    pub attributes: AttributeVector,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub pairs: usize,
    pub seed: u64,
    pub height: u32,
    pub width: u32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            pairs: 32,
            seed: 0,
            height: 384,
            width: 128,
        }
    }
}

fn draw_person(rng: &mut RngStream) -> Person {
    let lower = match rng.below(3) {
        0 => Lower::Pants,
        1 => Lower::Shorts,
        _ => Lower::Skirt,
    };
    Person {
        male: rng.coin(0.5),
        young: rng.coin(0.3),
        long_hair: rng.coin(0.5),
        hat: rng.coin(0.3),
        backpack: rng.coin(0.3),
        short_sleeves: rng.coin(0.5),
        upper: rng.below(UPPER.len()),
        lower_color: rng.below(LOWER.len()),
        lower,
    }
}

fn caption(p: &Person) -> String {
    let mut s = String::from("a ");
    if p.young {
        s.push_str("young ");
    }
    s.push_str(if p.male { "man" } else { "woman" });
    s.push_str(if p.long_hair { " with long hair" } else { " with short hair" });
    if p.hat {
        s.push_str(" and a hat");
    }
    s.push_str(&format!(" wears a {} shirt", UPPER[p.upper].0));
    s.push_str(if p.short_sleeves { " with short sleeves" } else { " with long sleeves" });
    let garment = match p.lower {
        Lower::Pants => "pants",
        Lower::Shorts => "shorts",
        Lower::Skirt => "skirt",
    };
    s.push_str(&format!(" and {} {garment}", LOWER[p.lower_color].0));
    if p.backpack {
        s.push_str(", carrying a backpack");
    }
    s.push('.');
    s
}

fn fill(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, color: [u8; 3], rng: &mut RngStream) {
    let (w, h) = img.dimensions();
    for y in y0.min(h)..y1.min(h) {
        for x in x0.min(w)..x1.min(w) {
            let jitter = |c: u8, r: &mut RngStream| (c as i32 + r.below(17) as i32 - 8).clamp(0, 255) as u8;
            let px = [jitter(color[0], rng), jitter(color[1], rng), jitter(color[2], rng)];
            img.put_pixel(x, y, Rgb(px));
        }
    }
}

fn render(p: &Person, width: u32, height: u32, rng: &mut RngStream) -> RgbImage {
    // Layout on a 128×384 canvas, scaled to the requested size.
    let sx = |x: u32| x * width / 128;
    let sy = |y: u32| y * height / 384;
    let mut img = RgbImage::new(width, height);
    let base = [90 + rng.below(60) as u8, 110 + rng.below(60) as u8, 90 + rng.below(60) as u8];
    for px in img.pixels_mut() {
        let n = rng.below(41) as i32 - 20;
        *px = Rgb(base.map(|c| (c as i32 + n + rng.below(11) as i32 - 5).clamp(0, 255) as u8));
    }
    let (tx0, tx1) = if p.male { (20, 108) } else { (32, 96) };
    let top = if p.young { 40 } else { 8 };
    if p.hat {
        fill(&mut img, sx(40), sy(top), sx(88), sy(top + 24), HAT, rng);
    }
    fill(&mut img, sx(44), sy(top + 24), sx(84), sy(top + 72), SKIN, rng);
    fill(&mut img, sx(44), sy(top + 24), sx(84), sy(top + 32), HAIR, rng);
    if p.long_hair {
        fill(&mut img, sx(36), sy(top + 24), sx(44), sy(top + 120), HAIR, rng);
        fill(&mut img, sx(84), sy(top + 24), sx(92), sy(top + 120), HAIR, rng);
    }
    let upper = UPPER[p.upper].1;
    let torso = (top + 80, top + 180);
    fill(&mut img, sx(tx0), sy(torso.0), sx(tx1), sy(torso.1), upper, rng);
    let arm = if p.short_sleeves { SKIN } else { upper };
    fill(&mut img, sx(tx0 - 14), sy(torso.0 + 30), sx(tx0), sy(torso.1), arm, rng);
    fill(&mut img, sx(tx1), sy(torso.0 + 30), sx(tx1 + 14), sy(torso.1), arm, rng);
    if p.backpack {
        fill(&mut img, sx(tx1 - 6), sy(torso.0 + 10), sx(tx1 + 14), sy(torso.0 + 70), PACK, rng);
    }
    let lower = LOWER[p.lower_color].1;
    let bottom = 376;
    match p.lower {
        Lower::Pants => {
            fill(&mut img, sx(tx0 + 8), sy(torso.1), sx(62), sy(bottom), lower, rng);
            fill(&mut img, sx(66), sy(torso.1), sx(tx1 - 8), sy(bottom), lower, rng);
        }
        Lower::Shorts => {
            let knee = torso.1 + (bottom - torso.1) / 3;
            fill(&mut img, sx(tx0 + 8), sy(torso.1), sx(62), sy(knee), lower, rng);
            fill(&mut img, sx(66), sy(torso.1), sx(tx1 - 8), sy(knee), lower, rng);
            fill(&mut img, sx(tx0 + 12), sy(knee), sx(58), sy(bottom), SKIN, rng);
            fill(&mut img, sx(70), sy(knee), sx(tx1 - 12), sy(bottom), SKIN, rng);
        }
        Lower::Skirt => {
            let hem = torso.1 + (bottom - torso.1) / 2;
            fill(&mut img, sx(tx0 - 4), sy(torso.1), sx(tx1 + 4), sy(hem), lower, rng);
            fill(&mut img, sx(46), sy(hem), sx(58), sy(bottom), SKIN, rng);
            fill(&mut img, sx(70), sy(hem), sx(82), sy(bottom), SKIN, rng);
        }
    }
    img
}

/// Pairs with distinct captions; attributes are the lexicon annotation of each caption.
pub fn generate(cfg: &SyntheticConfig, space: &AttributeSpace, lexicon: &Lexicon) -> Result<Vec<SyntheticPair>> {
    if cfg.width == 0 || cfg.height == 0 {
        return Err(Error::config("synthetic image size must be positive"));
    }
    let mut people_rng = RngStream::for_site(cfg.seed, site::SYNTHETIC, 0);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(cfg.pairs);
    let mut tries = 0;
    while out.len() < cfg.pairs {
        tries += 1;
        if tries > 1000 * (cfg.pairs + 1) {
            return Err(Error::config(format!("cannot draw {} distinct synthetic people", cfg.pairs)));
        }
        let person = draw_person(&mut people_rng);
        let text = caption(&person);
        if !seen.insert(text.clone()) {
            continue;
        }
        let i = out.len();
        let mut pixel_rng = RngStream::for_site(cfg.seed, site::SYNTHETIC, 1 + i as u64);
        let image = render(&person, cfg.width, cfg.height, &mut pixel_rng);
        let attributes = lexicon.annotate(&text, space).attributes;
        out.push(SyntheticPair {
            image,
            caption: text,
            person_id: format!("p{i:04}"),
            attributes,
        });
    }
    Ok(out)
}

/// Writes `images/NNNN.png` and `manifest.jsonl` under `dir`.
pub fn write_dataset(dir: &Path, cfg: &SyntheticConfig) -> Result<Manifest> {
    let space = AttributeSpace::default();
    let lexicon = Lexicon::default_for(&space);
    let pairs = generate(cfg, &space, &lexicon)?;
    fs::create_dir_all(dir.join("images"))?;
    let mut records = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let rel = format!("images/{i:04}.png");
        p.image.save(dir.join(&rel))?;
        records.push(ManifestRecord {
            image: rel,
            caption: p.caption.clone(),
            person_id: Some(p.person_id.clone()),
            attributes: Some(p.attributes.clone()),
            provenance: Some("synthetic".into()),
        });
    }
    let manifest = Manifest::new(dir, records);
    manifest.save(dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
