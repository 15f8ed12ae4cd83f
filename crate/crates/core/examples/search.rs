//! Text-to-image search over a gallery: contrastive shortlist, then
//! cross-encoder reranking.
//!
//! `cargo run --release --example search [RUN_DIR MANIFEST]` searches a trained
//! run; without arguments a tiny model is first trained on a toy gallery.

use std::path::PathBuf;

use aptm::cli::{train, RunArtifacts, RunConfig};
use aptm::datapipe::synthetic::{write_dataset, SyntheticConfig};
use aptm::datapipe::{image_to_tensor, load_rgb, Manifest};
use aptm::objectives::Mode;
use aptm::retrieval::{Gallery, GalleryItem, Retriever};
use aptm::Result;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (run_dir, manifest_path) = match args.as_slice() {
        [run, manifest] => (PathBuf::from(run), PathBuf::from(manifest)),
        _ => {
            let dir = std::env::temp_dir().join("aptm_search_example");
            let data = dir.join("data");
            write_dataset(&data, &SyntheticConfig { pairs: 8, height: 96, width: 32, ..Default::default() })?;
            let cfg = RunConfig::from_toml_str(include_str!("../configs/tiny.toml"))?;
            let manifest = data.join("manifest.jsonl");
            train(Mode::Pretrain, cfg, &manifest, &dir.join("run"), None, false)?;
            (dir.join("run"), manifest)
        }
    };

    let run = RunArtifacts::load(&run_dir, None)?;
    let manifest = Manifest::load(&manifest_path)?;
    let (h, w) = (run.model.config().image.image_height, run.model.config().image.image_width);
    let pixels = manifest
        .records
        .iter()
        .map(|r| Ok(image_to_tensor(&load_rgb(&manifest.image_path(r))?, h, w)))
        .collect::<Result<Vec<_>>>()?;
    let items = manifest
        .records
        .iter()
        .map(|r| GalleryItem { image_id: r.image.clone(), person_id: r.person().to_string() })
        .collect();
    let gallery = Gallery::encode(&run.model, items, &pixels)?;
    let retriever = Retriever::new(&run.model, 4);
    let max_tokens = run.model.config().text.max_tokens;

    for record in manifest.records.iter().take(3) {
        let tokens = run.vocab.tokenize_to(&record.caption, max_tokens);
        let result = retriever.search(&record.caption, &tokens, &gallery)?;
        println!("\"{}\" (true image {})", record.caption, record.image);
        for item in result.items.iter().take(5) {
            let prob = item.probability.map_or("   -  ".to_string(), |p| format!("{p:.4}"));
            println!("  {:<20} sim {:+.4}  match {prob}", item.image_id, item.similarity);
        }
    }
    Ok(())
}
