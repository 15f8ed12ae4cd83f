//! Pretrains on 32 synthetic pairs with all six objectives, then evaluates
//! retrieval and attribute recognition on the same pairs.
//!
//! `cargo run --release --example pretrain_overfit [OUT_DIR]`

use std::path::PathBuf;
use std::time::Instant;

use aptm::cli::{evaluate, read_loss_log, recognize, train, RunArtifacts, RunConfig, LOSS_LOG};
use aptm::datapipe::synthetic::{write_dataset, SyntheticConfig};
use aptm::datapipe::Manifest;
use aptm::objectives::Mode;
use aptm::Result;

fn main() -> Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("aptm_overfit_example"));
    let data = dir.join("data");
    let run = dir.join("run");
    let manifest_path = data.join("manifest.jsonl");
    write_dataset(&data, &SyntheticConfig::default())?;

    let start = Instant::now();
    let cfg = RunConfig::from_toml_str(include_str!("../configs/overfit.toml"))?;
    let summary = train(Mode::Pretrain, cfg, &manifest_path, &run, None, false)?;
    let log = read_loss_log(&run.join(LOSS_LOG))?;
    println!("trained {} steps in {:.0}s", summary.steps, start.elapsed().as_secs_f64());
    for entry in log.iter().step_by(25).chain(log.last()) {
        let l = &entry.losses;
        println!(
            "step {:>3}  total {:.3}  itc {:.3} itm {:.3} mlm {:.3} iac {:.3} iam {:.3} mam {:.3}",
            entry.step, l.total, l.itc, l.itm, l.mlm, l.iac, l.iam, l.mam
        );
    }

    let artifacts = RunArtifacts::load(&run, None)?;
    let manifest = Manifest::load(&manifest_path)?;
    let (metrics, _) = evaluate(&artifacts, &manifest, &run)?;
    println!(
        "retrieval: R@1 {:.3}  R@5 {:.3}  R@10 {:.3}  mAP {:.3}",
        metrics.r1, metrics.r5, metrics.r10, metrics.map
    );
    let (attr, predictions, labels) = recognize(&artifacts, &manifest, &run)?;
    let (known, right) = predictions
        .iter()
        .zip(&labels)
        .flat_map(|(p, l)| l.known().map(move |(a, y)| p.get(a) == Some(y)))
        .fold((0, 0), |(k, r), ok| (k + 1, r + usize::from(ok)));
    println!("attributes: mA {:.3}  {right}/{known} known labels recovered", attr.ma);
    println!("reports in {}", run.display());
    Ok(())
}
