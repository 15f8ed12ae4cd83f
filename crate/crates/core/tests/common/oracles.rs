//! Independent oracles shared by the retrieval, masking and acceptance tests.

use aptm::attributes::tokenizer::{CLS, MASK, NUM_SPECIAL, PAD};
use aptm::numcore::{Graph, RngStream, Tensor};
use aptm::objectives::mask_tokens;
use aptm::retrieval::{two_stage_order, GalleryItem, Relevance};

use super::Fixture;

pub const GALLERY: usize = 50;

pub fn gallery_fixture() -> (Fixture, Vec<GalleryItem>, Vec<Tensor<f64>>) {
    let fx = Fixture::new(1, 8, 21);
    let cfg = fx.model.config().image.clone();
    let mut rng = RngStream::new(21, 3);
    let n = 3 * cfg.image_height * cfg.image_width;
    let pixels: Vec<Tensor<f64>> = (0..GALLERY)
        .map(|_| {
            let data: Vec<f64> = (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect();
            Tensor::from_f64(&[3, cfg.image_height, cfg.image_width], &data).unwrap()
        })
        .collect();
    let items = (0..GALLERY)
        .map(|i| GalleryItem {
            image_id: format!("img{i:03}"),
            person_id: format!("p{}", i % 10),
        })
        .collect();
    (fx, items, pixels)
}

/// Scores every gallery image with its own graph and sorts by probability,
/// then similarity, then id.
pub fn exhaustive(fx: &Fixture, items: &[GalleryItem], pixels: &[Tensor<f64>], tokens: &[u32]) -> Vec<(String, f64, f64)> {
    let tokens = &tokens[..aptm::attributes::tokenizer::effective_len(tokens)];
    let mut scored: Vec<(String, f64, f64)> = items
        .iter()
        .zip(pixels)
        .map(|(it, px)| {
            let g = Graph::new();
            let p = fx.model.bind_frozen(&g);
            let v = fx.model.encode_image(&p, px).unwrap();
            let l = fx.model.encode_text(&p, tokens).unwrap();
            let fi = fx.model.project_image(&p, &v.row(0).unwrap()).unwrap().to_vec();
            let ft = fx.model.project_text(&p, &l.row(0).unwrap()).unwrap().to_vec();
            let sim: f64 = fi.iter().zip(&ft).map(|(a, b)| a * b).sum();
            let c = fx.model.encode_cross(&p, &v, &l, tokens).unwrap();
            let prob = fx.model.match_probability(&p, &c.row(0).unwrap()).unwrap().item();
            (it.image_id.clone(), sim, prob)
        })
        .collect();
    scored.sort_by(|a, b| b.2.total_cmp(&a.2).then(b.1.total_cmp(&a.1)).then(a.0.cmp(&b.0)));
    scored
}

/// Brute-force Recall@K: a query counts when any of its first K items is relevant.
pub fn recall_oracle(rankings: &[Relevance], k: usize) -> f64 {
    let mut hit = 0.0;
    let mut valid = 0.0;
    for r in rankings {
        if !r.iter().any(|&x| x) {
            continue;
        }
        valid += 1.0;
        if (0..k.min(r.len())).any(|i| r[i]) {
            hit += 1.0;
        }
    }
    hit / valid
}

/// Brute-force AP: precision recomputed from scratch at each relevant rank.
pub fn map_oracle(rankings: &[Relevance]) -> f64 {
    let mut total = 0.0;
    let mut valid = 0.0;
    for r in rankings {
        let relevant = r.iter().filter(|&&x| x).count();
        if relevant == 0 {
            continue;
        }
        valid += 1.0;
        let mut ap = 0.0;
        for rank in 1..=r.len() {
            if r[rank - 1] {
                let in_top = r[..rank].iter().filter(|&&x| x).count();
                ap += in_top as f64 / rank as f64;
            }
        }
        total += ap / relevant as f64;
    }
    total / valid
}

pub fn random_rankings(seed: u64, queries: usize) -> Vec<Relevance> {
    let mut rng = RngStream::new(seed, 0);
    (0..queries)
        .map(|q| {
            let n = 20 + rng.below(41);
            let ids: Vec<String> = (0..n).map(|i| format!("g{i:03}")).collect();
            let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let persons: Vec<usize> = (0..n).map(|_| rng.below(8)).collect();
            let sims: Vec<f64> = (0..n).map(|_| (rng.uniform() * 20.0).round() / 10.0 - 1.0).collect();
            let probs: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let k = 1 + rng.below(n);
            let order = two_stage_order(&id_refs, &sims, k, |s| Ok(s.iter().map(|&i| probs[i]).collect())).unwrap();
            let target = q % 9;
            order.iter().map(|&(i, _, _)| persons[i] == target).collect()
        })
        .collect()
}

const MASK_VOCAB: usize = 1000;

/// Counts of (eligible, selected, to [MASK], to another token, unchanged).
pub fn masking_counts(eligible_target: usize, seed: u64) -> [usize; 5] {
    let mut c = [0usize; 5];
    let mut seq_rng = RngStream::new(seed, 1);
    let mut i = 0u64;
    while c[0] < eligible_target {
        let len = 2 + seq_rng.below(54);
        let mut tokens = vec![CLS];
        tokens.extend((1..len).map(|_| NUM_SPECIAL + seq_rng.below(MASK_VOCAB - NUM_SPECIAL as usize) as u32));
        tokens.push(PAD);
        let masked = mask_tokens(&tokens, MASK_VOCAB, &mut RngStream::new(seed, 1000 + i));
        i += 1;
        c[0] += len - 1;
        assert_eq!(masked.tokens[0], CLS);
        assert_eq!(*masked.tokens.last().unwrap(), PAD);
        for r in &masked.records {
            c[1] += 1;
            let now = masked.tokens[r.position];
            if now == MASK {
                c[2] += 1;
            } else if now != r.original {
                assert!(now >= NUM_SPECIAL && (now as usize) < MASK_VOCAB);
                c[3] += 1;
            } else {
                c[4] += 1;
            }
        }
    }
    c
}

