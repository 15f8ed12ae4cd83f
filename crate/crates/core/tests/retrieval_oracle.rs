mod common;

use aptm::retrieval::{recall_at_k, retrieval_metrics, Gallery, Retriever};
use common::oracles::{exhaustive, gallery_fixture, map_oracle, random_rankings, recall_oracle, GALLERY};
use common::CAPTIONS;

#[test]
fn full_shortlist_equals_exhaustive_reranking() {
    let (fx, items, pixels) = gallery_fixture();
    let gallery = Gallery::encode(&fx.model, items.clone(), &pixels).unwrap();
    for caption in CAPTIONS {
        let tokens = fx.vocab.tokenize(caption);
        let oracle = exhaustive(&fx, &items, &pixels, &tokens);
        for k in [GALLERY, GALLERY + 14] {
            let got = Retriever::new(&fx.model, k).search("q", &tokens, &gallery).unwrap();
            assert_eq!(got.items.len(), GALLERY);
            for (g, o) in got.items.iter().zip(&oracle) {
                assert_eq!(g.image_id, o.0);
                assert!((g.similarity - o.1).abs() < 1e-12);
                assert!((g.probability.unwrap() - o.2).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn short_shortlist_keeps_tail_in_similarity_order() {
    let (fx, items, pixels) = gallery_fixture();
    let gallery = Gallery::encode(&fx.model, items, &pixels).unwrap();
    let tokens = fx.vocab.tokenize(CAPTIONS[0]);
    let k = 7;
    let got = Retriever::new(&fx.model, k).search("q", &tokens, &gallery).unwrap();
    let head_min = got.items[..k].iter().map(|i| i.similarity).fold(f64::INFINITY, f64::min);
    assert!(got.items[..k].iter().all(|i| i.probability.is_some()));
    assert!(got.items[k..].iter().all(|i| i.probability.is_none() && i.similarity <= head_min));
    assert!(got.items[k..].windows(2).all(|w| w[0].similarity >= w[1].similarity));
}

#[test]
fn metrics_match_brute_force_on_random_queries() {
    let rankings = random_rankings(8, 100);
    assert!(rankings.iter().any(|r| !r.contains(&true)), "fixture should include unanswerable queries");
    let m = retrieval_metrics(&rankings);
    for (k, got) in [(1, m.r1), (5, m.r5), (10, m.r10)] {
        assert!((got - recall_oracle(&rankings, k)).abs() < 1e-9);
    }
    assert!((m.map - map_oracle(&rankings)).abs() < 1e-9);
    for k in [2, 3, 20, 100] {
        assert!((recall_at_k(&rankings, k) - recall_oracle(&rankings, k)).abs() < 1e-9);
    }
}
