//! Two-stage text-to-image search, attribute recognition and evaluation metrics.

mod metrics;
mod search;

pub use metrics::{
    attr_metrics, average_precision, mean_ap, recall_at_k, retrieval_metrics, AttrMetrics, Relevance,
    RetrievalMetrics,
};
pub use search::{
    attributes_from_probabilities, two_stage_order, Gallery, GalleryItem, RankedItem, RankedResult, Retriever,
    DEFAULT_SHORTLIST,
};

/// Relevance flags of a ranking: same person id as the query.
pub fn relevance(result: &RankedResult, query_person: &str, gallery: &[GalleryItem]) -> Relevance {
    let person: std::collections::HashMap<&str, &str> = gallery
        .iter()
        .map(|g| (g.image_id.as_str(), g.person_id.as_str()))
        .collect();
    result
        .items
        .iter()
        .map(|it| person.get(it.image_id.as_str()) == Some(&query_person))
        .collect()
}
