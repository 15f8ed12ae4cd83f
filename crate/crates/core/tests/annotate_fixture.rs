mod common;

use aptm::attributes::{annotate, AttributeSpace, AttributeVector, Lexicon};
use common::corpus::{expected, CORPUS};

#[test]
fn corpus_labels_match_hand_annotation() {
    let space = AttributeSpace::default();
    let lexicon = Lexicon::default_for(&space);
    for (caption, labels, conflicts) in CORPUS {
        let got = annotate(caption, &lexicon, &space);
        let want = expected(&space, labels, conflicts, caption);
        let named = |v: &AttributeVector| -> Vec<(String, u8)> {
            v.known().map(|(a, x)| (space.get(a).name.clone(), x)).collect()
        };
        assert_eq!(named(&got.attributes), named(&want), "{caption}");
        let got_conflicts: Vec<&str> = got.conflicts.iter().map(|c| c.attribute.as_str()).collect();
        assert_eq!(got_conflicts, conflicts, "{caption}");
    }
}

#[test]
fn annotation_is_case_and_punctuation_insensitive() {
    let space = AttributeSpace::default();
    let lexicon = Lexicon::default_for(&space);
    for (caption, _, _) in CORPUS {
        let shouted = caption.to_uppercase().replace(',', " ;; ");
        assert_eq!(annotate(caption, &lexicon, &space), annotate(&shouted, &lexicon, &space));
    }
}
