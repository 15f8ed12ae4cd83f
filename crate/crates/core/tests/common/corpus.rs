//! Hand-labelled captions for the annotator.

use aptm::attributes::{annotate, AttributeSpace, AttributeVector, Lexicon};

/// Present unless the caption names or negates the item.
pub const ABSENT_BY_DEFAULT: [(&str, u8); 4] = [("hat", 1), ("backpack", 1), ("handbag", 1), ("bag", 1)];

/// (caption, labels, attributes left in conflict). Labels are written out by hand from the lexicon.
pub const CORPUS: [(&str, &[(&str, u8)], &[&str]); 20] = [
    (
        "A woman in a white blouse and blue jeans.",
        &[("gender", 0), ("upwhite", 0), ("downblue", 0), ("length_lower", 0), ("type_lower", 1)],
        &[],
    ),
    (
        "The man has short hair and wears a black jacket, gray trousers and a cap.",
        &[("gender", 1), ("hair", 0), ("upblack", 0), ("downgray", 0), ("length_lower", 0), ("type_lower", 1), ("hat", 0)],
        &[],
    ),
    (
        "A young girl with a ponytail wears a pink skirt and carries a backpack.",
        &[("gender", 0), ("age", 0), ("hair", 1), ("downpink", 0), ("type_lower", 0), ("backpack", 0)],
        &[],
    ),
    (
        "An elderly gentleman without a hat, in a green sweater and brown slacks.",
        &[("gender", 1), ("age", 1), ("hat", 1), ("upgreen", 0), ("downbrown", 0), ("length_lower", 0), ("type_lower", 1)],
        &[],
    ),
    (
        "A lady with long hair carrying a purse, wearing a yellow coat with long sleeves.",
        &[("gender", 0), ("hair", 1), ("handbag", 0), ("upyellow", 0), ("sleeve", 0)],
        &[],
    ),
    (
        "A boy in a red tshirt and black shorts.",
        &[("gender", 1), ("age", 0), ("upred", 0), ("downblack", 0), ("length_lower", 1), ("type_lower", 1)],
        &[],
    ),
    (
        "The woman wears a short dress and carries a shoulder bag.",
        &[("gender", 0), ("length_lower", 1), ("type_lower", 0), ("bag", 0)],
        &[],
    ),
    ("A man and a woman walk together.", &[], &["gender"]),
    (
        "A male teenager with a buzz cut wears a purple hoodie and grey leggings.",
        &[("gender", 1), ("age", 0), ("hair", 0), ("uppurple", 0), ("downgray", 0), ("type_lower", 1)],
        &[],
    ),
    (
        "A person in a sleeveless blue top and a white miniskirt, no backpack.",
        &[("sleeve", 1), ("upblue", 0), ("length_lower", 1), ("type_lower", 0), ("backpack", 1)],
        &[],
    ),
    (
        "An adult with braids in a gray cardigan and long pants, wearing a beanie.",
        &[("age", 1), ("hair", 1), ("upgray", 0), ("length_lower", 0), ("type_lower", 1), ("hat", 0)],
        &[],
    ),
    (
        "A short haired woman in a black vest and a black skirt holds a tote.",
        &[("gender", 0), ("hair", 0), ("upblack", 0), ("downblack", 0), ("type_lower", 0), ("bag", 0)],
        &[],
    ),
    (
        "A guy with a rucksack and a helmet rides a bike in green shorts.",
        &[("gender", 1), ("backpack", 0), ("hat", 0), ("downgreen", 0), ("length_lower", 1), ("type_lower", 1)],
        &[],
    ),
    (
        "A kid wearing a yellow jumper and purple pants.",
        &[("age", 0), ("upyellow", 0), ("downpurple", 0), ("type_lower", 1)],
        &[],
    ),
    (
        "The woman with a handbag has long haired curls and wears a white shirt with short sleeves.",
        &[("gender", 0), ("handbag", 0), ("hair", 1), ("upwhite", 0), ("sleeve", 1)],
        &[],
    ),
    (
        "A man in a blue blazer, brown trousers, no bag and no handbag.",
        &[("gender", 1), ("upblue", 0), ("downbrown", 0), ("length_lower", 0), ("type_lower", 1), ("bag", 1), ("handbag", 1)],
        &[],
    ),
    (
        "A woman wears a long dress.",
        &[("gender", 0), ("length_lower", 0), ("type_lower", 0)],
        &[],
    ),
    ("Someone in a red coat walks.", &[("upred", 0)], &[]),
    (
        "A man with long hair wears a hat, while another wears no hat.",
        &[("gender", 1), ("hair", 1)],
        &["hat"],
    ),
    (
        "A lady in a pink sweatshirt and a blue skirt with long sleeved arms.",
        &[("gender", 0), ("downblue", 0), ("type_lower", 0), ("sleeve", 0)],
        &[],
    ),
];

/// Hand labels plus the absent-by-default items the caption never mentions.
pub fn expected(space: &AttributeSpace, labels: &[(&str, u8)], conflicts: &[&str], caption: &str) -> AttributeVector {
    let mut v = AttributeVector::unknown();
    let words: Vec<String> = caption
        .split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .collect();
    let mentions = |name: &str| match name {
        "hat" => ["hat", "hats", "cap", "caps", "beanie", "helmet"].iter().any(|t| words.iter().any(|w| w == t)),
        "backpack" => ["backpack", "backpacks", "rucksack"].iter().any(|t| words.iter().any(|w| w == t)),
        "handbag" => ["handbag", "handbags", "purse"].iter().any(|t| words.iter().any(|w| w == t)),
        _ => ["bag", "bags", "tote"].iter().any(|t| words.iter().any(|w| w == t)),
    };
    for (name, value) in ABSENT_BY_DEFAULT {
        if !mentions(name) && !conflicts.contains(&name) {
            v.set(space.index_of(name).unwrap(), Some(value));
        }
    }
    for &(name, value) in labels {
        v.set(space.index_of(name).unwrap(), Some(value));
    }
    v
}

/// Captions whose annotation differs from the hand labels.
pub fn corpus_mismatches() -> Vec<String> {
    let space = AttributeSpace::default();
    let lexicon = Lexicon::default_for(&space);
    let named = |v: &AttributeVector| -> Vec<(String, u8)> { v.known().map(|(a, x)| (space.get(a).name.clone(), x)).collect() };
    let mut out = Vec::new();
    for (caption, labels, conflicts) in CORPUS {
        let got = annotate(caption, &lexicon, &space);
        let want = expected(&space, labels, conflicts, caption);
        let got_conflicts: Vec<&str> = got.conflicts.iter().map(|c| c.attribute.as_str()).collect();
        if named(&got.attributes) != named(&want) || got_conflicts != conflicts {
            out.push(caption.to_string());
        }
    }
    out
}
