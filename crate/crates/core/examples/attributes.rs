//! Caption annotation and the attribute prompt set.

use aptm::attributes::{annotate, opposite, render_prompts, AttributeSpace, Lexicon};

fn main() {
    let space = AttributeSpace::default();
    let lexicon = Lexicon::default_for(&space);
    let captions = [
        "A young woman with long hair wears a white blouse and a blue skirt, carrying a handbag.",
        "The man in a black jacket and gray jeans has no backpack.",
        "A man and a woman walk past a red car.",
    ];
    for caption in captions {
        let a = annotate(caption, &lexicon, &space);
        println!("{caption}");
        for (i, v) in a.attributes.known() {
            let def = space.get(i);
            println!("  {:<13} {}", def.name, def.label(v).label);
        }
        for c in &a.conflicts {
            println!("  conflict on {}: {:?}", c.attribute, c.matches);
        }
    }

    let prompts = render_prompts(&space);
    println!("\n{} prompts, for example:", prompts.len());
    for p in prompts.iter().step_by(11) {
        println!("  {:<45} <-> {}", p.text, opposite(p, &space).text);
    }
}
