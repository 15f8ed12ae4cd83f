//! Attribute space, caption annotation, prompt construction and tokenization.

mod lexicon;
mod prompts;
mod space;
pub mod tokenizer;

pub use lexicon::{caption_words, Annotation, Conflict, Lexicon};
pub use prompts::{opposite, prompt_index, render_prompts, AttributePrompt, PromptBank};
pub use space::{
    AttributeDef, AttributeSpace, AttributeVector, LabelDef, TemplateFamily, LABEL_PLACEHOLDER, NUM_ATTRIBUTES,
};
pub use tokenizer::Vocab;

/// Annotates one caption with the given lexicon.
pub fn annotate(caption: &str, lexicon: &Lexicon, space: &AttributeSpace) -> Annotation {
    lexicon.annotate(caption, space)
}
