use serde::Serialize;

use super::space::{AttributeSpace, TemplateFamily, LABEL_PLACEHOLDER};
use super::tokenizer::Vocab;

/// One rendered attribute prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttributePrompt {
    pub attribute: usize,
    /// Which label (0 or 1) the prompt asserts.
    pub polarity: u8,
    pub text: String,
}

impl AttributePrompt {
    pub fn render(space: &AttributeSpace, attribute: usize, polarity: u8) -> Self {
        let label = space.get(attribute).label(polarity);
        Self {
            attribute,
            polarity,
            text: label.template.replace(LABEL_PLACEHOLDER, &label.text),
        }
    }

    pub fn family(&self, space: &AttributeSpace) -> TemplateFamily {
        let label = space.get(self.attribute).label(self.polarity);
        TemplateFamily::of(&label.template).expect("validated at load")
    }

    /// Position in the canonical 54-prompt ordering.
    pub fn index(&self) -> usize {
        prompt_index(self.attribute, self.polarity)
    }
}

pub fn prompt_index(attribute: usize, polarity: u8) -> usize {
    2 * attribute + polarity as usize
}

/// Every (attribute, polarity) prompt, attribute-major.
pub fn render_prompts(space: &AttributeSpace) -> Vec<AttributePrompt> {
    (0..space.len())
        .flat_map(|a| [0u8, 1].map(|p| AttributePrompt::render(space, a, p)))
        .collect()
}

/// Same attribute, flipped label.
pub fn opposite(prompt: &AttributePrompt, space: &AttributeSpace) -> AttributePrompt {
    AttributePrompt::render(space, prompt.attribute, 1 - prompt.polarity)
}

/// Rendered prompts together with their token ids.
#[derive(Debug, Clone)]
pub struct PromptBank {
    pub prompts: Vec<AttributePrompt>,
    pub tokens: Vec<Vec<u32>>,
}

impl PromptBank {
    pub fn new(space: &AttributeSpace, vocab: &Vocab) -> Self {
        let prompts = render_prompts(space);
        let tokens = prompts.iter().map(|p| vocab.tokenize(&p.text)).collect();
        Self { prompts, tokens }
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn tokens_for(&self, attribute: usize, polarity: u8) -> &[u32] {
        &self.tokens[prompt_index(attribute, polarity)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_54_prompts() {
        let space = AttributeSpace::default();
        let prompts = render_prompts(&space);
        assert_eq!(prompts.len(), 54);
        for (i, p) in prompts.iter().enumerate() {
            assert_eq!(p.index(), i);
        }
    }

    #[test]
    fn template_examples() {
        let space = AttributeSpace::default();
        let g = space.index_of("gender").unwrap();
        let h = space.index_of("hat").unwrap();
        assert_eq!(AttributePrompt::render(&space, g, 1).text, "the person is a man");
        assert_eq!(AttributePrompt::render(&space, h, 0).text, "the person with a hat");
        assert_eq!(AttributePrompt::render(&space, h, 1).text, "the person without a hat");
        let up = space.index_of("upred").unwrap();
        assert_eq!(AttributePrompt::render(&space, up, 1).text, "the person does not wear red upper clothes");
    }

    #[test]
    fn opposite_flips_label() {
        let space = AttributeSpace::default();
        let man = AttributePrompt::render(&space, 0, 1);
        let woman = opposite(&man, &space);
        assert_eq!(woman.text, "the person is a woman");
        assert_eq!(woman.attribute, man.attribute);
        assert_eq!(opposite(&woman, &space), man);
    }

    #[test]
    fn all_five_families_are_used() {
        let space = AttributeSpace::default();
        let mut fams: Vec<_> = render_prompts(&space).iter().map(|p| format!("{:?}", p.family(&space))).collect();
        fams.sort();
        fams.dedup();
        assert_eq!(fams.len(), 5);
    }

    #[test]
    fn prompts_fit_the_token_limit() {
        let space = AttributeSpace::default();
        let texts: Vec<String> = render_prompts(&space).into_iter().map(|p| p.text).collect();
        let vocab = Vocab::build([], texts.iter().map(String::as_str), 8192).unwrap();
        let bank = PromptBank::new(&space, &vocab);
        for t in &bank.tokens {
            assert!(super::super::tokenizer::effective_len(t) <= 56);
            assert!(!t.contains(&super::super::tokenizer::UNK));
        }
    }
}
