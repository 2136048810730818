//! Cloze prompt assembly.
//!
//! A prompt is the query triple rendered with its object masked, preceded by
//! zero or more demonstrations of the same relation rendered with their
//! objects filled in.

use serde::{Deserialize, Serialize};

use crate::corpus::{FactTriple, Piece, RelationTemplate, TemplateStyle};
use crate::error::{Error, Result};

/// Text placed between rendered sentences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Separator {
    #[default]
    Space,
    Newline,
}

impl Separator {
    pub fn as_str(self) -> &'static str {
        match self {
            Separator::Space => " ",
            Separator::Newline => "\n",
        }
    }
}

impl std::str::FromStr for Separator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "space" => Ok(Separator::Space),
            "newline" => Ok(Separator::Newline),
            other => Err(Error::Config(format!("unknown separator {other:?}"))),
        }
    }
}

/// What goes into the object slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectSlot<'a> {
    Filled(&'a str),
    Masked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub mask_token: String,
    pub separator: Separator,
}

impl PromptOptions {
    pub fn new(mask_token: impl Into<String>) -> Self {
        PromptOptions {
            mask_token: mask_token.into(),
            separator: Separator::Space,
        }
    }

    pub fn with_separator(mut self, separator: Separator) -> Self {
        self.separator = separator;
        self
    }
}

/// An assembled query ready for the scorer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptString {
    pub text: String,
    /// Character offsets of every mask token in `text`.
    pub mask_positions: Vec<usize>,
    pub demo_count: usize,
    pub style: TemplateStyle,
}

impl PromptString {
    /// Wrap raw text, locating mask tokens.
    pub fn from_text(text: impl Into<String>, mask_token: &str, style: TemplateStyle) -> Self {
        let text = text.into();
        let mask_positions = char_offsets(&text, mask_token);
        PromptString {
            text,
            mask_positions,
            demo_count: 0,
            style,
        }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

fn char_offsets(text: &str, needle: &str) -> Vec<usize> {
    if needle.is_empty() {
        return Vec::new();
    }
    text.match_indices(needle)
        .map(|(byte, _)| text[..byte].chars().count())
        .collect()
}

/// Fill a template's slots verbatim.
pub fn render_template(
    template: &RelationTemplate,
    subject: &str,
    object: ObjectSlot<'_>,
    mask_token: &str,
) -> Result<String> {
    if !mask_token.is_empty() && subject.contains(mask_token) {
        return Err(Error::InvalidPrompt(format!(
            "subject {subject:?} contains the mask token"
        )));
    }
    let object = match object {
        ObjectSlot::Filled(o) => {
            if !mask_token.is_empty() && o.contains(mask_token) {
                return Err(Error::InvalidPrompt(format!(
                    "object {o:?} contains the mask token"
                )));
            }
            o
        }
        ObjectSlot::Masked => mask_token,
    };
    let mut out = String::new();
    for piece in template.pieces() {
        match piece {
            Piece::Literal(text) => out.push_str(text),
            Piece::Subject => out.push_str(subject),
            Piece::Object => out.push_str(object),
        }
    }
    Ok(out)
}

/// Prepend rendered demonstrations to the masked query.
pub fn assemble_prompt(
    query: &FactTriple,
    demos: &[FactTriple],
    template: &RelationTemplate,
    options: &PromptOptions,
) -> Result<PromptString> {
    let mut text = String::new();
    for demo in demos {
        if demo.relation_id != query.relation_id {
            return Err(Error::InvalidPrompt(format!(
                "demonstration relation {} differs from query relation {}",
                demo.relation_id, query.relation_id
            )));
        }
        if demo == query {
            return Err(Error::InvalidPrompt(format!(
                "demonstration ({}, {}) is the query itself",
                demo.subject, demo.object
            )));
        }
        text.push_str(&render_template(
            template,
            &demo.subject,
            ObjectSlot::Filled(&demo.object),
            &options.mask_token,
        )?);
        text.push_str(options.separator.as_str());
    }
    text.push_str(&render_template(
        template,
        &query.subject,
        ObjectSlot::Masked,
        &options.mask_token,
    )?);
    let mut prompt = PromptString::from_text(text, &options.mask_token, template.style());
    if prompt.mask_positions.len() != 1 {
        return Err(Error::InvalidPrompt(format!(
            "expected one mask token, found {} in {:?}",
            prompt.mask_positions.len(),
            prompt.text
        )));
    }
    prompt.demo_count = demos.len();
    Ok(prompt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn isa() -> RelationTemplate {
        RelationTemplate::parse("is-a", "[s] is a [o] .", TemplateStyle::NaturalLanguage, None).unwrap()
    }

    fn fact(s: &str, o: &str) -> FactTriple {
        FactTriple::new(s, "is-a", o).unwrap()
    }

    fn opts() -> PromptOptions {
        PromptOptions::new("[MASK]")
    }

    #[test]
    fn renders_masked_and_filled() {
        let music = RelationTemplate::parse("r", "[s] plays [o] music .", TemplateStyle::NaturalLanguage, None).unwrap();
        assert_eq!(
            render_template(&music, "X", ObjectSlot::Masked, "[MASK]").unwrap(),
            "X plays [MASK] music ."
        );
        assert_eq!(
            render_template(&isa(), "Nantmor", ObjectSlot::Filled("village"), "[MASK]").unwrap(),
            "Nantmor is a village ."
        );
        let arrow = RelationTemplate::symbolic("r", TemplateStyle::ArrowDouble).unwrap();
        assert_eq!(
            render_template(&arrow, "Tisza", ObjectSlot::Filled("river"), "[MASK]").unwrap(),
            "Tisza => river"
        );
    }

    #[test]
    fn spacing_is_preserved() {
        let t = RelationTemplate::parse("r", "  [s]\t->[o]  ", TemplateStyle::NaturalLanguage, None).unwrap();
        assert_eq!(render_template(&t, "a", ObjectSlot::Filled("b"), "[MASK]").unwrap(), "  a\t->b  ");
    }

    #[test]
    fn subject_with_mask_is_rejected() {
        assert!(render_template(&isa(), "a [MASK]", ObjectSlot::Masked, "[MASK]").is_err());
    }

    #[test]
    fn close_example_row() {
        let p = assemble_prompt(&fact("Rodmarton", "village"), &[fact("Nantmor", "village")], &isa(), &opts()).unwrap();
        assert_eq!(p.text, "Nantmor is a village . Rodmarton is a [MASK] .");
        assert_eq!(p.demo_count, 1);
        assert_eq!(p.mask_positions, vec![p.text.find("[MASK]").unwrap()]);
    }

    #[test]
    fn no_demos_is_bare_query() {
        let q = fact("Rodmarton", "village");
        let p = assemble_prompt(&q, &[], &isa(), &opts()).unwrap();
        assert_eq!(p.text, render_template(&isa(), "Rodmarton", ObjectSlot::Masked, "[MASK]").unwrap());
        assert_eq!(p.demo_count, 0);
    }

    #[test]
    fn newline_separator() {
        let p = assemble_prompt(
            &fact("Rodmarton", "village"),
            &[fact("Nantmor", "village")],
            &isa(),
            &opts().with_separator(Separator::Newline),
        )
        .unwrap();
        assert_eq!(p.text, "Nantmor is a village .\nRodmarton is a [MASK] .");
    }

    #[test]
    fn gold_leak_and_mixed_relations_rejected() {
        let q = fact("Rodmarton", "village");
        assert!(assemble_prompt(&q, std::slice::from_ref(&q), &isa(), &opts()).is_err());
        let other = FactTriple::new("Tisza", "P17", "Hungary").unwrap();
        assert!(assemble_prompt(&q, &[other], &isa(), &opts()).is_err());
    }

    #[test]
    fn semicolon_query_form() {
        let t = RelationTemplate::symbolic("is-a", TemplateStyle::Semicolon).unwrap();
        let p = assemble_prompt(&fact("cat", "cats"), &[fact("dog", "dogs")], &t, &opts()).unwrap();
        assert_eq!(p.text, "(dog; dogs) (cat; [MASK])");
    }

    #[test]
    fn char_offsets_count_characters_not_bytes() {
        let p = PromptString::from_text("Zürich ist [MASK] .", "[MASK]", TemplateStyle::NaturalLanguage);
        assert_eq!(p.mask_positions, vec![11]);
    }
}
