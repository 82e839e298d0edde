use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OBJECT_SLOT: &str = "<object>";
const ARTICLE_SLOT: &str = "a/an <object>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    /// Yes/No question with one `<object>` slot.
    Pope,
    /// Free captioning instruction.
    Caption,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub kind: TemplateKind,
    pub text: String,
}

/// Shipped templates. `t1`-`t4` are the four probe phrasings, `t1-aan`
/// resolves the article from the object name; `i1`/`i2` are the captioning
/// instructions, `c2`-`c4` their alternative phrasings.
const BUILTIN: &[(&str, TemplateKind, &str)] = &[
    (
        "t1",
        TemplateKind::Pope,
        "Is there a <object> in the image?",
    ),
    (
        "t2",
        TemplateKind::Pope,
        "Does the image contain a <object>?",
    ),
    (
        "t3",
        TemplateKind::Pope,
        "Have you noticed a <object> in the image?",
    ),
    (
        "t4",
        TemplateKind::Pope,
        "Can you see a <object> in the image?",
    ),
    (
        "t1-aan",
        TemplateKind::Pope,
        "Is there a/an <object> in the image?",
    ),
    (
        "i1",
        TemplateKind::Caption,
        "Generate a short caption of the image.",
    ),
    (
        "i2",
        TemplateKind::Caption,
        "Provide a brief description of the given image.",
    ),
    (
        "c2",
        TemplateKind::Caption,
        "Provide a brief description of the image.",
    ),
    (
        "c3",
        TemplateKind::Caption,
        "Generate a concise description for the image.",
    ),
    (
        "c4",
        TemplateKind::Caption,
        "Create a short textual summary for the image.",
    ),
];

impl PromptTemplate {
    pub fn new(
        template_id: impl Into<String>,
        kind: TemplateKind,
        text: impl Into<String>,
    ) -> Result<Self> {
        let t = PromptTemplate {
            template_id: template_id.into(),
            kind,
            text: text.into(),
        };
        let slots = t.text.matches(OBJECT_SLOT).count();
        match (kind, slots) {
            (TemplateKind::Pope, 1) | (TemplateKind::Caption, 0) => Ok(t),
            (TemplateKind::Pope, n) => Err(Error::Config(format!(
                "probe template {:?} must contain exactly one {OBJECT_SLOT}, found {n}",
                t.template_id
            ))),
            (TemplateKind::Caption, _) => Err(Error::Config(format!(
                "caption template {:?} must not contain {OBJECT_SLOT}",
                t.template_id
            ))),
        }
    }

    pub fn builtin(template_id: &str) -> Result<Self> {
        BUILTIN
            .iter()
            .find(|(id, _, _)| *id == template_id)
            .map(|&(id, kind, text)| PromptTemplate {
                template_id: id.into(),
                kind,
                text: text.into(),
            })
            .ok_or_else(|| {
                let known: Vec<_> = BUILTIN.iter().map(|(id, _, _)| *id).collect();
                Error::Config(format!(
                    "unknown template {template_id:?}; known: {}",
                    known.join(", ")
                ))
            })
    }

    pub fn builtins() -> Vec<PromptTemplate> {
        BUILTIN
            .iter()
            .map(|&(id, kind, text)| PromptTemplate {
                template_id: id.into(),
                kind,
                text: text.into(),
            })
            .collect()
    }
}

fn article(object_name: &str) -> &'static str {
    match object_name.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// Fills the object slot of a probe template.
pub fn render_prompt(template: &PromptTemplate, object_name: &str) -> Result<String> {
    if template.kind != TemplateKind::Pope || !template.text.contains(OBJECT_SLOT) {
        return Err(Error::Precondition(format!(
            "template {:?} has no {OBJECT_SLOT} slot",
            template.template_id
        )));
    }
    let object_name = object_name.trim();
    if object_name.is_empty() {
        return Err(Error::Precondition("object name must be non-empty".into()));
    }
    let text = if template.text.contains(ARTICLE_SLOT) {
        template.text.replace(
            ARTICLE_SLOT,
            &format!("{} {object_name}", article(object_name)),
        )
    } else {
        template.text.replace(OBJECT_SLOT, object_name)
    };
    Ok(text)
}
