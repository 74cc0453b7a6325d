// SPDX-License-Identifier: MIT OR Apache-2.0

//! Label sets and prompt rendering.
//!
//! Labels are ordered. Every classifier row, target index and serialized
//! probe addresses labels by their position in a [`LabelSet`].

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prompt used to elicit a personality-conditioned response about an entity.
pub const PERSONALITY_TEMPLATE: &str = "You are an AI assistant with the personality of {personality}. \
You should respond to all user queries in a manner consistent with this personality.\n\n\
What is your opinion of {entity}?";

/// One label of a [`LabelSet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub id: String,
    pub display: String,
    /// Words that mark text as belonging to this label (used by the lexicon judge
    /// and as the label's vocabulary block in the synthetic runtime).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<Vec<String>>,
    /// Comma-separated persona adjectives, embedded in rating prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona: Option<String>,
}

impl Label {
    pub fn new(id: impl Into<String>, display: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            display: display.into(),
            lexicon: None,
            persona: None,
        }
    }

    pub fn with_lexicon<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.lexicon = Some(words.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_persona(mut self, persona: impl Into<String>) -> Self {
        self.persona = Some(persona.into());
        self
    }
}

/// Ordered set of k ≥ 2 labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Label>", into = "Vec<Label>")]
pub struct LabelSet {
    labels: Vec<Label>,
}

impl LabelSet {
    pub fn new(labels: Vec<Label>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Config(format!(
                "a label set needs at least 2 labels, got {}",
                labels.len()
            )));
        }
        let mut ids = HashSet::new();
        for label in &labels {
            if !ids.insert(label.id.as_str()) {
                return Err(Error::Config(format!("duplicate label id {:?}", label.id)));
            }
        }
        let mut seen: HashSet<String> = HashSet::new();
        for label in &labels {
            if let Some(lexicon) = &label.lexicon {
                for word in lexicon {
                    let word = word.to_lowercase();
                    if !seen.insert(word.clone()) {
                        return Err(Error::Config(format!(
                            "lexicon word {word:?} appears more than once across labels"
                        )));
                    }
                }
            }
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false; a valid set holds at least two labels.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn get(&self, index: usize) -> Option<&Label> {
        self.labels.get(index)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| l.id == id || l.display.eq_ignore_ascii_case(id))
    }

    pub fn require_index(&self, id: &str) -> Result<usize> {
        self.index_of(id)
            .ok_or_else(|| Error::Input(format!("unknown label {id:?}")))
    }

    pub fn ids(&self) -> Vec<&str> {
        self.labels.iter().map(|l| l.id.as_str()).collect()
    }

    /// The three Big Five traits with lexicons and rating-prompt adjectives.
    pub fn big_five() -> Self {
        let labels = vec![
            Label::new("N", "Neuroticism")
                .with_lexicon([
                    "tense", "nervous", "anxious", "angry", "irritable", "depressed",
                    "self-conscious", "impulsive", "discontented", "unstable", "worried",
                    "fearful",
                ])
                .with_persona(
                    "tense, nervous, anxious, angry, irritable, depressed, self-conscious, \
                     impulsive, discontented, emotionally unstable",
                ),
            Label::new("E", "Extraversion")
                .with_lexicon([
                    "friendly", "extraverted", "talkative", "bold", "assertive", "active",
                    "energetic", "adventurous", "daring", "cheerful", "outgoing", "lively",
                ])
                .with_persona(
                    "friendly, extraverted, talkative, bold, assertive, active, energetic, \
                     adventurous and daring, cheerful",
                ),
            Label::new("A", "Agreeableness")
                .with_lexicon([
                    "trustful", "honest", "altruistic", "generous", "cooperative", "humble",
                    "sympathetic", "unselfish", "agreeable", "kind", "warm", "gentle",
                ])
                .with_persona(
                    "trustful, dishonest, honest, altruistic, generous, cooperative, humble, \
                     sympathetic, unselfish, agreeable",
                ),
        ];
        Self::new(labels).expect("built-in label set is valid")
    }

    /// Persuasion-strategy labels; exercises the machinery with a non-personality set.
    pub fn persuasion() -> Self {
        let labels = vec![
            Label::new("AU", "Authority Effect").with_lexicon([
                "expert", "official", "certified", "proven", "scientists", "authority",
                "doctors", "institute",
            ]),
            Label::new("FL", "Fluency Effect").with_lexicon([
                "simple", "easy", "smooth", "clear", "familiar", "effortless", "obvious",
                "natural",
            ]),
            Label::new("IS", "Information Isolation").with_lexicon([
                "exclusive", "secret", "hidden", "private", "insider", "unknown", "rare",
                "confidential",
            ]),
        ];
        Self::new(labels).expect("built-in label set is valid")
    }
}

impl TryFrom<Vec<Label>> for LabelSet {
    type Error = Error;

    fn try_from(labels: Vec<Label>) -> Result<Self> {
        LabelSet::new(labels)
    }
}

impl From<LabelSet> for Vec<Label> {
    fn from(set: LabelSet) -> Self {
        set.labels
    }
}

/// A rendered context–instruction pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub entity: String,
    /// Index into the label set the prompt was rendered for.
    pub label: usize,
    pub rendered_text: String,
}

/// Substitute `{personality}` and `{entity}` in `template`.
pub fn render_prompt(template: &str, personality: &str, entity: &str) -> Result<String> {
    for placeholder in ["{personality}", "{entity}"] {
        if !template.contains(placeholder) {
            return Err(Error::Template(format!("template lacks {placeholder}")));
        }
    }
    let text = template
        .replace("{personality}", personality)
        .replace("{entity}", entity);
    if text.trim().is_empty() {
        return Err(Error::Template("rendered prompt is empty".into()));
    }
    Ok(text)
}

/// Render the prompt for label `label` of `labels` about `entity`.
pub fn prompt_for(
    labels: &LabelSet,
    template: &str,
    label: usize,
    entity: &str,
) -> Result<PromptSpec> {
    let display = &labels
        .get(label)
        .ok_or_else(|| Error::Input(format!("label index {label} out of range")))?
        .display;
    Ok(PromptSpec {
        entity: entity.to_string(),
        label,
        rendered_text: render_prompt(template, display, entity)?,
    })
}

/// Lower-cased word tokens; punctuation other than `-` and `'` separates words.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// `n` distinct placeholder entity names (`entity-000`, `entity-001`, …).
pub fn numbered_entities(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("entity-{i:03}")).collect()
}

/// All N × k prompts for `entities`, entity-major.
pub fn prompt_grid(labels: &LabelSet, template: &str, entities: &[String]) -> Result<Vec<PromptSpec>> {
    let mut out = Vec::with_capacity(entities.len() * labels.len());
    for entity in entities {
        for label in 0..labels.len() {
            out.push(prompt_for(labels, template, label, entity)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_personality_template() {
        let text = render_prompt(PERSONALITY_TEMPLATE, "Extraversion", "Murano").unwrap();
        assert!(text.contains("personality of Extraversion"));
        assert!(text.contains("opinion of Murano"));
        let again = render_prompt(PERSONALITY_TEMPLATE, "Extraversion", "Murano").unwrap();
        assert_eq!(text.as_bytes(), again.as_bytes());
    }

    #[test]
    fn template_without_placeholders_is_rejected() {
        assert!(matches!(
            render_prompt("no placeholders here", "Extraversion", "Murano"),
            Err(Error::Template(_))
        ));
        assert!(matches!(
            render_prompt("only {personality}", "Extraversion", "Murano"),
            Err(Error::Template(_))
        ));
    }

    #[test]
    fn label_set_rejects_duplicates_and_overlapping_lexicons() {
        assert!(LabelSet::new(vec![Label::new("a", "A")]).is_err());
        assert!(LabelSet::new(vec![Label::new("a", "A"), Label::new("a", "B")]).is_err());
        let overlap = LabelSet::new(vec![
            Label::new("a", "A").with_lexicon(["x", "y"]),
            Label::new("b", "B").with_lexicon(["Y"]),
        ]);
        assert!(overlap.is_err());
    }

    #[test]
    fn label_order_survives_serialization() {
        let set = LabelSet::big_five();
        let json = serde_json::to_string(&set).unwrap();
        let back: LabelSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.ids(), vec!["N", "E", "A"]);
    }

    #[test]
    fn grid_has_n_times_k_prompts() {
        let set = LabelSet::big_five();
        let entities: Vec<String> = (0..200).map(|i| format!("entity{i}")).collect();
        let grid = prompt_grid(&set, PERSONALITY_TEMPLATE, &entities).unwrap();
        assert_eq!(grid.len(), 600);
    }
}
