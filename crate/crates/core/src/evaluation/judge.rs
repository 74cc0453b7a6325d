// SPDX-License-Identifier: MIT OR Apache-2.0

//! Judge contract, the lexicon judge and the trait-rating prompt.

use crate::error::{Error, Result};
use crate::labels::{words, LabelSet};

/// Classifies responses into labels and rates trait alignment on 1..=5.
pub trait Judge: Send + Sync {
    fn name(&self) -> &str;

    /// Label index predicted for `text`.
    fn classify(&self, text: &str) -> Result<usize>;

    /// How well `text` matches label `target`, in `1..=5`.
    fn rate(&self, text: &str, target: usize) -> Result<u8>;
}

/// Offline judge counting lexicon hits.
///
/// `classify` picks the label with the most hits (ties to the lowest index);
/// `rate` is `1 + min(4, hits of the target lexicon)`.
#[derive(Debug, Clone)]
pub struct LexiconJudge {
    /// Per label, the lexicon entries as word sequences.
    phrases: Vec<Vec<Vec<String>>>,
}

impl LexiconJudge {
    pub fn new(label_set: &LabelSet) -> Result<Self> {
        let phrases = label_set
            .labels()
            .iter()
            .map(|label| {
                let lexicon = label
                    .lexicon
                    .as_ref()
                    .filter(|l| !l.is_empty())
                    .ok_or_else(|| Error::Config(format!("label {:?} has no lexicon", label.id)))?;
                Ok(lexicon
                    .iter()
                    .map(|entry| words(entry).collect::<Vec<_>>())
                    .filter(|p| !p.is_empty())
                    .collect())
            })
            .collect::<Result<Vec<Vec<Vec<String>>>>>()?;
        Ok(Self { phrases })
    }

    /// Lexicon hits per label.
    pub fn counts(&self, text: &str) -> Vec<usize> {
        let tokens: Vec<String> = words(text).collect();
        self.phrases
            .iter()
            .map(|entries| {
                entries
                    .iter()
                    .map(|phrase| {
                        if phrase.len() > tokens.len() {
                            0
                        } else {
                            tokens.windows(phrase.len()).filter(|w| *w == phrase.as_slice()).count()
                        }
                    })
                    .sum()
            })
            .collect()
    }
}

impl Judge for LexiconJudge {
    fn name(&self) -> &str {
        "lexicon"
    }

    fn classify(&self, text: &str) -> Result<usize> {
        let counts = self.counts(text);
        let mut best = 0;
        for (i, c) in counts.iter().enumerate() {
            if *c > counts[best] {
                best = i;
            }
        }
        Ok(best)
    }

    fn rate(&self, text: &str, target: usize) -> Result<u8> {
        let counts = self.counts(text);
        let hits = *counts
            .get(target)
            .ok_or_else(|| Error::Input(format!("target {target} outside the label set")))?;
        Ok(1 + hits.min(4) as u8)
    }
}

/// Rating prompt with `{adjectives}` and `{response}` placeholders.
pub const RATING_TEMPLATE: &str = "You are a helpful and respectful AI assistant. Respond to match this description.\n\
Persona Description: I can be described as a person with one or more adjectives in {adjectives}.\n\
Evaluating the opinion: {response}\n\
How accurately does the opinion match the description? Please rate on a scale of [1,2,3,4,5] \
(where 1 = `very inaccurate`, 2 = `moderately inaccurate`, 3 = `neither accurate nor inaccurate`, \
4 = `moderately accurate`, and 5 = `very accurate`). Additionally, only output one number without other words:";

/// Rating prompt for label `target`, using its persona adjective list.
pub fn render_pae_prompt(label_set: &LabelSet, target: usize, response: &str) -> Result<String> {
    let label = label_set
        .get(target)
        .ok_or_else(|| Error::Input(format!("label index {target} out of range")))?;
    let adjectives = label.persona.as_deref().ok_or_else(|| {
        Error::Config(format!("label {:?} has no persona adjective list", label.id))
    })?;
    Ok(RATING_TEMPLATE
        .replace("{adjectives}", adjectives)
        .replace("{response}", response))
}

/// Accept a reply consisting of a single integer 1..=5 (surrounding whitespace
/// and a trailing period are tolerated).
pub fn parse_rating(reply: &str) -> Result<u8> {
    let trimmed = reply.trim().trim_end_matches('.').trim();
    match trimmed.parse::<u8>() {
        Ok(v @ 1..=5) => Ok(v),
        _ => Err(Error::Judge(format!("unparseable rating reply {reply:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_text_rates_five() {
        let judge = LexiconJudge::new(&LabelSet::big_five()).unwrap();
        let text = "tense nervous anxious angry irritable depressed worried fearful tense nervous";
        assert_eq!(judge.classify(text).unwrap(), 0);
        assert_eq!(judge.rate(text, 0).unwrap(), 5);
    }

    #[test]
    fn no_hits_classify_lowest_and_rate_one() {
        let judge = LexiconJudge::new(&LabelSet::big_five()).unwrap();
        assert_eq!(judge.classify("the weather is mild").unwrap(), 0);
        assert_eq!(judge.rate("the weather is mild", 2).unwrap(), 1);
    }

    #[test]
    fn majority_of_hits_wins() {
        let judge = LexiconJudge::new(&LabelSet::big_five()).unwrap();
        let text = "kind warm gentle but tense and anxious";
        assert_eq!(judge.counts(text), vec![2, 0, 3]);
        assert_eq!(judge.classify(text).unwrap(), 2);
    }

    #[test]
    fn missing_lexicon_is_a_config_error() {
        let labels = LabelSet::new(vec![
            crate::labels::Label::new("a", "A").with_lexicon(["x"]),
            crate::labels::Label::new("b", "B"),
        ])
        .unwrap();
        assert!(matches!(LexiconJudge::new(&labels), Err(Error::Config(_))));
    }

    #[test]
    fn rating_prompts_carry_the_adjectives() {
        let labels = LabelSet::big_five();
        let e = render_pae_prompt(&labels, 1, "hello").unwrap();
        assert!(e.contains("friendly, extraverted, talkative, bold"));
        assert!(e.contains("Evaluating the opinion: hello\n"));
        assert!(e.starts_with("You are a helpful and respectful AI assistant. Respond to match this description.\n"));
        let n = render_pae_prompt(&labels, 0, "x").unwrap();
        assert!(n.contains("tense, nervous, anxious, angry"));
        assert!(n.contains("emotionally unstable.\nEvaluating"));
        assert!(n.ends_with("only output one number without other words:"));
    }

    #[test]
    fn parses_ratings() {
        assert_eq!(parse_rating("3").unwrap(), 3);
        assert_eq!(parse_rating(" 5.\n").unwrap(), 5);
        assert!(parse_rating("6").is_err());
        assert!(parse_rating("three").is_err());
        assert!(parse_rating("3 or 4").is_err());
    }
}
