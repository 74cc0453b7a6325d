// SPDX-License-Identifier: MIT OR Apache-2.0

//! Generation traces and per-(token, layer) edit records.

use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Opaque token id issued by a runtime.
pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    None,
    AlreadyTarget,
    OutsideLayerRange,
}

/// What the steering hook did to one layer at one decoding step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    /// 1-based decoding step.
    pub step: usize,
    /// 1-based layer.
    pub layer: usize,
    pub applied: bool,
    /// Target-row affine score before the edit.
    pub pre_score: f64,
    /// Target-row affine score of the returned state.
    pub post_score: f64,
    pub delta_norm: f64,
    pub skip_reason: SkipReason,
    /// Probe argmax on the unedited state.
    pub pre_argmax: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub judge: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
}

/// Output of one generation, steered or not.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub prompt_text: String,
    /// Question tokens q_1..q_Q.
    pub prompt_tokens: Vec<TokenId>,
    /// Emitted tokens x_1..x_T.
    pub tokens: Vec<TokenId>,
    /// Surface forms of `tokens`.
    pub token_text: Vec<String>,
    /// Empty for unsteered generations.
    #[serde(default)]
    pub edits: Vec<EditRecord>,
    #[serde(default)]
    pub verdicts: Vec<JudgeVerdict>,
    /// Wall time of the generation; excluded from equality.
    #[serde(default, with = "duration_secs")]
    pub elapsed: Duration,
}

impl GenerationTrace {
    /// Emitted text, space-joined.
    pub fn text(&self) -> String {
        self.token_text.join(" ")
    }

    pub fn applied_edits(&self) -> usize {
        self.edits.iter().filter(|e| e.applied).count()
    }
}

impl PartialEq for GenerationTrace {
    fn eq(&self, other: &Self) -> bool {
        self.prompt_text == other.prompt_text
            && self.prompt_tokens == other.prompt_tokens
            && self.tokens == other.tokens
            && self.token_text == other.token_text
            && self.edits == other.edits
            && self.verdicts == other.verdicts
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(secs.max(0.0)))
    }
}
