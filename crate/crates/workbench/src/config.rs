// SPDX-License-Identifier: MIT OR Apache-2.0

//! TOML experiment configuration.
//!
//! Every stochastic stage takes its seed from the config; stage seeds default
//! to the top-level `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use steerprobe::evaluation::EndpointConfig;
use steerprobe::labels::{numbered_entities, PERSONALITY_TEMPLATE};
use steerprobe::runtime::{HookMode, TraitCoding};
use steerprobe::{Label, LabelSet, LayerRange, SyntheticRuntimeSpec, VInfoConfig, DEFAULT_P_HAT};

use crate::error::{Result, WorkbenchError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub runtime: RuntimeSection,
    #[serde(default)]
    pub labels: LabelSection,
    #[serde(default)]
    pub prompts: PromptSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub probing: ProbingSection,
    #[serde(default)]
    pub steering: SteeringSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub interpret: InterpretSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("steerprobe-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RuntimeSection {
    Synthetic {
        #[serde(default = "default_separation")]
        separation: Vec<f64>,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        hidden: Option<usize>,
        #[serde(default)]
        coding: TraitCoding,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// An externally linked model adapter, addressed by id.
    Adapter { id: String },
}

fn default_separation() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0]
}
fn default_noise() -> f64 {
    0.5
}

impl Default for RuntimeSection {
    fn default() -> Self {
        RuntimeSection::Synthetic {
            separation: default_separation(),
            noise: default_noise(),
            hidden: None,
            coding: TraitCoding::default(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelPreset {
    BigFive,
    Persuasion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSection {
    #[serde(default = "default_preset")]
    pub preset: LabelPreset,
    /// Explicit labels; overrides `preset` when non-empty.
    #[serde(default)]
    pub custom: Vec<Label>,
}

fn default_preset() -> LabelPreset {
    LabelPreset::BigFive
}

impl Default for LabelSection {
    fn default() -> Self {
        Self {
            preset: default_preset(),
            custom: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSection {
    #[serde(default = "default_template")]
    pub template: String,
    /// Number of generated placeholder entities for probing.
    #[serde(default = "default_entities")]
    pub entities: usize,
    /// One entity per line; replaces the generated names when set.
    #[serde(default)]
    pub entity_file: Option<PathBuf>,
}

fn default_template() -> String {
    PERSONALITY_TEMPLATE.into()
}
fn default_entities() -> usize {
    200
}

impl Default for PromptSection {
    fn default() -> Self {
        Self {
            template: default_template(),
            entities: default_entities(),
            entity_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_ratio() -> f64 {
    0.7
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            ratio: default_ratio(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbingSection {
    #[serde(flatten)]
    pub vinfo: VInfoConfig,
    /// Layers per group in the grouped V-information table.
    #[serde(default = "default_group")]
    pub group: usize,
}

fn default_group() -> usize {
    1
}

impl Default for ProbingSection {
    fn default() -> Self {
        Self {
            vinfo: VInfoConfig::default(),
            group: default_group(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringSection {
    #[serde(default = "default_p_hat")]
    pub p_hat: f64,
    /// `LO:HI` or `all`; the upper half of the layers when absent.
    #[serde(default)]
    pub layers: Option<String>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default = "default_true")]
    pub skip_if_target: bool,
    #[serde(default)]
    pub hook_mode: HookMode,
}

fn default_p_hat() -> f64 {
    DEFAULT_P_HAT
}
fn default_max_tokens() -> usize {
    40
}
fn default_true() -> bool {
    true
}

impl Default for SteeringSection {
    fn default() -> Self {
        Self {
            p_hat: default_p_hat(),
            layers: None,
            max_tokens: default_max_tokens(),
            skip_if_target: true,
            hook_mode: HookMode::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum JudgeKind {
    Lexicon,
    Classifier,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    /// Entities per label in the evaluation prompts.
    #[serde(default = "default_eval_entities")]
    pub entities: usize,
    #[serde(default = "default_judge")]
    pub judge: JudgeKind,
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
    /// Model name sent to a chat endpoint.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub keep_rows: bool,
}

fn default_eval_entities() -> usize {
    20
}
fn default_judge() -> JudgeKind {
    JudgeKind::Lexicon
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            entities: default_eval_entities(),
            judge: default_judge(),
            endpoint: None,
            model: None,
            keep_rows: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpretSection {
    #[serde(default = "default_fractions")]
    pub mass_fractions: Vec<f64>,
    #[serde(default = "default_patch_fractions")]
    pub patch_fractions: Vec<f64>,
    /// Layers to embed in 2-D; first and last when empty.
    #[serde(default)]
    pub embed_layers: Vec<usize>,
    #[serde(default = "default_embed_points")]
    pub embed_points: usize,
    /// Steered responses analysed for token importance.
    #[serde(default = "default_importance_samples")]
    pub importance_samples: usize,
    #[serde(default = "default_mask_rate")]
    pub mask_rate: f64,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_variants")]
    pub variants: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_fractions() -> Vec<f64> {
    vec![0.01, 0.05, 0.1, 0.2]
}
fn default_patch_fractions() -> Vec<f64> {
    vec![0.0, 0.2, 0.5, 1.0]
}
fn default_embed_points() -> usize {
    300
}
fn default_importance_samples() -> usize {
    2
}
fn default_mask_rate() -> f64 {
    0.15
}
fn default_rounds() -> usize {
    100
}
fn default_variants() -> usize {
    1000
}

impl Default for InterpretSection {
    fn default() -> Self {
        Self {
            mass_fractions: default_fractions(),
            patch_fractions: default_patch_fractions(),
            embed_layers: Vec::new(),
            embed_points: default_embed_points(),
            importance_samples: default_importance_samples(),
            mask_rate: default_mask_rate(),
            rounds: default_rounds(),
            variants: default_variants(),
            seed: None,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: default_out(),
            runtime: RuntimeSection::default(),
            labels: LabelSection::default(),
            prompts: PromptSection::default(),
            split: SplitSection::default(),
            probing: ProbingSection::default(),
            steering: SteeringSection::default(),
            evaluation: EvaluationSection::default(),
            interpret: InterpretSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Parse `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| WorkbenchError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(file) = &mut config.prompts.entity_file {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(file) = &self.prompts.entity_file {
            if !file.is_file() {
                return Err(WorkbenchError::Config(format!("entity file {} does not exist", file.display())));
            }
        }
        if self.probing.group == 0 {
            return Err(WorkbenchError::Config("probing.group must be at least 1".into()));
        }
        if self.evaluation.entities == 0 {
            return Err(WorkbenchError::Config("evaluation.entities must be at least 1".into()));
        }
        if self.evaluation.judge != JudgeKind::Lexicon && self.evaluation.endpoint.is_none() {
            return Err(WorkbenchError::Config(format!(
                "judge {:?} needs an [evaluation.endpoint] section",
                self.evaluation.judge
            )));
        }
        self.probing.vinfo.validate()?;
        Ok(())
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        if !self.labels.custom.is_empty() {
            return Ok(LabelSet::new(self.labels.custom.clone())?);
        }
        Ok(match self.labels.preset {
            LabelPreset::BigFive => LabelSet::big_five(),
            LabelPreset::Persuasion => LabelSet::persuasion(),
        })
    }

    pub fn entities(&self) -> Result<Vec<String>> {
        match &self.prompts.entity_file {
            Some(file) => {
                let text = std::fs::read_to_string(file)?;
                let list: Vec<String> = text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect();
                if list.is_empty() {
                    return Err(WorkbenchError::Config(format!("entity file {} is empty", file.display())));
                }
                Ok(list)
            }
            None => Ok(numbered_entities(self.prompts.entities)),
        }
    }

    pub fn eval_entities(&self) -> Vec<String> {
        (0..self.evaluation.entities).map(|i| format!("query-{i:03}")).collect()
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticRuntimeSpec> {
        match &self.runtime {
            RuntimeSection::Synthetic {
                separation,
                noise,
                hidden,
                coding,
                seed,
            } => {
                let mut spec = SyntheticRuntimeSpec::new(self.label_set()?, separation.clone(), *noise, seed.unwrap_or(self.seed))
                    .with_coding(*coding);
                if let Some(h) = hidden {
                    spec = spec.with_hidden(*h);
                }
                Ok(spec)
            }
            RuntimeSection::Adapter { id } => Err(WorkbenchError::Config(format!(
                "runtime adapter {id:?} is not linked into this build; only the synthetic runtime is built in"
            ))),
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.split.seed.unwrap_or(self.seed)
    }

    pub fn vinfo_config(&self) -> VInfoConfig {
        let mut v = self.probing.vinfo.clone();
        if v.seed == 0 {
            v.seed = self.seed;
        }
        v
    }

    pub fn interpret_seed(&self) -> u64 {
        self.interpret.seed.unwrap_or(self.seed)
    }

    pub fn layer_range(&self, num_layers: usize) -> Result<LayerRange> {
        match self.steering.layers.as_deref() {
            Some("all") => Ok(LayerRange::all(num_layers)),
            Some(text) => Ok(text.parse()?),
            None => Ok(LayerRange::new(num_layers / 2 + 1, num_layers)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.label_set().unwrap().len(), 3);
        assert_eq!(c.entities().unwrap().len(), 200);
    }

    #[test]
    fn full_config_parses() {
        let c = ExperimentConfig::from_toml(
            r#"
            seed = 5
            out = "runs/a"
            [runtime]
            kind = "synthetic"
            separation = [1.0, 2.0]
            noise = 0.25
            coding = "rotated"
            hidden = 12
            [probing]
            regularization = 0.001
            log_base = "two"
            group = 2
            [steering]
            p_hat = 0.9
            layers = "1:2"
            [evaluation]
            judge = "classifier"
            endpoint = { url = "http://localhost:1/classify" }
            "#,
        )
        .unwrap();
        c.validate().unwrap();
        let spec = c.synthetic_spec().unwrap();
        assert_eq!((spec.hidden, spec.seed, spec.coding), (12, 5, TraitCoding::Rotated));
        assert_eq!(c.vinfo_config().regularization, 0.001);
        assert_eq!(c.layer_range(2).unwrap(), LayerRange::new(1, 2));
        let mut d = ExperimentConfig::default();
        assert_eq!(d.layer_range(8).unwrap(), LayerRange::new(5, 8));
        assert_eq!(d.layer_range(1).unwrap(), LayerRange::new(1, 1));
        d.steering.layers = Some("all".into());
        assert_eq!(d.layer_range(8).unwrap(), LayerRange::all(8));
    }

    #[test]
    fn unknown_keys_and_missing_files_are_config_errors() {
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        let mut c = ExperimentConfig::default();
        c.prompts.entity_file = Some(PathBuf::from("/nonexistent/entities.txt"));
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let mut c = ExperimentConfig::default();
        c.evaluation.judge = JudgeKind::Chat;
        assert!(c.validate().is_err());
    }

    #[test]
    fn adapters_are_reported() {
        let c = ExperimentConfig::from_toml("[runtime]\nkind = \"adapter\"\nid = \"llama\"").unwrap();
        assert!(matches!(c.synthetic_spec(), Err(WorkbenchError::Config(_))));
    }
}
