// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer-wise linear probing, V-information estimation and probe-guided
//! activation steering for chat-style language models.

pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod interpret;
pub mod labels;
pub mod probe;
pub mod probing;
pub mod runtime;
pub mod steering;
pub mod trace;

pub use config::{LayerRange, PatchSpec, SteeringConfig, DEFAULT_P_HAT};
pub use dataset::{stratified_split, ActivationRecord, ProbeDataset, Split};
pub use error::{Error, Result};
pub use evaluation::{run_direction_matrix, DirectionSpec, EvalReport, Judge, LexiconJudge};
pub use labels::{Label, LabelSet, PromptSpec};
pub use probe::{LayerProbe, ProbeFamily, ProbeStack};
pub use probing::{v_information, LogBase, VInfoConfig, VInfoReport};
pub use runtime::{
    GenerateOptions, HookMode, LayerHook, Runtime, RuntimeInfo, SyntheticRuntime, SyntheticRuntimeSpec,
};
pub use steering::{logit, perturbation, steer_layer, steered_generate};
pub use trace::{EditRecord, GenerationTrace, SkipReason};
