// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment stages driven from an [`ExperimentConfig`]. Each stage writes
//! its artifacts under `config.out` and refreshes the report.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use steerprobe::evaluation::{
    all_directions, ChatJudge, ClassifierJudge, DirectionMatrix, MatrixOptions, ReportDirection,
};
use steerprobe::interpret::{
    build_patch, masking_importance, project_2d, silhouette, surrogate_importance, weight_mass_fraction, EmbeddedPoint,
    MaskingConfig, SurrogateConfig, TsneConfig,
};
use steerprobe::labels::{prompt_for, prompt_grid};
use steerprobe::runtime::conformance::{run_conformance, ConformanceCheck};
use steerprobe::runtime::extract_probe_dataset;
use steerprobe::steering::steered_generate_with;
use steerprobe::{
    run_direction_matrix, stratified_split, GenerationTrace, Judge, LabelSet, LexiconJudge, ProbeDataset,
    ProbeStack, Runtime, SteeringConfig, SyntheticRuntime, VInfoReport,
};

use crate::config::{ExperimentConfig, JudgeKind};
use crate::dump::{load_dump, save_dump};
use crate::error::{Result, WorkbenchError};
use crate::report::{
    emit_report, load_bundle, load_timing, EmbeddingSet, ImportanceSample, InterpretResults, MassRow, PatchRow,
    Provenance, ReportBundle, TimingReport, VInfoSection,
};
use crate::store::{load_probes, save_probes};

/// Standard artifact locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn dump(&self) -> PathBuf {
        self.root.join("dump")
    }
    pub fn probes(&self) -> PathBuf {
        self.root.join("probes.json")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn traces(&self) -> PathBuf {
        self.root.join("traces.jsonl")
    }
}

/// A config plus the file it came from.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub config_path: Option<PathBuf>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            config,
            config_path: None,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config.out)
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        self.config.label_set()
    }

    pub fn runtime(&self) -> Result<SyntheticRuntime> {
        Ok(SyntheticRuntime::new(self.config.synthetic_spec()?)?)
    }

    /// Steering settings with target 0; callers set the target.
    pub fn steering(&self, num_layers: usize) -> Result<SteeringConfig> {
        let s = &self.config.steering;
        let mut c = SteeringConfig::new(0, self.config.layer_range(num_layers)?, s.max_tokens).with_p_hat(s.p_hat);
        c.skip_if_target = s.skip_if_target;
        c.validate(num_layers, self.label_set()?.len())?;
        Ok(c)
    }

    pub fn judge(&self) -> Result<Box<dyn Judge>> {
        let labels = self.label_set()?;
        let e = &self.config.evaluation;
        let endpoint = || {
            e.endpoint
                .clone()
                .ok_or_else(|| WorkbenchError::Config(format!("judge {:?} needs an endpoint", e.judge)))
        };
        Ok(match e.judge {
            JudgeKind::Lexicon => Box::new(LexiconJudge::new(&labels)?),
            JudgeKind::Classifier => Box::new(ClassifierJudge::new(endpoint()?, labels)?),
            JudgeKind::Chat => {
                let model = e
                    .model
                    .clone()
                    .ok_or_else(|| WorkbenchError::Config("the chat judge needs evaluation.model".into()))?;
                Box::new(ChatJudge::new(endpoint()?, model, labels)?)
            }
        })
    }

    fn update_report(&self, runtime_id: &str, f: impl FnOnce(&mut ReportBundle, &mut TimingReport)) -> Result<()> {
        let dir = self.layout().report();
        let mut bundle = load_bundle(&dir)?;
        let mut timing = load_timing(&dir)?;
        bundle.runtime_id = Some(runtime_id.to_string());
        bundle.labels = self.label_set()?.ids().into_iter().map(String::from).collect();
        f(&mut bundle, &mut timing);
        emit_report(&bundle, &Provenance::now(self.config_path.as_deref(), timing), &dir)
    }

    /// Prompts → activation dump.
    pub fn extract(&self) -> Result<ProbeDataset> {
        let labels = self.label_set()?;
        let runtime = self.runtime()?;
        let prompts = prompt_grid(&labels, &self.config.prompts.template, &self.config.entities()?)?;
        let raw = extract_probe_dataset(&runtime, &prompts, &labels)?;
        let dataset = stratified_split(labels, raw.records, self.config.split.ratio, self.config.split_seed())?;
        save_dump(&dataset, &runtime.info().id, &self.layout().dump())?;
        log::info!("wrote {} records to {}", dataset.len(), self.layout().dump().display());
        Ok(dataset)
    }

    pub fn load_dataset(&self, dump: Option<&Path>) -> Result<ProbeDataset> {
        let dir = dump.map_or_else(|| self.layout().dump(), Path::to_path_buf);
        load_dump(&dir)
    }

    /// Dump → probe store and V-information tables.
    pub fn probe(&self, dataset: &ProbeDataset) -> Result<(VInfoReport, ProbeStack, Duration)> {
        let start = Instant::now();
        let (report, stack) = steerprobe::v_information(dataset, &self.config.vinfo_config())?;
        let elapsed = start.elapsed();
        save_probes(&stack, &self.layout().probes())?;
        let runtime_id = self.runtime().map(|r| r.info().id.clone()).unwrap_or_else(|_| "unknown".into());
        let section = VInfoSection {
            report: report.clone(),
            group: self.config.probing.group,
            dataset_hash: dataset.content_hash(),
        };
        self.update_report(&runtime_id, |b, t| {
            b.vinfo = Some(section);
            t.probe_training_secs = Some(elapsed.as_secs_f64());
            t.probe_records = Some(dataset.len());
        })?;
        Ok((report, stack, elapsed))
    }

    pub fn load_stack(&self, path: Option<&Path>, dataset_hash: Option<&str>) -> Result<ProbeStack> {
        let path = path.map_or_else(|| self.layout().probes(), Path::to_path_buf);
        load_probes(&path, dataset_hash)
    }

    fn eval_prompts(&self) -> Result<Vec<steerprobe::PromptSpec>> {
        Ok(prompt_grid(&self.label_set()?, &self.config.prompts.template, &self.config.eval_entities())?)
    }

    fn matrix_options(&self) -> MatrixOptions {
        MatrixOptions {
            hook_mode: self.config.steering.hook_mode,
            keep_rows: self.config.evaluation.keep_rows,
            ..MatrixOptions::default()
        }
    }

    /// Direction matrix over every ordered label pair.
    pub fn eval(&self, stack: &ProbeStack, judge: &dyn Judge) -> Result<DirectionMatrix> {
        let runtime = self.runtime()?;
        let prompts = self.eval_prompts()?;
        let k = stack.label_set.len();
        let steering = self.steering(stack.num_layers())?;
        let matrix = run_direction_matrix(
            &runtime,
            stack,
            &prompts,
            &all_directions(k),
            &steering,
            judge,
            &self.matrix_options(),
        )?;
        let steered = matrix
            .reports
            .iter()
            .filter(|r| matches!(r.direction, ReportDirection::Pair { .. }) && r.error.is_none())
            .map(|r| r.samples)
            .sum();
        let reports = matrix.reports.clone();
        self.update_report(&runtime.info().id, |b, t| {
            b.directions = Some(reports);
            t.record_generation(&matrix.timing, prompts.len(), steered);
        })?;
        Ok(matrix)
    }

    /// One steered generation; the trace is appended to the trace log.
    pub fn steer(&self, stack: &ProbeStack, source: usize, target: usize, entity: &str) -> Result<GenerationTrace> {
        let runtime = self.runtime()?;
        let labels = self.label_set()?;
        let prompt = prompt_for(&labels, &self.config.prompts.template, source, entity)?;
        let mut config = self.steering(stack.num_layers())?;
        config.target = target;
        config.validate(stack.num_layers(), labels.len())?;
        let trace = steered_generate_with(
            &runtime,
            stack,
            &runtime.encode(&prompt.rendered_text),
            &config,
            self.config.steering.hook_mode,
            Default::default(),
        )?;
        let path = self.layout().traces();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut log = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
        writeln!(log, "{}", serde_json::to_string(&trace)?)?;
        Ok(trace)
    }

    /// Weight-mass tables, patch sweep, token importance and 2-D embeddings.
    pub fn interpret(&self, dataset: &ProbeDataset, stack: &ProbeStack, judge: &dyn Judge) -> Result<InterpretResults> {
        let cfg = &self.config.interpret;
        let runtime = self.runtime()?;
        let prompts = self.eval_prompts()?;
        let k = stack.label_set.len();
        let directions = all_directions(k);
        let steering = self.steering(stack.num_layers())?;
        let options = self.matrix_options();

        let weight_mass = stack
            .probes
            .iter()
            .filter(|p| p.family == steerprobe::ProbeFamily::Linear)
            .map(|p| {
                Ok(MassRow {
                    layer: p.layer,
                    values: weight_mass_fraction(p, &cfg.mass_fractions)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let average = |m: &DirectionMatrix| m.reports.last().and_then(|r| r.success_rate);
        let base = run_direction_matrix(&runtime, stack, &prompts, &directions, &steering, judge, &options)?;
        let mut patches = Vec::new();
        for &fraction in &cfg.patch_fractions {
            let mut patched = steering.clone();
            patched.patch = Some(build_patch(stack, fraction)?);
            let m = run_direction_matrix(&runtime, stack, &prompts, &directions, &patched, judge, &options)?;
            patches.push(PatchRow {
                fraction,
                average_success_rate: average(&m),
                success_rates: m.reports[..directions.len()].iter().map(|r| r.success_rate).collect(),
            });
        }

        let labels = &stack.label_set;
        let mask_token = steerprobe::interpret::DEFAULT_MASK_TOKEN.to_string();
        let seed = self.config.interpret_seed();
        let mut importance = Vec::new();
        for i in 0..cfg.importance_samples {
            let d = directions[i % directions.len()];
            let entity = self.config.eval_entities()[i % self.config.evaluation.entities].clone();
            let prompt = prompt_for(labels, &self.config.prompts.template, d.source, &entity)?;
            let mut config = steering.clone();
            config.target = d.target;
            let trace = steered_generate_with(
                &runtime,
                stack,
                &runtime.encode(&prompt.rendered_text),
                &config,
                options.hook_mode,
                options.decoding,
            )?;
            let text = trace.text();
            let rate = |t: &str| -> steerprobe::Result<f64> { judge.rate(t, d.target).map(f64::from) };
            let hit = |t: &str| -> steerprobe::Result<f64> { Ok(f64::from(u8::from(judge.classify(t)? == d.target))) };
            let masking = masking_importance(
                &text,
                &rate,
                &MaskingConfig {
                    mask_rate: cfg.mask_rate,
                    rounds: cfg.rounds,
                    seed: seed.wrapping_add(i as u64),
                    mask_token: mask_token.clone(),
                },
            )?;
            let surrogate = surrogate_importance(
                &text,
                &hit,
                &SurrogateConfig {
                    mask_rate: cfg.mask_rate,
                    variants: cfg.variants,
                    seed: seed.wrapping_add(i as u64),
                    mask_token: mask_token.clone(),
                    ..SurrogateConfig::default()
                },
            )?;
            let id = |y: usize| labels.get(y).map_or_else(|| "?".into(), |l| l.id.clone());
            importance.push(ImportanceSample {
                entity,
                source: id(d.source),
                target: id(d.target),
                text,
                masking,
                surrogate,
            });
        }

        let layers = if cfg.embed_layers.is_empty() {
            let l = dataset.num_layers();
            if l == 0 { Vec::new() } else if l == 1 { vec![1] } else { vec![1, l] }
        } else {
            cfg.embed_layers.clone()
        };
        let mut embeddings = Vec::new();
        let count = cfg.embed_points.min(dataset.len());
        if count >= 3 {
            for layer in layers {
                if layer == 0 || layer > dataset.num_layers() {
                    return Err(WorkbenchError::Config(format!("embed layer {layer} outside 1..={}", dataset.num_layers())));
                }
                let points: Vec<Vec<f64>> = dataset.records[..count]
                    .iter()
                    .map(|r| r.layers[layer - 1].iter().map(|v| f64::from(*v)).collect())
                    .collect();
                let labels: Vec<usize> = dataset.records[..count].iter().map(|r| r.label).collect();
                let tsne = TsneConfig {
                    seed,
                    ..TsneConfig::default()
                };
                let embedded = project_2d(&points, &labels, &tsne)?;
                let coords: Vec<Vec<f64>> = embedded.iter().map(|p: &EmbeddedPoint| vec![p.x, p.y]).collect();
                embeddings.push(EmbeddingSet {
                    layer,
                    silhouette: silhouette(&coords, &labels).ok(),
                    points: embedded,
                });
            }
        }

        let results = InterpretResults {
            mass_fractions: cfg.mass_fractions.clone(),
            weight_mass,
            unpatched_success_rate: average(&base),
            patches,
            importance,
            embeddings,
        };
        let out = results.clone();
        self.update_report(&runtime.info().id, |b, _| b.interpret = Some(out))?;
        Ok(results)
    }

    pub fn conformance(&self, max_tokens: usize) -> Result<Vec<ConformanceCheck>> {
        let runtime = self.runtime()?;
        let labels = self.label_set()?;
        let prompt = prompt_for(&labels, &self.config.prompts.template, 0, "conformance")?;
        Ok(run_conformance(&runtime, &prompt.rendered_text, max_tokens))
    }

    /// extract → probe → eval → interpret.
    pub fn run_all(&self) -> Result<()> {
        let dataset = self.extract()?;
        let (_, stack, _) = self.probe(&dataset)?;
        let judge = self.judge()?;
        self.eval(&stack, judge.as_ref())?;
        self.interpret(&dataset, &stack, judge.as_ref())?;
        Ok(())
    }
}
