// SPDX-License-Identifier: MIT OR Apache-2.0

//! Success rate, adjective-rating shift and the edit-direction matrix.

mod http;
mod judge;

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use http::{ChatJudge, ClassifierJudge, EndpointConfig};
pub use judge::{parse_rating, render_pae_prompt, Judge, LexiconJudge, RATING_TEMPLATE};

use crate::config::SteeringConfig;
use crate::error::{Error, Result};
use crate::labels::{LabelSet, PromptSpec};
use crate::probe::ProbeStack;
use crate::runtime::{Decoding, GenerateOptions, HookMode, Runtime};
use crate::steering::steered_generate_with;
use crate::trace::GenerationTrace;

/// A metric over samples, with the count of samples the judge failed on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    /// `None` when every sample was excluded.
    pub value: Option<f64>,
    pub samples: usize,
    pub excluded: usize,
}

/// Fraction of traces the judge assigns to `target`.
pub fn success_rate(traces: &[GenerationTrace], judge: &dyn Judge, target: usize) -> Result<Metric> {
    if traces.is_empty() {
        return Err(Error::Input("success rate needs at least one trace".into()));
    }
    let verdicts: Vec<Result<usize>> = traces.par_iter().map(|t| judge.classify(&t.text())).collect();
    Ok(indicator_metric(&verdicts, target))
}

fn indicator_metric(verdicts: &[Result<usize>], target: usize) -> Metric {
    let mut hits = 0usize;
    let mut excluded = 0usize;
    for v in verdicts {
        match v {
            Ok(label) if *label == target => hits += 1,
            Ok(_) => {}
            Err(e) => {
                log::warn!("judge failed on a sample: {e}");
                excluded += 1;
            }
        }
    }
    let kept = verdicts.len() - excluded;
    Metric {
        value: (kept > 0).then(|| hits as f64 / kept as f64),
        samples: verdicts.len(),
        excluded,
    }
}

/// Mean post-minus-pre rating toward `target`, paired by prompt.
pub fn pae(
    pre: &[GenerationTrace],
    post: &[GenerationTrace],
    judge: &dyn Judge,
    target: usize,
) -> Result<Metric> {
    if pre.len() != post.len() {
        return Err(Error::Pairing(format!("{} unsteered vs {} steered traces", pre.len(), post.len())));
    }
    if pre.is_empty() {
        return Err(Error::Input("rating shift needs at least one pair".into()));
    }
    if let Some(i) = pre.iter().zip(post).position(|(a, b)| a.prompt_tokens != b.prompt_tokens) {
        return Err(Error::Pairing(format!("pair {i} was generated from different prompts")));
    }
    let pairs: Vec<Result<(u8, u8)>> = pre
        .par_iter()
        .zip(post)
        .map(|(a, b)| Ok((judge.rate(&a.text(), target)?, judge.rate(&b.text(), target)?)))
        .collect();
    Ok(rating_metric(&pairs))
}

fn rating_metric(pairs: &[Result<(u8, u8)>]) -> Metric {
    let mut total = 0i64;
    let mut excluded = 0usize;
    for p in pairs {
        match p {
            Ok((before, after)) => total += i64::from(*after) - i64::from(*before),
            Err(e) => {
                log::warn!("judge failed on a pair: {e}");
                excluded += 1;
            }
        }
    }
    let kept = pairs.len() - excluded;
    Metric {
        value: (kept > 0).then(|| total as f64 / kept as f64),
        samples: pairs.len(),
        excluded,
    }
}

/// Prompts request `source`; steering aims at `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionSpec {
    pub source: usize,
    pub target: usize,
}

impl DirectionSpec {
    pub fn new(source: usize, target: usize) -> Result<Self> {
        if source == target {
            return Err(Error::Config(format!("direction {source}→{target} has identical ends")));
        }
        Ok(Self { source, target })
    }
}

/// All `k(k−1)` ordered pairs, source-major.
pub fn all_directions(k: usize) -> Vec<DirectionSpec> {
    (0..k)
        .flat_map(|s| (0..k).filter(move |t| *t != s).map(move |t| DirectionSpec { source: s, target: t }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReportDirection {
    Pair { source: String, target: String },
    Average,
}

/// One prompt of one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub entity: String,
    pub unsteered_text: String,
    pub steered_text: String,
    pub steered_label: Option<usize>,
    pub unsteered_label: Option<usize>,
    pub pre_rating: Option<u8>,
    pub post_rating: Option<u8>,
    pub applied_edits: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub direction: ReportDirection,
    /// Steered success rate toward the target.
    pub success_rate: Option<f64>,
    pub pae: Option<f64>,
    /// Unsteered success rate toward the target (prompt requests the source).
    pub baseline_success_rate: Option<f64>,
    pub samples: usize,
    pub excluded: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub rows: Vec<SampleRow>,
    pub config: SteeringConfig,
}

/// Wall-clock totals of a matrix run; kept apart from the reports because
/// they are not reproducible.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationTiming {
    pub unsteered: Duration,
    pub unsteered_tokens: usize,
    pub steered: Duration,
    pub steered_tokens: usize,
}

impl GenerationTiming {
    pub fn unsteered_per_token(&self) -> Option<f64> {
        (self.unsteered_tokens > 0).then(|| self.unsteered.as_secs_f64() / self.unsteered_tokens as f64)
    }

    pub fn steered_per_token(&self) -> Option<f64> {
        (self.steered_tokens > 0).then(|| self.steered.as_secs_f64() / self.steered_tokens as f64)
    }

    /// Steered over unsteered per-token cost.
    pub fn ratio(&self) -> Option<f64> {
        match (self.steered_per_token(), self.unsteered_per_token()) {
            (Some(s), Some(u)) if u > 0.0 => Some(s / u),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionMatrix {
    /// One row per direction followed by the average row.
    pub reports: Vec<EvalReport>,
    pub timing: GenerationTiming,
}

/// Decoding options for every generation of a matrix run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MatrixOptions {
    #[serde(default)]
    pub hook_mode: HookMode,
    #[serde(default)]
    pub decoding: Decoding,
    /// Keep per-sample rows in the reports.
    #[serde(default)]
    pub keep_rows: bool,
}

struct Sample {
    row: SampleRow,
    steered_elapsed: Duration,
    tokens: usize,
}

/// For each direction A→B: generate unsteered and steered-toward-B responses to
/// every prompt requesting A, then score SR, PAE and the unsteered baseline.
/// `steering.target` is overwritten per direction. A direction whose
/// generations fail is emitted with its error and empty metrics.
pub fn run_direction_matrix(
    runtime: &dyn Runtime,
    stack: &ProbeStack,
    prompts: &[PromptSpec],
    directions: &[DirectionSpec],
    steering: &SteeringConfig,
    judge: &dyn Judge,
    options: &MatrixOptions,
) -> Result<DirectionMatrix> {
    let labels = &stack.label_set;
    let k = labels.len();
    for d in directions {
        if d.source >= k || d.target >= k || d.source == d.target {
            return Err(Error::Config(format!("direction {}→{} invalid for k={k}", d.source, d.target)));
        }
        if !prompts.iter().any(|p| p.label == d.source) {
            return Err(Error::InsufficientData(format!(
                "no prompts request label {:?}",
                labels.get(d.source).map_or("?", |l| l.id.as_str())
            )));
        }
    }
    steering.validate(stack.num_layers(), k)?;

    let generate = GenerateOptions {
        max_tokens: steering.max_tokens,
        hook_mode: options.hook_mode,
        decoding: options.decoding,
    };
    // Unsteered responses depend only on the prompt.
    let unsteered: Vec<Result<GenerationTrace>> = prompts
        .par_iter()
        .map(|p| runtime.generate(&runtime.encode(&p.rendered_text), &generate, None))
        .collect();
    let mut timing = GenerationTiming::default();
    for t in unsteered.iter().flatten() {
        timing.unsteered += t.elapsed;
        timing.unsteered_tokens += t.tokens.len();
    }

    let mut reports = Vec::with_capacity(directions.len() + 1);
    for d in directions {
        let mut config = steering.clone();
        config.target = d.target;
        let members: Vec<usize> = (0..prompts.len()).filter(|&i| prompts[i].label == d.source).collect();
        let outcome: Result<Vec<Sample>> = members
            .par_iter()
            .map(|&i| {
                let prompt = &prompts[i];
                let plain = unsteered[i].as_ref().map_err(|e| Error::Input(e.to_string()))?;
                let steered = steered_generate_with(
                    runtime,
                    stack,
                    &plain.prompt_tokens,
                    &config,
                    options.hook_mode,
                    options.decoding,
                )?;
                Ok(judge_sample(prompt, plain, &steered, judge, d.target))
            })
            .collect();
        let report = match outcome {
            Ok(samples) => {
                for s in &samples {
                    timing.steered += s.steered_elapsed;
                    timing.steered_tokens += s.tokens;
                }
                direction_report(labels, d, &config, samples, options.keep_rows)
            }
            Err(e) => EvalReport {
                direction: pair_direction(labels, d),
                success_rate: None,
                pae: None,
                baseline_success_rate: None,
                samples: members.len(),
                excluded: members.len(),
                error: Some(e.to_string()),
                rows: Vec::new(),
                config,
            },
        };
        reports.push(report);
    }
    reports.push(average_report(&reports, steering));
    Ok(DirectionMatrix { reports, timing })
}

fn judge_sample(
    prompt: &PromptSpec,
    plain: &GenerationTrace,
    steered: &GenerationTrace,
    judge: &dyn Judge,
    target: usize,
) -> Sample {
    let (plain_text, steered_text) = (plain.text(), steered.text());
    let mut errors = Vec::new();
    let steered_label = keep(judge.classify(&steered_text), &mut errors);
    let unsteered_label = keep(judge.classify(&plain_text), &mut errors);
    let pre_rating = keep(judge.rate(&plain_text, target), &mut errors);
    let post_rating = keep(judge.rate(&steered_text, target), &mut errors);
    Sample {
        row: SampleRow {
            entity: prompt.entity.clone(),
            unsteered_text: plain_text,
            steered_text,
            steered_label,
            unsteered_label,
            pre_rating,
            post_rating,
            applied_edits: steered.applied_edits(),
            error: (!errors.is_empty()).then(|| errors.join("; ")),
        },
        steered_elapsed: steered.elapsed,
        tokens: steered.tokens.len(),
    }
}

fn keep<T>(r: Result<T>, errors: &mut Vec<String>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            errors.push(e.to_string());
            None
        }
    }
}

fn pair_direction(labels: &LabelSet, d: &DirectionSpec) -> ReportDirection {
    let id = |i: usize| labels.get(i).map_or_else(|| i.to_string(), |l| l.id.clone());
    ReportDirection::Pair {
        source: id(d.source),
        target: id(d.target),
    }
}

fn direction_report(
    labels: &LabelSet,
    d: &DirectionSpec,
    config: &SteeringConfig,
    samples: Vec<Sample>,
    keep_rows: bool,
) -> EvalReport {
    let rows: Vec<SampleRow> = samples.into_iter().map(|s| s.row).collect();
    let as_result = |v: Option<usize>| v.ok_or_else(|| Error::Judge("excluded".into()));
    let steered: Vec<Result<usize>> = rows.iter().map(|r| as_result(r.steered_label)).collect();
    let baseline: Vec<Result<usize>> = rows.iter().map(|r| as_result(r.unsteered_label)).collect();
    let ratings: Vec<Result<(u8, u8)>> = rows
        .iter()
        .map(|r| match (r.pre_rating, r.post_rating) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::Judge("excluded".into())),
        })
        .collect();
    let sr = indicator_metric(&steered, d.target);
    let base = indicator_metric(&baseline, d.target);
    let shift = rating_metric(&ratings);
    let excluded = rows.iter().filter(|r| r.error.is_some()).count();
    EvalReport {
        direction: pair_direction(labels, d),
        success_rate: sr.value,
        pae: shift.value,
        baseline_success_rate: base.value,
        samples: rows.len(),
        excluded,
        error: None,
        rows: if keep_rows { rows } else { Vec::new() },
        config: config.clone(),
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let kept: Vec<f64> = values.flatten().collect();
    (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64)
}

fn average_report(reports: &[EvalReport], steering: &SteeringConfig) -> EvalReport {
    EvalReport {
        direction: ReportDirection::Average,
        success_rate: mean(reports.iter().map(|r| r.success_rate)),
        pae: mean(reports.iter().map(|r| r.pae)),
        baseline_success_rate: mean(reports.iter().map(|r| r.baseline_success_rate)),
        samples: reports.iter().map(|r| r.samples).sum(),
        excluded: reports.iter().map(|r| r.excluded).sum(),
        error: None,
        rows: Vec::new(),
        config: steering.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(text: &str, prompt: u32) -> GenerationTrace {
        GenerationTrace {
            prompt_text: String::new(),
            prompt_tokens: vec![prompt],
            tokens: vec![0; text.split(' ').count()],
            token_text: text.split(' ').map(str::to_owned).collect(),
            edits: Vec::new(),
            verdicts: Vec::new(),
            elapsed: Duration::ZERO,
        }
    }

    struct Failing;
    impl Judge for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn classify(&self, text: &str) -> Result<usize> {
            if text.contains("x") {
                Err(Error::Judge("boom".into()))
            } else {
                Ok(1)
            }
        }
        fn rate(&self, _: &str, _: usize) -> Result<u8> {
            Ok(3)
        }
    }

    #[test]
    fn success_rate_extremes_and_exclusions() {
        let judge = LexiconJudge::new(&LabelSet::big_five()).unwrap();
        let all = vec![trace("kind warm", 1), trace("gentle", 2)];
        assert_eq!(success_rate(&all, &judge, 2).unwrap().value, Some(1.0));
        assert_eq!(success_rate(&all, &judge, 1).unwrap().value, Some(0.0));
        assert!(success_rate(&[], &judge, 0).is_err());

        let mixed = vec![trace("a", 1), trace("x", 2), trace("b", 3)];
        let m = success_rate(&mixed, &Failing, 1).unwrap();
        assert_eq!((m.value, m.samples, m.excluded), (Some(1.0), 3, 1));
    }

    #[test]
    fn pae_bounds_and_pairing() {
        let judge = LexiconJudge::new(&LabelSet::big_five()).unwrap();
        let pre = vec![trace("calm", 1), trace("plain", 2)];
        let post = vec![trace("tense nervous anxious angry", 1), trace("tense tense tense tense tense", 2)];
        assert_eq!(pae(&pre, &post, &judge, 0).unwrap().value, Some(4.0));
        assert_eq!(pae(&post, &post, &judge, 0).unwrap().value, Some(0.0));
        assert!(matches!(pae(&pre, &post[..1], &judge, 0), Err(Error::Pairing(_))));
        let swapped = vec![post[1].clone(), post[0].clone()];
        assert!(matches!(pae(&pre, &swapped, &judge, 0), Err(Error::Pairing(_))));
    }

    #[test]
    fn directions_cover_every_ordered_pair() {
        let d = all_directions(3);
        assert_eq!(d.len(), 6);
        assert!(d.iter().all(|x| x.source != x.target));
        assert_eq!(all_directions(4).len(), 12);
        assert!(DirectionSpec::new(1, 1).is_err());
    }
}
