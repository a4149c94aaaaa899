//! Whole-pipeline comparisons: meta-prompt section ablation and the
//! S-TEMP / templates-only / one-step / two-step variants.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::corpus_hash;
use crate::domain::{ClassifierConfig, MetaGenConfig, PromptCorpus, QueryTemplate, TaskSpec, Validate, VlmPrompt};
use crate::embedding::EmbeddingBackend;
use crate::eval::{evaluate_corpus, EvalError, LabeledSplit};
use crate::factory::{
    generate_corpus, generate_templates, one_step_variant, templates_only_classifier_inputs, FactoryError,
    GenerationSettings,
};
use crate::llm::{CountingBackend, LlmBackend, ReplayCache};
use crate::meta_prompt::{select_in_context, InContextExample, MetaPromptOptions};

/// The single hand-written template of the baseline.
pub const S_TEMP_TEMPLATE: &str = "a photo of a {}";

pub const STATUS_OK: &str = "ok";
pub const STATUS_NO_TEMPLATES: &str = "no-templates";
pub const STATUS_ERROR: &str = "error";

/// Everything a full pipeline run needs.
pub struct PipelineContext<'a> {
    pub task: &'a TaskSpec,
    pub registry: &'a BTreeMap<String, InContextExample>,
    pub system_prompt: &'a str,
    pub llm: &'a dyn LlmBackend,
    pub cache: Option<&'a ReplayCache>,
    pub embedder: &'a dyn EmbeddingBackend,
    pub split: &'a LabeledSplit,
    pub meta_cfg: MetaGenConfig,
    pub clf_cfg: ClassifierConfig,
    pub settings: GenerationSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub row: String,
    pub options: MetaPromptOptions,
    pub status: String,
    pub accuracy: Option<f64>,
    pub n_templates: Option<usize>,
    pub corpus_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: String,
    pub status: String,
    pub accuracy: Option<f64>,
    pub n_prompts: Option<usize>,
    /// Stage-2 requests that reached the backend (cache hits excluded).
    pub stage2_calls: usize,
    pub corpus_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A corpus made of the filled-in templates themselves.
pub fn templates_only_corpus(
    templates: &[QueryTemplate],
    task: &TaskSpec,
    cfg: &MetaGenConfig,
    llm_id: &str,
) -> Result<PromptCorpus, EvalError> {
    let inputs = templates_only_classifier_inputs(templates, task);
    let entries = inputs
        .into_iter()
        .map(|(class, texts)| {
            let prompts = texts
                .iter()
                .zip(templates)
                .map(|(text, t)| VlmPrompt::new(text, class.clone(), t.template_id.clone(), llm_id))
                .collect();
            (class, prompts)
        })
        .collect();
    Ok(PromptCorpus {
        dataset_name: task.dataset_name.clone(),
        llm_id: llm_id.to_string(),
        entries,
        generation_config: *cfg,
    }
    .validated()?)
}

pub fn s_temp_corpus(task: &TaskSpec, cfg: &MetaGenConfig) -> Result<PromptCorpus, EvalError> {
    let t = QueryTemplate::new(S_TEMP_TEMPLATE)?;
    templates_only_corpus(&[t], task, cfg, "s-temp")
}

/// Rows in the order: no name, no metadata, no in-context prompts, with
/// class names, full.
pub fn meta_prompt_rows() -> Vec<(&'static str, MetaPromptOptions)> {
    let full = MetaPromptOptions::default();
    vec![
        (
            "no-name",
            MetaPromptOptions {
                include_dataset_name: false,
                ..full
            },
        ),
        (
            "no-metadata",
            MetaPromptOptions {
                include_metadata: false,
                ..full
            },
        ),
        (
            "no-in-context",
            MetaPromptOptions {
                include_in_context_prompts: false,
                ..full
            },
        ),
        (
            "+class-names",
            MetaPromptOptions {
                include_class_names: true,
                ..full
            },
        ),
        ("full", full),
    ]
}

struct Evaluated {
    accuracy: f64,
    n_prompts: usize,
    hash: String,
}

fn eval_corpus(ctx: &PipelineContext<'_>, corpus: &PromptCorpus) -> Result<Evaluated, String> {
    let report = evaluate_corpus(corpus, ctx.split, ctx.embedder, &ctx.clf_cfg).map_err(|e| e.to_string())?;
    Ok(Evaluated {
        accuracy: report.top1_accuracy,
        n_prompts: corpus.n_prompts(),
        hash: corpus_hash(corpus).map_err(|e| e.to_string())?,
    })
}

/// Runs stage 1, stage 2 and evaluation once per row. Row failures are
/// recorded in the row; an empty stage-1 result is `no-templates`.
pub fn ablate_meta_prompt(ctx: &PipelineContext<'_>) -> Result<Vec<AblationRow>, EvalError> {
    let ic = select_in_context(ctx.task, ctx.registry).map_err(|e| EvalError::InvalidArgument(e.to_string()))?;
    let rows = meta_prompt_rows()
        .into_iter()
        .map(|(name, options)| {
            let mut row = AblationRow {
                row: name.to_string(),
                options,
                status: STATUS_OK.to_string(),
                accuracy: None,
                n_templates: None,
                corpus_hash: None,
                error: None,
            };
            let stage1 = generate_templates(
                ctx.task,
                ic,
                ctx.system_prompt,
                &options,
                ctx.llm,
                ctx.cache,
                &ctx.meta_cfg,
                &ctx.settings,
            );
            let templates = match stage1 {
                Ok(out) => out.report.templates,
                Err(FactoryError::NoTemplates { .. }) => {
                    row.status = STATUS_NO_TEMPLATES.to_string();
                    return row;
                }
                Err(e) => {
                    warn!("row {name}: {e}");
                    row.status = STATUS_ERROR.to_string();
                    row.error = Some(e.to_string());
                    return row;
                }
            };
            row.n_templates = Some(templates.len());
            let result = generate_corpus(ctx.task, &templates, ctx.llm, ctx.cache, &ctx.meta_cfg, &ctx.settings)
                .map_err(|e| e.to_string())
                .and_then(|c| eval_corpus(ctx, &c));
            match result {
                Ok(ev) => {
                    row.accuracy = Some(ev.accuracy);
                    row.corpus_hash = Some(ev.hash);
                }
                Err(e) => {
                    warn!("row {name}: {e}");
                    row.status = STATUS_ERROR.to_string();
                    row.error = Some(e);
                }
            }
            row
        })
        .collect();
    Ok(rows)
}

fn variant_row(name: &str, calls: usize, outcome: Result<PromptCorpus, String>, ctx: &PipelineContext<'_>) -> VariantRow {
    let mut row = VariantRow {
        variant: name.to_string(),
        status: STATUS_OK.to_string(),
        accuracy: None,
        n_prompts: None,
        stage2_calls: calls,
        corpus_hash: None,
        error: None,
    };
    match outcome.and_then(|c| eval_corpus(ctx, &c)) {
        Ok(ev) => {
            row.accuracy = Some(ev.accuracy);
            row.n_prompts = Some(ev.n_prompts);
            row.corpus_hash = Some(ev.hash);
        }
        Err(e) => {
            warn!("variant {name}: {e}");
            row.status = STATUS_ERROR.to_string();
            row.error = Some(e);
        }
    }
    row
}

/// Rows: S-TEMP, templates-only, 1-step, 2-step. Stage 1 runs once with the
/// default options and feeds both template-based rows.
pub fn compare_pipeline_variants(ctx: &PipelineContext<'_>) -> Result<Vec<VariantRow>, EvalError> {
    let ic = select_in_context(ctx.task, ctx.registry).map_err(|e| EvalError::InvalidArgument(e.to_string()))?;
    let counted = CountingBackend::new(ctx.llm);
    let stage1 = generate_templates(
        ctx.task,
        ic,
        ctx.system_prompt,
        &MetaPromptOptions::default(),
        &counted,
        ctx.cache,
        &ctx.meta_cfg,
        &ctx.settings,
    )
    .map(|o| o.report.templates)
    .map_err(|e| e.to_string());

    let mut rows = vec![variant_row(
        "S-TEMP",
        0,
        s_temp_corpus(ctx.task, &ctx.meta_cfg).map_err(|e| e.to_string()),
        ctx,
    )];

    counted.reset();
    let templates_only = stage1
        .clone()
        .and_then(|ts| templates_only_corpus(&ts, ctx.task, &ctx.meta_cfg, "templates-only").map_err(|e| e.to_string()));
    rows.push(variant_row("templates-only", counted.calls(), templates_only, ctx));

    counted.reset();
    let one = one_step_variant(ctx.task, ic, ctx.system_prompt, &counted, ctx.cache, &ctx.meta_cfg, &ctx.settings)
        .map_err(|e| e.to_string());
    rows.push(variant_row("1-step", counted.calls(), one, ctx));

    counted.reset();
    let two = stage1.and_then(|ts| {
        generate_corpus(ctx.task, &ts, &counted, ctx.cache, &ctx.meta_cfg, &ctx.settings).map_err(|e| e.to_string())
    });
    rows.push(variant_row("2-step", counted.calls(), two, ctx));

    for row in &mut rows {
        if row.status == STATUS_ERROR && row.error.as_deref().is_some_and(|e| e.contains("no usable query templates")) {
            row.status = STATUS_NO_TEMPLATES.to_string();
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{SyntheticBackendConfig, SyntheticEmbedder};
    use crate::eval::SplitItem;
    use crate::llm::SyntheticLlm;
    use crate::meta_prompt::{load_registry, load_system_prompt};
    use std::path::Path;

    fn fixtures() -> std::path::PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
    }

    fn setup() -> (TaskSpec, BTreeMap<String, InContextExample>, String, LabeledSplit) {
        let task = TaskSpec::new(
            "EuroSAT",
            "Sentinel-2 satellite images of land use.",
            vec!["Forest".into(), "River".into(), "Highway".into()],
        );
        let split = LabeledSplit {
            class_order: task.class_labels.clone(),
            items: (0..12)
                .map(|i| SplitItem {
                    key: format!("img{i}"),
                    label_index: i % 3,
                })
                .collect(),
        };
        (
            task,
            load_registry(&fixtures().join("incontext")).unwrap(),
            load_system_prompt(&fixtures().join("system_prompt.txt")).unwrap(),
            split,
        )
    }

    fn small_cfg() -> MetaGenConfig {
        MetaGenConfig {
            n_templates: 4,
            prompts_per_template: 3,
            ..MetaGenConfig::default()
        }
    }

    #[test]
    fn meta_prompt_table() {
        let (task, registry, system, split) = setup();
        let llm = SyntheticLlm::new("m");
        let emb = SyntheticEmbedder::new(SyntheticBackendConfig { dim: 16, seed: 0 }).unwrap();
        let ctx = PipelineContext {
            task: &task,
            registry: &registry,
            system_prompt: &system,
            llm: &llm,
            cache: None,
            embedder: &emb,
            split: &split,
            meta_cfg: small_cfg(),
            clf_cfg: ClassifierConfig::default(),
            settings: GenerationSettings::new("m"),
        };
        let rows = ablate_meta_prompt(&ctx).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.row.as_str()).collect();
        assert_eq!(names, ["no-name", "no-metadata", "no-in-context", "+class-names", "full"]);
        let status = |n: &str| rows.iter().find(|r| r.row == n).unwrap().status.clone();
        assert_eq!(status("no-in-context"), STATUS_NO_TEMPLATES);
        assert_eq!(status("full"), STATUS_OK);
        assert!(rows.iter().filter(|r| r.status == STATUS_OK).all(|r| r.accuracy.is_some()));
    }

    #[test]
    fn variant_table() {
        let (task, registry, system, split) = setup();
        let llm = SyntheticLlm::new("m");
        let emb = SyntheticEmbedder::new(SyntheticBackendConfig { dim: 16, seed: 0 }).unwrap();
        let ctx = PipelineContext {
            task: &task,
            registry: &registry,
            system_prompt: &system,
            llm: &llm,
            cache: None,
            embedder: &emb,
            split: &split,
            meta_cfg: small_cfg(),
            clf_cfg: ClassifierConfig::default(),
            settings: GenerationSettings::new("m"),
        };
        let rows = compare_pipeline_variants(&ctx).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(names, ["S-TEMP", "templates-only", "1-step", "2-step"]);
        assert!(rows.iter().all(|r| r.status == STATUS_OK), "{rows:?}");
        assert_eq!(rows[0].n_prompts, Some(3));
        assert_eq!(rows[1].stage2_calls, 0);
        assert_eq!(rows[1].n_prompts, Some(12));
        assert_eq!(rows[2].stage2_calls, 3);
        assert_eq!(rows[3].stage2_calls, 12);
        assert_ne!(rows[2].corpus_hash, rows[3].corpus_hash);
    }
}
