//! Both LLM stages: meta-prompt → query templates, then template × class →
//! category-specific VLM prompts assembled into a corpus.

use std::collections::BTreeMap;
use std::sync::LazyLock;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    DomainError, LlmQuery, MetaGenConfig, PromptCorpus, QueryTemplate, TaskSpec, Validate, VlmPrompt,
};
use crate::llm::{batch_complete_each, ChatRequest, LlmBackend, LlmError, LlmResponse, ReplayCache};
use crate::meta_prompt::{compose_meta_prompt, InContextExample, MetaPromptError, MetaPromptOptions};
use crate::templates::{extract_templates, ParseReport, Rejected};

/// Template id of prompts produced without stage 1.
pub const ONE_STEP_TEMPLATE_ID: &str = "one-step";

/// Words a kept description must have at least.
pub const MIN_DESCRIPTION_TOKENS: usize = 3;

const STAGE1_REMINDER: &str = "Reply with the queries only, as a fenced list of quoted strings, each containing the placeholder exactly once.";
const STAGE2_REMINDER: &str = "Write each description as a complete sentence on its own line.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactoryError {
    #[error(transparent)]
    MetaPrompt(#[from] MetaPromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Invalid(#[from] DomainError),
    #[error("no descriptions found in response")]
    NoDescriptionsFound,
    #[error("no usable query templates in the stage-1 response ({} rejected)", rejected.len())]
    NoTemplates { rejected: Vec<Rejected> },
    #[error("corpus incomplete, no prompts for: {}", classes.join(", "))]
    CorpusIncomplete {
        classes: Vec<String>,
        last_error: Option<String>,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// How LLM requests are issued.
#[derive(Debug, Clone)]
pub struct GenerationSettings {
    /// Model name sent with every request; also the corpus `llm_id`.
    pub model: String,
    pub max_in_flight: usize,
}

impl GenerationSettings {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            max_in_flight: 4,
        }
    }
}

/// Cache-then-backend when a cache is given, plain backend otherwise.
struct Resolver<'a> {
    backend: &'a dyn LlmBackend,
    cache: Option<&'a ReplayCache>,
}

impl LlmBackend for Resolver<'_> {
    fn complete(&self, req: &ChatRequest) -> Result<LlmResponse, LlmError> {
        let Some(cache) = self.cache else {
            return self.backend.complete(req);
        };
        if let Some(hit) = cache.get(req)? {
            return Ok(hit);
        }
        let resp = self.backend.complete(req)?;
        cache.put(req, &resp)?;
        Ok(resp)
    }
}

fn with_reminder(req: &ChatRequest, reminder: &str) -> ChatRequest {
    let mut retry = req.clone();
    if let Some(last) = retry.messages.last_mut() {
        last.content = format!("{}\n{reminder}", last.content.trim_end());
    }
    retry
}

// --- stage 1 ---------------------------------------------------------------

pub fn build_stage1_request(meta_prompt: &str, cfg: &MetaGenConfig, model: &str) -> ChatRequest {
    ChatRequest::user(
        model,
        meta_prompt,
        cfg.n_templates * cfg.max_tokens,
        cfg.sampling_temperature,
    )
    .with_seed(cfg.seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Outcome {
    pub meta_prompt: String,
    pub request_hash: String,
    pub report: ParseReport,
    /// Whether the reminder re-query was needed.
    pub retried: bool,
}

impl Stage1Outcome {
    pub fn templates(&self) -> &[QueryTemplate] {
        &self.report.templates
    }
}

/// Composes the meta-prompt, asks for templates and parses them. A response
/// without usable templates is re-queried once with a format reminder.
/// At most `cfg.n_templates` templates are kept.
#[allow(clippy::too_many_arguments)]
pub fn generate_templates(
    task: &TaskSpec,
    ic: &InContextExample,
    system_prompt: &str,
    opts: &MetaPromptOptions,
    backend: &dyn LlmBackend,
    cache: Option<&ReplayCache>,
    cfg: &MetaGenConfig,
    settings: &GenerationSettings,
) -> Result<Stage1Outcome, FactoryError> {
    cfg.check()?;
    let meta_prompt = compose_meta_prompt(system_prompt, ic, task, opts, cfg)?;
    let resolver = Resolver { backend, cache };
    let first = build_stage1_request(&meta_prompt, cfg, &settings.model);
    let retry = with_reminder(&first, STAGE1_REMINDER);

    let mut rejected = Vec::new();
    for (attempt, req) in [&first, &retry].into_iter().enumerate() {
        let resp = crate::llm::complete(req, &resolver)?;
        match extract_templates(&resp.text) {
            Ok(mut report) if !report.templates.is_empty() => {
                report.templates.truncate(cfg.n_templates);
                return Ok(Stage1Outcome {
                    meta_prompt,
                    request_hash: req.request_hash(),
                    report,
                    retried: attempt > 0,
                });
            }
            Ok(report) => rejected = report.rejected,
            Err(e) => warn!("stage 1 attempt {}: {e}", attempt + 1),
        }
    }
    Err(FactoryError::NoTemplates { rejected })
}

// --- stage 2 ---------------------------------------------------------------

/// Replaces the placeholder with the label verbatim.
pub fn instantiate(t: &QueryTemplate, class_label: &str) -> LlmQuery {
    LlmQuery {
        template_id: t.template_id.clone(),
        class_label: class_label.to_string(),
        text: t.fill(class_label),
    }
}

pub fn build_stage2_request(q: &LlmQuery, cfg: &MetaGenConfig, model: &str) -> ChatRequest {
    let k = cfg.prompts_per_template;
    let content = format!(
        "{}\nRespond with exactly {k} distinct one-sentence descriptions, one per line, without numbering or extra commentary.",
        q.text
    );
    ChatRequest::user(model, content, k * cfg.max_tokens, cfg.sampling_temperature).with_seed(cfg.seed)
}

static LIST_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:\d+[.)]|[-*•])\s*").unwrap());

const QUOTES: &[char] = &['"', '\'', '“', '”', '‘', '’', '`'];

/// One description per line, list markers and surrounding quotes removed.
/// Lines under [`MIN_DESCRIPTION_TOKENS`] words are dropped.
pub fn parse_description_response(raw: &str) -> Result<Vec<String>, FactoryError> {
    let out: Vec<String> = raw
        .lines()
        .map(|line| {
            let line = LIST_MARKER.replace(line, "");
            line.trim().trim_matches(QUOTES).trim().to_string()
        })
        .filter(|line| line.split_whitespace().count() >= MIN_DESCRIPTION_TOKENS)
        .collect();
    if out.is_empty() {
        Err(FactoryError::NoDescriptionsFound)
    } else {
        Ok(out)
    }
}

/// Provenance of one (class, template) exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub class_label: String,
    pub template_id: String,
    pub request_hash: String,
    pub prompts: Vec<VlmPrompt>,
    pub llm_id: String,
    pub timestamp: u64,
}

struct Job {
    class_label: String,
    template_id: String,
    request: ChatRequest,
    limit: usize,
}

impl Job {
    fn new(p: PlannedRequest, limit: usize) -> Self {
        Self {
            class_label: p.class_label,
            template_id: p.template_id,
            request: p.request,
            limit,
        }
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Resolves every job, re-querying parse failures once with a reminder,
/// and assembles the corpus in class order then job order.
fn run_jobs(
    task: &TaskSpec,
    jobs: Vec<Job>,
    resolver: &Resolver<'_>,
    cfg: &MetaGenConfig,
    settings: &GenerationSettings,
) -> Result<(PromptCorpus, Vec<GenerationRecord>), FactoryError> {
    let requests: Vec<ChatRequest> = jobs.iter().map(|j| j.request.clone()).collect();
    let first = batch_complete_each(&requests, resolver, settings.max_in_flight);

    let mut parsed: Vec<Option<(String, Vec<String>)>> = vec![None; jobs.len()];
    let mut retry_slots = Vec::new();
    let mut last_error = None;
    for (i, result) in first.into_iter().enumerate() {
        match result {
            Ok(resp) => match parse_description_response(&resp.text) {
                Ok(lines) => parsed[i] = Some((jobs[i].request.request_hash(), lines)),
                Err(_) => retry_slots.push(i),
            },
            Err(e) => {
                warn!("skipping {:?} / {}: {e}", jobs[i].class_label, jobs[i].template_id);
                last_error = Some(e.to_string());
            }
        }
    }

    if !retry_slots.is_empty() {
        info!("re-querying {} unparseable response(s)", retry_slots.len());
        let retries: Vec<ChatRequest> = retry_slots
            .iter()
            .map(|&i| with_reminder(&jobs[i].request, STAGE2_REMINDER))
            .collect();
        let results = batch_complete_each(&retries, resolver, settings.max_in_flight);
        for ((&i, req), result) in retry_slots.iter().zip(&retries).zip(results) {
            let outcome = result
                .map_err(FactoryError::from)
                .and_then(|resp| parse_description_response(&resp.text));
            match outcome {
                Ok(lines) => parsed[i] = Some((req.request_hash(), lines)),
                Err(e) => {
                    warn!("skipping {:?} / {} after retry: {e}", jobs[i].class_label, jobs[i].template_id);
                    last_error = Some(e.to_string());
                }
            }
        }
    }

    let timestamp = now();
    let mut entries: BTreeMap<String, Vec<VlmPrompt>> = BTreeMap::new();
    let mut records = Vec::new();
    for (job, outcome) in jobs.into_iter().zip(parsed) {
        let Some((request_hash, mut lines)) = outcome else { continue };
        lines.truncate(job.limit);
        let prompts: Vec<VlmPrompt> = lines
            .iter()
            .map(|l| VlmPrompt::new(l, job.class_label.clone(), job.template_id.clone(), settings.model.clone()))
            .collect();
        entries.entry(job.class_label.clone()).or_default().extend(prompts.iter().cloned());
        records.push(GenerationRecord {
            class_label: job.class_label,
            template_id: job.template_id,
            request_hash,
            prompts,
            llm_id: settings.model.clone(),
            timestamp,
        });
    }

    let missing: Vec<String> = task
        .class_labels
        .iter()
        .filter(|c| entries.get(*c).is_none_or(Vec::is_empty))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(FactoryError::CorpusIncomplete {
            classes: missing,
            last_error,
        });
    }
    let corpus = PromptCorpus {
        dataset_name: task.dataset_name.clone(),
        llm_id: settings.model.clone(),
        entries,
        generation_config: *cfg,
    }
    .validated()?;
    Ok((corpus, records))
}

fn check_inputs(task: &TaskSpec, cfg: &MetaGenConfig, settings: &GenerationSettings) -> Result<(), FactoryError> {
    task.check()?;
    cfg.check()?;
    if settings.max_in_flight == 0 {
        return Err(FactoryError::InvalidInput("max_in_flight must be >= 1".into()));
    }
    Ok(())
}

/// One stage-2 request per (class, template) pair.
pub fn generate_corpus_detailed(
    task: &TaskSpec,
    templates: &[QueryTemplate],
    backend: &dyn LlmBackend,
    cache: Option<&ReplayCache>,
    cfg: &MetaGenConfig,
    settings: &GenerationSettings,
) -> Result<(PromptCorpus, Vec<GenerationRecord>), FactoryError> {
    check_inputs(task, cfg, settings)?;
    if templates.is_empty() {
        return Err(FactoryError::InvalidInput("no templates".into()));
    }
    for t in templates {
        t.check()?;
    }
    let jobs = plan_stage2(task, templates, cfg, settings)
        .into_iter()
        .map(|p| Job::new(p, cfg.prompts_per_template))
        .collect();
    run_jobs(task, jobs, &Resolver { backend, cache }, cfg, settings)
}

/// A first-attempt request and the (class, template) pair it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRequest {
    pub class_label: String,
    pub template_id: String,
    pub request: ChatRequest,
}

/// The stage-2 requests, class-major, exactly as the corpus run issues them.
pub fn plan_stage2(
    task: &TaskSpec,
    templates: &[QueryTemplate],
    cfg: &MetaGenConfig,
    settings: &GenerationSettings,
) -> Vec<PlannedRequest> {
    task.class_labels
        .iter()
        .flat_map(|class| {
            templates.iter().map(move |t| PlannedRequest {
                class_label: class.clone(),
                template_id: t.template_id.clone(),
                request: build_stage2_request(&instantiate(t, class), cfg, &settings.model),
            })
        })
        .collect()
}

pub fn generate_corpus(
    task: &TaskSpec,
    templates: &[QueryTemplate],
    backend: &dyn LlmBackend,
    cache: Option<&ReplayCache>,
    cfg: &MetaGenConfig,
    settings: &GenerationSettings,
) -> Result<PromptCorpus, FactoryError> {
    generate_corpus_detailed(task, templates, backend, cache, cfg, settings).map(|(c, _)| c)
}

/// The meta-prompt extended with a direct request for descriptions of one
/// class, asking for as many prompts as the two-stage path would produce.
pub fn one_step_prompt(
    system_prompt: &str,
    ic: &InContextExample,
    task: &TaskSpec,
    class_label: &str,
    cfg: &MetaGenConfig,
) -> Result<String, FactoryError> {
    let base = compose_meta_prompt(system_prompt, ic, task, &MetaPromptOptions::default(), cfg)?;
    let m = cfg.n_templates * cfg.prompts_per_template;
    Ok(format!(
        "{base}\n=== Direct description request ===\nClass name: {class_label}\nInstead of writing queries, describe images of this class from the target dataset directly. Respond with exactly {m} distinct one-sentence descriptions, one per line.\n"
    ))
}

/// Skips stage 1: one request per class asks for descriptions directly.
pub fn one_step_variant(
    task: &TaskSpec,
    ic: &InContextExample,
    system_prompt: &str,
    backend: &dyn LlmBackend,
    cache: Option<&ReplayCache>,
    cfg: &MetaGenConfig,
    settings: &GenerationSettings,
) -> Result<PromptCorpus, FactoryError> {
    check_inputs(task, cfg, settings)?;
    let m = cfg.n_templates * cfg.prompts_per_template;
    let jobs = plan_one_step(task, ic, system_prompt, cfg, settings)?
        .into_iter()
        .map(|p| Job::new(p, m))
        .collect();
    run_jobs(task, jobs, &Resolver { backend, cache }, cfg, settings).map(|(c, _)| c)
}

/// One request per class for the single-stage variant.
pub fn plan_one_step(
    task: &TaskSpec,
    ic: &InContextExample,
    system_prompt: &str,
    cfg: &MetaGenConfig,
    settings: &GenerationSettings,
) -> Result<Vec<PlannedRequest>, FactoryError> {
    let m = cfg.n_templates * cfg.prompts_per_template;
    task.class_labels
        .iter()
        .map(|class| {
            let content = one_step_prompt(system_prompt, ic, task, class, cfg)?;
            Ok(PlannedRequest {
                class_label: class.clone(),
                template_id: ONE_STEP_TEMPLATE_ID.to_string(),
                request: ChatRequest::user(&settings.model, content, m * cfg.max_tokens, cfg.sampling_temperature)
                    .with_seed(cfg.seed),
            })
        })
        .collect()
}

/// The instantiated templates themselves, per class; no LLM involved.
pub fn templates_only_classifier_inputs(
    templates: &[QueryTemplate],
    task: &TaskSpec,
) -> BTreeMap<String, Vec<String>> {
    task.class_labels
        .iter()
        .map(|class| (class.clone(), templates.iter().map(|t| t.fill(class)).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{CountingBackend, SyntheticLlm};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn task(labels: &[&str]) -> TaskSpec {
        TaskSpec::new(
            "EuroSAT",
            "Sentinel-2 satellite images of land use.",
            labels.iter().map(|s| s.to_string()).collect(),
        )
    }

    fn templates(texts: &[&str]) -> Vec<QueryTemplate> {
        texts.iter().map(|t| QueryTemplate::new(*t).unwrap()).collect()
    }

    fn cfg() -> MetaGenConfig {
        MetaGenConfig::default()
    }

    #[test]
    fn instantiation_is_verbatim() {
        let q = instantiate(&QueryTemplate::new("Describe a photo of a {}.").unwrap(), "annual crop land");
        assert_eq!(q.text, "Describe a photo of a annual crop land.");
        let q = instantiate(&QueryTemplate::new("{} seen from a satellite.").unwrap(), "forest");
        assert_eq!(q.text, "forest seen from a satellite.");
        let q = instantiate(&QueryTemplate::new("What is a {}").unwrap(), "River");
        assert_eq!(q.text, "What is a River");
    }

    #[test]
    fn stage2_budget() {
        let q = instantiate(&QueryTemplate::new("How does a {} look?").unwrap(), "forest");
        let req = build_stage2_request(&q, &cfg(), "m");
        assert_eq!(req.max_tokens, 500);
        assert!(req.last_user_content().contains("How does a forest look?"));
        let one = MetaGenConfig {
            prompts_per_template: 1,
            ..cfg()
        };
        assert_eq!(build_stage2_request(&q, &one, "m").max_tokens, 50);
    }

    #[test]
    fn description_parsing() {
        let out = parse_description_response(
            "1. A satellite photo of forest canopy.\n2. Dense green forest from above.",
        )
        .unwrap();
        assert_eq!(out, vec!["A satellite photo of forest canopy.", "Dense green forest from above."]);
        assert_eq!(parse_description_response("- x").unwrap_err(), FactoryError::NoDescriptionsFound);
        let out = parse_description_response("\"A quoted line here.\"\n• “Curly quoted line here”\n3) 'single quotes too'").unwrap();
        assert_eq!(out, vec!["A quoted line here.", "Curly quoted line here", "single quotes too"]);
        let out = parse_description_response("\n\n* too short\n  - A long enough line  \n").unwrap();
        assert_eq!(out, vec!["A long enough line"]);
    }

    #[test]
    fn corpus_counts_and_warm_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::open(dir.path()).unwrap();
        let llm = CountingBackend::new(SyntheticLlm::new("mock"));
        let ts = templates(&["What does a {} look like?", "Describe a {} from above.", "How is a {} textured?"]);
        let t = task(&["Forest", "River"]);
        let settings = GenerationSettings::new("mock");
        let c1 = generate_corpus(&t, &ts, &llm, Some(&cache), &cfg(), &settings).unwrap();
        assert!(c1.entries.values().all(|p| p.len() == 30));
        assert_eq!(llm.calls(), 6);

        llm.reset();
        let c2 = generate_corpus(&t, &ts, &llm, Some(&cache), &cfg(), &settings).unwrap();
        assert_eq!(llm.calls(), 0);
        assert_eq!(c1, c2);
    }

    #[test]
    fn over_long_responses_are_trimmed() {
        struct Chatty;
        impl LlmBackend for Chatty {
            fn complete(&self, req: &ChatRequest) -> Result<LlmResponse, LlmError> {
                let lines: Vec<String> = (0..25).map(|i| format!("description number {i} of it")).collect();
                Ok(LlmResponse::stop(lines.join("\n"), req.model.clone()))
            }
        }
        let c = generate_corpus(
            &task(&["Forest"]),
            &templates(&["a {} photo"]),
            &Chatty,
            None,
            &cfg(),
            &GenerationSettings::new("m"),
        )
        .unwrap();
        assert_eq!(c.entries["Forest"].len(), 10);
        assert_eq!(c.entries["Forest"][0].text, "description number 0 of it");
    }

    /// Answers tersely to the first request for "River" and fine otherwise.
    struct FlakyRiver {
        river_calls: AtomicUsize,
        always_bad: bool,
    }

    impl LlmBackend for FlakyRiver {
        fn complete(&self, req: &ChatRequest) -> Result<LlmResponse, LlmError> {
            let content = req.last_user_content();
            if content.contains("River") {
                let n = self.river_calls.fetch_add(1, Ordering::SeqCst);
                if n == 0 || self.always_bad {
                    return Ok(LlmResponse::stop("ok", "m"));
                }
                assert!(content.contains(STAGE2_REMINDER));
            }
            SyntheticLlm::new("m").complete(req)
        }
    }

    #[test]
    fn parse_failure_is_retried_once() {
        let llm = FlakyRiver {
            river_calls: AtomicUsize::new(0),
            always_bad: false,
        };
        let c = generate_corpus(
            &task(&["Forest", "River"]),
            &templates(&["a {} photo"]),
            &llm,
            None,
            &cfg(),
            &GenerationSettings::new("m"),
        )
        .unwrap();
        assert_eq!(c.entries["River"].len(), 10);
        assert_eq!(llm.river_calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn persistent_failure_names_class() {
        let llm = FlakyRiver {
            river_calls: AtomicUsize::new(0),
            always_bad: true,
        };
        let err = generate_corpus(
            &task(&["Forest", "River"]),
            &templates(&["a {} photo"]),
            &llm,
            None,
            &cfg(),
            &GenerationSettings::new("m"),
        )
        .unwrap_err();
        match err {
            FactoryError::CorpusIncomplete { classes, .. } => assert_eq!(classes, vec!["River".to_string()]),
            other => panic!("{other:?}"),
        }
        assert_eq!(llm.river_calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn templates_only_cross_product() {
        let ts = templates(&["a {} photo", "the {} seen from above", "{} texture"]);
        let out = templates_only_classifier_inputs(&ts, &task(&["Forest", "River"]));
        assert_eq!(out.len(), 2);
        for (class, lines) in &out {
            assert_eq!(lines.len(), 3);
            assert!(lines.iter().all(|l| l.contains(class.as_str())));
        }
    }

    #[test]
    fn empty_class_list_rejected() {
        let err = generate_corpus(
            &task(&[]),
            &templates(&["a {} photo"]),
            &SyntheticLlm::new("m"),
            None,
            &cfg(),
            &GenerationSettings::new("m"),
        );
        assert!(matches!(err, Err(FactoryError::Invalid(_))));
    }

    fn fixtures() -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
    }

    fn stage1(opts: MetaPromptOptions, llm: &dyn LlmBackend) -> Result<Stage1Outcome, FactoryError> {
        let registry = crate::meta_prompt::load_registry(&fixtures().join("incontext")).unwrap();
        let system = crate::meta_prompt::load_system_prompt(&fixtures().join("system_prompt.txt")).unwrap();
        let t = task(&["Forest", "River"]);
        let ic = crate::meta_prompt::select_in_context(&t, &registry).unwrap();
        let cfg = MetaGenConfig {
            n_templates: 12,
            ..cfg()
        };
        generate_templates(&t, ic, &system, &opts, llm, None, &cfg, &GenerationSettings::new("m"))
    }

    #[test]
    fn stage1_yields_requested_templates() {
        let llm = CountingBackend::new(SyntheticLlm::new("m"));
        let out = stage1(MetaPromptOptions::default(), &llm).unwrap();
        assert_eq!(out.templates().len(), 12);
        assert!(!out.retried);
        assert_eq!(llm.calls(), 1);
    }

    #[test]
    fn stage1_without_examples_fails_after_one_retry() {
        let llm = CountingBackend::new(SyntheticLlm::new("m"));
        let opts = MetaPromptOptions {
            include_in_context_prompts: false,
            ..MetaPromptOptions::default()
        };
        let err = stage1(opts, &llm).unwrap_err();
        assert!(matches!(err, FactoryError::NoTemplates { .. }), "{err:?}");
        assert_eq!(llm.calls(), 2);
    }

    #[test]
    fn one_step_differs_from_two_step() {
        let registry = crate::meta_prompt::load_registry(&fixtures().join("incontext")).unwrap();
        let system = crate::meta_prompt::load_system_prompt(&fixtures().join("system_prompt.txt")).unwrap();
        let t = task(&["Forest", "River"]);
        let ic = crate::meta_prompt::select_in_context(&t, &registry).unwrap();
        let cfg = MetaGenConfig {
            n_templates: 3,
            prompts_per_template: 4,
            ..cfg()
        };
        let settings = GenerationSettings::new("m");
        let llm = SyntheticLlm::new("m");
        let one = one_step_variant(&t, ic, &system, &llm, None, &cfg, &settings).unwrap();
        assert!(one.entries.values().all(|p| p.len() == 12));
        assert!(one.entries.values().flatten().all(|p| p.template_id == ONE_STEP_TEMPLATE_ID));
        let ts = templates(&["a {} photo", "the {} from above", "{} texture closeup"]);
        let two = generate_corpus(&t, &ts, &llm, None, &cfg, &settings).unwrap();
        assert_eq!(two.n_prompts(), one.n_prompts());
        assert_ne!(
            crate::corpus::corpus_hash(&one).unwrap(),
            crate::corpus::corpus_hash(&two).unwrap()
        );
    }
}
