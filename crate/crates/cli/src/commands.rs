use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use mpvr_core::ablation::{
    ablate_meta_prompt, compare_pipeline_variants, meta_prompt_rows, templates_only_corpus, PipelineContext,
};
use mpvr_core::classifier::{load_classifier, save_classifier};
use mpvr_core::corpus::{corpus_hash, corpus_path, corpus_stats, import_external, CorpusStats, CORPUS_FORMAT_VERSION};
use mpvr_core::eval::{robustness_run, scaling_curve, truncation_run, Provenance};
use mpvr_core::factory::{
    build_stage1_request, generate_corpus_detailed, one_step_variant, plan_one_step, plan_stage2, PlannedRequest,
};
use mpvr_core::llm::{ChatRequest, LlmBackend, ReplayCache};
use mpvr_core::meta_prompt::{load_registry, load_system_prompt, select_in_context};
use mpvr_core::templates::Rejected;
use mpvr_core::{
    build_classifier, compose_meta_prompt, ensemble_embedding_space, evaluate, generate_templates, load_corpus,
    predict, save_corpus, ClassifierConfig, EmbeddingBackend, EnsembleStrategy, GenerationSettings, InContextExample,
    LabeledSplit, MetaGenConfig, MetaPromptOptions, PredictionResult, PromptCorpus, QueryTemplate, Scorer, SourceSet,
    TaskSpec,
};
use serde::{Deserialize, Serialize};

use crate::backends::{open_llm, EmbSpec, LlmSpec};
use crate::config::RunConfig;
use crate::output::Printer;
use crate::{
    AblateArgs, BuildArgs, Cli, ClassifyArgs, Command, CorpusCommand, DescGenArgs, EnsembleArgs, EvalArgs, Global,
    MetaGenArgs, MetaPromptFlags, StrategyArg, UsageError,
};

const TEMPLATES_ONLY_ID: &str = "templates-only";

/// Stage-1 output as written by `meta-gen`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplatesFile {
    pub dataset_name: String,
    pub llm_id: String,
    pub options: MetaPromptOptions,
    pub request_hash: String,
    pub retried: bool,
    pub templates: Vec<QueryTemplate>,
    #[serde(default)]
    pub rejected: Vec<Rejected>,
}

#[derive(Debug, Serialize)]
struct PlannedCall {
    purpose: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    class_label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    template_id: Option<String>,
    request_hash: String,
    max_tokens: usize,
    predicted_hit: bool,
}

#[derive(Debug, Serialize)]
struct Plan {
    command: &'static str,
    reads: Vec<String>,
    writes: Vec<String>,
    n_requests: usize,
    n_predicted_hits: usize,
    requests: Vec<PlannedCall>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

struct Ctx {
    global: Global,
    cfg: RunConfig,
    printer: Printer,
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

impl Ctx {
    fn meta_cfg(&self) -> Result<MetaGenConfig> {
        let g = &self.global;
        let mut m = self.cfg.meta_gen;
        m.n_templates = g.n_templates.unwrap_or(m.n_templates);
        m.prompts_per_template = g.prompts_per_template.unwrap_or(m.prompts_per_template);
        m.max_tokens = g.max_tokens.unwrap_or(m.max_tokens);
        m.seed = g.seed.unwrap_or(m.seed);
        Ok(mpvr_core::Validate::validated(m)?)
    }

    fn clf_cfg(&self) -> Result<ClassifierConfig> {
        let mut c = self.cfg.classifier;
        c.temperature = self.global.temperature.unwrap_or(c.temperature);
        Ok(mpvr_core::Validate::validated(c)?)
    }

    fn settings(&self) -> Result<GenerationSettings> {
        let mut s = GenerationSettings::new(self.global.model.clone().unwrap_or_else(|| self.cfg.model()));
        if let Some(n) = self.global.max_in_flight {
            if n == 0 {
                bail!(UsageError("--max-in-flight must be at least 1".into()));
            }
            s.max_in_flight = n;
        }
        Ok(s)
    }

    fn llm_spec(&self) -> Result<LlmSpec> {
        LlmSpec::resolve(self.global.llm.as_deref(), &self.cfg)
    }

    fn llm(&self) -> Result<Box<dyn LlmBackend>> {
        open_llm(&self.llm_spec()?, self.global.record.clone())
    }

    fn emb_spec(&self) -> Result<EmbSpec> {
        EmbSpec::resolve(self.global.emb.as_deref(), &self.cfg)
    }

    fn embedder(&self) -> Result<Box<dyn EmbeddingBackend>> {
        self.emb_spec()?.open(self.global.dim.or(self.cfg.embedding.dim))
    }

    fn cache_dir(&self) -> Option<PathBuf> {
        self.global.cache.clone().or_else(|| self.cfg.paths.cache.clone())
    }

    fn cache(&self) -> Result<Option<ReplayCache>> {
        self.cache_dir()
            .map(|d| ReplayCache::open(&d).with_context(|| format!("opening cache {}", d.display())))
            .transpose()
    }

    fn fixtures(&self) -> PathBuf {
        self.global.fixtures.clone().unwrap_or_else(|| self.cfg.fixtures())
    }

    /// Copies a result to `<reports>/<dataset>/<name>.json` when the config
    /// names a reports directory.
    fn keep<T: Serialize>(&self, dataset: &str, name: &str, value: &T) -> Result<()> {
        match &self.cfg.paths.reports {
            Some(root) => {
                let name: String = name.chars().map(|c| if c == '/' || c.is_whitespace() { '_' } else { c }).collect();
                write_json(&root.join(dataset.to_lowercase()).join(format!("{name}.json")), value)
            }
            None => Ok(()),
        }
    }

    fn prompt_inputs(&self) -> Result<(BTreeMap<String, InContextExample>, String)> {
        let dir = self.fixtures();
        let registry = load_registry(&dir.join("incontext"))?;
        let system = load_system_prompt(&dir.join("system_prompt.txt"))?;
        Ok((registry, system))
    }

    fn call(&self, purpose: &str, class: Option<&str>, template: Option<&str>, req: &ChatRequest) -> Result<PlannedCall> {
        let cached = match self.cache()? {
            Some(c) => c.contains(req),
            None => false,
        };
        Ok(PlannedCall {
            purpose: purpose.to_string(),
            class_label: class.map(str::to_string),
            template_id: template.map(str::to_string),
            request_hash: req.request_hash(),
            max_tokens: req.max_tokens,
            predicted_hit: cached || self.llm_spec()?.predicts_hit(req),
        })
    }

    fn planned(&self, purpose: &str, reqs: &[PlannedRequest]) -> Result<Vec<PlannedCall>> {
        reqs.iter()
            .map(|p| self.call(purpose, Some(&p.class_label), Some(&p.template_id), &p.request))
            .collect()
    }

    fn print_plan(&self, command: &'static str, reads: Vec<String>, writes: Vec<String>, requests: Vec<PlannedCall>, note: Option<&str>) -> Result<()> {
        let plan = Plan {
            command,
            reads,
            writes,
            n_requests: requests.len(),
            n_predicted_hits: requests.iter().filter(|r| r.predicted_hit).count(),
            requests,
            note: note.map(str::to_string),
        };
        self.printer.json(&plan)
    }
}

impl From<MetaPromptFlags> for MetaPromptOptions {
    fn from(f: MetaPromptFlags) -> Self {
        Self {
            include_dataset_name: !f.no_name,
            include_metadata: !f.no_metadata,
            include_in_context_prompts: !f.no_in_context,
            include_class_names: f.class_names,
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.global.version {
        let printer = Printer { csv: false };
        return printer.json(&serde_json::json!({
            "name": "mpvr",
            "version": env!("CARGO_PKG_VERSION"),
            "corpus_format_version": CORPUS_FORMAT_VERSION,
        }));
    }
    let Some(command) = cli.command else {
        bail!(UsageError("a subcommand is required".into()));
    };
    // Malformed specs are usage errors even when the command fails earlier.
    if let Some(spec) = &cli.global.llm {
        LlmSpec::parse(spec)?;
    }
    if let Some(spec) = &cli.global.emb {
        EmbSpec::parse(spec)?;
    }
    let cfg = RunConfig::load(cli.global.config.as_deref())?;
    let ctx = Ctx {
        printer: Printer { csv: cli.global.csv },
        global: cli.global,
        cfg,
    };
    match command {
        Command::MetaGen(a) => meta_gen(&ctx, a),
        Command::DescGen(a) => desc_gen(&ctx, a),
        Command::Build(a) => build(&ctx, a),
        Command::Classify(a) => classify(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Ensemble(a) => ensemble(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
        Command::Corpus(c) => corpus(&ctx, c),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_templates(path: &Path) -> Result<Vec<QueryTemplate>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(file) = serde_json::from_str::<TemplatesFile>(&text) {
        return Ok(file.templates);
    }
    let list: Vec<String> = serde_json::from_str(&text)
        .with_context(|| format!("{}: expected meta-gen output or a list of template strings", path.display()))?;
    Ok(list.into_iter().map(QueryTemplate::new).collect::<Result<_, _>>()?)
}

fn meta_gen(ctx: &Ctx, a: MetaGenArgs) -> Result<()> {
    let task = TaskSpec::load(&a.task)?;
    let (registry, system) = ctx.prompt_inputs()?;
    let ic = select_in_context(&task, &registry)?;
    let cfg = ctx.meta_cfg()?;
    let settings = ctx.settings()?;
    let opts = MetaPromptOptions::from(a.flags);

    if ctx.global.dry_run {
        let meta_prompt = compose_meta_prompt(&system, ic, &task, &opts, &cfg)?;
        let req = build_stage1_request(&meta_prompt, &cfg, &settings.model);
        let calls = vec![ctx.call("stage-1", None, None, &req)?];
        return ctx.print_plan("meta-gen", vec![show(&a.task)], vec![show(&a.out)], calls, None);
    }

    info!("stage 1 for {} with {}", task.dataset_name, settings.model);
    let llm = ctx.llm()?;
    let cache = ctx.cache()?;
    let outcome = generate_templates(&task, ic, &system, &opts, &*llm, cache.as_ref(), &cfg, &settings)?;
    let file = TemplatesFile {
        dataset_name: task.dataset_name.clone(),
        llm_id: settings.model.clone(),
        options: opts,
        request_hash: outcome.request_hash.clone(),
        retried: outcome.retried,
        templates: outcome.templates().to_vec(),
        rejected: outcome.report.rejected.clone(),
    };
    write_json(&a.out, &file)?;
    ctx.printer.json(&serde_json::json!({
        "out": show(&a.out),
        "n_templates": file.templates.len(),
        "n_rejected": file.rejected.len(),
        "retried": file.retried,
        "request_hash": file.request_hash,
    }))
}

#[derive(Serialize)]
struct CorpusSummary {
    out: String,
    corpus_hash: String,
    llm_id: String,
    stats: CorpusStats,
}

fn desc_gen(ctx: &Ctx, a: DescGenArgs) -> Result<()> {
    let task = TaskSpec::load(&a.task)?;
    let cfg = ctx.meta_cfg()?;
    let settings = ctx.settings()?;
    let templates = a.templates.as_deref().map(load_templates).transpose()?;
    let file_id = if a.templates_only {
        TEMPLATES_ONLY_ID.to_string()
    } else if a.one_step {
        format!("{}.one-step", settings.model)
    } else {
        settings.model.clone()
    };
    let out = a.out.clone().unwrap_or_else(|| {
        let root = ctx.cfg.paths.corpora.clone().unwrap_or_else(|| PathBuf::from("corpora"));
        corpus_path(&root, &task.dataset_name, &file_id)
    });

    if ctx.global.dry_run {
        let mut reads = vec![show(&a.task)];
        reads.extend(a.templates.as_deref().map(show));
        let calls = if a.templates_only {
            Vec::new()
        } else if a.one_step {
            let (registry, system) = ctx.prompt_inputs()?;
            let ic = select_in_context(&task, &registry)?;
            ctx.planned("one-step", &plan_one_step(&task, ic, &system, &cfg, &settings)?)?
        } else {
            ctx.planned("stage-2", &plan_stage2(&task, templates.as_deref().unwrap_or_default(), &cfg, &settings))?
        };
        return ctx.print_plan("desc-gen", reads, vec![show(&out)], calls, None);
    }

    let corpus = if a.templates_only {
        let ts = templates.unwrap_or_default();
        templates_only_corpus(&ts, &task, &cfg, TEMPLATES_ONLY_ID)?
    } else {
        let llm = ctx.llm()?;
        let cache = ctx.cache()?;
        if a.one_step {
            let (registry, system) = ctx.prompt_inputs()?;
            let ic = select_in_context(&task, &registry)?;
            info!("one-step descriptions for {} classes", task.class_labels.len());
            one_step_variant(&task, ic, &system, &*llm, cache.as_ref(), &cfg, &settings)?
        } else {
            let ts = templates.unwrap_or_default();
            info!("stage 2: {} classes x {} templates", task.class_labels.len(), ts.len());
            let (c, records) = generate_corpus_detailed(&task, &ts, &*llm, cache.as_ref(), &cfg, &settings)?;
            if let Some(path) = &a.records {
                write_json(path, &records)?;
            }
            c
        }
    };
    let hash = save_corpus(&corpus, &out)?;
    ctx.printer.json(&CorpusSummary {
        out: show(&out),
        corpus_hash: hash,
        llm_id: corpus.llm_id.clone(),
        stats: corpus_stats(&corpus),
    })
}

fn class_order(corpus: &PromptCorpus, split: Option<&Path>, task: Option<&Path>) -> Result<Vec<String>> {
    Ok(match (split, task) {
        (Some(s), _) => LabeledSplit::load(s)?.class_order,
        (None, Some(t)) => TaskSpec::load(t)?.class_labels,
        (None, None) => corpus.entries.keys().cloned().collect(),
    })
}

fn build(ctx: &Ctx, a: BuildArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let order = class_order(&corpus, a.split.as_deref(), a.task.as_deref())?;
    let clf_cfg = ctx.clf_cfg()?;
    if ctx.global.dry_run {
        let reads = [Some(&a.corpus), a.split.as_ref(), a.task.as_ref()].into_iter().flatten().map(|p| show(p)).collect();
        return ctx.print_plan("build", reads, vec![show(&a.out)], Vec::new(), None);
    }
    let embedder = ctx.embedder()?;
    let clf = build_classifier(&corpus.texts(), &*embedder, &order, &corpus.llm_id)?;
    save_classifier(&clf, clf_cfg.temperature, &a.out)?;
    ctx.printer.json(&serde_json::json!({
        "out": show(&a.out),
        "classes": clf.class_labels.len(),
        "dim": clf.dim,
        "source_tag": clf.source_tag,
        "temperature": clf_cfg.temperature,
        "corpus_hash": corpus_hash(&corpus)?,
    }))
}

#[derive(Serialize)]
struct Classification {
    image: String,
    #[serde(flatten)]
    prediction: PredictionResult,
}

fn classify(ctx: &Ctx, a: ClassifyArgs) -> Result<()> {
    if ctx.global.dry_run {
        return ctx.print_plan("classify", vec![show(&a.classifier), a.image.clone()], Vec::new(), Vec::new(), None);
    }
    let (clf, header) = load_classifier(&a.classifier)?;
    let tau = ctx.global.temperature.unwrap_or(header.temperature);
    let x = ctx.embedder()?.embed_image(&a.image)?;
    let prediction = predict(&x, &clf, tau)?;
    ctx.printer.json(&Classification {
        image: a.image,
        prediction,
    })
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    if ctx.global.dry_run {
        return ctx.print_plan("eval", vec![show(&a.corpus), show(&a.split)], Vec::new(), Vec::new(), None);
    }
    let embedder = ctx.embedder()?;
    let corpus = load_corpus(&a.corpus)?;
    let split = LabeledSplit::load(&a.split)?;
    let report = mpvr_core::eval::evaluate_corpus(&corpus, &split, &*embedder, &ctx.clf_cfg()?)?;
    ctx.keep(&corpus.dataset_name, &format!("eval-{}", corpus.llm_id), &report)?;
    ctx.printer.row(&report)
}

fn ensemble(ctx: &Ctx, a: EnsembleArgs) -> Result<()> {
    let strategy = match a.strategy {
        StrategyArg::Embedding => EnsembleStrategy::EmbeddingSpace,
        StrategyArg::Probability => EnsembleStrategy::ProbabilitySpace,
    };
    if a.out.is_some() && strategy == EnsembleStrategy::ProbabilitySpace {
        bail!(UsageError("--out needs --strategy embedding".into()));
    }
    if ctx.global.dry_run {
        let mut reads: Vec<String> = a.sources.iter().map(|p| show(p)).collect();
        reads.push(show(&a.split));
        return ctx.print_plan("ensemble", reads, a.out.iter().map(|p| show(p)).collect(), Vec::new(), None);
    }
    let split = LabeledSplit::load(&a.split)?;
    let embedder = ctx.embedder()?;
    let mut clf_cfg = ctx.clf_cfg()?;
    clf_cfg.ensemble_strategy = strategy;

    let mut sources = Vec::new();
    let mut provenance = Vec::new();
    let mut dataset: Option<String> = None;
    for path in &a.sources {
        let corpus = load_corpus(path)?;
        match &dataset {
            Some(d) if *d != corpus.dataset_name => {
                bail!("{} is for dataset {:?}, expected {d:?}", path.display(), corpus.dataset_name)
            }
            _ => dataset = Some(corpus.dataset_name.clone()),
        }
        info!("building source {}", corpus.llm_id);
        let clf = build_classifier(&corpus.texts(), &*embedder, &split.class_order, &corpus.llm_id)?;
        provenance.push(Provenance::of(&corpus, &corpus.llm_id)?);
        sources.push((corpus.llm_id.clone(), clf));
    }
    let set = SourceSet::new(sources)?;
    if let Some(out) = &a.out {
        save_classifier(&ensemble_embedding_space(&set)?, clf_cfg.temperature, out)?;
    }
    let scorer = Scorer::from_sources(set, strategy)?;
    let dataset = dataset.unwrap_or_default();
    let report = evaluate(&dataset, &scorer, &split, &*embedder, &clf_cfg, provenance)?;
    ctx.keep(&dataset, &format!("ensemble-{}", report.source_tags.join("+")), &report)?;
    ctx.printer.row(&report)
}

fn ablate(ctx: &Ctx, a: AblateArgs) -> Result<()> {
    let needs_task = a.meta_prompt || a.variants;
    let required = |p: &Option<PathBuf>, flag: &str| {
        p.clone().ok_or_else(|| UsageError(format!("this protocol needs --{flag}")))
    };

    if needs_task {
        let task_path = required(&a.task, "task")?;
        let task = TaskSpec::load(&task_path)?;
        let (registry, system) = ctx.prompt_inputs()?;
        let cfg = ctx.meta_cfg()?;
        let settings = ctx.settings()?;
        if ctx.global.dry_run {
            let ic = select_in_context(&task, &registry)?;
            let mut calls = Vec::new();
            let rows = if a.meta_prompt {
                meta_prompt_rows()
            } else {
                vec![("stage-1", MetaPromptOptions::default())]
            };
            for (name, opts) in rows {
                match compose_meta_prompt(&system, ic, &task, &opts, &cfg) {
                    Ok(mp) => calls.push(ctx.call(name, None, None, &build_stage1_request(&mp, &cfg, &settings.model))?),
                    Err(e) => info!("row {name}: {e}"),
                }
            }
            if a.variants {
                calls.extend(ctx.planned("one-step", &plan_one_step(&task, ic, &system, &cfg, &settings)?)?);
            }
            let note = "stage-2 requests depend on the stage-1 answers and are not listed";
            return ctx.print_plan("ablate", vec![show(&task_path), show(&a.split)], Vec::new(), calls, Some(note));
        }
        let split = LabeledSplit::load(&a.split)?;
        let llm = ctx.llm()?;
        let cache = ctx.cache()?;
        let embedder = ctx.embedder()?;
        let pctx = PipelineContext {
            task: &task,
            registry: &registry,
            system_prompt: &system,
            llm: &*llm,
            cache: cache.as_ref(),
            embedder: &*embedder,
            split: &split,
            meta_cfg: cfg,
            clf_cfg: ctx.clf_cfg()?,
            settings,
        };
        return if a.meta_prompt {
            let rows = ablate_meta_prompt(&pctx)?;
            ctx.keep(&task.dataset_name, "ablate-meta-prompt", &rows)?;
            ctx.printer.rows(&rows)
        } else {
            let rows = compare_pipeline_variants(&pctx)?;
            ctx.keep(&task.dataset_name, "ablate-variants", &rows)?;
            ctx.printer.rows(&rows)
        };
    }

    let corpus_path = required(&a.corpus, "corpus")?;
    if ctx.global.dry_run {
        return ctx.print_plan("ablate", vec![show(&corpus_path), show(&a.split)], Vec::new(), Vec::new(), None);
    }
    let corpus = load_corpus(&corpus_path)?;
    let split = LabeledSplit::load(&a.split)?;
    let embedder = ctx.embedder()?;
    let clf_cfg = ctx.clf_cfg()?;
    let seed = ctx.meta_cfg()?.seed;
    let dataset = corpus.dataset_name.clone();
    if a.scaling {
        let points = scaling_curve(&corpus, &split, &*embedder, &clf_cfg, &a.fractions, seed)?;
        ctx.keep(&dataset, &format!("ablate-scaling-{}", corpus.llm_id), &points)?;
        ctx.printer.rows(&points)
    } else if a.robustness {
        let runs = a.runs.unwrap_or(10);
        let report = robustness_run(&corpus, &split, &*embedder, &clf_cfg, runs, a.fraction, seed)?;
        ctx.keep(&dataset, &format!("ablate-robustness-{}", corpus.llm_id), &report)?;
        ctx.printer.row(&report)
    } else {
        let runs = a.runs.unwrap_or(5);
        let report = truncation_run(&corpus, &split, &*embedder, &clf_cfg, runs, seed)?;
        ctx.keep(&dataset, &format!("ablate-truncate-{}", corpus.llm_id), &report)?;
        ctx.printer.row(&report)
    }
}

fn corpus(ctx: &Ctx, c: CorpusCommand) -> Result<()> {
    match c {
        CorpusCommand::Stats { path } => ctx.printer.row(&corpus_stats(&load_corpus(&path)?)),
        CorpusCommand::Hash { path } => {
            let hash = corpus_hash(&load_corpus(&path)?)?;
            ctx.printer.json(&serde_json::json!({ "path": show(&path), "corpus_hash": hash }))
        }
        CorpusCommand::Import {
            input,
            dataset,
            llm_id,
            out,
        } => {
            if ctx.global.dry_run {
                return ctx.print_plan("corpus import", vec![show(&input)], vec![show(&out)], Vec::new(), None);
            }
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let corpus = import_external(&text, &dataset, &llm_id, ctx.meta_cfg()?)?;
            let hash = save_corpus(&corpus, &out)?;
            ctx.printer.json(&CorpusSummary {
                out: show(&out),
                corpus_hash: hash,
                llm_id,
                stats: corpus_stats(&corpus),
            })
        }
    }
}
