use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use log::{info, warn};
use serde::Serialize;
use serde_json::{json, Value};

use dforge::annotation::{self, AnnotatedPost, AnnotationSchema};
use dforge::corpus;
use dforge::generation::{
    self, ChatClient, GenerationConfig, GenerationInput, GenerationReport, GenerationTrace, HttpChatClient,
    MockChatClient, MockChatSpec, PromptPlan,
};
use dforge::jsonl::{self, LoadMode};
use dforge::mleval::{self, Averaging, OverlapBasis};
use dforge::net::HttpPolicy;
use dforge::privacy_eval::{
    self, chi_square_gof_with, default_expected, read_survey_csv, tally_survey, ChiSquareForm, HttpPageFetcher,
    HttpSearchClient, MockWeb,
};
use dforge::textmetrics::{self, BertScore, EmbeddingProvider, HashEmbedding, HttpEmbeddingProvider, SimilarityReport};

use crate::config::{RunConfig, SimilarityFn};
use crate::UsageError;

/// Shared state for one command run.
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub mock: Option<PathBuf>,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes pretty JSON into the output directory and returns the file name.
    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<String> {
        jsonl::write_json(&self.path(name), value)?;
        Ok(name.to_string())
    }

    fn write_jsonl<T: Serialize>(&self, name: &str, records: &[T]) -> Result<String> {
        jsonl::write_jsonl(&self.path(name), records)?;
        Ok(name.to_string())
    }
}

pub fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!(UsageError(format!("input file {} does not exist", path.display())));
    }
    Ok(())
}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn load_mode(lenient: bool) -> LoadMode {
    if lenient {
        LoadMode::Lenient
    } else {
        LoadMode::Strict
    }
}

fn corpus_path(arg: &Option<PathBuf>, cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let path = arg
        .clone()
        .or_else(|| cfg.paths.corpus.clone())
        .ok_or_else(|| usage(format!("{command} needs --input or paths.corpus in the config")))?;
    require_file(&path)?;
    Ok(path)
}

fn load_posts(path: &Path, lenient: bool) -> Result<Vec<corpus::Post>> {
    let loaded = corpus::load_posts(path, load_mode(lenient))?;
    for s in &loaded.skipped {
        warn!("{}:{}: skipped ({})", path.display(), s.line, s.message);
    }
    Ok(loaded.records)
}

fn load_traces(path: &Path) -> Result<Vec<GenerationTrace>> {
    Ok(jsonl::read_jsonl(path, LoadMode::Strict)?.records)
}

fn load_annotations(path: &Path, schema: AnnotationSchema) -> Result<Vec<AnnotatedPost>> {
    annotation::import_annotations(path, schema).with_context(|| format!("loading {}", path.display()))
}

fn parse_schema(s: &str) -> Result<AnnotationSchema> {
    s.parse().map_err(usage)
}

#[derive(Debug, Clone, Args)]
pub struct FilterArgs {
    /// Post JSONL; defaults to paths.corpus.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// One subreddit per line.
    #[arg(long)]
    pub blocklist: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub min_words: Option<usize>,
    /// Skip malformed lines instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

impl FilterArgs {
    pub fn prepare(&self, cfg: &mut RunConfig) -> Result<()> {
        let input = corpus_path(&self.input, cfg, "filter")?;
        cfg.paths.corpus = Some(input);
        if let Some(s) = self.seed {
            cfg.filter.sample_seed = s;
        }
        if let Some(f) = self.fraction {
            cfg.filter.sample_fraction = f;
        }
        if let Some(m) = self.min_words {
            cfg.filter.min_words = m;
        }
        if let Some(b) = &self.blocklist {
            cfg.nsfw_blocklist = Some(b.clone());
        }
        if let Some(b) = &cfg.nsfw_blocklist {
            require_file(b)?;
        }
        cfg.filter.clone().validated().map_err(usage)?;
        Ok(())
    }

    pub fn run(&self, ctx: &Ctx) -> Result<Value> {
        let mut fc = ctx.cfg.filter.clone();
        if let Some(b) = &ctx.cfg.nsfw_blocklist {
            fc.load_blocklist(b)?;
        }
        let fc = fc.validated()?;
        let input = ctx.cfg.paths.corpus.as_deref().expect("checked in prepare");
        let posts = load_posts(input, self.lenient)?;
        let (kept, ledger) = corpus::run_filter_pipeline(&posts, &fc);
        for s in &ledger.stages {
            info!("{:>14}: {} rows, {} users", s.stage, s.rows, s.unique_users);
        }
        let corpus_out = ctx.write_jsonl("filtered.jsonl", &kept)?;
        let ledger_out = ctx.write_json("ledger.json", &ledger)?;
        Ok(json!({ "outputs": [corpus_out, ledger_out], "ledger": ledger }))
    }
}

#[derive(Debug, Clone, Args)]
pub struct ImportArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// doccano or native
    #[arg(long, default_value = "doccano")]
    pub schema: String,
    /// File name inside the output directory.
    #[arg(long, default_value = "annotations.jsonl")]
    pub name: String,
}

impl ImportArgs {
    pub fn prepare(&self) -> Result<()> {
        require_file(&self.input)?;
        parse_schema(&self.schema)?;
        Ok(())
    }

    pub fn run(&self, ctx: &Ctx) -> Result<Value> {
        let posts = load_annotations(&self.input, parse_schema(&self.schema)?)?;
        annotation::export_native(&ctx.path(&self.name), &posts)?;
        let out = &self.name;
        let stats = annotation::category_stats(&posts);
        let stats_out = ctx.write_json("category_stats.json", &stats)?;
        info!("imported {} posts", posts.len());
        Ok(json!({ "outputs": [out, stats_out], "posts": posts.len() }))
    }
}

#[derive(Debug, Clone, Args)]
pub struct IaaArgs {
    /// First annotator's annotations.
    #[arg(long)]
    pub a: PathBuf,
    /// Second annotator's annotations.
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value = "native")]
    pub schema: String,
}

impl IaaArgs {
    pub fn prepare(&self) -> Result<()> {
        require_file(&self.a)?;
        require_file(&self.b)?;
        parse_schema(&self.schema)?;
        Ok(())
    }

    pub fn run(&self, ctx: &Ctx) -> Result<Value> {
        let schema = parse_schema(&self.schema)?;
        let report = annotation::pairwise_f1(&load_annotations(&self.a, schema)?, &load_annotations(&self.b, schema)?)?;
        let out = ctx.write_json("iaa.json", &report)?;
        Ok(json!({ "outputs": [out], "iaa": report }))
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Post JSONL; defaults to paths.corpus.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Prompt plan JSON with system, steps and output_marker.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// llama2, llama3 or zephyr.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Pick the temperature on a sample first, then generate with it.
    #[arg(long)]
    pub calibrate: bool,
    #[arg(long)]
    pub lenient: bool,
}

impl GenerateArgs {
    pub fn prepare(&self, cfg: &mut RunConfig) -> Result<()> {
        cfg.paths.corpus = Some(corpus_path(&self.input, cfg, "generate")?);
        if let Some(p) = &self.preset {
            cfg.preset = Some(p.clone());
        }
        if let Some(t) = self.temperature {
            cfg.generation.insert("temperature".into(), Value::from(t));
        }
        if let Some(p) = &self.plan {
            cfg.prompt_plan = Some(p.clone());
        }
        if let Some(p) = &cfg.prompt_plan {
            require_file(p)?;
            PromptPlan::load(p).map_err(usage)?;
        }
        cfg.generation_config()?;
        if self.calibrate {
            check_calibration(cfg)?;
        }
        Ok(())
    }

    pub fn run(&self, ctx: &Ctx) -> Result<Value> {
        let plan = prompt_plan(&ctx.cfg)?;
        let mut gen = ctx.cfg.generation_config()?;
        let client = chat_client(ctx, &plan)?;
        let input = ctx.cfg.paths.corpus.as_deref().expect("checked in prepare");
        let inputs: Vec<GenerationInput> = load_posts(input, self.lenient)?
            .iter()
            .map(GenerationInput::from_post)
            .collect();
        let mut outputs = Vec::new();
        let mut calibration = Value::Null;
        if self.calibrate {
            let (report, path) = calibrate(ctx, &inputs, &plan, &gen, client.as_ref())?;
            gen.temperature = report.chosen_temperature;
            calibration = serde_json::to_value(&report)?;
            outputs.push(path);
        }
        let (traces, report) = generation::generate_corpus(&inputs, &plan, &gen, client.as_ref())?;
        outputs.push(ctx.write_jsonl("traces.jsonl", &traces)?);
        outputs.push(ctx.write_json("generation_report.json", &report)?);
        info!(
            "{} attempted, {} succeeded, {} refused, {} errored",
            report.attempted, report.succeeded, report.refused_final, report.errored
        );
        if GenerationReport::has_transport_failure(&traces) {
            bail!(
                "{} post(s) ended on a transport error; outputs were written to {}",
                report.errored,
                ctx.out.display()
            );
        }
        Ok(json!({ "outputs": outputs, "report": report, "calibration": calibration }))
    }
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    /// Posts taken from the head of the corpus.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Comma-separated temperatures.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub similarity: Option<SimilarityFn>,
}

impl CalibrateArgs {
    pub fn prepare(&self, cfg: &mut RunConfig) -> Result<()> {
        let gen_args = GenerateArgs {
            input: self.input.clone(),
            plan: self.plan.clone(),
            preset: self.preset.clone(),
            temperature: None,
            calibrate: false,
            lenient: false,
        };
        gen_args.prepare(cfg)?;
        if let Some(n) = self.samples {
            cfg.calibration.samples = n;
        }
        if let Some(g) = &self.grid {
            cfg.calibration.grid = g.clone();
        }
        if let Some(s) = self.similarity {
            cfg.calibration.similarity = s;
        }
        check_calibration(cfg)
    }

    pub fn run(&self, ctx: &Ctx) -> Result<Value> {
        let plan = prompt_plan(&ctx.cfg)?;
        let gen = ctx.cfg.generation_config()?;
        let client = chat_client(ctx, &plan)?;
        let input = ctx.cfg.paths.corpus.as_deref().expect("checked in prepare");
        let inputs: Vec<GenerationInput> = load_posts(input, false)?
            .iter()
            .map(GenerationInput::from_post)
            .collect();
        let (report, path) = calibrate(ctx, &inputs, &plan, &gen, client.as_ref())?;
        Ok(json!({ "outputs": [path], "calibration": report }))
    }
}

fn check_calibration(cfg: &RunConfig) -> Result<()> {
    let c = &cfg.calibration;
    if c.samples == 0 {
        bail!(UsageError("calibration.samples must be at least 1".into()));
    }
    if c.grid.is_empty() || c.grid.iter().any(|t| !(*t > 0.0)) {
        bail!(UsageError(
            "calibration.grid must be non-empty with positive temperatures".into()
        ));
    }
    Ok(())
}

fn calibrate(
    ctx: &Ctx,
    inputs: &[GenerationInput],
    plan: &PromptPlan,
    gen: &GenerationConfig,
    client: &dyn ChatClient,
) -> Result<(generation::CalibrationReport, String)> {
    let c = &ctx.cfg.calibration;
    let sample = &inputs[..c.samples.min(inputs.len())];
    let similarity: Box<dyn Fn(&str, &str) -> f64 + Sync> = match c.similarity {
        SimilarityFn::Cosine => Box::new(textmetrics::cosine_tf_text),
        SimilarityFn::Meteor => Box::new(|a: &str, b: &str| textmetrics::pair_report(b, a).meteor),
        SimilarityFn::Bleu3 => Box::new(|a: &str, b: &str| textmetrics::pair_report(b, a).bleu3),
    };
    let report = generation::calibrate_temperature(sample, &c.grid, plan, gen, client, similarity.as_ref())?;
    info!("chose temperature {}", report.chosen_temperature);
    let path = ctx.write_json("calibration.json", &report)?;
    Ok((report, path))
}

fn prompt_plan(cfg: &RunConfig) -> Result<PromptPlan> {
    match &cfg.prompt_plan {
        Some(p) => Ok(PromptPlan::load(p)?),
        None => Ok(PromptPlan::default()),
    }
}

fn chat_client(ctx: &Ctx, plan: &PromptPlan) -> Result<Box<dyn ChatClient>> {
    match &ctx.mock {
        Some(dir) => {
            let spec_path = dir.join("chat.json");
            let mut spec: MockChatSpec = if spec_path.exists() {
                jsonl::read_json(&spec_path)?
            } else {
                MockChatSpec::default()
            };
            if spec.step_prompts.is_empty() {
                spec.step_prompts = plan.steps.clone();
            }
            Ok(Box::new(MockChatClient::new(spec, plan.output_marker.clone())))
        }
        None => Ok(Box::new(HttpChatClient::with_defaults(ctx.cfg.api_key.clone())?)),
    }
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    /// Generation traces JSONL.
    #[arg(long)]
    pub traces: PathBuf,
}

#[derive(Debug, Serialize)]
struct MetricRow {
    id: String,
    #[serde(flatten)]
    surface: SimilarityReport,
    bert_score: Option<BertScore>,
    style_similarity: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricsArgs {
    pub fn prepare(&self, cfg: &RunConfig) -> Result<()> {
        require_file(&self.traces)?;
        let e = &cfg.metrics.embedding;
        if e.endpoint.is_some() && e.dim.is_none() {
            bail!(UsageError(
                "metrics.embedding.dim is required with an embedding endpoint".into()
            ));
        }
        Ok(())
    }

    fn embedder(&self, ctx: &Ctx) -> Result<Option<Box<dyn EmbeddingProvider>>> {
        let e = &ctx.cfg.metrics.embedding;
        if ctx.mock.is_some() {
            return Ok(Some(Box::new(HashEmbedding::new(e.dim.unwrap_or(64).max(1)))));
        }
        match (&e.endpoint, e.dim) {
            (Some(ep), Some(dim)) => Ok(Some(Box::new(HttpEmbeddingProvider::new(
                ep.clone(),
                dim,
                ctx.cfg.api_key.clone(),
            )?))),
            _ => Ok(None),
        }
    }

    pub fn run(&self, ctx: &Ctx) -> Result<Value> {
        let traces = load_traces(&self.traces)?;
        let pairs: Vec<(String, String, String)> = traces
            .iter()
            .filter_map(|t| {
                let text = t.final_text.as_ref().filter(|_| t.is_success())?;
                Some((t.source_post_id.clone(), text.clone(), t.input_text.clone()))
            })
            .collect();
        let scored = textmetrics::score_pairs(&pairs);
        let embedder = self.embedder(ctx)?;
        let mut rows = Vec::with_capacity(scored.len());
        for (rec, (id, synthetic, source)) in scored.into_iter().zip(&pairs) {
            let (mut bert, mut style) = (None, None);
            if let Some(e) = &embedder {
                let b = e
                    .token_vectors(synthetic)
                    .and_then(|c| textmetrics::bert_score(&c, &e.token_vectors(source)?));
                match b {
                    Ok(b) => bert = Some(b),
                    Err(err) => warn!("{id}: no BERTScore ({err})"),
                }
                let s = e
                    .pooled_vector(synthetic)
                    .and_then(|a| textmetrics::style_similarity(&a, &e.pooled_vector(source)?));
                match s {
                    Ok(s) => style = Some(s),
                    Err(err) => warn!("{id}: no style similarity ({err})"),
                }
            }
            rows.push(MetricRow {
                id: rec.id,
                surface: rec.report,
                bert_score: bert,
                style_similarity: style,
            });
        }
        let surface: Vec<SimilarityReport> = rows.iter().map(|r| r.surface).collect();
        let summary = json!({
            "pairs": rows.len(),
            "skipped_unsuccessful": traces.len() - rows.len(),
            "mean": textmetrics::mean_report(&surface),
            "mean_bert_score_f1": mean(rows.iter().filter_map(|r| r.bert_score.map(|b| b.f1))),
            "mean_style_similarity": mean(rows.iter().filter_map(|r| r.style_similarity)),
        });
        let rows_out = ctx.write_jsonl("similarity.jsonl", &rows)?;
        let summary_out = ctx.write_json("similarity_summary.json", &summary)?;
        Ok(json!({ "outputs": [rows_out, summary_out], "summary": summary }))
    }
}

#[derive(Debug, Clone, Args)]
pub struct UnlinkArgs {
    /// Generation traces JSONL; only successful rewrites are scanned.
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

impl UnlinkArgs {
    pub fn prepare(&self, cfg: &mut RunConfig, mock: bool) -> Result<()> {
        require_file(&self.traces)?;
        if let Some(k) = self.k {
            cfg.unlink.k = k;
        }
        if let Some(t) = self.threshold {
            cfg.unlink.threshold = t;
        }
        cfg.unlink.validate().map_err(usage)?;
        if !mock && cfg.search.endpoint.is_none() {
            bail!(UsageError(
                "unlink needs search.endpoint in the config or --mock".into()
            ));
        }
        Ok(())
    }

    pub fn run(&self, ctx: &Ctx) -> Result<Value> {
        let traces: Vec<GenerationTrace> = load_traces(&self.traces)?
            .into_iter()
            .filter(|t| t.is_success() && t.final_text.is_some())
            .collect();
        let posts: Vec<(String, String)> = traces
            .iter()
            .map(|t| (t.source_post_id.clone(), t.final_text.clone().unwrap_or_default()))
            .collect();
        let opts = &ctx.cfg.unlink;
        let records = match &ctx.mock {
            Some(dir) => {
                let web = MockWeb::from_dir(dir)?;
                privacy_eval::unlink_corpus(&posts, &web, &web, opts)?
            }
            None => {
                let endpoint = ctx.cfg.search.endpoint.clone().expect("checked in prepare");
                let search = HttpSearchClient::new(endpoint, ctx.cfg.search_key.clone(), HttpPolicy::default())?;
                privacy_eval::unlink_corpus(&posts, &search, &HttpPageFetcher::new()?, opts)?
            }
        };
        let (kept, accounting) = privacy_eval::apply_threshold(traces, &records, |t| t.source_post_id.as_str())?;
        if accounting.kept_unqueried > 0 {
            warn!("{} post(s) kept without a successful search", accounting.kept_unqueried);
        }
        let outputs = [
            ctx.write_jsonl("unlink.jsonl", &records)?,
            ctx.write_jsonl("kept_traces.jsonl", &kept)?,
            ctx.write_json("threshold_accounting.json", &accounting)?,
        ];
        Ok(json!({ "outputs": outputs, "accounting": accounting }))
    }
}

#[derive(Debug, Clone, Args)]
pub struct SurveyArgs {
    /// CSV with header `respondent,set,correct`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_form)]
    pub form: Option<ChiSquareForm>,
}

fn parse_form(s: &str) -> Result<ChiSquareForm, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| "expected binomial or correct_only".to_string())
}

impl SurveyArgs {
    pub fn prepare(&self, cfg: &mut RunConfig) -> Result<()> {
        require_file(&self.input)?;
        if let Some(f) = self.form {
            cfg.metrics.chi_square_form = f;
        }
        Ok(())
    }

    pub fn run(&self, ctx: &Ctx) -> Result<Value> {
        let responses = read_survey_csv(&self.input)?;
        let tally = tally_survey(&responses, &default_expected())?;
        let chi = chi_square_gof_with(&tally, ctx.cfg.metrics.chi_square_form)?;
        let report = json!({ "tally": tally, "chi_square": chi });
        let out = ctx.write_json("survey.json", &report)?;
        Ok(json!({ "outputs": [out], "chi_square": chi }))
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Post-level predictions `{id, gold, pred}`.
    #[arg(long)]
    pub multilabel: Option<PathBuf>,
    /// Token-level predictions `{id, tokens, gold, pred}`.
    #[arg(long)]
    pub tokens: Option<PathBuf>,
    /// Gold spans (native annotation JSONL).
    #[arg(long, requires = "span_pred")]
    pub span_gold: Option<PathBuf>,
    /// Predicted spans (native annotation JSONL).
    #[arg(long, requires = "span_gold")]
    pub span_pred: Option<PathBuf>,
    #[arg(long, value_parser = parse_averaging)]
    pub averaging: Option<Averaging>,
    #[arg(long)]
    pub min_overlap: Option<f64>,
    #[arg(long, value_parser = parse_basis)]
    pub overlap_basis: Option<OverlapBasis>,
}

fn parse_averaging(s: &str) -> Result<Averaging, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| "expected micro, macro or samples".to_string())
}

fn parse_basis(s: &str) -> Result<OverlapBasis, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| "expected gold or union".to_string())
}

impl EvalArgs {
    fn inputs(&self) -> Vec<&PathBuf> {
        [&self.multilabel, &self.tokens, &self.span_gold, &self.span_pred]
            .into_iter()
            .flatten()
            .collect()
    }

    pub fn prepare(&self, cfg: &mut RunConfig) -> Result<()> {
        let inputs = self.inputs();
        if inputs.is_empty() {
            bail!(UsageError(
                "eval-classifier needs --multilabel, --tokens or --span-gold/--span-pred".into()
            ));
        }
        for p in inputs {
            require_file(p)?;
        }
        if let Some(a) = self.averaging {
            cfg.metrics.averaging = a;
        }
        if let Some(m) = self.min_overlap {
            cfg.metrics.min_overlap = m;
        }
        if let Some(b) = self.overlap_basis {
            cfg.metrics.overlap_basis = b;
        }
        let m = cfg.metrics.min_overlap;
        if !(m > 0.0 && m <= 1.0) {
            bail!(UsageError(format!("min_overlap must be in (0, 1], got {m}")));
        }
        Ok(())
    }

    pub fn run(&self, ctx: &Ctx) -> Result<Value> {
        let m = &ctx.cfg.metrics;
        let mut report = BTreeMap::new();
        if let Some(p) = &self.multilabel {
            let examples = mleval::load_multilabel(p)?;
            report.insert(
                "multilabel",
                serde_json::to_value(mleval::multilabel_metrics_with(&examples, m.averaging)?)?,
            );
        }
        if let Some(p) = &self.tokens {
            let preds = mleval::load_token_predictions(p)?;
            report.insert("token", serde_json::to_value(mleval::token_f1_report(&preds)?)?);
        }
        if let (Some(g), Some(p)) = (&self.span_gold, &self.span_pred) {
            let gold = load_annotations(g, AnnotationSchema::Native)?;
            let pred = load_annotations(p, AnnotationSchema::Native)?;
            let span = mleval::span_f1_corpus(&gold, &pred, m.min_overlap, m.overlap_basis)?;
            report.insert(
                "span",
                json!({ "min_overlap": m.min_overlap, "basis": m.overlap_basis, "scores": span }),
            );
        }
        let out = ctx.write_json("classifier_eval.json", &report)?;
        Ok(json!({ "outputs": [out], "eval": report }))
    }
}

#[derive(Debug, Clone, Args)]
pub struct ProportionArgs {
    /// Annotations of the original corpus.
    #[arg(long)]
    pub original: PathBuf,
    /// Annotations of the synthetic corpus.
    #[arg(long)]
    pub synthetic: PathBuf,
    #[arg(long, default_value = "native")]
    pub schema: String,
}

impl ProportionArgs {
    pub fn prepare(&self) -> Result<()> {
        require_file(&self.original)?;
        require_file(&self.synthetic)?;
        parse_schema(&self.schema)?;
        Ok(())
    }

    pub fn run(&self, ctx: &Ctx) -> Result<Value> {
        let schema = parse_schema(&self.schema)?;
        let cmp = mleval::proportion_comparison(
            &load_annotations(&self.original, schema)?,
            &load_annotations(&self.synthetic, schema)?,
        )?;
        mleval::write_proportion_csv(&ctx.path("proportions.csv"), &cmp)?;
        let csv_out = "proportions.csv";
        let json_out = ctx.write_json("proportions.json", &cmp)?;
        Ok(json!({ "outputs": [csv_out, json_out], "max_abs_deviation": cmp.max_abs_deviation }))
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Generation traces; enables the similarity and unlinkability reports.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    #[arg(long)]
    pub survey: Option<PathBuf>,
    #[arg(long)]
    pub annotations_a: Option<PathBuf>,
    #[arg(long)]
    pub annotations_b: Option<PathBuf>,
    #[arg(long)]
    pub original: Option<PathBuf>,
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    #[arg(long)]
    pub multilabel: Option<PathBuf>,
    #[arg(long)]
    pub tokens: Option<PathBuf>,
    #[arg(long)]
    pub span_gold: Option<PathBuf>,
    #[arg(long)]
    pub span_pred: Option<PathBuf>,
}

/// Report name and the closure producing it.
type Job<'a> = (&'static str, Box<dyn FnOnce() -> Result<Value> + 'a>);

impl ReportArgs {
    fn inputs(&self) -> Vec<&PathBuf> {
        [
            &self.traces,
            &self.survey,
            &self.annotations_a,
            &self.annotations_b,
            &self.original,
            &self.synthetic,
            &self.multilabel,
            &self.tokens,
            &self.span_gold,
            &self.span_pred,
        ]
        .into_iter()
        .flatten()
        .collect()
    }

    pub fn prepare(&self) -> Result<()> {
        let inputs = self.inputs();
        if inputs.is_empty() {
            bail!(UsageError("report needs at least one input".into()));
        }
        for p in inputs {
            require_file(p)?;
        }
        for (a, b, what) in [
            (
                &self.annotations_a,
                &self.annotations_b,
                "--annotations-a and --annotations-b",
            ),
            (&self.original, &self.synthetic, "--original and --synthetic"),
            (&self.span_gold, &self.span_pred, "--span-gold and --span-pred"),
        ] {
            if a.is_some() != b.is_some() {
                bail!(UsageError(format!("{what} go together")));
            }
        }
        Ok(())
    }

    /// Runs every report whose inputs were given. A failing report is recorded
    /// in `summary.json` and does not stop the others.
    pub fn run(&self, ctx: &Ctx) -> Result<Value> {
        let mut jobs: Vec<Job> = Vec::new();
        if let Some(t) = &self.traces {
            let metrics = MetricsArgs { traces: t.clone() };
            jobs.push(("similarity", Box::new(move || metrics.run(ctx))));
            let unlink = UnlinkArgs {
                traces: t.clone(),
                k: None,
                threshold: None,
            };
            if ctx.mock.is_some() || ctx.cfg.search.endpoint.is_some() {
                jobs.push(("unlinkability", Box::new(move || unlink.run(ctx))));
            } else {
                warn!("no search endpoint and no --mock; skipping unlinkability");
            }
        }
        if let (Some(a), Some(b)) = (&self.annotations_a, &self.annotations_b) {
            let iaa = IaaArgs {
                a: a.clone(),
                b: b.clone(),
                schema: "native".into(),
            };
            jobs.push(("iaa", Box::new(move || iaa.run(ctx))));
        }
        if let Some(s) = &self.survey {
            let survey = SurveyArgs {
                input: s.clone(),
                form: None,
            };
            jobs.push(("survey", Box::new(move || survey.run(ctx))));
        }
        if let (Some(o), Some(s)) = (&self.original, &self.synthetic) {
            let prop = ProportionArgs {
                original: o.clone(),
                synthetic: s.clone(),
                schema: "native".into(),
            };
            jobs.push(("proportions", Box::new(move || prop.run(ctx))));
        }
        if self.multilabel.is_some() || self.tokens.is_some() || self.span_gold.is_some() {
            let eval = EvalArgs {
                multilabel: self.multilabel.clone(),
                tokens: self.tokens.clone(),
                span_gold: self.span_gold.clone(),
                span_pred: self.span_pred.clone(),
                averaging: None,
                min_overlap: None,
                overlap_basis: None,
            };
            jobs.push(("classifier", Box::new(move || eval.run(ctx))));
        }

        let mut reports = serde_json::Map::new();
        let (mut succeeded, mut failed) = (Vec::new(), Vec::new());
        for (name, job) in jobs {
            match job() {
                Ok(v) => {
                    succeeded.push(name);
                    reports.insert(name.into(), v);
                }
                Err(e) => {
                    warn!("{name} report failed: {e:#}");
                    failed.push(name);
                    reports.insert(name.into(), json!({ "error": format!("{e:#}") }));
                }
            }
        }
        let summary = json!({ "succeeded": succeeded, "failed": failed, "reports": reports });
        let out = ctx.write_json("summary.json", &summary)?;
        if !failed.is_empty() {
            bail!(
                "report(s) failed: {}; see {}",
                failed.join(", "),
                ctx.path(&out).display()
            );
        }
        Ok(summary)
    }
}
