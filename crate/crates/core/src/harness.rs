//! Benchmark harness: run a labeled dataset through the router and through
//! fixed-mode baselines against the simulated backend, then aggregate and
//! render accuracy, latency and token metrics.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::classifier::ReasoningMode;
use crate::config::RoutingConfig;
use crate::embedding::tokenize;
use crate::guards::GuardAction;
use crate::policy::{ChatMessage, RequestEnvelope, Role};
use crate::router::Router;
use crate::sim::{simulate, CostModel, SimError, SimMeta};

/// Model name the benchmark client puts in requests before routing.
pub const CLIENT_MODEL: &str = "bench-client";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?} (first seen on line {first_line})")]
    DuplicateId { line: usize, id: String, first_line: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("query {id}: {message}")]
    Mutation { id: String, message: String },
    #[error("unsupported report format for {0}")]
    UnsupportedFormat(PathBuf),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchQuery {
    pub id: String,
    #[serde(rename = "category")]
    pub category_label: String,
    pub prompt: String,
}

/// Parse a JSON-lines dataset. Blank lines are skipped; line numbers are 1-based.
pub fn parse_dataset(text: &str) -> Result<Vec<BenchQuery>, BenchError> {
    let mut queries = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let q: BenchQuery = serde_json::from_str(raw).map_err(|e| BenchError::Parse {
            line,
            message: e.to_string(),
        })?;
        if q.id.is_empty() {
            return Err(BenchError::Parse { line, message: "id must not be empty".into() });
        }
        if q.category_label.trim().is_empty() {
            return Err(BenchError::Parse { line, message: "category must not be empty".into() });
        }
        if let Some(first_line) = seen.insert(q.id.clone(), line) {
            return Err(BenchError::DuplicateId { line, id: q.id, first_line });
        }
        queries.push(q);
    }
    Ok(queries)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<BenchQuery>, BenchError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let queries = parse_dataset(&text)?;
    if queries.is_empty() {
        tracing::warn!(path = %path.display(), "dataset is empty");
    }
    Ok(queries)
}

pub fn dataset_to_jsonl(queries: &[BenchQuery]) -> String {
    let mut out = String::new();
    for q in queries {
        out.push_str(&serde_json::to_string(q).expect("query serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmKind {
    /// Policy-driven: decide, mutate, then simulate.
    Router,
    /// Every query forwarded unchanged in one reasoning mode.
    Fixed(ReasoningMode),
}

impl ArmKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Router => "router",
            Self::Fixed(ReasoningMode::On) => "always_on",
            Self::Fixed(ReasoningMode::Off) => "always_off",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArmSpec {
    pub name: String,
    pub kind: ArmKind,
}

impl ArmSpec {
    pub fn fixed(name: impl Into<String>, mode: ReasoningMode) -> Self {
        Self { name: name.into(), kind: ArmKind::Fixed(mode) }
    }
}

/// Which arms to run. The router arm always runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchPlan {
    pub baseline: ArmSpec,
    pub extra_arms: Vec<ArmSpec>,
}

impl Default for BenchPlan {
    fn default() -> Self {
        Self {
            baseline: ArmSpec::fixed("baseline", ReasoningMode::On),
            extra_arms: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub mean_latency_s: f64,
    pub mean_tokens: f64,
    /// Queries sent with reasoning on.
    pub reasoning_on: usize,
    pub blocked: usize,
}

impl CategoryMetrics {
    /// Aggregates given directly rather than measured (e.g. published figures).
    pub fn from_aggregate(n: usize, accuracy: f64, mean_latency_s: f64, mean_tokens: f64) -> Self {
        Self {
            n,
            correct: (accuracy * n as f64).round() as usize,
            accuracy,
            mean_latency_s,
            mean_tokens,
            reasoning_on: 0,
            blocked: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    n: usize,
    correct: usize,
    latency_s: f64,
    tokens: f64,
    reasoning_on: usize,
    blocked: usize,
}

impl Accumulator {
    fn add(&mut self, o: &QueryOutcome) {
        self.n += 1;
        self.correct += usize::from(o.correct);
        self.latency_s += o.latency_ms / 1000.0;
        self.tokens += o.tokens as f64;
        self.reasoning_on += usize::from(o.mode == Some(ReasoningMode::On));
        self.blocked += usize::from(o.mode.is_none());
    }

    fn finish(&self) -> CategoryMetrics {
        let n = self.n.max(1) as f64;
        CategoryMetrics {
            n: self.n,
            correct: self.correct,
            accuracy: self.correct as f64 / n,
            mean_latency_s: self.latency_s / n,
            mean_tokens: self.tokens / n,
            reasoning_on: self.reasoning_on,
            blocked: self.blocked,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub name: String,
    pub kind: ArmKind,
    pub overall: CategoryMetrics,
    pub per_category: BTreeMap<String, CategoryMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    /// Router minus baseline accuracy, in percentage points.
    pub accuracy_pp: f64,
    /// Latency saved relative to the baseline, in percent.
    pub latency_pct: f64,
    /// Tokens saved relative to the baseline, in percent.
    pub tokens_pct: f64,
}

fn saving_pct(baseline: f64, router: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        (baseline - router) / baseline * 100.0
    }
}

impl Deltas {
    pub fn between(router: &CategoryMetrics, baseline: &CategoryMetrics) -> Self {
        Self {
            accuracy_pp: (router.accuracy - baseline.accuracy) * 100.0,
            latency_pct: saving_pct(baseline.mean_latency_s, router.mean_latency_s),
            tokens_pct: saving_pct(baseline.mean_tokens, router.mean_tokens),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub router: ArmMetrics,
    pub baseline: ArmMetrics,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_arms: Vec<ArmMetrics>,
    pub deltas: Deltas,
}

impl MetricsReport {
    pub fn new(seed: u64, router: ArmMetrics, baseline: ArmMetrics, extra_arms: Vec<ArmMetrics>) -> Self {
        let deltas = Deltas::between(&router.overall, &baseline.overall);
        Self { seed, router, baseline, extra_arms, deltas }
    }

    /// A report from overall figures only, with no per-category breakdown.
    pub fn from_aggregates(router: CategoryMetrics, baseline: CategoryMetrics) -> Self {
        let arm = |name: &str, kind, overall| ArmMetrics {
            name: name.into(),
            kind,
            overall,
            per_category: BTreeMap::new(),
        };
        Self::new(
            0,
            arm("router", ArmKind::Router, router),
            arm("baseline", ArmKind::Fixed(ReasoningMode::On), baseline),
            Vec::new(),
        )
    }

    pub fn arms(&self) -> impl Iterator<Item = &ArmMetrics> {
        [&self.router, &self.baseline].into_iter().chain(&self.extra_arms)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct QueryOutcome {
    correct: bool,
    tokens: u64,
    latency_ms: f64,
    /// `None` when the request was blocked.
    mode: Option<ReasoningMode>,
}

fn client_request(prompt: &str) -> RequestEnvelope {
    RequestEnvelope {
        model: CLIENT_MODEL.into(),
        messages: vec![ChatMessage::new(Role::User, prompt)],
        extra: Default::default(),
    }
}

fn run_query(q: &BenchQuery, kind: ArmKind, router: &Router, model: &CostModel) -> Result<QueryOutcome, BenchError> {
    let request = client_request(&q.prompt);
    let (request, mode) = match kind {
        ArmKind::Fixed(mode) => (request, mode),
        ArmKind::Router => {
            let decision = router.decide_request(&request);
            if decision.guard_action == GuardAction::Block {
                // a refused query earns no credit and costs nothing upstream
                return Ok(QueryOutcome { correct: false, tokens: 0, latency_ms: 0.0, mode: None });
            }
            let mutated = router.mutate(request, &decision).map_err(|e| BenchError::Mutation {
                id: q.id.clone(),
                message: e.to_string(),
            })?;
            (mutated, decision.reasoning_mode)
        }
    };
    let meta = SimMeta {
        category_label: q.category_label.clone(),
        reasoning_mode: mode,
        request_id: q.id.clone(),
    };
    let r = simulate(&request, &meta, model)?;
    Ok(QueryOutcome {
        correct: r.answer_correct,
        tokens: r.total_tokens,
        latency_ms: r.latency_ms,
        mode: Some(mode),
    })
}

fn run_arm(spec: &ArmSpec, dataset: &[BenchQuery], router: &Router, model: &CostModel) -> Result<ArmMetrics, BenchError> {
    let outcomes: Vec<QueryOutcome> = dataset
        .par_iter()
        .map(|q| run_query(q, spec.kind, router, model))
        .collect::<Result<_, _>>()?;
    let mut overall = Accumulator::default();
    let mut per: BTreeMap<String, Accumulator> = BTreeMap::new();
    for (q, o) in dataset.iter().zip(&outcomes) {
        overall.add(o);
        per.entry(q.category_label.clone()).or_default().add(o);
    }
    Ok(ArmMetrics {
        name: spec.name.clone(),
        kind: spec.kind,
        overall: overall.finish(),
        per_category: per.into_iter().map(|(k, v)| (k, v.finish())).collect(),
    })
}

/// Run every arm of `plan` over `dataset`. `seed` overrides the cost model's.
pub fn run_bench(
    dataset: &[BenchQuery],
    router: &Router,
    cost_model: &CostModel,
    plan: &BenchPlan,
    seed: Option<u64>,
) -> Result<MetricsReport, BenchError> {
    let model = match seed {
        Some(s) => cost_model.clone().with_seed(s),
        None => cost_model.clone(),
    };
    model.ensure_covers(dataset.iter().map(|q| q.category_label.as_str()))?;
    let routed = ArmSpec { name: "router".into(), kind: ArmKind::Router };
    let router_arm = run_arm(&routed, dataset, router, &model)?;
    let baseline = run_arm(&plan.baseline, dataset, router, &model)?;
    let extra = plan
        .extra_arms
        .iter()
        .map(|a| run_arm(a, dataset, router, &model))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricsReport::new(model.seed, router_arm, baseline, extra))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Result<Self, BenchError> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("md" | "markdown") => Ok(Self::Markdown),
            Some("csv") => Ok(Self::Csv),
            Some("json") => Ok(Self::Json),
            _ => Err(BenchError::UnsupportedFormat(path.to_path_buf())),
        }
    }
}

const MINUS: char = '\u{2212}';

/// `value` with an explicit sign, or no sign when it rounds to zero.
fn signed(value: f64, decimals: usize, suffix: &str) -> String {
    let magnitude = format!("{:.*}", decimals, value.abs());
    if magnitude.bytes().all(|b| b == b'0' || b == b'.') {
        format!("{magnitude}{suffix}")
    } else if value > 0.0 {
        format!("+{magnitude}{suffix}")
    } else {
        format!("{MINUS}{magnitude}{suffix}")
    }
}

/// The improvement triple as printed in the summary, e.g. `+10.24pp, −47.1%, −48.5%`.
/// Savings are shown as reductions, hence the sign flip on latency and tokens.
pub fn improvement_row(d: &Deltas) -> String {
    format!(
        "{}, {}, {}",
        signed(d.accuracy_pp, 2, "pp"),
        signed(-d.latency_pct, 1, "%"),
        signed(-d.tokens_pct, 1, "%")
    )
}

fn grouped(value: f64, decimals: usize) -> String {
    let s = format!("{:.*}", decimals, value.abs());
    let (int, frac) = s.split_once('.').map_or((s.as_str(), None), |(i, f)| (i, Some(f)));
    let mut out = String::new();
    for (i, c) in int.chars().enumerate() {
        if i > 0 && (int.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    if let Some(f) = frac {
        out.push('.');
        out.push_str(f);
    }
    if value < 0.0 && out.bytes().any(|b| b.is_ascii_digit() && b != b'0') {
        out.insert(0, '-');
    }
    out
}

fn summary_cells(m: &CategoryMetrics) -> [String; 3] {
    [
        format!("{:.2}%", m.accuracy * 100.0),
        format!("{:.2}", m.mean_latency_s),
        grouped(m.mean_tokens, 1),
    ]
}

pub fn render_markdown(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str("## Overall\n\n");
    out.push_str("| Method | Avg. Accuracy | Avg. Latency (s) | Avg. Tokens |\n");
    out.push_str("|---|---:|---:|---:|\n");
    for arm in [&report.baseline, &report.router].into_iter().chain(&report.extra_arms) {
        let [a, l, t] = summary_cells(&arm.overall);
        let _ = writeln!(out, "| {} ({}) | {a} | {l} | {t} |", arm.name, arm.kind.label());
    }
    let d = &report.deltas;
    let _ = writeln!(
        out,
        "| Improvement | {} | {} | {} |",
        signed(d.accuracy_pp, 2, "pp"),
        signed(-d.latency_pct, 1, "%"),
        signed(-d.tokens_pct, 1, "%")
    );

    let categories: Vec<&String> = report.router.per_category.keys().collect();
    if !categories.is_empty() {
        out.push_str("\n## Per category\n\n");
        out.push_str("| Category | n | Router acc. | Baseline acc. | Δ acc. | Router lat. (s) | Baseline lat. (s) | Router tokens | Baseline tokens | Reasoning on |\n");
        out.push_str("|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n");
        let empty = CategoryMetrics::default();
        for c in categories {
            let r = &report.router.per_category[c];
            let b = report.baseline.per_category.get(c).unwrap_or(&empty);
            let _ = writeln!(
                out,
                "| {c} | {} | {:.2}% | {:.2}% | {} | {:.2} | {:.2} | {} | {} | {}/{} |",
                r.n,
                r.accuracy * 100.0,
                b.accuracy * 100.0,
                signed((r.accuracy - b.accuracy) * 100.0, 2, "pp"),
                r.mean_latency_s,
                b.mean_latency_s,
                grouped(r.mean_tokens, 1),
                grouped(b.mean_tokens, 1),
                r.reasoning_on,
                r.n,
            );
        }
    }
    let _ = writeln!(out, "\nSeed: {}", report.seed);
    out
}

pub const OVERALL_ROW: &str = "(overall)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    seed: u64,
    role: String,
    arm: String,
    kind: String,
    category: String,
    n: usize,
    correct: usize,
    accuracy: f64,
    mean_latency_s: f64,
    mean_tokens: f64,
    reasoning_on: usize,
    blocked: usize,
}

fn kind_to_str(kind: ArmKind) -> &'static str {
    match kind {
        ArmKind::Router => "router",
        ArmKind::Fixed(ReasoningMode::On) => "fixed_on",
        ArmKind::Fixed(ReasoningMode::Off) => "fixed_off",
    }
}

fn kind_from_str(s: &str) -> Result<ArmKind, BenchError> {
    match s {
        "router" => Ok(ArmKind::Router),
        "fixed_on" => Ok(ArmKind::Fixed(ReasoningMode::On)),
        "fixed_off" => Ok(ArmKind::Fixed(ReasoningMode::Off)),
        other => Err(BenchError::Csv(format!("unknown arm kind {other:?}"))),
    }
}

pub fn render_csv(report: &MetricsReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let roles = ["router", "baseline"].into_iter().chain(std::iter::repeat("extra"));
    for (role, arm) in roles.zip(report.arms()) {
        let rows = std::iter::once((OVERALL_ROW, &arm.overall))
            .chain(arm.per_category.iter().map(|(c, m)| (c.as_str(), m)));
        for (category, m) in rows {
            w.serialize(CsvRow {
                seed: report.seed,
                role: role.into(),
                arm: arm.name.clone(),
                kind: kind_to_str(arm.kind).into(),
                category: category.into(),
                n: m.n,
                correct: m.correct,
                accuracy: m.accuracy,
                mean_latency_s: m.mean_latency_s,
                mean_tokens: m.mean_tokens,
                reasoning_on: m.reasoning_on,
                blocked: m.blocked,
            })
            .expect("csv row serializes");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

/// Rebuild a report from [`render_csv`] output.
pub fn parse_csv(text: &str) -> Result<MetricsReport, BenchError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut seed = 0;
    let mut arms: Vec<(String, ArmMetrics)> = Vec::new();
    for row in r.deserialize::<CsvRow>() {
        let row = row.map_err(|e| BenchError::Csv(e.to_string()))?;
        seed = row.seed;
        let m = CategoryMetrics {
            n: row.n,
            correct: row.correct,
            accuracy: row.accuracy,
            mean_latency_s: row.mean_latency_s,
            mean_tokens: row.mean_tokens,
            reasoning_on: row.reasoning_on,
            blocked: row.blocked,
        };
        if row.category == OVERALL_ROW {
            arms.push((
                row.role,
                ArmMetrics {
                    name: row.arm,
                    kind: kind_from_str(&row.kind)?,
                    overall: m,
                    per_category: BTreeMap::new(),
                },
            ));
        } else {
            let (_, arm) = arms
                .last_mut()
                .ok_or_else(|| BenchError::Csv("category row before its arm's overall row".into()))?;
            arm.per_category.insert(row.category, m);
        }
    }
    let mut router = None;
    let mut baseline = None;
    let mut extra = Vec::new();
    for (role, arm) in arms {
        match role.as_str() {
            "router" => router = Some(arm),
            "baseline" => baseline = Some(arm),
            _ => extra.push(arm),
        }
    }
    let missing = |r: &str| BenchError::Csv(format!("no {r} arm"));
    Ok(MetricsReport::new(
        seed,
        router.ok_or_else(|| missing("router"))?,
        baseline.ok_or_else(|| missing("baseline"))?,
        extra,
    ))
}

pub fn render_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn emit_report(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => render_json(report),
    }
}

/// Render in the format implied by the extension and write to `path`.
pub fn write_report(report: &MetricsReport, path: impl AsRef<Path>) -> Result<(), BenchError> {
    let path = path.as_ref();
    let text = emit_report(report, ReportFormat::from_path(path)?);
    std::fs::write(path, text).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

const TEMPLATES: [&str; 5] = [
    "{u}",
    "Question: {u}?",
    "{u}. Please also cover {w}.",
    "Could you explain {u}, especially {w}?",
    "I need help: {u}",
];

/// A labeled dataset built from each route's own utterances and vocabulary.
pub fn synthesize_dataset(config: &RoutingConfig, per_category: usize, seed: u64) -> Vec<BenchQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(config.routes.len() * per_category);
    for route in &config.routes {
        let mut vocab: Vec<String> = route
            .utterances
            .iter()
            .flat_map(|u| tokenize(u).into_iter())
            .filter(|t| t.len() > 3)
            .collect();
        vocab.sort();
        vocab.dedup();
        for i in 0..per_category {
            let u = route.utterances.choose(&mut rng).expect("validated routes have utterances");
            let words: Vec<&str> = vocab.choose_multiple(&mut rng, 2).map(String::as_str).collect();
            let template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
            let prompt = template.replace("{u}", u).replace("{w}", &words.join(" and "));
            out.push(BenchQuery {
                id: format!("{}-{:03}", route.name, i + 1),
                category_label: route.name.clone(),
                prompt,
            });
        }
    }
    out
}

/// Lowercase, with runs of non-alphanumerics collapsed to `_`.
pub fn normalize_category(raw: &str) -> String {
    let mut out = String::new();
    for c in raw.trim().chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

fn mmlu_record(v: &Value, line: usize) -> Result<BenchQuery, BenchError> {
    let err = |message: String| BenchError::Parse { line, message };
    let field = |name: &str| v.get(name).ok_or_else(|| err(format!("missing field `{name}`")));
    let id = match field("question_id")? {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        other => return Err(err(format!("question_id must be a string or number, got {other}"))),
    };
    let question = field("question")?.as_str().ok_or_else(|| err("question must be a string".into()))?;
    let category = field("category")?.as_str().ok_or_else(|| err("category must be a string".into()))?;
    let mut prompt = question.trim().to_string();
    if let Some(options) = v.get("options").and_then(Value::as_array) {
        for (i, opt) in options.iter().enumerate() {
            let letter = char::from(b'A' + (i % 26) as u8);
            let text = opt.as_str().map(str::to_string).unwrap_or_else(|| opt.to_string());
            let _ = write!(prompt, "\n{letter}. {text}");
        }
    }
    Ok(BenchQuery {
        id: format!("mmlupro-{id}"),
        category_label: normalize_category(category),
        prompt,
    })
}

/// Convert MMLU-Pro records (JSON array or JSON lines) to bench queries.
pub fn convert_mmlu_pro(text: &str) -> Result<Vec<BenchQuery>, BenchError> {
    let trimmed = text.trim_start();
    let records: Vec<(usize, Value)> = if trimmed.starts_with('[') {
        let all: Vec<Value> = serde_json::from_str(text).map_err(|e| BenchError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        all.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect()
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map(|v| (i + 1, v))
                    .map_err(|e| BenchError::Parse { line: i + 1, message: e.to_string() })
            })
            .collect::<Result<_, _>>()?
    };
    let queries = records
        .iter()
        .map(|(line, v)| mmlu_record(v, *line))
        .collect::<Result<Vec<_>, _>>()?;
    // run through the dataset validator so duplicates are caught here too
    parse_dataset(&dataset_to_jsonl(&queries))
}
