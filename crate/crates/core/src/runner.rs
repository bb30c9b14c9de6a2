//! End-to-end experiment orchestration.
//!
//! One run walks `samples x strategies`: the optimizer rewrites each
//! sample's target source once per strategy (it never sees any query), then
//! each of the sample's five queries becomes a task — generate the answer
//! over the original sources and over the sources with the target swapped
//! for the rewrite, score the target in both, and record normalized
//! improvements. Before-answers and their scores depend only on (sample,
//! query), so they are computed once and shared across strategies.
//!
//! Everything persists incrementally under the run directory —
//! `results.jsonl` for task results, `traces/` for optimization traces — and
//! a rerun of an interrupted run completes only what is missing. Per-task
//! failures are logged and excluded from means; they never abort the run.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{load_dataset, sample_subset, BenchSample};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, GenParams};
use crate::gse::{GeneratedAnswer, Simulator};
use crate::metrics::{
    improvement_report, metric_names, objective_scores, ImprovementRecord, Judge, ObjectiveScores,
    SubjectiveScores, SUBJECTIVE_AVERAGE,
};
use crate::strategy::{Optimizer, OptimizationTrace, StrategyId};
use crate::templates::TemplateSet;
use crate::viz::svg_bar_chart;

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset_path: PathBuf,
    pub strategies: Vec<StrategyId>,
    pub sample_count: usize,
    pub seed: u64,
    pub generator_model: String,
    pub optimizer_model: String,
    pub judge_model: String,
    pub concurrency_limit: usize,
    pub output_dir: PathBuf,
    /// Backend spec string (`scripted:<path>` etc.); CLI flags override it.
    pub backend: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub template_dir: Option<PathBuf>,
    pub generation: GenParams,
    pub judge_params: GenParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset_path: PathBuf::new(),
            strategies: vec![StrategyId::RaidGseo],
            sample_count: 100,
            seed: 42,
            generator_model: "default-model".into(),
            optimizer_model: "default-model".into(),
            judge_model: "default-model".into(),
            concurrency_limit: 2,
            output_dir: PathBuf::from("runs"),
            backend: None,
            cache_dir: None,
            template_dir: None,
            generation: GenParams::generation(),
            judge_params: GenParams::judge(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dataset: PathBuf,
    strategies: Vec<StrategyId>,
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default = "default_concurrency")]
    concurrency: usize,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    backend: Option<String>,
    #[serde(default)]
    cache_dir: Option<PathBuf>,
    #[serde(default)]
    template_dir: Option<PathBuf>,
    #[serde(default)]
    models: RawModels,
    #[serde(default)]
    generation: Option<RawParams>,
    #[serde(default)]
    judge: Option<RawParams>,
}

fn default_samples() -> usize {
    100
}
fn default_seed() -> u64 {
    42
}
fn default_concurrency() -> usize {
    2
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Deserialize)]
struct RawModels {
    #[serde(default = "default_model")]
    generator: String,
    #[serde(default = "default_model")]
    optimizer: String,
    #[serde(default = "default_model")]
    judge: String,
}

fn default_model() -> String {
    "default-model".into()
}

impl Default for RawModels {
    fn default() -> Self {
        RawModels {
            generator: default_model(),
            optimizer: default_model(),
            judge: default_model(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    temperature: Option<f64>,
    top_p: Option<f64>,
    max_tokens: Option<u32>,
    seed_hint: Option<i64>,
}

impl RawParams {
    fn apply(&self, mut base: GenParams) -> GenParams {
        if let Some(t) = self.temperature {
            base.temperature = t;
        }
        if let Some(p) = self.top_p {
            base.top_p = p;
        }
        if let Some(m) = self.max_tokens {
            base.max_tokens = m;
        }
        if self.seed_hint.is_some() {
            base.seed_hint = self.seed_hint;
        }
        base
    }
}

impl ExperimentConfig {
    /// Load the TOML config format. Relative paths inside the file resolve
    /// against the file's directory.
    pub fn from_toml_file(path: &Path) -> Result<ExperimentConfig> {
        if !path.exists() {
            return Err(Error::ConfigNotFound {
                path: path.to_path_buf(),
            });
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: RawConfig = toml::from_str(&text).map_err(|e| Error::ConfigError {
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| -> PathBuf {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let config = ExperimentConfig {
            dataset_path: resolve(&raw.dataset),
            strategies: raw.strategies,
            sample_count: raw.samples,
            seed: raw.seed,
            generator_model: raw.models.generator,
            optimizer_model: raw.models.optimizer,
            judge_model: raw.models.judge,
            concurrency_limit: raw.concurrency,
            output_dir: resolve(&raw.output_dir),
            backend: raw.backend,
            cache_dir: raw.cache_dir.as_deref().map(resolve),
            template_dir: raw.template_dir.as_deref().map(resolve),
            generation: raw
                .generation
                .as_ref()
                .map(|p| p.apply(GenParams::generation()))
                .unwrap_or_else(GenParams::generation),
            judge_params: raw
                .judge
                .as_ref()
                .map(|p| p.apply(GenParams::judge()))
                .unwrap_or_else(GenParams::judge),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::ConfigError {
                reason: "strategies must be non-empty".into(),
            });
        }
        if self.sample_count < 1 {
            return Err(Error::ConfigError {
                reason: "samples must be at least 1".into(),
            });
        }
        if self.concurrency_limit < 1 {
            return Err(Error::ConfigError {
                reason: "concurrency must be at least 1".into(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.strategies {
            if !seen.insert(s) {
                return Err(Error::ConfigError {
                    reason: format!("strategy {s} listed twice"),
                });
            }
        }
        Ok(())
    }

    /// Content address of a run: the semantic configuration plus a hash of
    /// the dataset bytes and the template version. Volatile paths stay out
    /// so the digest travels across machines.
    pub fn run_digest(&self, template_version: &str) -> Result<String> {
        let dataset_bytes = fs::read(&self.dataset_path).map_err(|e| Error::io(&self.dataset_path, e))?;
        #[derive(Serialize)]
        struct Canon<'a> {
            dataset_sha256: String,
            strategies: &'a [StrategyId],
            sample_count: usize,
            seed: u64,
            generator_model: &'a str,
            optimizer_model: &'a str,
            judge_model: &'a str,
            generation: &'a GenParams,
            judge_params: &'a GenParams,
            template_version: &'a str,
        }
        let canon = Canon {
            dataset_sha256: hex::encode(Sha256::digest(&dataset_bytes)),
            strategies: &self.strategies,
            sample_count: self.sample_count,
            seed: self.seed,
            generator_model: &self.generator_model,
            optimizer_model: &self.optimizer_model,
            judge_model: &self.judge_model,
            generation: &self.generation,
            judge_params: &self.judge_params,
            template_version,
        };
        let payload = serde_json::to_string(&canon).expect("config serializes");
        Ok(hex::encode(Sha256::digest(payload.as_bytes())))
    }
}

// ---------------------------------------------------------------------------
// task results

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub objective: ObjectiveScores,
    pub subjective: SubjectiveScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub sample_id: String,
    pub strategy: StrategyId,
    /// 0-based index into the sample's five queries.
    pub query_index: usize,
    pub query: String,
    pub before: ScorePair,
    pub after: ScorePair,
    pub improvements: Vec<ImprovementRecord>,
    /// Run-relative path of the stored optimization trace.
    pub trace_ref: String,
}

impl TaskResult {
    pub fn improvement_pct(&self, metric: &str) -> Option<f64> {
        self.improvements
            .iter()
            .find(|r| r.metric_name == metric)
            .map(|r| r.improvement_pct)
    }

    fn key(&self) -> TaskKey {
        (self.sample_id.clone(), self.strategy, self.query_index)
    }
}

type TaskKey = (String, StrategyId, usize);

/// Fraction of tasks whose average subjective improvement is strictly
/// positive.
pub fn adaptability_rate(results: &[TaskResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyInput {
            what: "task results".into(),
        });
    }
    let positive = results
        .iter()
        .filter(|r| r.improvement_pct(SUBJECTIVE_AVERAGE).unwrap_or(0.0) > 0.0)
        .count();
    Ok(positive as f64 / results.len() as f64)
}

/// Score the target source of one (sample, query, strategy) task. `before`
/// carries the shared original-sources answer and scores when the caller
/// already has them; otherwise they are generated here.
pub fn run_task(
    simulator: &Simulator,
    judge: &Judge,
    sample: &BenchSample,
    query_index: usize,
    strategy: StrategyId,
    optimized_text: &str,
    before: Option<&(GeneratedAnswer, ScorePair)>,
) -> Result<TaskResult> {
    let query = sample
        .query_group
        .all()
        .nth(query_index)
        .ok_or_else(|| Error::InvalidInput {
            reason: format!("query index {query_index} out of range"),
        })?
        .to_string();

    let before_scores = match before {
        Some(pair) => pair.1.clone(),
        None => {
            let answer = simulator.generate_response(&query, &sample.sources)?;
            score_target(judge, &answer, sample, &query)?
        }
    };

    let after_sources = sample.sources_with_target_text(optimized_text);
    let after_answer = simulator.generate_response(&query, &after_sources)?;
    let after_scores = score_target(judge, &after_answer, sample, &query)?;

    let improvements = improvement_report(
        &(before_scores.objective, before_scores.subjective.clone()),
        &(after_scores.objective, after_scores.subjective.clone()),
    )?;

    Ok(TaskResult {
        sample_id: sample.sample_id.clone(),
        strategy,
        query_index,
        query,
        before: before_scores,
        after: after_scores,
        improvements,
        trace_ref: trace_ref(&sample.sample_id, strategy),
    })
}

fn score_target(judge: &Judge, answer: &GeneratedAnswer, sample: &BenchSample, query: &str) -> Result<ScorePair> {
    let target = sample.target_source();
    Ok(ScorePair {
        objective: objective_scores(answer, sample.target_index)?,
        subjective: judge.subjective_scores(answer, target, query)?,
    })
}

fn trace_ref(sample_id: &str, strategy: StrategyId) -> String {
    format!("traces/{sample_id}-{strategy}.json")
}

// ---------------------------------------------------------------------------
// aggregation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMean {
    pub metric: String,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: StrategyId,
    pub completed_tasks: usize,
    pub failed_tasks: usize,
    pub means: Vec<MetricMean>,
    pub adaptability_rate: f64,
}

impl StrategyRow {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.means.iter().find(|m| m.metric == metric).map(|m| m.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<StrategyRow>,
    pub config_digest: String,
    pub template_version: String,
    pub total_tasks: usize,
    pub completed_tasks: usize,
    pub failed_tasks: usize,
    /// Wall-clock bounds of the producing run; kept out of the rendered
    /// report files so those stay byte-deterministic.
    pub started_unix: u64,
    pub finished_unix: u64,
}

/// Pure fold from task results to per-strategy means. Order of results does
/// not matter; rows follow `strategies` order, tasks sort by key inside.
pub fn aggregate(
    results: &[TaskResult],
    strategies: &[StrategyId],
    expected_per_strategy: usize,
) -> Vec<StrategyRow> {
    let mut by_strategy: BTreeMap<StrategyId, Vec<&TaskResult>> = BTreeMap::new();
    for result in results {
        by_strategy.entry(result.strategy).or_default().push(result);
    }
    strategies
        .iter()
        .map(|&strategy| {
            let mut tasks: Vec<&TaskResult> = by_strategy.get(&strategy).cloned().unwrap_or_default();
            tasks.sort_by_key(|t| (t.sample_id.clone(), t.query_index));
            let completed = tasks.len();
            let means = metric_names()
                .into_iter()
                .map(|metric| {
                    let sum: f64 = tasks
                        .iter()
                        .filter_map(|t| t.improvement_pct(metric))
                        .sum();
                    MetricMean {
                        metric: metric.to_string(),
                        mean: if completed == 0 { 0.0 } else { sum / completed as f64 },
                    }
                })
                .collect();
            let positive = tasks
                .iter()
                .filter(|t| t.improvement_pct(SUBJECTIVE_AVERAGE).unwrap_or(0.0) > 0.0)
                .count();
            StrategyRow {
                strategy,
                completed_tasks: completed,
                failed_tasks: expected_per_strategy.saturating_sub(completed),
                means,
                adaptability_rate: if completed == 0 {
                    0.0
                } else {
                    positive as f64 / completed as f64
                },
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// run orchestration

pub struct Runner<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub config: &'a ExperimentConfig,
}

const QUERIES_PER_SAMPLE: usize = 5;

impl Runner<'_> {
    pub fn run_experiment(&self) -> Result<ExperimentReport> {
        let config = self.config;
        config.validate()?;
        let started_unix = unix_now();

        let dataset = load_dataset(&config.dataset_path)?;
        let samples = sample_subset(&dataset, config.sample_count, config.seed)?;
        let digest = config.run_digest(self.templates.version())?;
        let run_dir = config.output_dir.join(format!("run-{}", &digest[..12]));
        let traces_dir = run_dir.join("traces");
        fs::create_dir_all(&traces_dir).map_err(|e| Error::io(&traces_dir, e))?;

        let results_path = run_dir.join("results.jsonl");
        let mut completed: BTreeMap<TaskKey, TaskResult> = BTreeMap::new();
        if results_path.exists() {
            for result in read_results(&results_path)? {
                completed.insert(result.key(), result);
            }
        }

        let simulator = Simulator {
            gateway: self.gateway,
            templates: self.templates,
            model_id: config.generator_model.clone(),
            params: config.generation,
        };
        let judge = Judge {
            gateway: self.gateway,
            templates: self.templates,
            model_id: config.judge_model.clone(),
            params: config.judge_params,
        };
        let optimizer = Optimizer::new(
            self.gateway,
            self.templates,
            config.optimizer_model.clone(),
            config.generation,
        );

        let failures: Mutex<Vec<(String, String)>> = Mutex::new(Vec::new());
        let record_failure = |what: String, err: &Error| {
            failures.lock().expect("failure log").push((what, format!("{}: {err}", err.code())));
        };

        // phase 1: one optimization trace per (sample, strategy)
        let mut trace_units = Vec::new();
        for sample in &samples {
            for &strategy in &config.strategies {
                trace_units.push((sample, strategy));
            }
        }
        let traces: Mutex<BTreeMap<(String, StrategyId), String>> = Mutex::new(BTreeMap::new());
        for_each_parallel(trace_units, config.concurrency_limit, |(sample, strategy)| {
            let path = run_dir.join(trace_ref(&sample.sample_id, strategy));
            match load_or_apply_strategy(&optimizer, sample, strategy, &path) {
                Ok(trace) => {
                    traces
                        .lock()
                        .expect("trace map")
                        .insert((sample.sample_id.clone(), strategy), trace.rewritten_text);
                }
                Err(err) => record_failure(format!("trace {}-{strategy}", sample.sample_id), &err),
            }
        });
        let traces = traces.into_inner().expect("trace map");

        // phase 2: shared before-answers per (sample, query)
        let mut before_units = Vec::new();
        for sample in &samples {
            for query_index in 0..QUERIES_PER_SAMPLE {
                let needed = config.strategies.iter().any(|&strategy| {
                    !completed.contains_key(&(sample.sample_id.clone(), strategy, query_index))
                        && traces.contains_key(&(sample.sample_id.clone(), strategy))
                });
                if needed {
                    before_units.push((sample, query_index));
                }
            }
        }
        let befores: Mutex<BTreeMap<(String, usize), (GeneratedAnswer, ScorePair)>> =
            Mutex::new(BTreeMap::new());
        for_each_parallel(before_units, config.concurrency_limit, |(sample, query_index)| {
            let query = sample.query_group.all().nth(query_index).expect("query index");
            let computed = simulator
                .generate_response(query, &sample.sources)
                .and_then(|answer| {
                    let scores = score_target(&judge, &answer, sample, query)?;
                    Ok((answer, scores))
                });
            match computed {
                Ok(pair) => {
                    befores
                        .lock()
                        .expect("before map")
                        .insert((sample.sample_id.clone(), query_index), pair);
                }
                Err(err) => record_failure(
                    format!("before {} q{query_index}", sample.sample_id),
                    &err,
                ),
            }
        });
        let befores = befores.into_inner().expect("before map");

        // phase 3: the tasks themselves, appended to results.jsonl as they
        // complete
        let results_file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&results_path)
            .map_err(|e| Error::io(&results_path, e))?;
        let sink = Mutex::new(results_file);
        let new_results: Mutex<Vec<TaskResult>> = Mutex::new(Vec::new());

        let mut task_units = Vec::new();
        for sample in &samples {
            for &strategy in &config.strategies {
                for query_index in 0..QUERIES_PER_SAMPLE {
                    let key = (sample.sample_id.clone(), strategy, query_index);
                    if completed.contains_key(&key) {
                        continue;
                    }
                    let Some(optimized) = traces.get(&(sample.sample_id.clone(), strategy)) else {
                        continue; // trace failed; already recorded
                    };
                    let Some(before) = befores.get(&(sample.sample_id.clone(), query_index)) else {
                        continue; // before-answer failed; already recorded
                    };
                    task_units.push((sample, strategy, query_index, optimized, before));
                }
            }
        }
        for_each_parallel(
            task_units,
            config.concurrency_limit,
            |(sample, strategy, query_index, optimized, before)| {
                match run_task(&simulator, &judge, sample, query_index, strategy, optimized, Some(before)) {
                    Ok(result) => {
                        let line = serde_json::to_string(&result).expect("result serializes");
                        {
                            let mut file = sink.lock().expect("results sink");
                            let _ = writeln!(file, "{line}");
                            let _ = file.flush();
                        }
                        new_results.lock().expect("new results").push(result);
                    }
                    Err(err) => record_failure(
                        format!("task {}-{strategy} q{query_index}", sample.sample_id),
                        &err,
                    ),
                }
            },
        );
        for result in new_results.into_inner().expect("new results") {
            completed.insert(result.key(), result);
        }

        let failures = failures.into_inner().expect("failure log");
        if !failures.is_empty() {
            let path = run_dir.join("failures.jsonl");
            let mut out = String::new();
            for (what, err) in &failures {
                out.push_str(&serde_json::to_string(&serde_json::json!({"task": what, "error": err})).unwrap());
                out.push('\n');
            }
            fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        }

        let all_results: Vec<TaskResult> = completed.into_values().collect();
        let expected_per_strategy = samples.len() * QUERIES_PER_SAMPLE;
        let rows = aggregate(&all_results, &config.strategies, expected_per_strategy);
        let total_tasks = expected_per_strategy * config.strategies.len();
        let report = ExperimentReport {
            rows,
            config_digest: digest,
            template_version: self.templates.version().to_string(),
            total_tasks,
            completed_tasks: all_results.len(),
            failed_tasks: total_tasks - all_results.len(),
            started_unix,
            finished_unix: unix_now(),
        };

        emit_report(&report, &[ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Svg], &run_dir)?;
        write_run_meta(&report, &config.strategies, expected_per_strategy, &run_dir)?;
        Ok(report)
    }
}

/// Rebuild a report from a run directory's persisted state (`run_meta.json`
/// plus `results.jsonl`), re-running the aggregation fold.
pub fn rebuild_report(run_dir: &Path) -> Result<ExperimentReport> {
    let meta_path = run_dir.join("run_meta.json");
    let meta: RunMeta = serde_json::from_str(
        &fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
    )
    .map_err(|e| Error::SchemaError {
        line: 0,
        field: "run_meta".into(),
        reason: e.to_string(),
    })?;
    let results = read_results(&run_dir.join("results.jsonl"))?;
    let rows = aggregate(&results, &meta.strategies, meta.expected_per_strategy);
    let total_tasks = meta.expected_per_strategy * meta.strategies.len();
    Ok(ExperimentReport {
        rows,
        config_digest: meta.config_digest,
        template_version: meta.template_version,
        total_tasks,
        completed_tasks: results.len(),
        failed_tasks: total_tasks - results.len(),
        started_unix: meta.started_unix,
        finished_unix: meta.finished_unix,
    })
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn load_or_apply_strategy(
    optimizer: &Optimizer,
    sample: &BenchSample,
    strategy: StrategyId,
    path: &Path,
) -> Result<OptimizationTrace> {
    if path.exists() {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return serde_json::from_str(&text).map_err(|e| Error::SchemaError {
            line: 0,
            field: "trace".into(),
            reason: format!("{}: {e}", path.display()),
        });
    }
    let trace = optimizer.apply_strategy(strategy, sample.target_source())?;
    let payload = serde_json::to_string_pretty(&trace).expect("trace serializes");
    let temp = path.with_extension("json.tmp");
    fs::write(&temp, payload).map_err(|e| Error::io(&temp, e))?;
    fs::rename(&temp, path).map_err(|e| Error::io(path, e))?;
    Ok(trace)
}

pub fn read_results(path: &Path) -> Result<Vec<TaskResult>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut results = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let result: TaskResult = serde_json::from_str(line).map_err(|e| Error::SchemaError {
            line: i + 1,
            field: "task result".into(),
            reason: e.to_string(),
        })?;
        results.push(result);
    }
    Ok(results)
}

/// Bounded worker pool over an in-memory queue.
fn for_each_parallel<T: Send, F: Fn(T) + Sync>(items: Vec<T>, workers: usize, f: F) {
    if items.is_empty() {
        return;
    }
    let queue = Mutex::new(VecDeque::from(items));
    let f = &f;
    let queue = &queue;
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(move || loop {
                let item = queue.lock().expect("work queue").pop_front();
                match item {
                    Some(item) => f(item),
                    None => break,
                }
            });
        }
    });
}

// ---------------------------------------------------------------------------
// report rendering

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Svg,
}

impl ReportFormat {
    pub fn parse(name: &str) -> Result<ReportFormat> {
        match name {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::InvalidInput {
                reason: format!("unknown report format {other:?} (expected md, csv, or svg)"),
            }),
        }
    }
}

/// Markdown table columns, in benchmark-table order, with the metric each
/// one renders.
const TABLE_COLUMNS: [(&str, &str); 11] = [
    ("Word Count", "word_count"),
    ("Posi. Count", "position_count"),
    ("Over.", "objective_overall"),
    ("Rele.", "relevance"),
    ("Infl.", "influence"),
    ("Uniq.", "uniqueness"),
    ("Dive.", "diversity"),
    ("Clic.", "click_likelihood"),
    ("Sub.Posi.", "subjective_position"),
    ("Sub.Volu.", "subjective_volume"),
    ("Aver.", "subjective_average"),
];

/// Render the report in the requested formats. Output depends only on the
/// report's rows and identifiers, so files are byte-stable across reruns.
pub fn emit_report(report: &ExperimentReport, formats: &[ReportFormat], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for format in formats {
        let (name, content) = match format {
            ReportFormat::Markdown => ("report.md", render_markdown(report)),
            ReportFormat::Csv => ("report.csv", render_csv(report)),
            ReportFormat::Svg => ("report.svg", render_svg(report)),
        };
        let path = dir.join(name);
        fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn render_markdown(report: &ExperimentReport) -> String {
    let mut md = String::from("# Visibility optimization report\n\n");
    md.push_str(&format!("- config digest: `{}`\n", report.config_digest));
    md.push_str(&format!("- template version: {}\n", report.template_version));
    md.push_str(&format!(
        "- tasks: {} of {} completed, {} failed\n\n",
        report.completed_tasks, report.total_tasks, report.failed_tasks
    ));

    md.push_str("## Mean improvement (%) per strategy\n\n");
    md.push_str("| Method |");
    for (header, _) in TABLE_COLUMNS {
        md.push_str(&format!(" {header} |"));
    }
    md.push('\n');
    md.push_str("|---|");
    md.push_str(&"---:|".repeat(TABLE_COLUMNS.len()));
    md.push('\n');
    for row in &report.rows {
        md.push_str(&format!("| {} |", row.strategy));
        for (_, metric) in TABLE_COLUMNS {
            md.push_str(&format!(" {:+.2} |", row.mean(metric).unwrap_or(0.0)));
        }
        md.push('\n');
    }

    md.push_str("\n## Adaptability\n\n");
    md.push_str("| Method | Tasks | Failures | Adaptability |\n|---|---:|---:|---:|\n");
    for row in &report.rows {
        md.push_str(&format!(
            "| {} | {} | {} | {:.1}% |\n",
            row.strategy,
            row.completed_tasks,
            row.failed_tasks,
            row.adaptability_rate * 100.0
        ));
    }

    md.push_str("\n## Full-scale reference\n\n");
    md.push_str(
        "Published full-scale results for RAID G-SEO on the expanded benchmark \
         (100 samples x 5 query variants, GLM-4-9B generation and judging): \
         objective overall +8.49, subjective average +4.72, adaptability 62.8% \
         versus 55.8% for the strongest single-aspect baseline (terminology \
         addition). Desk-scale runs and other models differ in magnitude; \
         direction is the comparable signal.\n",
    );
    md
}

fn render_csv(report: &ExperimentReport) -> String {
    let mut csv = String::from("strategy,metric,mean_improvement_pct\n");
    for row in &report.rows {
        for mean in &row.means {
            csv.push_str(&format!("{},{},{:.6}\n", row.strategy, mean.metric, mean.mean));
        }
    }
    csv
}

fn render_svg(report: &ExperimentReport) -> String {
    let labels: Vec<String> = report.rows.iter().map(|r| r.strategy.to_string()).collect();
    let values: Vec<f64> = report.rows.iter().map(|r| r.adaptability_rate).collect();
    svg_bar_chart("Adaptability by strategy", &labels, &values, true)
}

#[derive(Debug, Serialize, Deserialize)]
struct RunMeta {
    config_digest: String,
    template_version: String,
    strategies: Vec<StrategyId>,
    expected_per_strategy: usize,
    total_tasks: usize,
    completed_tasks: usize,
    failed_tasks: usize,
    started_unix: u64,
    finished_unix: u64,
}

fn write_run_meta(
    report: &ExperimentReport,
    strategies: &[StrategyId],
    expected_per_strategy: usize,
    dir: &Path,
) -> Result<()> {
    let path = dir.join("run_meta.json");
    let meta = RunMeta {
        config_digest: report.config_digest.clone(),
        template_version: report.template_version.clone(),
        strategies: strategies.to_vec(),
        expected_per_strategy,
        total_tasks: report.total_tasks,
        completed_tasks: report.completed_tasks,
        failed_tasks: report.failed_tasks,
        started_unix: report.started_unix,
        finished_unix: report.finished_unix,
    };
    let payload = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&path, payload).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::SubjectiveScores;

    fn result(strategy: StrategyId, sample: &str, query_index: usize, subjective_avg: f64) -> TaskResult {
        TaskResult {
            sample_id: sample.into(),
            strategy,
            query_index,
            query: format!("q{query_index}"),
            before: ScorePair {
                objective: ObjectiveScores::default(),
                subjective: SubjectiveScores::zeros(),
            },
            after: ScorePair {
                objective: ObjectiveScores::default(),
                subjective: SubjectiveScores::zeros(),
            },
            improvements: vec![ImprovementRecord {
                metric_name: SUBJECTIVE_AVERAGE.into(),
                before: 0.0,
                after: 0.0,
                improvement_pct: subjective_avg,
            }],
            trace_ref: trace_ref(sample, strategy),
        }
    }

    #[test]
    fn adaptability_counts_strictly_positive() {
        let mut results = Vec::new();
        for i in 0..6 {
            results.push(result(StrategyId::RaidGseo, "s", i, 5.0));
        }
        for i in 6..8 {
            results.push(result(StrategyId::RaidGseo, "s", i, 0.0));
        }
        for i in 8..10 {
            results.push(result(StrategyId::RaidGseo, "s", i, -2.0));
        }
        let rate = adaptability_rate(&results).unwrap();
        assert_eq!(rate, 0.600);
    }

    #[test]
    fn adaptability_rejects_empty_input() {
        assert_eq!(adaptability_rate(&[]).unwrap_err().code(), "empty-input");
    }

    #[test]
    fn aggregate_is_order_independent() {
        let mut results = vec![
            result(StrategyId::RaidGseo, "a", 0, 10.0),
            result(StrategyId::RaidGseo, "a", 1, -10.0),
            result(StrategyId::TraditionalSeo, "a", 0, 4.0),
        ];
        let forward = aggregate(&results, &[StrategyId::RaidGseo, StrategyId::TraditionalSeo], 2);
        results.reverse();
        let backward = aggregate(&results, &[StrategyId::RaidGseo, StrategyId::TraditionalSeo], 2);
        assert_eq!(forward, backward);
        assert_eq!(forward[0].mean(SUBJECTIVE_AVERAGE), Some(0.0));
        assert_eq!(forward[0].completed_tasks, 2);
        assert_eq!(forward[1].failed_tasks, 1);
    }

    #[test]
    fn csv_has_twelve_rows_per_strategy() {
        let results = vec![result(StrategyId::RaidGseo, "a", 0, 1.0)];
        let rows = aggregate(&results, &[StrategyId::RaidGseo], 1);
        let report = ExperimentReport {
            rows,
            config_digest: "d".into(),
            template_version: "1".into(),
            total_tasks: 1,
            completed_tasks: 1,
            failed_tasks: 0,
            started_unix: 0,
            finished_unix: 0,
        };
        let csv = render_csv(&report);
        assert_eq!(csv.lines().count(), 1 + 12);
    }

    #[test]
    fn config_rejects_duplicate_strategies() {
        let config = ExperimentConfig {
            strategies: vec![StrategyId::RaidGseo, StrategyId::RaidGseo],
            ..ExperimentConfig::default()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn toml_roundtrip_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = dir.path().join("d.jsonl");
        fs::write(&dataset, "").unwrap();
        let config_path = dir.path().join("run.toml");
        fs::write(
            &config_path,
            "dataset = \"d.jsonl\"\nstrategies = [\"raid_gseo\", \"traditional_seo\"]\nsamples = 3\n",
        )
        .unwrap();
        let config = ExperimentConfig::from_toml_file(&config_path).unwrap();
        assert_eq!(config.sample_count, 3);
        assert_eq!(config.seed, 42, "seed defaults to 42");
        assert_eq!(config.strategies.len(), 2);
        assert_eq!(config.dataset_path, dataset);
        assert_eq!(config.generation.temperature, 0.7);
        assert_eq!(config.judge_params.temperature, 0.0);
    }

    #[test]
    fn missing_config_file_is_config_not_found() {
        let err = ExperimentConfig::from_toml_file(Path::new("/nonexistent/x.toml")).unwrap_err();
        assert_eq!(err.code(), "config-not-found");
    }
}
