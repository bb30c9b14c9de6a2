//! Offline end-to-end experiment tests: record a full fixture set against
//! the deterministic stub once, then drive the whole runner from scripted
//! replay. Covers aggregation correctness against an independent fold,
//! resume idempotence, failure isolation, and golden report bytes.

use std::fs;
use std::path::{Path, PathBuf};

use gseo_core::corpus::toy_dataset;
use gseo_core::gateway::{Gateway, GenParams, RecordingBackend, ScriptedBackend};
use gseo_core::gse::parse_answer;
use gseo_core::metrics::{improvement, metric_names, Judge, SubjectiveDimension};
use gseo_core::runner::{
    adaptability_rate, read_results, run_task, ExperimentConfig, ExperimentReport, Runner,
    TaskResult,
};
use gseo_core::strategy::StrategyId;
use gseo_core::templates::TemplateSet;
use gseo_core::testing::{SequenceBackend, StubModel};

fn toy_dataset_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy.jsonl")
}

fn toy_config(output_dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        dataset_path: toy_dataset_path(),
        strategies: vec![StrategyId::RaidGseo, StrategyId::TraditionalSeo],
        sample_count: 3,
        seed: 7,
        concurrency_limit: 2,
        output_dir: output_dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

/// Record every completion of a full toy run into a fixture file.
fn record_fixture_set(fixture_path: &Path) {
    let scratch = tempfile::tempdir().unwrap();
    let recorder = RecordingBackend::new(Box::new(StubModel::new()), fixture_path).unwrap();
    let gateway = Gateway::from_backend(Box::new(recorder), 2);
    let config = toy_config(&scratch.path().join("runs"));
    let runner = Runner {
        gateway: &gateway,
        templates: TemplateSet::embedded(),
        config: &config,
    };
    let report = runner.run_experiment().unwrap();
    assert_eq!(report.failed_tasks, 0, "recording run must be clean");
}

fn scripted_run(fixture_path: &Path, output_dir: &Path) -> (ExperimentReport, PathBuf) {
    let gateway = Gateway::from_backend(
        Box::new(ScriptedBackend::load(fixture_path, true).unwrap()),
        2,
    );
    let config = toy_config(output_dir);
    let runner = Runner {
        gateway: &gateway,
        templates: TemplateSet::embedded(),
        config: &config,
    };
    let report = runner.run_experiment().unwrap();
    let run_dir = output_dir.join(format!("run-{}", &report.config_digest[..12]));
    (report, run_dir)
}

/// Independent aggregation oracle: recompute every improvement from the
/// persisted before/after scores with the normalization formula, then mean
/// per strategy. Shares no code with the runner's fold over stored
/// improvement records.
fn oracle_means(results: &[TaskResult], strategy: StrategyId) -> Vec<(String, f64)> {
    let tasks: Vec<&TaskResult> = results.iter().filter(|r| r.strategy == strategy).collect();
    let n = tasks.len() as f64;
    let mut means = Vec::new();
    for metric in metric_names() {
        let total: f64 = tasks
            .iter()
            .map(|t| {
                let pct = |b: f64, a: f64| (a - b) / (b + 1.0) * 100.0;
                match metric {
                    "word_count" => pct(t.before.objective.word_count, t.after.objective.word_count),
                    "position_count" => {
                        pct(t.before.objective.position_count, t.after.objective.position_count)
                    }
                    "pawc_overall" | "objective_overall" => {
                        pct(t.before.objective.pawc_overall, t.after.objective.pawc_overall)
                    }
                    "subjective_average" => {
                        SubjectiveDimension::ALL
                            .iter()
                            .map(|&d| pct(t.before.subjective.get(d) as f64, t.after.subjective.get(d) as f64))
                            .sum::<f64>()
                            / 7.0
                    }
                    name => {
                        let dimension = SubjectiveDimension::ALL
                            .into_iter()
                            .find(|d| d.name() == name)
                            .expect("subjective metric");
                        pct(
                            t.before.subjective.get(dimension) as f64,
                            t.after.subjective.get(dimension) as f64,
                        )
                    }
                }
            })
            .sum();
        means.push((metric.to_string(), total / n));
    }
    means
}

#[test]
fn offline_experiment_completes_thirty_tasks_and_matches_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("fixtures.jsonl");
    record_fixture_set(&fixtures);

    let (report, run_dir) = scripted_run(&fixtures, &dir.path().join("runs"));

    assert_eq!(report.total_tasks, 30, "3 samples x 5 queries x 2 strategies");
    assert_eq!(report.completed_tasks, 30);
    assert_eq!(report.failed_tasks, 0);
    assert_eq!(report.rows.len(), 2);
    for row in &report.rows {
        assert_eq!(row.completed_tasks, 15);
        assert_eq!(row.failed_tasks, 0);
    }

    // independent fold over the persisted results
    let results = read_results(&run_dir.join("results.jsonl")).unwrap();
    assert_eq!(results.len(), 30);
    for row in &report.rows {
        for (metric, expected) in oracle_means(&results, row.strategy) {
            let got = row.mean(&metric).unwrap();
            assert!(
                (got - expected).abs() < 1e-9,
                "{} mean for {}: report {got}, oracle {expected}",
                metric,
                row.strategy
            );
        }
    }

    // the adaptability fold agrees with the free function
    for row in &report.rows {
        let strategy_results: Vec<TaskResult> = results
            .iter()
            .filter(|r| r.strategy == row.strategy)
            .cloned()
            .collect();
        let rate = adaptability_rate(&strategy_results).unwrap();
        assert!((rate - row.adaptability_rate).abs() < 1e-9);
    }

    // the optimized rewrites must actually win visibility in this setup
    let raid = &report.rows[0];
    assert!(raid.mean("objective_overall").unwrap() > 0.0);
    assert!(raid.mean("subjective_average").unwrap() > 0.0);
    assert!(raid.adaptability_rate > 0.5);
}

#[test]
fn reruns_and_report_files_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("fixtures.jsonl");
    record_fixture_set(&fixtures);

    let (report_a, run_a) = scripted_run(&fixtures, &dir.path().join("runs-a"));
    let (report_b, run_b) = scripted_run(&fixtures, &dir.path().join("runs-b"));

    assert_eq!(report_a.rows, report_b.rows);
    assert_eq!(report_a.config_digest, report_b.config_digest);
    for name in ["report.md", "report.csv", "report.svg"] {
        let a = fs::read(run_a.join(name)).unwrap();
        let b = fs::read(run_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }

    // golden bytes, frozen from the first recorded run
    let golden_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/goldens/toy_report");
    if std::env::var("GSEO_REGEN_GOLDENS").is_ok() {
        fs::create_dir_all(&golden_dir).unwrap();
        for name in ["report.md", "report.csv", "report.svg"] {
            fs::copy(run_a.join(name), golden_dir.join(name)).unwrap();
        }
    }
    for name in ["report.md", "report.csv", "report.svg"] {
        let got = fs::read_to_string(run_a.join(name)).unwrap();
        let golden = fs::read_to_string(golden_dir.join(name)).expect("golden report files present");
        assert_eq!(got, golden, "{name} drifted from golden");
    }
}

#[test]
fn interrupted_run_resumes_to_an_identical_report() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("fixtures.jsonl");
    record_fixture_set(&fixtures);

    let (full_report, full_run_dir) = scripted_run(&fixtures, &dir.path().join("runs-full"));
    let full_md = fs::read_to_string(full_run_dir.join("report.md")).unwrap();

    // simulate an interruption: keep the run directory but drop the last 20
    // task results and the rendered reports
    let (_, partial_dir) = scripted_run(&fixtures, &dir.path().join("runs-partial"));
    let results_path = partial_dir.join("results.jsonl");
    let lines: Vec<String> = fs::read_to_string(&results_path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    assert_eq!(lines.len(), 30);
    fs::write(&results_path, lines[..10].join("\n") + "\n").unwrap();
    for name in ["report.md", "report.csv", "report.svg", "run_meta.json"] {
        fs::remove_file(partial_dir.join(name)).unwrap();
    }

    let (resumed_report, resumed_dir) = scripted_run(&fixtures, &dir.path().join("runs-partial"));
    assert_eq!(resumed_dir, partial_dir);
    assert_eq!(resumed_report.rows, full_report.rows);
    assert_eq!(resumed_report.completed_tasks, 30);
    let resumed_md = fs::read_to_string(resumed_dir.join("report.md")).unwrap();
    assert_eq!(resumed_md, full_md);

    // resumed run only appended the missing 20 tasks
    let final_results = read_results(&results_path).unwrap();
    assert_eq!(final_results.len(), 30);
}

#[test]
fn missing_fixture_fails_tasks_but_not_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("fixtures.jsonl");
    record_fixture_set(&fixtures);

    // drop one fixture line; whatever call it served now misses
    let lines: Vec<String> = fs::read_to_string(&fixtures)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    let pruned = fixtures.with_file_name("pruned.jsonl");
    fs::write(&pruned, lines[1..].join("\n") + "\n").unwrap();

    let gateway = Gateway::from_backend(Box::new(ScriptedBackend::load(&pruned, true).unwrap()), 2);
    let config = toy_config(&dir.path().join("runs"));
    let runner = Runner {
        gateway: &gateway,
        templates: TemplateSet::embedded(),
        config: &config,
    };
    let report = runner.run_experiment().unwrap();
    assert!(report.failed_tasks > 0);
    assert!(report.completed_tasks < report.total_tasks);
    let run_dir = dir
        .path()
        .join("runs")
        .join(format!("run-{}", &report.config_digest[..12]));
    assert!(run_dir.join("failures.jsonl").exists());
}

// -- run_task level ----------------------------------------------------------

fn judge_scores(n: u8) -> Vec<String> {
    std::iter::repeat(format!("SCORE: {n}")).take(7).collect()
}

#[test]
fn task_with_earlier_citation_shows_position_improvement() {
    let sample = &toy_dataset()[0]; // target index 3
    // before: target cited third; after: target cited first
    let before_answer = "Alpha beta gamma [1]. Delta epsilon zeta [2]. Target words here now [3]. Closing line.";
    let after_answer = "Target words lead the answer [3]. Alpha beta gamma [1]. Delta epsilon zeta [2]. Closing line.";

    let mut responses: Vec<String> = vec![before_answer.to_string()];
    responses.extend(judge_scores(2));
    responses.push(after_answer.to_string());
    responses.extend(judge_scores(4));

    let gateway = Gateway::from_backend(Box::new(SequenceBackend::new(responses)), 1);
    let templates = TemplateSet::embedded();
    let simulator = gseo_core::gse::Simulator {
        gateway: &gateway,
        templates,
        model_id: "default-model".into(),
        params: GenParams::generation(),
    };
    let judge = Judge {
        gateway: &gateway,
        templates,
        model_id: "default-model".into(),
        params: GenParams::judge(),
    };

    let result = run_task(&simulator, &judge, sample, 0, StrategyId::RaidGseo, "optimized text", None).unwrap();
    let position = result.improvement_pct("position_count").unwrap();
    assert!(position > 0.0, "expected positive position improvement, got {position}");
    // uniform 2 -> 4 judge scores: (4-2)/(2+1)*100 per dimension
    let expected_subjective = improvement(2.0, 4.0).unwrap();
    assert!((result.improvement_pct("subjective_average").unwrap() - expected_subjective).abs() < 1e-9);
    // hand check against the parsed structures
    let before = parse_answer(before_answer, 5).unwrap();
    let after = parse_answer(after_answer, 5).unwrap();
    assert_eq!(before.first_citation(3), Some(3));
    assert_eq!(after.first_citation(3), Some(1));
}

#[test]
fn task_with_target_never_cited_reports_zero_objective_improvements() {
    let sample = &toy_dataset()[0];
    let uncited = "Alpha beta [1]. Gamma delta [2]. Closing line.";
    let mut responses: Vec<String> = vec![uncited.to_string()];
    responses.extend(judge_scores(0));
    responses.push(uncited.to_string());
    responses.extend(judge_scores(0));

    let gateway = Gateway::from_backend(Box::new(SequenceBackend::new(responses)), 1);
    let templates = TemplateSet::embedded();
    let simulator = gseo_core::gse::Simulator {
        gateway: &gateway,
        templates,
        model_id: "default-model".into(),
        params: GenParams::generation(),
    };
    let judge = Judge {
        gateway: &gateway,
        templates,
        model_id: "default-model".into(),
        params: GenParams::judge(),
    };
    let result = run_task(&simulator, &judge, sample, 1, StrategyId::TraditionalSeo, "opt", None).unwrap();
    for metric in ["word_count", "position_count", "pawc_overall", "objective_overall"] {
        assert_eq!(result.improvement_pct(metric), Some(0.0), "{metric}");
    }
}

#[test]
fn identical_answers_report_all_zero_improvements() {
    let sample = &toy_dataset()[1];
    let answer = "Target leads [1]. Another point [2]. Closing line.";
    let mut responses: Vec<String> = vec![answer.to_string()];
    responses.extend(judge_scores(3));
    responses.push(answer.to_string());
    responses.extend(judge_scores(3));

    let gateway = Gateway::from_backend(Box::new(SequenceBackend::new(responses)), 1);
    let templates = TemplateSet::embedded();
    let simulator = gseo_core::gse::Simulator {
        gateway: &gateway,
        templates,
        model_id: "default-model".into(),
        params: GenParams::generation(),
    };
    let judge = Judge {
        gateway: &gateway,
        templates,
        model_id: "default-model".into(),
        params: GenParams::judge(),
    };
    let result = run_task(
        &simulator,
        &judge,
        sample,
        0,
        StrategyId::TraditionalSeo,
        &sample.target_source().text,
        None,
    )
    .unwrap();
    for record in &result.improvements {
        assert_eq!(record.improvement_pct, 0.0, "{}", record.metric_name);
    }
}
