//! The `gseo` command-line surface.
//!
//! Subcommands follow the experiment lifecycle: `extend-dataset` builds
//! query variants, `optimize` rewrites one source, `simulate` generates a
//! cited answer, `score` measures visibility, `run` drives a full
//! experiment, `analyze` tallies preference distributions, `regen-rubrics`
//! rewrites the judge rubrics, and `report` re-renders a run's outputs.
//!
//! No subcommand touches the network unless a backend is given explicitly
//! (`--backend` or the config file). Errors print as a single
//! `error: <code>: <message>` line; exit codes are 0 for success, 1 for
//! user errors, 2 for runtime failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use clap::{Parser, Subcommand};

use crate::analysis::{role_distribution, step_distribution, Labeler, Taxonomy};
use crate::corpus::{self, ContentSource, QueryExpander};
use crate::error::{Error, Result};
use crate::gateway::{BackendKind, ChatRequest, Gateway, GatewayConfig, GenParams};
use crate::gse::{parse_answer, Simulator};
use crate::metrics::{objective_scores, Judge, SubjectiveDimension};
use crate::runner::{emit_report, rebuild_report, ExperimentConfig, ReportFormat, Runner};
use crate::strategy::{Optimizer, StrategyId};
use crate::templates::TemplateSet;

fn long_version() -> &'static str {
    static VERSION: OnceLock<String> = OnceLock::new();
    VERSION.get_or_init(|| {
        format!(
            "{} (templates {})",
            env!("CARGO_PKG_VERSION"),
            TemplateSet::embedded().version()
        )
    })
}

#[derive(Parser)]
#[command(name = "gseo", about = "Content optimization for generative search engines, with its evaluation harness", version = long_version())]
struct Cli {
    /// Completion backend: remote:<url> | scripted:<path> | recording:<url>,<path>
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Directory for produced files (default: current directory)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Response cache directory
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Prompt template directory overriding the embedded set
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand a seed dataset with query variants and target assignments
    ExtendDataset {
        /// Seed dataset (JSONL; one canonical query per sample is enough)
        #[arg(long)]
        input: PathBuf,
        /// Expanded dataset to write
        #[arg(long)]
        output: PathBuf,
        /// Variants per canonical query
        #[arg(long, default_value_t = 4)]
        variants: usize,
        /// Seed for target assignment
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "default-model")]
        model: String,
    },
    /// Apply one rewrite strategy to a source text file and store the trace
    Optimize {
        #[arg(long)]
        strategy: String,
        /// Plain-text file holding the content to optimize
        #[arg(long)]
        source: PathBuf,
        /// Source title (defaults to the file stem)
        #[arg(long)]
        title: Option<String>,
        #[arg(long, default_value = "default-model")]
        model: String,
    },
    /// Generate a cited answer for one sample and query
    Simulate {
        #[arg(long)]
        dataset: PathBuf,
        /// Sample id within the dataset
        #[arg(long)]
        sample: String,
        /// 0 = canonical query, 1..4 = variants
        #[arg(long, default_value_t = 0)]
        query_index: usize,
        #[arg(long, default_value = "default-model")]
        model: String,
    },
    /// Score one source's visibility inside an answer text
    Score {
        /// File holding the raw answer text with citation markers
        #[arg(long)]
        answer: PathBuf,
        /// Dataset file holding the sample the answer was generated over
        #[arg(long)]
        sources: PathBuf,
        /// Sample id (optional when the dataset has exactly one sample)
        #[arg(long)]
        sample: Option<String>,
        /// Source id to score
        #[arg(long)]
        target: u32,
        /// Add judge-scored subjective dimensions (needs a backend)
        #[arg(long)]
        subjective: bool,
        /// Query for subjective scoring (defaults to the sample's canonical query)
        #[arg(long)]
        query: Option<String>,
        #[arg(long, default_value = "default-model")]
        model: String,
    },
    /// Run a full experiment from a config file
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured sample count
        #[arg(long)]
        samples: Option<usize>,
        /// Override the configured seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured strategies (repeatable)
        #[arg(long = "strategy")]
        strategies: Vec<String>,
    },
    /// Role and step preference distributions over stored traces
    Analyze {
        /// Run directory (uses its traces/ subdirectory)
        #[arg(long)]
        run: Option<PathBuf>,
        /// Explicit trace directory
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Label with the model instead of the offline keyword tables
        #[arg(long)]
        llm: bool,
        #[arg(long, default_value = "default-model")]
        model: String,
    },
    /// Regenerate the seven judge rubric templates via the model
    RegenRubrics {
        #[arg(long, default_value = "default-model")]
        model: String,
    },
    /// Re-render report files from a run directory
    Report {
        #[arg(long)]
        run: PathBuf,
        /// md, csv, svg (repeatable; default all)
        #[arg(long = "format")]
        formats: Vec<String>,
    },
}

/// Parse and execute, returning the process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {}", e.code(), e);
            e.exit_code()
        }
    }
}

struct Context {
    backend: Option<String>,
    /// --out as given; `out` resolves the default.
    out_flag: Option<PathBuf>,
    out: PathBuf,
    cache_dir: Option<PathBuf>,
    /// --templates as given, for commands that consult config overrides too.
    template_flag: Option<PathBuf>,
    templates: TemplateSet,
}

impl Context {
    /// Gateway for commands that need a model; absent backend is a user
    /// error before any I/O happens.
    fn gateway(&self) -> Result<Gateway> {
        let spec = self.backend.as_deref().ok_or(Error::BackendRequired)?;
        let mut config = GatewayConfig::new(BackendKind::parse(spec)?);
        config.cache_dir = self.cache_dir.clone();
        Gateway::new(config)
    }

    fn out_file(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(self.out.join(name))
    }
}

fn execute(cli: Cli) -> Result<()> {
    let templates = match &cli.templates {
        Some(dir) => TemplateSet::from_dir(dir)?,
        None => TemplateSet::embedded().clone(),
    };
    let ctx = Context {
        backend: cli.backend.clone(),
        out_flag: cli.out.clone(),
        out: cli.out.clone().unwrap_or_else(|| PathBuf::from(".")),
        cache_dir: cli.cache_dir.clone(),
        template_flag: cli.templates.clone(),
        templates,
    };

    match cli.command {
        Command::ExtendDataset {
            input,
            output,
            variants,
            seed,
            model,
        } => extend_dataset(&ctx, &input, &output, variants, seed, &model),
        Command::Optimize {
            strategy,
            source,
            title,
            model,
        } => optimize(&ctx, &strategy, &source, title.as_deref(), &model),
        Command::Simulate {
            dataset,
            sample,
            query_index,
            model,
        } => simulate(&ctx, &dataset, &sample, query_index, &model),
        Command::Score {
            answer,
            sources,
            sample,
            target,
            subjective,
            query,
            model,
        } => score(&ctx, &answer, &sources, sample.as_deref(), target, subjective, query.as_deref(), &model),
        Command::Run {
            config,
            samples,
            seed,
            strategies,
        } => run(&ctx, &config, samples, seed, &strategies),
        Command::Analyze {
            run,
            traces,
            llm,
            model,
        } => analyze(&ctx, run.as_deref(), traces.as_deref(), llm, &model),
        Command::RegenRubrics { model } => regen_rubrics(&ctx, &model),
        Command::Report { run, formats } => report(&ctx, &run, &formats),
    }
}

fn extend_dataset(
    ctx: &Context,
    input: &Path,
    output: &Path,
    variants: usize,
    seed: u64,
    model: &str,
) -> Result<()> {
    let gateway = ctx.gateway()?;
    let expander = QueryExpander {
        gateway: &gateway,
        templates: &ctx.templates,
        model_id: model.to_string(),
        params: GenParams::generation(),
        max_attempts: 3,
    };
    let seeds = corpus::load_seed_samples(input)?;
    let mut expanded = Vec::with_capacity(seeds.len());
    for mut sample in seeds {
        if sample.query_group.variants.len() < variants {
            sample.query_group = expander.expand(
                &sample.query_group.canonical_query,
                &sample.sources,
                variants,
            )?;
        }
        expanded.push(sample);
    }
    corpus::save_dataset(output, &expanded)?;
    println!(
        "wrote {} samples with {} query variants each to {}",
        expanded.len(),
        variants,
        output.display()
    );
    let _ = seed; // targets come from the seed dataset; see assign_target for fresh corpora
    Ok(())
}

fn optimize(ctx: &Context, strategy: &str, source_path: &Path, title: Option<&str>, model: &str) -> Result<()> {
    let strategy = StrategyId::parse(strategy)?;
    let gateway = ctx.gateway()?;
    let text = fs::read_to_string(source_path).map_err(|e| Error::io(source_path, e))?;
    let stem = source_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "source".to_string());
    let source = ContentSource {
        source_id: 1,
        title: title.map(str::to_string).unwrap_or_else(|| stem.clone()),
        text,
        origin_tag: None,
    };
    let optimizer = Optimizer::new(&gateway, &ctx.templates, model, GenParams::generation());
    let trace = optimizer.apply_strategy(strategy, &source)?;
    let path = ctx.out_file(&format!("{stem}-{strategy}.trace.json"))?;
    fs::write(&path, serde_json::to_string_pretty(&trace).expect("trace serializes"))
        .map_err(|e| Error::io(&path, e))?;
    println!("trace written to {}", path.display());
    Ok(())
}

fn simulate(ctx: &Context, dataset: &Path, sample_id: &str, query_index: usize, model: &str) -> Result<()> {
    let gateway = ctx.gateway()?;
    let samples = corpus::load_dataset(dataset)?;
    let sample = samples
        .iter()
        .find(|s| s.sample_id == sample_id)
        .ok_or_else(|| Error::InvalidInput {
            reason: format!("sample {sample_id:?} not in {}", dataset.display()),
        })?;
    let query = sample
        .query_group
        .all()
        .nth(query_index)
        .ok_or_else(|| Error::InvalidInput {
            reason: format!("query index {query_index} out of range (0..=4)"),
        })?;
    let simulator = Simulator {
        gateway: &gateway,
        templates: &ctx.templates,
        model_id: model.to_string(),
        params: GenParams::generation(),
    };
    let answer = simulator.generate_response(query, &sample.sources)?;
    let path = ctx.out_file(&format!("{sample_id}-q{query_index}.answer.json"))?;
    fs::write(&path, serde_json::to_string_pretty(&answer).expect("answer serializes"))
        .map_err(|e| Error::io(&path, e))?;
    println!(
        "answer with {} sentences written to {}",
        answer.sentence_count(),
        path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn score(
    ctx: &Context,
    answer_path: &Path,
    sources_path: &Path,
    sample_id: Option<&str>,
    target: u32,
    subjective: bool,
    query: Option<&str>,
    model: &str,
) -> Result<()> {
    let samples = corpus::load_dataset(sources_path)?;
    let sample = match sample_id {
        Some(id) => samples
            .iter()
            .find(|s| s.sample_id == id)
            .ok_or_else(|| Error::InvalidInput {
                reason: format!("sample {id:?} not in {}", sources_path.display()),
            })?,
        None if samples.len() == 1 => &samples[0],
        None => {
            return Err(Error::InvalidInput {
                reason: format!(
                    "{} holds {} samples; pass --sample",
                    sources_path.display(),
                    samples.len()
                ),
            })
        }
    };
    let raw = fs::read_to_string(answer_path).map_err(|e| Error::io(answer_path, e))?;
    let mut answer = parse_answer(&raw, sample.sources.len())?;
    let objective = objective_scores(&answer, target)?;

    let mut output = serde_json::json!({
        "sample_id": sample.sample_id,
        "target": target,
        "objective": objective,
    });
    if subjective {
        let gateway = ctx.gateway()?;
        let judge = Judge {
            gateway: &gateway,
            templates: &ctx.templates,
            model_id: model.to_string(),
            params: GenParams::judge(),
        };
        let query = query
            .map(str::to_string)
            .unwrap_or_else(|| sample.query_group.canonical_query.clone());
        answer.query = query.clone();
        let source = sample
            .sources
            .iter()
            .find(|s| s.source_id == target)
            .expect("objective scoring validated the id");
        let scores = judge.subjective_scores(&answer, source, &query)?;
        output["subjective"] = serde_json::to_value(&scores).expect("scores serialize");
    }
    println!("{}", serde_json::to_string_pretty(&output).expect("output serializes"));
    Ok(())
}

fn run(
    ctx: &Context,
    config_path: &Path,
    samples: Option<usize>,
    seed: Option<u64>,
    strategies: &[String],
) -> Result<()> {
    let mut config = ExperimentConfig::from_toml_file(config_path)?;
    if let Some(n) = samples {
        config.sample_count = n;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if !strategies.is_empty() {
        config.strategies = strategies
            .iter()
            .map(|s| StrategyId::parse(s))
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(out) = &ctx.out_flag {
        config.output_dir = out.clone();
    }
    if ctx.backend.is_some() {
        config.backend = ctx.backend.clone();
    }
    if ctx.cache_dir.is_some() {
        config.cache_dir = ctx.cache_dir.clone();
    }
    config.validate()?;

    let templates = match (&ctx.template_flag, &config.template_dir) {
        (Some(dir), _) => TemplateSet::from_dir(dir)?,
        (None, Some(dir)) => TemplateSet::from_dir(dir)?,
        (None, None) => TemplateSet::embedded().clone(),
    };

    let spec = config.backend.as_deref().ok_or(Error::BackendRequired)?;
    let mut gateway_config = GatewayConfig::new(BackendKind::parse(spec)?);
    gateway_config.cache_dir = config.cache_dir.clone();
    gateway_config.concurrency_limit = config.concurrency_limit.max(1);
    let gateway = Gateway::new(gateway_config)?;

    let runner = Runner {
        gateway: &gateway,
        templates: &templates,
        config: &config,
    };
    let report = runner.run_experiment()?;
    let run_dir = config
        .output_dir
        .join(format!("run-{}", &report.config_digest[..12]));
    println!(
        "run {} finished: {} of {} tasks completed ({} failed)",
        &report.config_digest[..12],
        report.completed_tasks,
        report.total_tasks,
        report.failed_tasks
    );
    for row in &report.rows {
        println!(
            "  {:<26} objective {:+8.2}  subjective {:+8.2}  adaptability {:>5.1}%",
            row.strategy.to_string(),
            row.mean("objective_overall").unwrap_or(0.0),
            row.mean("subjective_average").unwrap_or(0.0),
            row.adaptability_rate * 100.0,
        );
    }
    println!("report files under {}", run_dir.display());
    Ok(())
}

fn analyze(ctx: &Context, run: Option<&Path>, traces: Option<&Path>, llm: bool, model: &str) -> Result<()> {
    let trace_dir = match (run, traces) {
        (_, Some(dir)) => dir.to_path_buf(),
        (Some(run_dir), None) => run_dir.join("traces"),
        (None, None) => {
            return Err(Error::InvalidInput {
                reason: "pass --run <dir> or --traces <dir>".into(),
            })
        }
    };
    let mut trace_files: Vec<PathBuf> = fs::read_dir(&trace_dir)
        .map_err(|e| Error::io(&trace_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    trace_files.sort();
    let mut traces_vec = Vec::with_capacity(trace_files.len());
    for path in &trace_files {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let trace: crate::strategy::OptimizationTrace =
            serde_json::from_str(&text).map_err(|e| Error::SchemaError {
                line: 0,
                field: "trace".into(),
                reason: format!("{}: {e}", path.display()),
            })?;
        traces_vec.push(trace);
    }
    if traces_vec.is_empty() {
        return Err(Error::EmptyInput {
            what: format!("traces in {}", trace_dir.display()),
        });
    }

    let gateway;
    let labeler = if llm {
        gateway = ctx.gateway()?;
        Labeler::Llm {
            gateway: &gateway,
            templates: &ctx.templates,
            model_id: model.to_string(),
            params: GenParams::judge(),
        }
    } else {
        Labeler::Keyword
    };

    let has_reflections = traces_vec.iter().any(|t| t.reflection.is_some());
    let has_steps = traces_vec.iter().any(|t| !t.steps.is_empty());
    if !has_reflections && !has_steps {
        return Err(Error::EmptyInput {
            what: "reflections and steps in the given traces".into(),
        });
    }

    if has_reflections {
        let taxonomy = Taxonomy::roles(&ctx.templates)?;
        let roles = role_distribution(&traces_vec, &taxonomy, &labeler)?;
        let csv_path = ctx.out_file("roles.csv")?;
        fs::write(&csv_path, roles.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
        let svg_path = ctx.out_file("roles.svg")?;
        fs::write(&svg_path, roles.to_svg("Role perspectives")).map_err(|e| Error::io(&svg_path, e))?;
        println!(
            "roles: {} instances over {} categories -> {}, {}",
            roles.total,
            roles.categories.len(),
            csv_path.display(),
            svg_path.display()
        );
    } else {
        println!("roles: no traces carry reflections, skipped");
    }

    if has_steps {
        let (objectives, actions) = Taxonomy::steps(&ctx.templates)?;
        let (objective_report, action_report) = step_distribution(&traces_vec, &objectives, &actions, &labeler)?;
        for (name, dist, title) in [
            ("step_objectives", &objective_report, "Step objectives"),
            ("step_actions", &action_report, "Step actions"),
        ] {
            let csv_path = ctx.out_file(&format!("{name}.csv"))?;
            fs::write(&csv_path, dist.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
            let svg_path = ctx.out_file(&format!("{name}.svg"))?;
            fs::write(&svg_path, dist.to_svg(title)).map_err(|e| Error::io(&svg_path, e))?;
        }
        println!(
            "steps: {} instances -> step_objectives.{{csv,svg}}, step_actions.{{csv,svg}} under {}",
            objective_report.total,
            ctx.out.display()
        );
    } else {
        println!("steps: no traces carry plans, skipped");
    }
    Ok(())
}

fn regen_rubrics(ctx: &Context, model: &str) -> Result<()> {
    let gateway = ctx.gateway()?;
    let rubric_dir = ctx.out.join("rubrics");
    fs::create_dir_all(&rubric_dir).map_err(|e| Error::io(&rubric_dir, e))?;
    for dimension in SubjectiveDimension::ALL {
        let prompt = ctx.templates.render(
            "stages/rubric_gen",
            &[
                ("dimension", dimension.name()),
                ("description", dimension.description()),
            ],
        )?;
        let request = ChatRequest::single_user(model, GenParams::judge(), prompt);
        let levels = gateway.complete(&request)?.text;
        if !(levels.contains("0:") && levels.contains("5:")) {
            return Err(Error::ParseError {
                what: format!("rubric for {}", dimension.name()),
                reason: "missing the 0: and 5: level lines".into(),
            });
        }
        // splice the generated levels into the fixed rubric skeleton so the
        // placeholders and SCORE instruction stay intact
        let skeleton = ctx.templates.get(&format!("rubrics/{}", dimension.name()))?;
        let rebuilt = replace_levels(skeleton, levels.trim());
        let path = rubric_dir.join(format!("{}.txt", dimension.name()));
        fs::write(&path, rebuilt).map_err(|e| Error::io(&path, e))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Swap the six `0:`..`5:` level lines of a rubric for newly generated ones.
fn replace_levels(skeleton: &str, levels: &str) -> String {
    let mut out = Vec::new();
    let mut replaced = false;
    for line in skeleton.lines() {
        let is_level = line
            .trim_start()
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_digit())
            && line.trim_start()[1..].starts_with(':');
        if is_level {
            if !replaced {
                out.push(levels.to_string());
                replaced = true;
            }
        } else {
            out.push(line.to_string());
        }
    }
    out.join("\n") + "\n"
}

fn report(ctx: &Context, run_dir: &Path, formats: &[String]) -> Result<()> {
    let report = rebuild_report(run_dir)?;
    let formats = if formats.is_empty() {
        vec![ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Svg]
    } else {
        formats
            .iter()
            .map(|f| ReportFormat::parse(f))
            .collect::<Result<Vec<_>>>()?
    };
    let dir = ctx.out.join(run_dir.file_name().unwrap_or_default());
    let written = emit_report(&report, &formats, &dir)?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn help_lists_every_subcommand() {
        let help = Cli::command().render_long_help().to_string();
        for name in [
            "extend-dataset",
            "optimize",
            "simulate",
            "score",
            "run",
            "analyze",
            "regen-rubrics",
            "report",
        ] {
            assert!(help.contains(name), "help missing {name}:\n{help}");
        }
    }

    #[test]
    fn version_includes_template_version() {
        assert!(long_version().contains("templates"));
    }

    #[test]
    fn unknown_flag_exits_one() {
        assert_eq!(dispatch(["gseo", "--bogus"]), 1);
        assert_eq!(dispatch(["gseo", "no-such-command"]), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(dispatch(["gseo", "--help"]), 0);
        assert_eq!(dispatch(["gseo", "--version"]), 0);
    }

    #[test]
    fn backendless_optimize_is_a_user_error() {
        let code = dispatch(["gseo", "optimize", "--strategy", "raid_gseo", "--source", "/nonexistent.txt"]);
        assert_eq!(code, 1, "backend-required must map to exit 1");
    }

    #[test]
    fn missing_config_maps_to_exit_one() {
        let code = dispatch(["gseo", "run", "--config", "/nonexistent/missing.toml"]);
        assert_eq!(code, 1);
    }

    #[test]
    fn replace_levels_splices_new_rubric() {
        let skeleton = "Head\n\nScore with this rubric:\n0: old a\n1: old b\n2: c\n3: d\n4: e\n5: f\n\n### Question\n{query}\n";
        let rebuilt = replace_levels(skeleton, "0: new a\n1: new b\n2: c\n3: d\n4: e\n5: new f");
        assert!(rebuilt.contains("0: new a"));
        assert!(!rebuilt.contains("0: old a"));
        assert!(rebuilt.contains("{query}"));
    }
}
