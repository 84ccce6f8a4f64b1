mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use udcg_core::harness::experiments::{
    distractor_gap, k_sweep, position_sweep, simulate_contexts, synthetic_suite,
    train_on_sweep_like, training_examples, SuiteConfig,
};
use udcg_core::harness::metric::{Metric, MetricKind};
use udcg_core::harness::simulator::{SimLlmProfile, SimMode};
use udcg_core::harness::{assemble, context_view, correlate_metric, CorrelationReport};
use udcg_core::io::{load_records, load_theta, save_records, save_theta, Record};
use udcg_core::model::{
    EvalContext, JudgmentIndex, Passage, Question, RankedList, RelevanceJudgment, ThetaWeights,
    UtilityAnnotation, UtilityIndex,
};
use udcg_core::trainer::{pairwise_accuracy, train, FeatureMode};
use udcg_core::udcg::DEFAULT_GAMMA;
use udcg_core::utility::provider::{
    AbstentionProvider, CachedProvider, ConstantProvider, HttpProvider, TableProvider,
    UTILITY_PROMPT,
};
use udcg_core::utility::{annotate, oracle_rerank, summarize, AnnotateOptions, RerankMode};

use config::RunConfig;

/// Utility-aware evaluation of retrieval contexts for RAG.
#[derive(Debug, Parser)]
#[command(name = "udcg", version)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Context size.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Weight of the distraction term of UDCG.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// theta.json with learned positional weights.
    #[arg(long, global = true)]
    theta: Option<PathBuf>,
    /// Comma-separated metric names (ndcg, mrr, map, precision, hits, udcg, udcg_theta).
    #[arg(long, global = true, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// Abstention provider: constant:<p>, table:<path> or http.
    #[arg(long, global = true)]
    provider: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct DataArgs {
    #[arg(long)]
    questions: Option<PathBuf>,
    #[arg(long)]
    passages: Option<PathBuf>,
    #[arg(long)]
    judgments: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    contexts: Option<PathBuf>,
    #[arg(long)]
    rankings: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate passage utilities with an abstention provider.
    Annotate {
        #[command(flatten)]
        data: DataArgs,
        /// Directory for cached provider responses.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        concurrency: Option<usize>,
    },
    /// Score every context with the selected metrics.
    Score {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Spearman correlation of each metric with answer outcomes.
    Correlate {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Learn positional weights from contexts with outcomes.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Contexts with outcomes to report held-out pairwise accuracy on.
        #[arg(long)]
        held_out: Option<PathBuf>,
    },
    /// Run an experiment with the simulated LLM.
    Simulate {
        #[arg(value_enum)]
        experiment: Experiment,
        /// Number of synthetic questions.
        #[arg(long)]
        questions: Option<usize>,
    },
    /// Select an oracle top-k context per question.
    Rerank {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "utility")]
        mode: RerankMode,
        /// Number of retrieved passages considered.
        #[arg(long, default_value_t = 25)]
        m: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Experiment {
    PositionSweep,
    KSweep,
    DistractorGap,
    ContextBench,
}

/// Flags and file values merged.
struct Run {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
    k: usize,
    gamma: f64,
    theta: Option<PathBuf>,
    metrics: Option<Vec<String>>,
}

impl Run {
    fn new(cli: &Cli) -> Result<Run> {
        let cfg = match &cli.config {
            Some(p) => config::load(p)?,
            None => RunConfig::default(),
        };
        let mut cfg = cfg;
        if let Some(p) = &cli.provider {
            cfg.provider.spec = Some(p.clone());
        }
        let run = Run {
            seed: cli.seed.or(cfg.seed).unwrap_or(0),
            out: cli.out.clone().or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
            k: cli.k.or(cfg.k).unwrap_or(5),
            gamma: cli.gamma.or(cfg.gamma).unwrap_or(DEFAULT_GAMMA),
            theta: cli.theta.clone().or(cfg.theta.clone()),
            metrics: cli.metrics.clone().or(cfg.metrics.clone()),
            cfg,
        };
        ensure!(run.k >= 1, "k must be at least 1");
        ensure!((0.0..=1.0).contains(&run.gamma), "gamma must lie in [0, 1], got {}", run.gamma);
        Ok(run)
    }

    fn path(&self, flag: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        let from_file = match name {
            "questions" => &self.cfg.data.questions,
            "passages" => &self.cfg.data.passages,
            "judgments" => &self.cfg.data.judgments,
            "annotations" => &self.cfg.data.annotations,
            "contexts" => &self.cfg.data.contexts,
            "rankings" => &self.cfg.data.rankings,
            "held_out" => &self.cfg.data.held_out,
            _ => unreachable!("unknown dataset part {name}"),
        };
        flag.clone()
            .or_else(|| from_file.clone())
            .ok_or_else(|| anyhow!("no {name} file given (--{name} or data.{name} in the config)"))
    }

    fn theta(&self) -> Result<Option<ThetaWeights>> {
        self.theta
            .as_ref()
            .map(|p| load_theta(p).with_context(|| format!("reading theta {}", p.display())))
            .transpose()
    }

    fn metrics(&self) -> Result<Vec<Metric>> {
        let theta = self.theta()?;
        let kinds: Vec<MetricKind> = match &self.metrics {
            Some(names) => names
                .iter()
                .filter(|n| !n.trim().is_empty())
                .map(|n| n.parse().map_err(|e: String| anyhow!(e)))
                .collect::<Result<_>>()?,
            None => {
                let mut all = MetricKind::CLASSIC.to_vec();
                all.push(MetricKind::Udcg);
                if theta.is_some() {
                    all.push(MetricKind::UdcgTheta);
                }
                all
            }
        };
        ensure!(!kinds.is_empty(), "the metric list is empty");
        kinds
            .into_iter()
            .map(|kind| {
                kind.with_params(self.gamma, theta.as_ref())
                    .ok_or_else(|| anyhow!("metric udcg_theta needs --theta"))
            })
            .collect()
    }

    fn out_file(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(self.out.join(name))
    }

    fn profile(&self, k: usize) -> Result<SimLlmProfile> {
        let s = &self.cfg.simulate;
        let attention = match &s.attention {
            Some(a) if a.len() == k => a.clone(),
            Some(a) => bail!("simulate.attention has {} positions but k = {k}", a.len()),
            None => SimLlmProfile::u_shaped(k).attention,
        };
        Ok(SimLlmProfile::new(attention, s.distraction_gain, SimMode::Expected)?)
    }
}

fn load<T: Record>(path: &Path) -> Result<Vec<T>> {
    load_records(path).with_context(|| format!("reading {}", path.display()))
}

fn save<T: Record>(path: &Path, records: &[T]) -> Result<()> {
    save_records(path, records).with_context(|| format!("writing {}", path.display()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn make_provider(run: &Run) -> Result<Box<dyn AbstentionProvider>> {
    let spec = run
        .cfg
        .provider
        .spec
        .clone()
        .ok_or_else(|| anyhow!("no provider given (--provider or provider.spec in the config)"))?;
    let (kind, arg) = spec.split_once(':').unwrap_or((spec.as_str(), ""));
    Ok(match kind {
        "constant" => {
            let p: f64 = arg.parse().with_context(|| format!("bad constant probability {arg:?}"))?;
            ensure!((0.0..=1.0).contains(&p), "constant probability must lie in [0, 1]");
            Box::new(ConstantProvider(p))
        }
        "table" => Box::new(TableProvider::load(arg).with_context(|| format!("reading provider table {arg}"))?),
        "http" => {
            let settings = &run.cfg.provider;
            let key = match &settings.api_key_env {
                Some(var) => Some(std::env::var(var).with_context(|| format!("environment variable {var} is not set"))?),
                None => None,
            };
            Box::new(HttpProvider::new(settings.http_config()?, key))
        }
        other => bail!("unknown provider {other:?} (expected constant:<p>, table:<path> or http)"),
    })
}

fn cmd_annotate(run: &Run, data: &DataArgs, cache: &Option<PathBuf>, concurrency: Option<usize>) -> Result<()> {
    let questions: Vec<Question> = load(&run.path(&data.questions, "questions")?)?;
    let passages: Vec<Passage> = load(&run.path(&data.passages, "passages")?)?;
    let judgments: Vec<RelevanceJudgment> = load(&run.path(&data.judgments, "judgments")?)?;
    let settings = &run.cfg.provider;
    let options = AnnotateOptions {
        template: UTILITY_PROMPT.to_owned(),
        concurrency: concurrency.unwrap_or(settings.concurrency).max(1),
        max_attempts: settings.max_attempts.max(1),
        backoff: Duration::from_millis(settings.backoff_ms),
    };
    let provider = make_provider(run)?;
    let (annotations, calls, hits) = match cache.clone().or(settings.cache_dir.clone()) {
        Some(dir) => {
            let cached = CachedProvider::new(provider, &dir, &options.template)
                .with_context(|| format!("opening cache {}", dir.display()))?;
            let a = annotate(&questions, &passages, &judgments, &cached, &options)?;
            (a, cached.provider_calls(), cached.cache_hits())
        }
        None => {
            let a = annotate(&questions, &passages, &judgments, &provider, &options)?;
            let n = a.len();
            (a, n, 0)
        }
    };
    let path = run.out_file("annotations.jsonl")?;
    save(&path, &annotations)?;
    let s = summarize(&annotations, &JudgmentIndex::from_judgments(&judgments));
    println!("annotations: {} -> {}", annotations.len(), path.display());
    println!(
        "relevant: {}  weak: {}  intermediate: {}  hard: {}",
        s.relevant, s.weak, s.intermediate, s.hard
    );
    println!("provider calls: {calls}  cache hits: {hits}");
    Ok(())
}

struct Scored {
    contexts: Vec<EvalContext>,
    utilities: UtilityIndex,
    judgments: JudgmentIndex,
}

fn load_scored(run: &Run, data: &DataArgs) -> Result<Scored> {
    let annotations: Vec<UtilityAnnotation> = load(&run.path(&data.annotations, "annotations")?)?;
    let judgments: Vec<RelevanceJudgment> = load(&run.path(&data.judgments, "judgments")?)?;
    Ok(Scored {
        contexts: load(&run.path(&data.contexts, "contexts")?)?,
        utilities: UtilityIndex::from_annotations(&annotations),
        judgments: JudgmentIndex::from_judgments(&judgments),
    })
}

fn cmd_score(run: &Run, data: &DataArgs) -> Result<()> {
    let metrics = run.metrics()?;
    let s = load_scored(run, data)?;
    let path = run.out_file("scores.csv")?;
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["question_id".to_owned(), "context_id".to_owned(), "k".to_owned()];
    header.extend(metrics.iter().map(Metric::name));
    w.write_record(&header)?;
    for ctx in &s.contexts {
        let view = context_view(ctx, &s.utilities, &s.judgments)?;
        let mut row = vec![ctx.question_id.clone(), ctx.context_id.clone(), ctx.k().to_string()];
        for m in &metrics {
            let v = m.score(&view).with_context(|| format!("context {}: {}", ctx.context_id, m.name()))?;
            row.push(v.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    println!("scored {} contexts -> {}", s.contexts.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct CorrelationRow<'a> {
    metric: &'a str,
    mean_rho: Option<f64>,
    scored: usize,
    skipped: usize,
}

fn write_correlations(run: &Run, reports: &[CorrelationReport]) -> Result<()> {
    let rows: Vec<CorrelationRow> = reports
        .iter()
        .map(|r| CorrelationRow {
            metric: &r.metric,
            mean_rho: r.mean_rho,
            scored: r.scored,
            skipped: r.skipped,
        })
        .collect();
    write_csv(&run.out_file("correlation.csv")?, &rows)?;
    let json = run.out_file("correlation.json")?;
    fs::write(&json, serde_json::to_string_pretty(reports)? + "\n")
        .with_context(|| format!("writing {}", json.display()))?;
    for r in reports {
        match r.mean_rho {
            Some(rho) => println!("{:<22} {rho:.4}  ({} scored, {} skipped)", r.metric, r.scored, r.skipped),
            None => println!("{:<22} n/a     ({} skipped)", r.metric, r.skipped),
        }
    }
    Ok(())
}

fn cmd_correlate(run: &Run, data: &DataArgs) -> Result<()> {
    let metrics = run.metrics()?;
    let s = load_scored(run, data)?;
    let questions = assemble(&s.contexts, &s.utilities, &s.judgments, true)?;
    let reports = metrics
        .iter()
        .map(|m| correlate_metric(m, &questions))
        .collect::<Result<Vec<_>, _>>()?;
    write_correlations(run, &reports)
}

fn cmd_train(run: &Run, data: &DataArgs, held_out: &Option<PathBuf>) -> Result<()> {
    let s = load_scored(run, data)?;
    let questions = assemble(&s.contexts, &s.utilities, &s.judgments, true)?;
    let examples = training_examples(&questions, FeatureMode::Full)?;
    let model = train(&examples, &run.cfg.train.trainer_config(run.seed))?;
    let theta_path = run.out_file("theta.json")?;
    save_theta(&theta_path, &model.theta).with_context(|| format!("writing {}", theta_path.display()))?;
    write_csv(&run.out_file("train_log.csv")?, &model.log)?;
    println!("trained on {} pairs -> {}", model.pairs, theta_path.display());
    println!("training pairwise accuracy: {:.4}", pairwise_accuracy(&model.theta, &examples)?);
    let held = held_out.clone().or(run.cfg.data.held_out.clone());
    if let Some(path) = held {
        let contexts: Vec<EvalContext> = load(&path)?;
        let qs = assemble(&contexts, &s.utilities, &s.judgments, true)?;
        let acc = pairwise_accuracy(&model.theta, &training_examples(&qs, FeatureMode::Full)?)?;
        println!("held-out pairwise accuracy: {acc:.4}");
    }
    Ok(())
}

#[derive(Serialize)]
struct StdRow<'a> {
    metric: &'a str,
    std_dev: f64,
}

fn cmd_simulate(run: &Run, experiment: Experiment, questions: Option<usize>) -> Result<()> {
    let sim = &run.cfg.simulate;
    let suite_config = SuiteConfig {
        questions: questions.unwrap_or(sim.questions),
        seed: run.seed,
        ..SuiteConfig::default()
    };
    match experiment {
        Experiment::PositionSweep => {
            let profile = run.profile(run.k)?;
            let theta = match run.theta()? {
                Some(t) => t,
                None => train_on_sweep_like(run.k, &profile, run.seed)?,
            };
            let rows = position_sweep(run.k, sim.relevant_utility, sim.distractor_utility, &profile, Some(&theta))?;
            let path = run.out_file("position_sweep.csv")?;
            write_csv(&path, &rows)?;
            println!("{} positions -> {}", rows.len(), path.display());
        }
        Experiment::DistractorGap => {
            let rows = distractor_gap(&run.profile(run.k)?, sim.relevant_utility, sim.weak_utility, sim.hard_utility)?;
            let path = run.out_file("distractor_gap.csv")?;
            write_csv(&path, &rows)?;
            for r in &rows {
                println!("{:<5} accuracy {:.4}  precision {:.4}  udcg {:.4}", r.case, r.accuracy, r.precision, r.udcg);
            }
        }
        Experiment::KSweep => {
            let metrics = run.metrics()?;
            ensure!(
                metrics.iter().all(|m| !matches!(m, Metric::UdcgTheta { .. })),
                "udcg_theta needs one theta per k and is not supported in the k sweep"
            );
            let suite = synthetic_suite(&suite_config);
            let (utilities, judgments) = (suite.utility_index(), suite.judgment_index());
            let table = k_sweep(
                &sim.k_values,
                |k| {
                    let profile = SimLlmProfile::u_shaped(k);
                    let profile = SimLlmProfile::new(profile.attention, sim.distraction_gain, SimMode::Expected)?;
                    let contexts = simulate_contexts(&suite, k, sim.contexts, &profile, run.seed)?;
                    assemble(&contexts, &utilities, &judgments, true)
                },
                &metrics,
            )?;
            write_csv(&run.out_file("k_sweep.csv")?, &table.rows)?;
            let std_rows: Vec<StdRow> = table
                .std_dev
                .iter()
                .map(|(m, s)| StdRow { metric: m, std_dev: *s })
                .collect();
            write_csv(&run.out_file("k_sweep_std.csv")?, &std_rows)?;
            for r in &std_rows {
                println!("{:<22} std {:.4}", r.metric, r.std_dev);
            }
        }
        Experiment::ContextBench => {
            let metrics = run.metrics()?;
            let suite = synthetic_suite(&suite_config);
            let contexts = simulate_contexts(&suite, run.k, sim.contexts, &run.profile(run.k)?, run.seed)?;
            save(&run.out_file("questions.jsonl")?, &suite.questions)?;
            save(&run.out_file("passages.jsonl")?, &suite.passages)?;
            save(&run.out_file("judgments.jsonl")?, &suite.judgments)?;
            save(&run.out_file("annotations.jsonl")?, &suite.annotations)?;
            save(&run.out_file("rankings.jsonl")?, &suite.rankings)?;
            save(&run.out_file("contexts.jsonl")?, &contexts)?;
            let questions = assemble(&contexts, &suite.utility_index(), &suite.judgment_index(), true)?;
            let reports = metrics
                .iter()
                .map(|m| correlate_metric(m, &questions))
                .collect::<Result<Vec<_>, _>>()?;
            write_correlations(run, &reports)?;
        }
    }
    Ok(())
}

fn cmd_rerank(run: &Run, data: &DataArgs, mode: RerankMode, m: usize) -> Result<()> {
    let rankings: Vec<RankedList> = load(&run.path(&data.rankings, "rankings")?)?;
    let annotations: Vec<UtilityAnnotation> = load(&run.path(&data.annotations, "annotations")?)?;
    let judgments: Vec<RelevanceJudgment> = load(&run.path(&data.judgments, "judgments")?)?;
    let utilities = UtilityIndex::from_annotations(&annotations);
    let judgments = JudgmentIndex::from_judgments(&judgments);
    let contexts = rankings
        .iter()
        .map(|r| oracle_rerank(r, &utilities, &judgments, m, run.k, mode))
        .collect::<Result<Vec<_>, _>>()?;
    let path = run.out_file("contexts.jsonl")?;
    save(&path, &contexts)?;
    println!("{} {} contexts -> {}", contexts.len(), mode.as_str(), path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(&Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let run = Run::new(cli)?;
    match &cli.command {
        Command::Annotate { data, cache, concurrency } => cmd_annotate(&run, data, cache, *concurrency),
        Command::Score { data } => cmd_score(&run, data),
        Command::Correlate { data } => cmd_correlate(&run, data),
        Command::Train { data, held_out } => cmd_train(&run, data, held_out),
        Command::Simulate { experiment, questions } => cmd_simulate(&run, *experiment, *questions),
        Command::Rerank { data, mode, m } => cmd_rerank(&run, data, *mode, *m),
    }
}
