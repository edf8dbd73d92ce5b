use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use phaseprobe::corpus::{
    instantiate_tcp, load_prompt_dir, validate_prompt, CommandCounter, Corpus, TokenCounter,
    WhitespaceCounter,
};
use phaseprobe::experiment::{
    self, aggregate_store, compare, parse_pair, Comparison, ExperimentError, ExperimentManifest,
    Metric, Providers, RunOptions, ScoreMatrix, StoreError,
};
use phaseprobe::providers::{
    build_backend, BackendSelector, Provider, ProviderConfig, SessionError,
};
use phaseprobe::report;
use phaseprobe::stats::{self, format_sig6, DfMode, Direction, StatsError, WelchOptions};
use phaseprobe::tqp;

mod input;

/// `println!` that exits quietly when stdout is a closed pipe.
macro_rules! out {
    ($($arg:tt)*) => {
        emit(format_args!("{}\n", format_args!($($arg)*)))
    };
}

fn emit(args: std::fmt::Arguments<'_>) {
    use std::io::Write;
    if let Err(e) = io::stdout().lock().write_fmt(args) {
        if e.kind() == io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: cannot write to stdout: {e}");
        std::process::exit(i32::from(EXIT_PROVIDER));
    }
}

const EXIT_USER: u8 = 1;
const EXIT_PROVIDER: u8 = 2;
const EXIT_PARSE: u8 = 3;

/// An error carrying its process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

trait ExitWith<T> {
    fn or_exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn or_exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

fn user_error(msg: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_USER,
        error: anyhow!("{msg}"),
    }
}

#[derive(Parser)]
#[command(
    name = "phaseprobe",
    version,
    about = "Run and analyse prompt-induced tone-shift experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect, export or validate the prompt corpus
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Execute or resume the experiment described by a manifest
    Run(RunArgs),
    /// Ask a model to compare two prompts (qualitative, unscored)
    Tcp(TcpArgs),
    /// Parse one judge response into scores
    Parse(ParseArgs),
    /// Statistics on ad-hoc samples
    #[command(subcommand)]
    Stats(StatsCmd),
    /// Welch comparisons between conditions of a stored run
    Analyze(AnalyzeArgs),
    /// Write the beeswarm figure and summary tables for a stored run
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// List prompt ids with their condition tags
    List {
        #[arg(long)]
        json: bool,
    },
    /// Write every prompt as <id>.txt
    Export {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Check sentence counts, token budgets and template markers
    Validate {
        /// Validate the *.txt prompts in this directory instead of the built-ins
        #[arg(long)]
        dir: Option<PathBuf>,
        /// External tokenizer: reads the text on stdin, prints a count
        #[arg(long)]
        tokenizer_cmd: Option<String>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Subject backend override: replay:<dir> or live:<provider_id>
    #[arg(long)]
    subject: Option<BackendSelector>,
    /// Evaluator backend override, repeatable: <evaluator_id>=replay:<dir>
    #[arg(long = "evaluator", value_name = "ID=SELECTOR")]
    evaluators: Vec<String>,
    /// Store directory override
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Extra attempts for refused or unparseable evaluations
    #[arg(long, default_value_t = 0)]
    evaluation_retries: u32,
}

#[derive(Args)]
struct TcpArgs {
    /// Prompt id or text file
    first: String,
    /// Prompt id or text file
    second: String,
    /// replay:<dir> or live:<provider_id>
    #[arg(long)]
    provider: BackendSelector,
    /// Provider id recorded with the session (defaults to the live id or "subject")
    #[arg(long)]
    provider_id: Option<String>,
    /// Chat-completion endpoint, required for live providers
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long, default_value = "default")]
    model: String,
    #[arg(long, default_value_t = 1)]
    trial: u32,
}

#[derive(Args)]
struct ParseArgs {
    /// Judge response file, or - for stdin
    #[arg(default_value = "-")]
    input: String,
    #[arg(long)]
    pretty: bool,
}

#[derive(Subcommand)]
enum StatsCmd {
    /// One-tailed Welch t-test between two samples
    Welch {
        /// Numbers (comma or whitespace separated) or a file holding them
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[command(flatten)]
        welch: WelchArgs,
        #[arg(long)]
        json: bool,
    },
    /// Mean, SD, median, quartiles and Tukey whiskers
    Describe {
        #[arg(long)]
        values: String,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Clone, Copy)]
struct WelchArgs {
    /// greater, less or absolute
    #[arg(long, default_value_t = Direction::Absolute)]
    direction: Direction,
    /// rounded (spreadsheet convention) or continuous
    #[arg(long = "df", default_value_t = DfMode::Rounded)]
    df_mode: DfMode,
}

impl From<WelchArgs> for WelchOptions {
    fn from(a: WelchArgs) -> Self {
        WelchOptions {
            direction: a.direction,
            df_mode: a.df_mode,
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    store: PathBuf,
    /// Condition pairs A:B (default TIPc:TIPe TIPe:TIPn-e TIPc:TIPn-e)
    #[arg(long, num_args = 1..)]
    pairs: Vec<String>,
    /// tone_phase, tsundere or all
    #[arg(long, default_value = "all")]
    metric: String,
    #[arg(long)]
    evaluator: Option<String>,
    #[command(flatten)]
    welch: WelchArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    store: PathBuf,
    /// SVG figure path
    #[arg(long)]
    out: PathBuf,
    /// CSV summary path
    #[arg(long)]
    summary: PathBuf,
    /// Markdown summary path (defaults to the CSV path with .md)
    #[arg(long)]
    markdown: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    pairs: Vec<String>,
    #[command(flatten)]
    welch: WelchArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Corpus(cmd) => cmd_corpus(cmd),
        Command::Run(args) => cmd_run(args),
        Command::Tcp(args) => cmd_tcp(args),
        Command::Parse(args) => cmd_parse(args),
        Command::Stats(cmd) => cmd_stats(cmd),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T, pretty: bool) -> String {
    if pretty {
        serde_json::to_string_pretty(value).expect("serializable")
    } else {
        serde_json::to_string(value).expect("serializable")
    }
}

// ---------------------------------------------------------------------------
// corpus
// ---------------------------------------------------------------------------

fn cmd_corpus(cmd: CorpusCmd) -> CmdResult {
    let builtin = Corpus::builtin();
    match cmd {
        CorpusCmd::List { json } => {
            for p in builtin.iter() {
                if json {
                    out!("{}", to_json(p, false));
                } else {
                    out!("{}\t{}\t{}\t{}", p.id, p.kind, p.tone_axis, p.fusion_axis);
                }
            }
        }
        CorpusCmd::Export { dir } => {
            for path in builtin.export(&dir).or_exit(EXIT_USER)? {
                out!("{}", path.display());
            }
        }
        CorpusCmd::Validate {
            dir,
            tokenizer_cmd,
            json,
        } => {
            let prompts = match &dir {
                Some(d) => load_prompt_dir(d).or_exit(EXIT_USER)?,
                None => builtin.iter().cloned().collect(),
            };
            let counter: Box<dyn TokenCounter> = match tokenizer_cmd.as_deref() {
                Some(line) => Box::new(
                    CommandCounter::from_command_line(line)
                        .ok_or_else(|| user_error("empty --tokenizer-cmd"))?,
                ),
                None => Box::new(WhitespaceCounter),
            };
            let mut failed = Vec::new();
            for p in &prompts {
                let report = validate_prompt(p, counter.as_ref());
                if json {
                    out!("{}", to_json(&report, false));
                } else {
                    for c in &report.checks {
                        out!(
                            "{}\t{}\t{}\t{}",
                            report.prompt_id,
                            c.status,
                            c.name,
                            c.detail
                        );
                    }
                }
                if report.has_failures() {
                    failed.push(report.prompt_id.clone());
                }
            }
            if !failed.is_empty() {
                return Err(user_error(format!(
                    "validation failed for {}",
                    failed.join(", ")
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn provider_for(
    config: &ProviderConfig,
    selector: Option<&BackendSelector>,
) -> Result<Provider, Failure> {
    let backend = build_backend(config, selector, Path::new(".")).or_exit(EXIT_USER)?;
    Provider::new(config.clone(), backend).or_exit(EXIT_USER)
}

fn cmd_run(args: RunArgs) -> CmdResult {
    let mut manifest = ExperimentManifest::load(&args.manifest).or_exit(EXIT_USER)?;
    if let Some(dir) = args.output_dir {
        manifest.output_dir = dir;
    }
    let corpus = Corpus::builtin();
    manifest.validate(&corpus).or_exit(EXIT_USER)?;

    let mut overrides = BTreeMap::new();
    for spec in &args.evaluators {
        let (id, sel) = spec
            .split_once('=')
            .ok_or_else(|| user_error(format!("--evaluator expects ID=SELECTOR, got {spec:?}")))?;
        if !manifest.evaluators.iter().any(|e| e.provider_id == id) {
            return Err(user_error(format!(
                "--evaluator {id}: not an evaluator in the manifest"
            )));
        }
        overrides.insert(
            id.to_string(),
            sel.parse::<BackendSelector>().or_exit(EXIT_USER)?,
        );
    }
    let subject = provider_for(&manifest.subject, args.subject.as_ref())?;
    let evaluators = manifest
        .evaluators
        .iter()
        .map(|c| provider_for(c, overrides.get(&c.provider_id)))
        .collect::<Result<Vec<_>, _>>()?;
    let providers = Providers::new(subject, evaluators);
    let options = RunOptions {
        jobs: args.jobs.max(1),
        evaluation_retries: args.evaluation_retries,
        record_limit: None,
    };
    let summary =
        experiment::run_experiment(&manifest, &corpus, &providers, &options).map_err(|e| {
            let code = match e {
                ExperimentError::ManifestInvalid(_)
                | ExperimentError::ManifestMismatch(_)
                | ExperimentError::MissingProvider(_)
                | ExperimentError::Corpus(_) => EXIT_USER,
                ExperimentError::Store(_) => EXIT_PROVIDER,
            };
            Failure {
                code,
                error: e.into(),
            }
        })?;

    out!("store: {}", summary.output_dir.display());
    for (condition, c) in &summary.per_condition {
        out!(
            "{condition}: subject {} ok, {} failed; evaluations {} usable, {} unusable",
            c.subject_ok,
            c.subject_failed,
            c.evaluations_usable,
            c.evaluations_unusable
        );
    }
    out!(
        "sessions run: {} subject, {} evaluator; {} slot(s) already complete",
        summary.subject_sessions_run,
        summary.evaluator_sessions_run,
        summary.slots_skipped
    );
    out!(
        "refusals: {}; parse failures: {}; transport errors: {}",
        summary.refusals,
        summary.parse_failures,
        summary.transport_errors
    );
    if summary.transport_errors > 0 {
        return Err(Failure {
            code: EXIT_PROVIDER,
            error: anyhow!(
                "{} session(s) failed after retries; rerun the same command to resume",
                summary.transport_errors
            ),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// tcp
// ---------------------------------------------------------------------------

fn cmd_tcp(args: TcpArgs) -> CmdResult {
    let corpus = Corpus::builtin();
    let first = input::resolve_prompt(&corpus, &args.first).or_exit(EXIT_USER)?;
    let second = input::resolve_prompt(&corpus, &args.second).or_exit(EXIT_USER)?;
    let text = instantiate_tcp(&first, &second).or_exit(EXIT_USER)?;
    let prompt_id = match corpus.get("TCP1") {
        Some(tcp1) if tcp1.text == text => "TCP1",
        _ => "TCP",
    };
    let (provider_id, base_url) = match &args.provider {
        BackendSelector::Replay(dir) => (
            args.provider_id.clone().unwrap_or_else(|| "subject".into()),
            format!("replay:{}", dir.display()),
        ),
        BackendSelector::Live(id) => (
            args.provider_id.clone().unwrap_or_else(|| id.clone()),
            args.base_url
                .clone()
                .ok_or_else(|| user_error("live providers need --base-url"))?,
        ),
    };
    let config = ProviderConfig::new(&provider_id, &base_url, &args.model);
    let provider = provider_for(&config, Some(&args.provider))?;
    match provider.complete_disposable(&text, prompt_id, args.trial) {
        Ok(record) => {
            if record.response_text.ends_with('\n') {
                emit(format_args!("{}", record.response_text));
            } else {
                out!("{}", record.response_text);
            }
            Ok(())
        }
        Err(SessionError::EmptyPrompt) => Err(user_error("TCP prompt is empty")),
        Err(e) => Err(Failure {
            code: EXIT_PROVIDER,
            error: e.into(),
        }),
    }
}

// ---------------------------------------------------------------------------
// parse
// ---------------------------------------------------------------------------

fn cmd_parse(args: ParseArgs) -> CmdResult {
    let raw = if args.input == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).or_exit(EXIT_USER)?;
        s
    } else {
        fs::read_to_string(&args.input)
            .with_context(|| format!("cannot read {}", args.input))
            .or_exit(EXIT_USER)?
    };
    match tqp::parse_evaluation(&raw) {
        Ok((eval, diags)) => {
            for w in &diags.warnings {
                eprintln!("warning: {}: {}", w.code, w.message);
            }
            out!("{}", to_json(&eval, args.pretty));
            Ok(())
        }
        Err(e) => {
            for w in &e.diagnostics.warnings {
                eprintln!("warning: {}: {}", w.code, w.message);
            }
            Err(Failure {
                code: EXIT_PARSE,
                error: anyhow!("cannot parse evaluation: {e}"),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

fn stats_failure(e: StatsError) -> Failure {
    let code = match e {
        StatsError::EmptySample | StatsError::SampleTooSmall(_) => EXIT_PARSE,
        _ => EXIT_USER,
    };
    Failure {
        code,
        error: e.into(),
    }
}

fn opt6(x: Option<f64>) -> String {
    x.map_or_else(|| "N/A".to_string(), format_sig6)
}

fn cmd_stats(cmd: StatsCmd) -> CmdResult {
    match cmd {
        StatsCmd::Welch { a, b, welch, json } => {
            let xs = input::read_numbers(&a).or_exit(EXIT_USER)?;
            let ys = input::read_numbers(&b).or_exit(EXIT_USER)?;
            let r = stats::welch_test(&xs, &ys, welch.into()).map_err(stats_failure)?;
            if json {
                out!("{}", to_json(&r, false));
            } else {
                out!(
                    "t={} df={} p={} {}",
                    opt6(r.t),
                    opt6(r.df),
                    opt6(r.p),
                    r.significance_label()
                );
            }
        }
        StatsCmd::Describe { values, json } => {
            let xs = input::read_numbers(&values).or_exit(EXIT_USER)?;
            let d = stats::describe(&xs).map_err(stats_failure)?;
            if json {
                out!("{}", to_json(&d, false));
            } else {
                out!(
                    "n={} mean={} sd={} median={} q1={} q3={} whiskers=[{}, {}]",
                    d.n,
                    format_sig6(d.mean),
                    format_sig6(d.sd),
                    format_sig6(d.median),
                    format_sig6(d.q1),
                    format_sig6(d.q3),
                    format_sig6(d.whisker_low),
                    format_sig6(d.whisker_high)
                );
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze / report
// ---------------------------------------------------------------------------

fn load_store(dir: &Path) -> Result<ScoreMatrix, Failure> {
    match aggregate_store(dir) {
        Ok((_, matrix)) => Ok(matrix),
        Err(e @ StoreError::Missing(_)) => Err(user_error(e)),
        Err(e) => Err(Failure {
            code: EXIT_USER,
            error: e.into(),
        }),
    }
}

fn resolve_pairs(raw: &[String], matrix: &ScoreMatrix) -> Result<Vec<(String, String)>, Failure> {
    if raw.is_empty() {
        let defaults: Vec<(String, String)> = experiment::DEFAULT_PAIRS
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        if defaults
            .iter()
            .all(|(a, b)| matrix.conditions.contains(a) && matrix.conditions.contains(b))
        {
            return Ok(defaults);
        }
        return Err(user_error(
            "the store lacks the default conditions; pass --pairs A:B",
        ));
    }
    raw.iter()
        .map(|p| parse_pair(p).map_err(user_error))
        .collect()
}

fn metrics(arg: &str) -> Result<Vec<Metric>, Failure> {
    if arg == "all" {
        Ok(Metric::ALL.to_vec())
    } else {
        Ok(vec![arg.parse::<Metric>().map_err(user_error)?])
    }
}

fn run_comparisons(
    matrix: &ScoreMatrix,
    pairs: &[(String, String)],
    metrics: &[Metric],
    evaluator: Option<&str>,
    opts: WelchOptions,
) -> Result<Vec<Comparison>, Failure> {
    let mut all = Vec::new();
    for &m in metrics {
        all.extend(compare(matrix, pairs, m, evaluator, opts).or_exit(EXIT_USER)?);
    }
    Ok(all)
}

fn cmd_analyze(args: AnalyzeArgs) -> CmdResult {
    let matrix = load_store(&args.store)?;
    let pairs = resolve_pairs(&args.pairs, &matrix)?;
    let comparisons = run_comparisons(
        &matrix,
        &pairs,
        &metrics(&args.metric)?,
        args.evaluator.as_deref(),
        args.welch.into(),
    )?;
    for c in &comparisons {
        if args.json {
            out!("{}", to_json(c, false));
            continue;
        }
        let r = c.result.as_ref();
        out!(
            "{} {} {} vs {}: n={}/{} mean={}/{} t={} df={} p={} {}",
            c.evaluator_id,
            c.metric,
            c.first,
            c.second,
            c.n_first,
            c.n_second,
            opt6(c.mean_first),
            opt6(c.mean_second),
            opt6(r.and_then(|r| r.t)),
            opt6(r.and_then(|r| r.df)),
            opt6(c.p()),
            c.label()
        );
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> CmdResult {
    let matrix = load_store(&args.store)?;
    let pairs = resolve_pairs(&args.pairs, &matrix)?;
    let comparisons = run_comparisons(&matrix, &pairs, &Metric::ALL, None, args.welch.into())?;
    let report_err = |e: report::ReportError| {
        let code = match e {
            report::ReportError::Io { .. } => EXIT_PROVIDER,
            _ => EXIT_USER,
        };
        Failure {
            code,
            error: e.into(),
        }
    };
    report::emit_beeswarm(&matrix, &comparisons, &args.out).map_err(report_err)?;
    report::emit_summary(
        &matrix,
        &comparisons,
        &args.summary,
        args.markdown.as_deref(),
    )
    .map_err(report_err)?;
    let md = args
        .markdown
        .clone()
        .unwrap_or_else(|| args.summary.with_extension("md"));
    out!("figure: {}", args.out.display());
    out!("summary: {}", args.summary.display());
    out!("markdown: {}", md.display());
    Ok(())
}
