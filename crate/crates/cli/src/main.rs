mod commands;
mod config;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use survey_sim::baselines::BaselineSpec;
use survey_sim::cohorts::SamplingStrategy;
use survey_sim::dynamics::ProcessStage;
use survey_sim::experiment::{Method, PersonalityStrategy};
use survey_sim::metrics::Setting;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "survey-sim", version, about = "Personality-grounded survey response simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster respondents by demographics and sample representatives.
    Cluster(RunArgs),
    /// Attach oracle personalities inferred from each respondent's answers.
    Augment(RunArgs),
    /// Simulate answers into a run directory (resumable).
    Simulate(RunArgs),
    /// Score a run directory against human answers.
    Evaluate(EvalArgs),
    /// Compare several runs side by side and emit plot data.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mark,
    Pipeline,
    Ablation,
    Baseline,
}

#[derive(Clone, Copy, ValueEnum)]
enum PersonalityArg {
    Predicted,
    Random,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum SettingArg {
    Sampled,
    Global,
}

impl From<SettingArg> for Setting {
    fn from(s: SettingArg) -> Setting {
        match s {
            SettingArg::Sampled => Setting::Sampled,
            SettingArg::Global => Setting::Global,
        }
    }
}

/// Flags mirroring the run configuration. Values in `--config` win.
#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML or JSON configuration file; its values override flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    respondents: Option<PathBuf>,
    #[arg(long)]
    questions: Option<PathBuf>,
    /// Whole population, used by the global evaluation setting.
    #[arg(long)]
    population: Option<PathBuf>,
    #[arg(long)]
    templates_dir: Option<PathBuf>,
    /// Output directory (run directory for `simulate`).
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    retries: Option<u32>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Environment variable carrying the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// Fold tool messages into the preceding user message.
    #[arg(long)]
    no_tool_role: bool,
    #[arg(long)]
    embedding_model: Option<String>,
    /// Serve replies from a mock script instead of an endpoint.
    #[arg(long)]
    mock_script: Option<PathBuf>,

    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Process for `--method ablation`: dominant, auxiliary, tertiary or inferior.
    #[arg(long)]
    stage: Option<ProcessStage>,
    /// Strategy for `--method baseline`, e.g. random, no_demo, nation_only_a.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    nation: Option<String>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, value_enum)]
    personality: Option<PersonalityArg>,

    #[arg(long)]
    locale: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    negative_threshold: Option<f64>,

    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Fixed number of clusters (skips the silhouette scan).
    #[arg(long)]
    k: Option<usize>,
    /// Representatives drawn per cluster.
    #[arg(long, conflicts_with = "centroid")]
    per_cluster: Option<usize>,
    /// Take the member nearest each centroid instead of a random draw.
    #[arg(long)]
    centroid: bool,
}

impl RunArgs {
    fn to_config(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        let p = &mut c.paths;
        p.respondents = self.respondents.clone();
        p.questions = self.questions.clone();
        p.population = self.population.clone();
        p.templates_dir = self.templates_dir.clone();
        p.output_dir = self.out.clone();

        let b = &mut c.backend;
        macro_rules! set {
            ($($field:ident <- $flag:ident),*) => {$(
                if let Some(v) = self.$flag.clone() { b.$field = v; }
            )*};
        }
        set!(base_url <- base_url, model <- model, temperature <- temperature, max_tokens <- max_tokens,
             retries <- retries, parallelism <- parallelism, timeout_secs <- timeout_secs, api_key_env <- api_key_env);
        if self.no_tool_role {
            b.tool_role = false;
        }
        b.embedding_model = self.embedding_model.clone();
        b.mock_script = self.mock_script.clone();

        c.method = match self.method {
            None | Some(MethodArg::Mark) | Some(MethodArg::Pipeline) => {
                if self.stage.is_some() || self.baseline.is_some() {
                    bail!("--stage needs --method ablation and --baseline needs --method baseline");
                }
                Method::Mark
            }
            Some(MethodArg::Ablation) => match self.stage {
                Some(stage) => Method::Ablation { stage },
                None => bail!("--method ablation needs --stage"),
            },
            Some(MethodArg::Baseline) => {
                let Some(name) = &self.baseline else { bail!("--method baseline needs --baseline NAME") };
                Method::Baseline {
                    spec: BaselineSpec::from_parts(name, self.nation.as_deref(), self.top_k)?,
                }
            }
        };
        if let Some(p) = self.personality {
            c.personality_strategy = match p {
                PersonalityArg::Predicted => PersonalityStrategy::Predicted,
                PersonalityArg::Random => PersonalityStrategy::Random { seed: None },
                PersonalityArg::Oracle => PersonalityStrategy::Oracle,
            };
        }
        if let Some(l) = &self.locale {
            c.locale = l.clone();
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(t) = self.negative_threshold {
            c.negative_threshold = t;
        }
        let k = &mut c.clustering;
        if let Some(v) = self.k_min {
            k.k_min = v;
        }
        if let Some(v) = self.k_max {
            k.k_max = v;
        }
        k.k = self.k;
        if self.centroid {
            k.sampling = SamplingStrategy::Centroid;
        } else if let Some(n) = self.per_cluster {
            k.sampling = SamplingStrategy::RandomN(n);
        }
        RunConfig::resolve(c, self.config.as_deref())
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory written by `simulate`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value = "sampled")]
    setting: SettingArg,
    /// Drop "don't know"-style options before scoring.
    #[arg(long)]
    exclude_non_substantive: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories to compare, in column order.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "sampled")]
    setting: SettingArg,
    #[arg(long)]
    exclude_non_substantive: bool,
    /// Directory for comparison.csv and plot-data CSVs.
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Cluster(args) => commands::cluster(&args.to_config()?),
        Command::Augment(args) => commands::augment(&args.to_config()?),
        Command::Simulate(args) => commands::simulate(&args.to_config()?),
        Command::Evaluate(a) => commands::evaluate(&a.run, a.setting.into(), a.exclude_non_substantive).map(|_| ()),
        Command::Report(a) => commands::report(&a.runs, a.setting.into(), a.exclude_non_substantive, &a.out),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
