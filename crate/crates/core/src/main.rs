use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use llm_ens::agents::{load_agent, save_agent, train_q_learning, AgentConfig, TrainedAgent};
use llm_ens::gateway::{GatewayConfig, LlmGateway, MockTransport};
use llm_ens::harness::audit::audit;
use llm_ens::harness::experiment::{run_experiment, ExperimentPlan, ExperimentResults, Method, PLAN_FILE, RESULTS_FILE};
use llm_ens::harness::report::{emit_table, render_heatmap_txt, render_table_txt, ResultTable};
use llm_ens::mdp::{corridor, lookup, EnvSpec};
use llm_ens::profile::{profile_agent, RewardDistribution};
use llm_ens::runtime::{run_single_agent_episode, CategorizerKind};
use llm_ens::situations::{
    generate_situations, oracle_catalog, Categorizer, CategorizerConfig, LlmCategorizer, OracleCategorizer,
    SituationCatalog, TemplateOptions,
};

#[derive(Parser)]
#[command(name = "llm-ens", version, about = "Situation-aware ensembles of tabular RL agents")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Environment name.
    #[arg(long, global = true)]
    env: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Categorization interval in steps.
    #[arg(long, global = true)]
    k: Option<u32>,
    #[arg(long, global = true, value_enum)]
    categorizer: Option<CategorizerArg>,
    /// Situation catalog file.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Boltzmann temperature for the combiners.
    #[arg(long, global = true)]
    temperature: Option<f64>,
    /// Replay LLM replies from a JSON script instead of calling the endpoint.
    #[arg(long = "mock-llm", global = true)]
    mock_llm: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CategorizerArg {
    Oracle,
    Llm,
}

impl From<CategorizerArg> for CategorizerKind {
    fn from(arg: CategorizerArg) -> Self {
        match arg {
            CategorizerArg::Oracle => CategorizerKind::Oracle,
            CategorizerArg::Llm => CategorizerKind::Llm,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train Q-learning agents for consecutive seeds.
    Train {
        #[arg(long, default_value_t = 1)]
        count: u32,
        #[arg(long)]
        episodes: Option<u32>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Build a situation catalog.
    GenSituations,
    /// Profile agents per situation.
    Profile {
        /// Agent files.
        #[arg(required = true)]
        agents: Vec<PathBuf>,
        #[arg(long, default_value_t = 5)]
        episodes: u32,
    },
    /// Run an experiment plan end to end.
    Run {
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Agent seeds to train when no plan is given.
        #[arg(long, default_value_t = 5)]
        agents: u64,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[arg(long)]
        eval_episodes: Option<u32>,
    },
    /// Merge the tables of several experiment directories.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Print the tables of an experiment directory.
    Report { dir: PathBuf },
    /// Recompute every reported number from the traces.
    Audit { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn spec_for(global: &Global) -> Result<EnvSpec> {
    Ok(lookup(global.env.as_deref().unwrap_or(corridor::NAME))?)
}

fn gateway(global: &Global) -> Result<LlmGateway> {
    match &global.mock_llm {
        Some(path) => {
            let script = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let transport = MockTransport::from_script_json(&script).context("parsing the mock script")?;
            let config = GatewayConfig { cache_enabled: false, ..GatewayConfig::default() };
            Ok(LlmGateway::new(config, Arc::new(transport))?)
        }
        None => Ok(LlmGateway::from_env(GatewayConfig::default())?),
    }
}

fn categorizer_kind(global: &Global) -> CategorizerKind {
    global.categorizer.map_or(CategorizerKind::Oracle, CategorizerKind::from)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_catalog(global: &Global, spec: &EnvSpec) -> Result<SituationCatalog> {
    match (&global.catalog, categorizer_kind(global)) {
        (Some(path), _) => Ok(SituationCatalog::from_json(&read(path)?)?),
        (None, CategorizerKind::Oracle) => Ok(oracle_catalog(spec)),
        (None, CategorizerKind::Llm) => bail!("--catalog is required with the llm categorizer"),
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let global = &cli.global;
    match cli.command {
        Command::Train { count, episodes, learning_rate } => {
            let spec = spec_for(global)?;
            let mut config = AgentConfig::default();
            if let Some(e) = episodes {
                config.training_episodes = e;
            }
            if let Some(a) = learning_rate {
                config.learning_rate = a;
            }
            let out = global.out.clone().unwrap_or_else(|| PathBuf::from("agents"));
            let base = global.seed.unwrap_or(0);
            for seed in base..base + u64::from(count) {
                let agent = train_q_learning(&spec, &config, seed)?;
                let path = out.join(format!("{}.json", agent.agent_id));
                write(&path, &save_agent(&agent))?;
                let greedy = run_single_agent_episode(&agent, &spec, seed)?.episode_return;
                println!("{}  greedy return {greedy}", path.display());
            }
        }
        Command::GenSituations => {
            let spec = spec_for(global)?;
            let catalog = match categorizer_kind(global) {
                CategorizerKind::Oracle => oracle_catalog(&spec),
                CategorizerKind::Llm => generate_situations(&gateway(global)?, &spec)?,
            };
            let out = global.out.clone().unwrap_or_else(|| PathBuf::from("catalog.json"));
            write(&out, &catalog.to_json())?;
            for s in &catalog.situations {
                println!("{}. {}: {}", s.situation_id, s.name, s.description);
            }
        }
        Command::Profile { agents, episodes } => {
            let spec = spec_for(global)?;
            let catalog = load_catalog(global, &spec)?;
            let loaded: Vec<TrainedAgent> =
                agents.iter().map(|p| Ok(load_agent(&read(p)?)?.agent)).collect::<Result<_>>()?;
            let config = CategorizerConfig { cadence: global.k.unwrap_or(30), fallback_situation: None };
            let gateway = match categorizer_kind(global) {
                CategorizerKind::Llm => Some(gateway(global)?),
                CategorizerKind::Oracle => None,
            };
            let mut categorizer: Box<dyn Categorizer + '_> = match &gateway {
                Some(g) => Box::new(LlmCategorizer::new(g, &spec, catalog.clone(), None, TemplateOptions::default())?),
                None => Box::new(OracleCategorizer),
            };
            let mut dist = RewardDistribution::new();
            for agent in &loaded {
                let records =
                    profile_agent(agent, &spec, categorizer.as_mut(), &config, episodes, global.seed.unwrap_or(0))?;
                dist = dist.merge(&RewardDistribution::from_records(&records));
            }
            let out = global.out.clone().unwrap_or_else(|| PathBuf::from("profile.json"));
            write(&out, &dist.to_json(&catalog.content_hash()))?;
            for (agent, situation, cell) in dist.iter() {
                println!("{agent}  situation {situation}  mean {}  segments {}", cell.mean(), cell.count);
            }
        }
        Command::Run { plan, agents, methods, eval_episodes } => {
            let mut plan = match &plan {
                Some(path) => ExperimentPlan::from_json(&read(path)?)?,
                None => {
                    let env = global.env.as_deref().unwrap_or(corridor::NAME);
                    ExperimentPlan::new(env, (0..agents).collect(), Method::all())
                }
            };
            if let Some(env) = &global.env {
                plan.env_name = env.clone();
            }
            if let Some(seed) = global.seed {
                plan.eval_seed_base = seed;
            }
            if let Some(k) = global.k {
                plan.k = k;
            }
            if let Some(c) = global.categorizer {
                plan.categorizer = c.into();
            }
            if let Some(catalog) = &global.catalog {
                plan.catalog = Some(catalog.clone());
            }
            if let Some(t) = global.temperature {
                plan.combiner_temperature = t;
            }
            if let Some(out) = &global.out {
                plan.output_dir = Some(out.clone());
            }
            if let Some(m) = methods {
                plan.methods = m;
            }
            if let Some(e) = eval_episodes {
                plan.eval_episodes = e;
            }
            if plan.output_dir.is_none() {
                plan.output_dir = Some(PathBuf::from("results"));
            }
            let gateway = match plan.categorizer {
                CategorizerKind::Llm => Some(gateway(global)?),
                CategorizerKind::Oracle => None,
            };
            let outcome = run_experiment(&plan, gateway.as_ref())?;
            print_results(&outcome.output_dir)?;
        }
        Command::Compare { dirs } => {
            let mut merged = ResultTable::default();
            for dir in &dirs {
                merged.merge(&load_table(dir)?);
            }
            let out = global.out.clone().unwrap_or_else(|| PathBuf::from("comparison"));
            emit_table(&merged, &out)?;
            print!("{}", render_table_txt(&merged));
        }
        Command::Report { dir } => print_results(&dir)?,
        Command::Audit { dir } => {
            let report = audit(&dir)?;
            let failures = report.failures();
            println!("{} checks, {} failures", report.checks.len(), failures.len());
            for failure in &failures {
                println!("  {failure}");
            }
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_results(dir: &Path) -> Result<(ExperimentPlan, ExperimentResults)> {
    let plan = ExperimentPlan::from_json(&read(&dir.join(PLAN_FILE))?)?;
    let results = ExperimentResults::from_json(&read(&dir.join(RESULTS_FILE))?)?;
    Ok((plan, results))
}

fn load_table(dir: &Path) -> Result<ResultTable> {
    let (plan, results) = load_results(dir)?;
    Ok(results.table(&plan.methods.iter().map(|m| m.token().to_string()).collect::<Vec<_>>()))
}

fn print_results(dir: &Path) -> Result<()> {
    let (_, results) = load_results(dir)?;
    if let Some(heatmap) = &results.heatmap {
        print!("{}", render_heatmap_txt(&heatmap.grid));
    } else {
        print!("{}", render_table_txt(&load_table(dir)?));
        if let Some(best) = &results.best_single_agent {
            println!("best single agent: {best}");
        }
    }
    Ok(())
}
