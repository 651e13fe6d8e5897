use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use granbench::dataset::{self, CorpusConfig, EpisodeOptions, GranClass, MixtureRatio};
use granbench::harness::{self, HarnessError, MetricValues};
use granbench::instructor::{Ablation, Realizer, Template};
use granbench::planner::{self, PlanFile, Subproblem};
use granbench::rules::{self, RuleSet};
use granbench::tasks::{self, Task};
use granbench::world::WorldState;
use granbench::pddl;

const SCHEMA_VERSION: u32 = 1;

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout(), $($arg)*)?
    };
}

#[derive(Parser, Debug)]
#[command(name = "granbench", version, about = "Instruction-granularity benchmark: tasks, rules, widths and datasets")]
struct Cli {
    /// Output directory for generated files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Human-readable tables instead of machine-readable lines.
    #[arg(long, global = true)]
    pretty: bool,
    /// JSON file with defaults for seed, out, jobs and tasks.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate solvable instances with a train/eval split.
    GenInstances(GenInstancesArgs),
    /// Check that a rule set is reachable and goal-terminating on one instance.
    ValidateRules(InstanceArgs),
    /// Plan a full instance with BFWS.
    Solve(InstanceArgs),
    /// Instruction width of a rule set on one instance.
    Width(WidthArgs),
    /// Print the instructions issued along a validated run.
    Instruct(InstructArgs),
    /// Instances, episodes, granularity binning and statistics for a corpus.
    GenDataset(GenDatasetArgs),
    /// Success rates of an agent on the evaluation split.
    Eval(EvalArgs),
    /// Per-rank statistics of an episodes file.
    Stats(EpisodesArgs),
    /// Horizon-binned correlation between metrics and success.
    Correlate(CorrelateArgs),
    /// Export an instance as a PDDL domain and problem.
    ExportPddl(InstanceArgs),
}

#[derive(Args, Debug, Clone)]
struct SeedArg {
    /// Root seed (falls back to GRANBENCH_SEED, then the config file).
    #[arg(long, env = "GRANBENCH_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct GenInstancesArgs {
    /// Task id; repeatable; all tasks when absent.
    #[arg(long)]
    task: Vec<String>,
    #[arg(long, default_value_t = 60)]
    n: usize,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct InstanceArgs {
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 0)]
    rank: u32,
    /// Value of the task's size parameter (shoes, packages, ...).
    #[arg(long = "k", alias = "size")]
    k: Option<u32>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct WidthArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Largest k tried before reporting the width as exceeded.
    #[arg(long, default_value_t = planner::DEFAULT_K_MAX)]
    k_max: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TemplateArg {
    Step,
    If,
}

impl From<TemplateArg> for Template {
    fn from(t: TemplateArg) -> Self {
        match t {
            TemplateArg::Step => Template::Step,
            TemplateArg::If => Template::If,
        }
    }
}

#[derive(Args, Debug)]
struct InstructArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, value_enum, default_value = "step")]
    template: TemplateArg,
    #[arg(long, default_value = "full")]
    ablation: Ablation,
}

#[derive(Args, Debug, Clone)]
struct EpisodeArgs {
    #[arg(long, default_value_t = 300)]
    max_steps: u32,
    #[arg(long, default_value = "full")]
    ablation: Ablation,
    #[arg(long, value_enum, default_value = "step")]
    template: TemplateArg,
    /// Skip the per-activation width computation.
    #[arg(long)]
    no_widths: bool,
}

impl EpisodeArgs {
    fn options(&self) -> EpisodeOptions {
        EpisodeOptions {
            max_steps: self.max_steps,
            ablation: self.ablation,
            template: self.template.into(),
            record_widths: !self.no_widths,
            ..EpisodeOptions::default()
        }
    }
}

#[derive(Args, Debug)]
struct GenDatasetArgs {
    #[arg(long)]
    task: Vec<String>,
    /// Restrict to one rank; all ranks when absent.
    #[arg(long)]
    rank: Option<u32>,
    #[arg(long, default_value_t = 60)]
    n: usize,
    #[arg(long, default_value = "oracle")]
    agent: String,
    /// Also write a training mixture over the train split, e.g. 3:1:1.
    #[arg(long)]
    mixture: Option<MixtureRatio>,
    /// Number of mixture draws.
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    #[command(flatten)]
    episode: EpisodeArgs,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    task: Vec<String>,
    #[arg(long)]
    rank: Option<u32>,
    #[arg(long, default_value_t = 60)]
    n: usize,
    #[arg(long, default_value = "oracle")]
    agent: String,
    #[command(flatten)]
    episode: EpisodeArgs,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct EpisodesArgs {
    /// Episodes file written by gen-dataset.
    #[arg(long)]
    episodes: PathBuf,
}

#[derive(Args, Debug)]
struct CorrelateArgs {
    #[command(flatten)]
    input: EpisodesArgs,
    /// Metric to correlate; all metrics when absent.
    #[arg(long)]
    metric: Option<String>,
}

/// Defaults read from `--config`; flags and the environment take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    #[serde(default)]
    tasks: Vec<String>,
}

struct RunConfig {
    out: PathBuf,
    pretty: bool,
    file: FileConfig,
}

/// Errors in how the command was invoked, as opposed to domain failures.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

impl RunConfig {
    fn seed(&self, arg: &SeedArg) -> Result<u64> {
        arg.seed
            .or(self.file.seed)
            .ok_or_else(|| UsageError("a seed is required: pass --seed or set GRANBENCH_SEED".into()).into())
    }

    fn tasks(&self, flags: &[String]) -> Result<Vec<String>> {
        let ids: Vec<String> = if !flags.is_empty() {
            flags.to_vec()
        } else if !self.file.tasks.is_empty() {
            self.file.tasks.clone()
        } else {
            tasks::task_ids().into_iter().map(String::from).collect()
        };
        for id in &ids {
            tasks::lookup(id)?;
        }
        Ok(ids)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes through a temporary sibling and renames it into place.
    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        write_atomic(&path, bytes)?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).with_context(|| format!("cannot write {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn instance(args: &InstanceArgs, cfg: &RunConfig) -> Result<(&'static dyn Task, WorldState)> {
    let task = tasks::lookup(&args.task)?;
    let seed = cfg.seed(&args.seed)?;
    let sizes = args.k.map(|k| tasks::size_params(task, k)).unwrap_or_default();
    Ok((task, task.init_instance(seed, &sizes)?))
}

fn rule_set(task: &dyn Task, rank: u32) -> Result<RuleSet> {
    let n = task.rule_sets().len();
    task.rule_set(rank).ok_or_else(|| anyhow!("task {} has ranks 0..{} but rank {rank} was requested", task.id(), n - 1))
}

fn instance_ref(s: &WorldState) -> String {
    let sizes: Vec<String> = s.size_params.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{}/{}/{}", s.task_id, s.layout_seed, sizes.join(","))
}

#[derive(Serialize)]
struct InstancesFile<'a> {
    v: u32,
    sets: &'a [dataset::InstanceSet],
}

#[derive(Serialize)]
struct BinningFile<'a> {
    v: u32,
    binnings: &'a [dataset::GranularityBinning],
}

#[derive(Serialize)]
struct MixtureFile {
    v: u32,
    ratio: String,
    seed: u64,
    /// Training episode indices (lines of episodes.jsonl) per class.
    pools: BTreeMap<GranClass, Vec<usize>>,
    draws: Vec<MixtureEpisode>,
}

#[derive(Serialize)]
struct MixtureEpisode {
    class: GranClass,
    episode: usize,
}

fn gen_instances(args: &GenInstancesArgs, cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed(&args.seed)?;
    let sets = cfg
        .tasks(&args.task)?
        .iter()
        .map(|t| dataset::generate_instances(t, args.n, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let path = cfg.write_json("instances.json", &InstancesFile { v: SCHEMA_VERSION, sets: &sets })?;
    for s in &sets {
        out!("instances task={} train={} eval={}", s.task_id, s.train().len(), s.eval().len());
    }
    out!("wrote {}", path.display());
    Ok(())
}

fn validate_rules(args: &InstanceArgs, cfg: &RunConfig) -> Result<()> {
    let (task, state) = instance(args, cfg)?;
    let rs = rule_set(task, args.rank)?;
    let report = rules::validate_ruleset(&rs, &state, rules::DEFAULT_VALIDATION_BUDGET)?;
    let path = cfg.write_json(&format!("validation.{}.{}.json", task.id(), rs.rank), &report)?;
    if cfg.pretty {
        out!("task {} rank {} seed {}", task.id(), rs.rank, state.layout_seed);
        out!("  reachable    {}", report.reachable);
        out!("  terminating  {}", report.terminating);
        out!("  rule calls   {}", report.rule_calls);
        for (rule, n) in &report.activations {
            out!("  {rule:<24} {n}");
        }
    } else {
        out!(
            "validate task={} rank={} reachable={} terminating={} rule_calls={} report={}",
            task.id(),
            rs.rank,
            report.reachable,
            report.terminating,
            report.rule_calls,
            path.display()
        );
    }
    if !report.passed() {
        let why = report.failure.map_or_else(|| "not quiescent at the goal".to_string(), |f| format!("step {}: {}", f.step, f.reason));
        bail!("rule set failed validation at {why}");
    }
    Ok(())
}

fn solve(args: &InstanceArgs, cfg: &RunConfig) -> Result<()> {
    let (task, state) = instance(args, cfg)?;
    let sub = Subproblem::for_goal(&state, &task.roster(&state))?;
    let plan = planner::bfws_solve(&sub)?;
    let file = PlanFile {
        instance_ref: instance_ref(&state),
        actions: plan.actions.clone(),
        length: plan.length,
        solved: plan.solved,
        stats: plan.stats,
    };
    let path = cfg.write_json(&format!("plan.{}.json", task.id()), &file)?;
    if cfg.pretty {
        for (i, a) in plan.actions.iter().enumerate() {
            out!("{:>4}  {a}", i + 1);
        }
    }
    out!(
        "solve solved={} length={} expanded={} generated={} plan={}",
        plan.solved,
        plan.length,
        plan.stats.expanded,
        plan.stats.generated,
        path.display()
    );
    if !plan.solved {
        bail!("no plan found for {}", instance_ref(&state));
    }
    Ok(())
}

fn width(args: &WidthArgs, cfg: &RunConfig) -> Result<()> {
    let (task, state) = instance(&args.instance, cfg)?;
    let rs = rule_set(task, args.instance.rank)?;
    let w = planner::instruction_width(&rs, &state, args.k_max)?;
    if cfg.pretty {
        out!("{:>5}  {:<24} width", "step", "rule");
        for a in &w.activations {
            out!("{:>5}  {:<24} {}", a.step, a.rule, a.width);
        }
        out!("instruction width {}", w.width);
    } else {
        out!("{}", w.width);
    }
    Ok(())
}

fn instruct(args: &InstructArgs, cfg: &RunConfig) -> Result<()> {
    let (task, state) = instance(&args.instance, cfg)?;
    let rs = rule_set(task, args.instance.rank)?;
    let realizer = Realizer::new(task.id(), rs.rank).with_template(args.template.into());
    let mut issued = Vec::new();
    let mut error = None;
    let mut hook = |_: &WorldState, rule: &rules::Rule, _: &granbench::features::Roster| {
        match realizer.realize(rule, issued.len() as u32 + 1) {
            Ok(i) => issued.push(granbench::instructor::ablate(&i, args.ablation, task.goal_text())),
            Err(e) => error = Some(e),
        }
        error.is_none()
    };
    let report = rules::validate_ruleset_with(&rs, &state, rules::DEFAULT_VALIDATION_BUDGET, &mut hook)?;
    if let Some(e) = error {
        return Err(e.into());
    }
    if !report.passed() {
        let why = report.failure.map_or_else(|| "unknown".to_string(), |f| f.reason);
        bail!("rule set failed validation: {why}");
    }
    for i in &issued {
        if cfg.pretty {
            out!("{:>3}  {:<24} {}", i.step_index, i.rule_id, i.text);
        } else {
            out!("{}", serde_json::to_string(i)?);
        }
    }
    Ok(())
}

fn gen_dataset(args: &GenDatasetArgs, cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed(&args.seed)?;
    let corpus_cfg = CorpusConfig {
        tasks: cfg.tasks(&args.task)?,
        rank: args.rank,
        n_instances: args.n,
        seed,
        agent: args.agent.clone(),
        episode: args.episode.options(),
    };
    let corpus = dataset::generate_corpus(&corpus_cfg)?;
    cfg.write_json("instances.json", &InstancesFile { v: SCHEMA_VERSION, sets: &corpus.instances })?;
    for id in &corpus_cfg.tasks {
        let task = tasks::lookup(id)?;
        for rs in task.rule_sets().into_iter().filter(|rs| args.rank.is_none_or(|r| r == rs.rank)) {
            cfg.write_json(&format!("rules.{id}.{}.json", rs.rank), &rs)?;
        }
    }
    let mut lines = Vec::new();
    dataset::write_jsonl(&mut lines, &corpus.episodes)?;
    cfg.write("episodes.jsonl", &lines)?;
    cfg.write_json("binning.json", &BinningFile { v: SCHEMA_VERSION, binnings: &corpus.binnings })?;
    let stats = dataset::dataset_stats(&corpus.episodes);
    cfg.write("stats.csv", stats.to_csv().as_bytes())?;
    if let Some(ratio) = args.mixture {
        let mixture = mixture(&corpus, ratio, args.draws, seed)?;
        cfg.write_json("mixture.json", &mixture)?;
    }
    let ok = corpus.episodes.iter().filter(|e| e.outcome == dataset::Outcome::Success).count();
    if cfg.pretty {
        print!("{}", stats_table(&stats));
    }
    out!("gen-dataset episodes={} success={} out={}", corpus.episodes.len(), ok, cfg.out.display());
    Ok(())
}

/// Pools the training episodes by granularity class of their rank and
/// draws a stratified mixture over them.
fn mixture(corpus: &dataset::Corpus, ratio: MixtureRatio, draws: usize, seed: u64) -> Result<MixtureFile> {
    let classes: BTreeMap<&str, &dataset::GranularityBinning> =
        corpus.binnings.iter().map(|b| (b.task_id.as_str(), b)).collect();
    let mut pools: BTreeMap<GranClass, Vec<usize>> = GranClass::ALL.into_iter().map(|c| (c, Vec::new())).collect();
    for (i, ep) in corpus.episodes.iter().enumerate() {
        if ep.instance.split != Some(dataset::Split::Train) {
            continue;
        }
        let Some(b) = classes.get(ep.instance.task_id.as_str()) else { continue };
        for c in GranClass::ALL {
            if b.ranks_of(c).contains(&ep.rank) {
                pools.get_mut(&c).expect("all classes").push(i);
            }
        }
    }
    let sizes = pools.iter().map(|(c, p)| (*c, p.len())).collect();
    let picked = dataset::sample_mixture(&sizes, ratio, draws, seed)?;
    Ok(MixtureFile {
        v: SCHEMA_VERSION,
        ratio: ratio.to_string(),
        seed,
        draws: picked.iter().map(|d| MixtureEpisode { class: d.class, episode: pools[&d.class][d.index] }).collect(),
        pools,
    })
}

fn eval(args: &EvalArgs, cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed(&args.seed)?;
    let opts = args.episode.options();
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for id in cfg.tasks(&args.task)? {
        let task = tasks::lookup(&id)?;
        let set = dataset::generate_instances(&id, args.n, seed)?;
        for rs in task.rule_sets().into_iter().filter(|rs| args.rank.is_none_or(|r| r == rs.rank)) {
            let report = harness::run_eval(&args.agent, set.eval(), &rs, &opts, seed)?;
            if cfg.pretty {
                out!("{:<26} rank {}  SR {:.3}  ({} episodes)", id, rs.rank, report.sr, report.records.len());
            } else {
                out!("eval task={id} rank={} agent={} sr={:.3} n={}", rs.rank, args.agent, report.sr, report.records.len());
            }
            rows.push((format!("{id}/rank{}", rs.rank), report.records.clone()));
            all.extend(report.records);
        }
    }
    let mut records = Vec::new();
    for r in &all {
        records.extend(serde_json::to_vec(r)?);
        records.push(b'\n');
    }
    cfg.write("eval.jsonl", &records)?;
    cfg.write("sr_grid.csv", harness::sr_grid_csv(&rows).as_bytes())?;
    cfg.write("failures.csv", harness::failure_csv(&all).as_bytes())?;
    Ok(())
}

fn read_episodes(path: &Path) -> Result<Vec<dataset::Episode>> {
    let f = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let episodes = dataset::read_jsonl(BufReader::new(f))?;
    if episodes.is_empty() {
        return Err(HarnessError::DegenerateInput("no episodes").into());
    }
    Ok(episodes)
}

fn stats_table(t: &dataset::StatsTable) -> String {
    let mut out = format!("{:>4} {:>8} {:>14} {:>7} {:>14}\n", "rank", "instr", "length", "vocab", "plan");
    for r in &t.rows {
        out.push_str(&format!(
            "{:>4} {:>8} {:>7.2} ± {:<4.2} {:>7} {:>7.2} ± {:<4.2}\n",
            r.rank, r.n_instructions, r.len_mean, r.len_sd, r.unique_tokens, r.plan_mean, r.plan_sd
        ));
    }
    out
}

fn stats(args: &EpisodesArgs, cfg: &RunConfig) -> Result<()> {
    let t = dataset::dataset_stats(&read_episodes(&args.episodes)?);
    let path = cfg.write("stats.csv", t.to_csv().as_bytes())?;
    if cfg.pretty {
        print!("{}", stats_table(&t));
    } else {
        out!("stats ranks={} out={}", t.rows.len(), path.display());
    }
    Ok(())
}

fn correlate(args: &CorrelateArgs, cfg: &RunConfig) -> Result<()> {
    let episodes = read_episodes(&args.input.episodes)?;
    let records: Vec<_> = episodes.iter().map(harness::EvalRecord::from_episode).collect();
    let metrics: Vec<&str> = match &args.metric {
        Some(m) => vec![m.as_str()],
        None => MetricValues::NAMES.to_vec(),
    };
    let mut csv = String::new();
    for m in metrics {
        let bins = harness::horizon_binned_correlation(&records, m)?;
        let part = harness::correlation_csv(m, &bins);
        if csv.is_empty() {
            csv.push_str(&part);
        } else {
            csv.extend(part.lines().skip(1).map(|l| format!("{l}\n")));
        }
        for (bin, c) in &bins {
            if cfg.pretty {
                out!("{m:<9} {:<6} r={:+.3} n={:<5} p={:.4}", bin.to_string(), c.r, c.n, c.p);
            } else {
                out!("correlate metric={m} bin={bin} r={:.6} n={} p={:.6}", c.r, c.n, c.p);
            }
        }
    }
    cfg.write("correlation.csv", csv.as_bytes())?;
    Ok(())
}

fn export_pddl(args: &InstanceArgs, cfg: &RunConfig) -> Result<()> {
    let (task, state) = instance(args, cfg)?;
    let files = pddl::export_pddl(&state)?;
    let problem = cfg.write(&format!("{}.pddl", task.id()), files.problem.as_bytes())?;
    let domain = cfg.write(&format!("{}-domain.pddl", task.id()), files.domain.as_bytes())?;
    out!("export-pddl domain={} problem={}", domain.display(), problem.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| UsageError(format!("bad config {}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    if let Some(n) = cli.jobs.or(file.jobs) {
        if n == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = RunConfig {
        out: cli.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from(".")),
        pretty: cli.pretty,
        file,
    };
    match &cli.command {
        Command::GenInstances(a) => gen_instances(a, &cfg),
        Command::ValidateRules(a) => validate_rules(a, &cfg),
        Command::Solve(a) => solve(a, &cfg),
        Command::Width(a) => width(a, &cfg),
        Command::Instruct(a) => instruct(a, &cfg),
        Command::GenDataset(a) => gen_dataset(a, &cfg),
        Command::Eval(a) => eval(a, &cfg),
        Command::Stats(a) => stats(a, &cfg),
        Command::Correlate(a) => correlate(a, &cfg),
        Command::ExportPddl(a) => export_pddl(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // A reader such as `head` closed the pipe; that is not a failure.
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            let usage = e.downcast_ref::<UsageError>().is_some();
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
