//! `chainshort` command-line driver.
//!
//! Exit codes: 0 success within budget, 1 runtime failure, 2 configuration or
//! input error, 3 finished over budget.

pub mod config;
pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Context;
use chainshort_core::evalkit::{self, EvalSettings, MetricsReport, TaskOutcome};
use chainshort_core::mining::{ingest_trajectory, mine_library};
use chainshort_core::pipeline::Pipeline;
use chainshort_core::sandbox::is_safe_relative;
use chainshort_core::{trajectory, CompileCheck, ReferenceIndex, RunRecord, RunResult, Solution, SolutionState, SourceFile};
use clap::{Args, Parser, Subcommand};

pub use config::Config;

pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const RESULT_FILE: &str = "result.json";
pub const SOLUTION_DIR: &str = "solution";
pub const METRICS_FILE: &str = "metrics.csv";
pub const DISTRIBUTIONS_FILE: &str = "distributions.csv";
const HISTOGRAM_BINS: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Failure(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl From<chainshort_core::Error> for CliError {
    fn from(e: chainshort_core::Error) -> Self {
        use chainshort_core::Error as E;
        match e {
            E::Configuration(m) | E::InvalidBudget(m) => CliError::Config(m),
            E::Parse { .. } | E::Index(_) | E::EmptyCorpus => CliError::Input(e.to_string()),
            other => CliError::Failure(other.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    OverBudget,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::OverBudget => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "chainshort", version, about = "Mine shortcuts, run budgeted agent chains, evaluate results")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine a shortcut library from trajectory files (searched recursively).
    Mine {
        trajectory_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one task, given as text, or every line of a task file.
    Run {
        /// Task text, or a file with one task per line (`id<TAB>text` or bare text).
        task: String,
        #[arg(long)]
        task_id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every run under a directory and write `metrics.csv`.
    Eval {
        run_dir: PathBuf,
        /// Defaults to `<run_dir>/metrics.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Path length, time and token distributions per group of runs.
    Stats {
        /// `NAME=DIR` or `DIR` (the group is then the directory name).
        #[arg(required = true)]
        runs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub offline: bool,
    #[arg(long, global = true)]
    pub script: Option<PathBuf>,
    #[arg(long, global = true)]
    pub library: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub base_url: Option<String>,
    #[arg(long, global = true)]
    pub budget_seconds: Option<f64>,
    #[arg(long, global = true)]
    pub budget_tokens: Option<u64>,
    #[arg(long, global = true)]
    pub disable_selection: bool,
    #[arg(long, global = true)]
    pub disable_cost: bool,
    #[arg(long, global = true)]
    pub disable_gamma: bool,
    #[arg(long, global = true)]
    pub disable_shortcuts: bool,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub utility_floor: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub min_reference_sim: Option<f64>,
    #[arg(long, global = true)]
    pub max_rounds: Option<usize>,
    #[arg(long, global = true)]
    pub language: Option<String>,
    #[arg(long, global = true)]
    pub timeout_seconds: Option<f64>,
    #[arg(long, global = true)]
    pub granularity_cap: Option<usize>,
    #[arg(long, global = true)]
    pub max_pairs: Option<usize>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<Config, CliError> {
        let mut c = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = &self.$field { c.$target = v.clone(); })*
            };
        }
        set!(
            model => model,
            base_url => base_url,
            budget_seconds => time_budget_seconds,
            budget_tokens => token_budget,
            utility_floor => utility_floor,
            min_reference_sim => min_reference_sim,
            max_rounds => max_rounds,
            language => language,
            timeout_seconds => timeout_seconds,
            granularity_cap => granularity_cap,
            jobs => jobs,
        );
        if self.script.is_some() {
            c.script = self.script.clone();
        }
        if self.library.is_some() {
            c.library = self.library.clone();
        }
        if self.max_pairs.is_some() {
            c.max_pairs_per_trajectory = self.max_pairs;
        }
        c.offline |= self.offline;
        c.disable_selection |= self.disable_selection;
        c.disable_cost |= self.disable_cost;
        c.disable_gamma |= self.disable_gamma;
        c.disable_shortcuts |= self.disable_shortcuts;
        c.validate()?;
        Ok(c)
    }
}

/// Dispatches an already-parsed command line.
pub fn execute(cli: &Cli) -> Result<Status, CliError> {
    let config = cli.overrides.resolve()?;
    match &cli.command {
        Command::Mine { trajectory_dir, out } => cmd_mine(trajectory_dir, out, &config).map(|_| Status::Success),
        Command::Run { task, task_id, out } => cmd_run(task, task_id.as_deref(), out, &config),
        Command::Eval { run_dir, out } => cmd_eval(run_dir, out.as_deref(), &config).map(|_| Status::Success),
        Command::Stats { runs, out } => cmd_stats(runs, out).map(|_| Status::Success),
    }
}

fn find_files(dir: &Path, ext: &str, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            find_files(&p, ext, out)?;
        } else if p.extension().is_some_and(|x| x == ext) {
            out.push(p);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MineSummary {
    pub trajectories: usize,
    /// Files that failed to parse or validate.
    pub skipped: usize,
    pub shortcuts: usize,
}

pub fn cmd_mine(trajectory_dir: &Path, out: &Path, config: &Config) -> Result<MineSummary, CliError> {
    if !trajectory_dir.is_dir() {
        return Err(CliError::Input(format!("{} is not a directory", trajectory_dir.display())));
    }
    let mut files = Vec::new();
    find_files(trajectory_dir, "jsonl", &mut files).context("listing trajectories")?;
    let sandbox = config.sandbox()?;
    let mut graphs = Vec::new();
    let mut skipped = 0usize;
    for f in &files {
        let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        match ingest_trajectory(&text, Some(&sandbox as &dyn CompileCheck)) {
            Ok(g) => graphs.push(g),
            Err(e) => {
                log::warn!("skipping {}: {e}", f.display());
                eprintln!("skipping {}: {e}", f.display());
                skipped += 1;
            }
        }
    }
    if graphs.is_empty() {
        return Err(CliError::Input(format!(
            "no valid trajectories under {}",
            trajectory_dir.display()
        )));
    }
    let synthesizer = config.backend(None)?;
    let embedder = config.embedder()?;
    let library = mine_library(&mut graphs, synthesizer.as_ref(), embedder.as_ref(), &config.mining_options())?;
    if library.shortcut_count() == 0 {
        return Err(CliError::Input("no shortcuts could be mined".into()));
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    library.write_to(out)?;
    println!(
        "mined {} shortcuts from {} trajectories ({} skipped) into {}",
        library.shortcut_count(),
        graphs.len(),
        skipped,
        out.display()
    );
    Ok(MineSummary {
        trajectories: graphs.len(),
        skipped,
        shortcuts: library.shortcut_count(),
    })
}

/// Lowercase alphanumeric words joined by `-`, at most 48 bytes.
pub fn slug(text: &str) -> String {
    let mut s = String::new();
    for word in text
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        if s.len() + word.len() + 1 > 48 {
            break;
        }
        if !s.is_empty() {
            s.push('-');
        }
        s.push_str(&word.to_ascii_lowercase());
    }
    if s.is_empty() {
        "task".into()
    } else {
        s
    }
}

fn valid_task_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// `(task_id, task_text)` pairs from the `run` argument.
pub fn parse_tasks(task: &str, task_id: Option<&str>) -> Result<Vec<(String, String)>, CliError> {
    let path = Path::new(task);
    let mut tasks = Vec::new();
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            match line.split_once('\t') {
                Some((id, body)) => tasks.push((id.trim().to_string(), body.trim().to_string())),
                None => tasks.push((slug(line), line.to_string())),
            }
        }
        if task_id.is_some() && tasks.len() == 1 {
            tasks[0].0 = task_id.unwrap_or_default().to_string();
        }
    } else {
        tasks.push((task_id.map_or_else(|| slug(task), str::to_string), task.trim().to_string()));
    }
    if tasks.is_empty() {
        return Err(CliError::Input(format!("no tasks in {task}")));
    }
    let mut seen = std::collections::BTreeSet::new();
    for (id, text) in &tasks {
        if !valid_task_id(id) {
            return Err(CliError::Input(format!("invalid task id `{id}`")));
        }
        if text.is_empty() {
            return Err(CliError::Input(format!("task `{id}` has no text")));
        }
        if !seen.insert(id.clone()) {
            return Err(CliError::Input(format!("duplicate task id `{id}`")));
        }
    }
    Ok(tasks)
}

/// Writes `trajectory.jsonl`, `result.json` and `solution/` under `out/<task_id>`.
pub fn write_run(out: &Path, result: &RunResult) -> Result<PathBuf, CliError> {
    let dir = out.join(&result.inference_graph.task_id);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(TRAJECTORY_FILE), trajectory::to_jsonl(&result.inference_graph)?)
        .context("writing trajectory")?;
    let record = RunRecord::from(result);
    let mut json = serde_json::to_string_pretty(&record).context("encoding result")?;
    json.push('\n');
    fs::write(dir.join(RESULT_FILE), json).context("writing result")?;
    let sol = dir.join(SOLUTION_DIR);
    if sol.exists() {
        fs::remove_dir_all(&sol).context("clearing old solution")?;
    }
    fs::create_dir_all(&sol).context("creating solution dir")?;
    for f in &result.final_solution.files {
        if !is_safe_relative(Path::new(&f.path)) {
            log::warn!("not writing unsafe solution path `{}`", f.path);
            continue;
        }
        let p = sol.join(&f.path);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).context("creating solution subdir")?;
        }
        fs::write(&p, &f.body).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(dir)
}

pub fn cmd_run(task: &str, task_id: Option<&str>, out: &Path, config: &Config) -> Result<Status, CliError> {
    let tasks = parse_tasks(task, task_id)?;
    let run_config = config.run_config();
    let embedder = config.embedder()?;
    let (library, index) = if config.disable_shortcuts {
        (None, None)
    } else {
        let lib = config.load_library()?;
        let idx = ReferenceIndex::from_library(&lib, embedder.as_ref())?;
        (Some(lib), Some(idx))
    };
    let sandbox = config.sandbox()?;
    let entry_file = sandbox.profile.entry_file.clone();

    let run_one = |id: &str, text: &str| -> Result<RunResult, CliError> {
        let backend = config.backend(Some(id))?;
        let pipeline = Pipeline {
            config: run_config.clone(),
            library: library.as_ref(),
            index: index.as_ref(),
            programmer: backend.as_ref(),
            reviewer: backend.as_ref(),
            embedder: embedder.as_ref(),
            checker: &sandbox,
            entry_file: entry_file.clone(),
        };
        let result = pipeline.run_task(id, text)?;
        write_run(out, &result)?;
        Ok(result)
    };

    let slots: Mutex<Vec<Option<Result<RunResult, CliError>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..config.jobs.min(tasks.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((id, text)) = tasks.get(i) else { break };
                let r = run_one(id, text);
                slots.lock().expect("result lock poisoned")[i] = Some(r);
            });
        }
    });

    let mut over_budget = 0usize;
    let mut first_error = None;
    for ((id, _), slot) in tasks.iter().zip(slots.into_inner().expect("result lock poisoned")) {
        match slot.expect("every task ran") {
            Ok(r) => {
                println!(
                    "{id}: {} after {} edges, {} shortcuts, {:.2}s / {} tokens{}",
                    r.terminated_by.as_str(),
                    r.path_length(),
                    r.applied_shortcuts.len(),
                    r.budget.time_used(),
                    r.budget.tokens_used(),
                    if r.within_budget { "" } else { " (over budget)" }
                );
                over_budget += usize::from(!r.within_budget);
            }
            Err(e) => {
                eprintln!("{id}: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        Some(e) => Err(e),
        None if over_budget > 0 => Ok(Status::OverBudget),
        None => Ok(Status::Success),
    }
}

/// Run directories (those holding `result.json`) directly under `dir`, by name.
pub fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Input(format!("{} is not a directory", dir.display())));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(RESULT_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn read_record(dir: &Path) -> Result<RunRecord, CliError> {
    let p = dir.join(RESULT_FILE);
    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
}

fn read_solution(dir: &Path) -> Result<Vec<SourceFile>, CliError> {
    let root = dir.join(SOLUTION_DIR);
    if !root.is_dir() {
        return Ok(Vec::new());
    }
    fn walk(root: &Path, dir: &Path, out: &mut Vec<SourceFile>) -> anyhow::Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                let rel = p.strip_prefix(root)?.to_string_lossy().replace('\\', "/");
                out.push(SourceFile::new(rel, fs::read_to_string(&p)?));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(&root, &root, &mut files).with_context(|| format!("reading {}", root.display()))?;
    Ok(files)
}

fn fmt_metric(v: f64) -> String {
    format!("{v:.6}")
}

pub fn cmd_eval(run_dir: &Path, out: Option<&Path>, config: &Config) -> Result<MetricsReport, CliError> {
    let dirs = run_dirs(run_dir)?;
    if dirs.is_empty() {
        return Err(CliError::Input(format!("no runs under {}", run_dir.display())));
    }
    let sandbox = config.sandbox()?;
    let embedder = config.embedder()?;
    let profile = config.profile()?;
    let settings = EvalSettings {
        granularity_cap: config.granularity_cap,
        comment_prefix: &profile.comment_prefix,
    };
    let mut rows = Vec::with_capacity(dirs.len());
    for d in &dirs {
        let record = read_record(d)?;
        let files = read_solution(d)?;
        if files.is_empty() {
            rows.push(evalkit::flagged_row(&record.task_id, record.within_budget, "missing solution files"));
            continue;
        }
        let solution = Solution::from_files(files.clone());
        let state = SolutionState {
            index: record.final_node_index,
            content: solution.content,
            files: solution.files,
            embedding: None,
            compilable: None,
        };
        let verdict = sandbox.check(&state)?;
        rows.push(evalkit::evaluate_task(
            &TaskOutcome {
                task_id: &record.task_id,
                task_text: &record.task_text,
                files: &files,
                verdict: &verdict,
                within_budget: record.within_budget,
            },
            settings,
            embedder.as_ref(),
        )?);
    }
    let report = MetricsReport::aggregate(rows);
    let target = out.map_or_else(|| run_dir.join(METRICS_FILE), Path::to_path_buf);
    write_metrics_csv(&target, &report)?;
    println!(
        "aggregate ({} of {} tasks scored): completeness={} executability={} consistency={} granularity={} quality={} bcr={}",
        report.scored_tasks(),
        report.per_task.len(),
        fmt_metric(report.completeness),
        fmt_metric(report.executability),
        fmt_metric(report.consistency),
        fmt_metric(report.granularity),
        fmt_metric(report.quality),
        fmt_metric(report.bcr),
    );
    Ok(report)
}

pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let io = |e: csv::Error| CliError::Failure(e.into());
    w.write_record([
        "task_id",
        "completeness",
        "executability",
        "consistency",
        "granularity",
        "quality",
        "within_budget",
    ])
    .map_err(io)?;
    for r in &report.per_task {
        let budget = if r.within_budget { "1" } else { "0" }.to_string();
        let cells = if r.flagged.is_some() {
            vec!["NA".to_string(); 5]
        } else {
            [r.completeness, r.executability, r.consistency, r.granularity, r.quality]
                .map(fmt_metric)
                .to_vec()
        };
        let mut row = vec![r.task_id.clone()];
        row.extend(cells);
        row.push(budget);
        w.write_record(&row).map_err(io)?;
    }
    w.write_record([
        "aggregate".to_string(),
        fmt_metric(report.completeness),
        fmt_metric(report.executability),
        fmt_metric(report.consistency),
        fmt_metric(report.granularity),
        fmt_metric(report.quality),
        fmt_metric(report.bcr),
    ])
    .map_err(io)?;
    w.flush().context("flushing metrics")?;
    Ok(())
}

/// One `distributions.csv` row.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DistributionRow {
    pub group: String,
    pub path_length: usize,
    pub time_seconds: f64,
    pub tokens: u64,
}

pub fn cmd_stats(runs: &[String], out: &Path) -> Result<Vec<DistributionRow>, CliError> {
    let mut groups: Vec<(String, Vec<DistributionRow>)> = Vec::new();
    for spec in runs {
        let (name, dir) = match spec.split_once('=') {
            Some((n, d)) if !n.is_empty() => (n.to_string(), PathBuf::from(d)),
            _ => {
                let d = PathBuf::from(spec);
                let n = d
                    .file_name()
                    .map_or_else(|| spec.clone(), |n| n.to_string_lossy().into_owned());
                (n, d)
            }
        };
        let dirs = run_dirs(&dir)?;
        if dirs.is_empty() {
            return Err(CliError::Input(format!("no runs under {}", dir.display())));
        }
        let mut rows = Vec::new();
        for d in dirs {
            let r = read_record(&d)?;
            rows.push(DistributionRow {
                group: name.clone(),
                path_length: r.path_length,
                time_seconds: r.time_used,
                tokens: r.tokens_used,
            });
        }
        groups.push((name, rows));
    }

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let csv_path = out.join(DISTRIBUTIONS_FILE);
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    let all: Vec<DistributionRow> = groups.iter().flat_map(|(_, r)| r.clone()).collect();
    for row in &all {
        w.serialize(row).map_err(|e| CliError::Failure(e.into()))?;
    }
    w.flush().context("flushing distributions")?;

    type Pick = fn(&DistributionRow) -> f64;
    let dims: [(&str, &str, Pick); 3] = [
        ("path_length", "Path length (edges)", |r| r.path_length as f64),
        ("time_seconds", "Time (seconds)", |r| r.time_seconds),
        ("tokens", "Tokens", |r| r.tokens as f64),
    ];
    for (file, title, pick) in dims {
        let series: Vec<(String, Vec<f64>)> = groups
            .iter()
            .map(|(n, rows)| (n.clone(), rows.iter().map(pick).collect()))
            .collect();
        fs::write(out.join(format!("{file}.svg")), svg::histogram(title, &series, HISTOGRAM_BINS))
            .with_context(|| format!("writing {file}.svg"))?;
    }
    for (name, rows) in &groups {
        let n = rows.len() as f64;
        println!(
            "{name}: {} runs, mean path length {:.2}, mean time {:.2}s, mean tokens {:.1}",
            rows.len(),
            rows.iter().map(|r| r.path_length as f64).sum::<f64>() / n,
            rows.iter().map(|r| r.time_seconds).sum::<f64>() / n,
            rows.iter().map(|r| r.tokens as f64).sum::<f64>() / n,
        );
    }
    Ok(all)
}
