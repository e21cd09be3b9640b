//! Command-line pipeline: `mine`, `ground`, `train`, `eval`.
//!
//! Options can also come from a `--config` file of `key = value` lines whose
//! keys are the long flag names; flags given on the command line win.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rustc_hash::FxHashSet;

use crate::error::{Error, Result};
use crate::evaluator::{self, LpMetrics, PositionPools, TcMetrics, TieRule};
use crate::kg::{ColumnOrder, DatasetSplits, KnowledgeGraph, Triple};
use crate::models::{load_params, save_params, ModelKind, ModelParams, Norm};
use crate::rules::{self, ConceptHierarchy, GroundRule, GroundingMode, MinerConfig, Rule, Thresholds};
use crate::seed::stream_rng;
use crate::trainer::{self, EpochLog, TrainConfig, LOG_HEADER};

#[derive(Debug, Parser)]
#[command(name = "rulekge", version, about = "Rule-enhanced translation embeddings for knowledge graphs")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine rules from the training triples.
    Mine(Opts),
    /// Instantiate mined rules over the training triples.
    Ground(Opts),
    /// Train embeddings.
    Train(Opts),
    /// Evaluate a checkpoint.
    Eval(Opts),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Triples only.
    Baseline,
    /// Triples plus the triples inferred by the mined rules.
    Pre,
    /// Joint training on triples and ground rules in two phases.
    Rule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Lp,
    Tc,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SettingArg {
    Raw,
    Filtered,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroundingArg {
    Novel,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TieArg {
    Optimistic,
    Pessimistic,
    Mean,
}

#[derive(Debug, Clone, Args)]
pub struct Opts {
    /// File of `key = value` lines using the long option names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Column order of the triple files, e.g. hrt or htr.
    #[arg(long, default_value = "hrt")]
    pub columns: ColumnOrder,
    #[arg(long, default_value = "transe")]
    pub model: ModelKind,
    #[arg(long, default_value_t = 50)]
    pub dim: usize,
    #[arg(long, default_value_t = 2.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Learning rate of the second training phase.
    #[arg(long, default_value_t = 0.01)]
    pub lr2: f64,
    #[arg(long, default_value = "l1")]
    pub norm: Norm,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs2: usize,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub tau1: f64,
    #[arg(long, default_value_t = 0.6)]
    pub tau2: f64,
    #[arg(long, default_value_t = 0.5)]
    pub tau3: f64,
    #[arg(long, value_enum, default_value_t = Mode::Rule)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value_t = GroundingArg::Novel)]
    pub grounding: GroundingArg,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, value_enum, default_value_t = Task::Both)]
    pub task: Task,
    #[arg(long, value_enum, default_value_t = SettingArg::Both)]
    pub setting: SettingArg,
    #[arg(long, value_enum, default_value_t = TieArg::Optimistic)]
    pub tie: TieArg,
    /// Negatives per side for each classification positive.
    #[arg(long, default_value_t = 5)]
    pub tc_per_side: usize,
    /// Rule file (default: <out>/rules.tsv).
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Ground-rule file (default: <out>/ground_rules.tsv).
    #[arg(long)]
    pub ground_rules: Option<PathBuf>,
    /// Checkpoint to evaluate (default: <out>/model.ckpt).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Also write a checkpoint every N epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Write per-triple ranks to <out>/ranks.csv.
    #[arg(long)]
    pub rank_dump: bool,
}

impl Opts {
    fn thresholds(&self) -> Thresholds {
        Thresholds { inference: self.tau1, transitivity: self.tau2, antisymmetry: self.tau3 }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            kind: self.model,
            dim: self.dim,
            margin: self.margin,
            norm: self.norm,
            lr: self.lr,
            lr2: self.lr2,
            epochs: self.epochs,
            epochs2: self.epochs2,
            batch_size: self.batch_size,
            seed: self.seed,
            threads: self.threads,
        }
    }

    fn rules_path(&self) -> PathBuf {
        self.rules.clone().unwrap_or_else(|| self.out.join("rules.tsv"))
    }

    fn ground_rules_path(&self) -> PathBuf {
        self.ground_rules.clone().unwrap_or_else(|| self.out.join("ground_rules.tsv"))
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.ckpt"))
    }

    fn tie_rule(&self) -> TieRule {
        match self.tie {
            TieArg::Optimistic => TieRule::Optimistic,
            TieArg::Pessimistic => TieRule::Pessimistic,
            TieArg::Mean => TieRule::Mean,
        }
    }

    fn grounding_mode(&self) -> GroundingMode {
        match self.grounding {
            GroundingArg::Novel => GroundingMode::Novel,
            GroundingArg::Exhaustive => GroundingMode::Exhaustive,
        }
    }

    fn validate(&self, needs_valid: bool, needs_test: bool) -> Result<()> {
        let train = self.train.as_ref().ok_or_else(|| Error::Config("--train is required".into()))?;
        require_file(train)?;
        if needs_valid {
            require_file(self.valid.as_ref().ok_or_else(|| Error::Config("--valid is required".into()))?)?;
        }
        if needs_test {
            require_file(self.test.as_ref().ok_or_else(|| Error::Config("--test is required".into()))?)?;
        }
        for p in [&self.valid, &self.test].into_iter().flatten() {
            require_file(p)?;
        }
        self.train_config().validate()?;
        let th = self.thresholds();
        for (name, v) in [("tau1", th.inference), ("tau2", th.transitivity), ("tau3", th.antisymmetry)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("--{name} must be in [0,1], got {v}")));
            }
        }
        if self.tc_per_side == 0 {
            return Err(Error::Config("--tc-per-side must be at least 1".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("--checkpoint-every must be at least 1".into()));
        }
        Ok(())
    }

    fn load(&self) -> Result<DatasetSplits> {
        DatasetSplits::load(self.train.as_ref().unwrap(), self.valid.as_deref(), self.test.as_deref(), self.columns)
    }
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} does not exist or is not a file", p.display())))
    }
}

/// Turns `key = value` lines into `--key value` arguments. Blank lines and
/// lines starting with `#` are ignored; `true`/`false` values of switches
/// become a bare flag or nothing.
pub fn config_file_args(text: &str) -> Result<Vec<OsString>> {
    const SWITCHES: [&str; 1] = ["rank-dump"];
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected key = value, got {line:?}") })?;
        let key = k.trim().replace('_', "-");
        let value = v.trim();
        if key == "config" {
            return Err(Error::Parse { line: i + 1, msg: "config files cannot include other config files".into() });
        }
        if SWITCHES.contains(&key.as_str()) {
            match value {
                "true" => out.push(format!("--{key}").into()),
                "false" => {}
                _ => return Err(Error::Parse { line: i + 1, msg: format!("{key} takes true or false") }),
            }
            continue;
        }
        out.push(format!("--{key}").into());
        out.push(value.into());
    }
    Ok(out)
}

/// Splices config-file options in front of the command-line options so the
/// latter override them.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config = None;
    let mut iter = args.iter().enumerate();
    while let Some((i, a)) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
            iter.next();
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        }
    }
    let Some(path) = config else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| Error::io_at(&path, e))?;
    let extra = config_file_args(&text)?;
    if args.len() < 2 {
        return Ok(args);
    }
    let mut out = args[..2].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[2..]);
    Ok(out)
}

pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args = expand_config(args.into_iter().map(Into::into).collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Config(e.to_string())),
    };
    match &cli.command {
        Command::Mine(o) => cmd_mine(o).map(|_| ()),
        Command::Ground(o) => cmd_ground(o).map(|_| ()),
        Command::Train(o) => cmd_train(o).map(|_| ()),
        Command::Eval(o) => cmd_eval(o).map(|_| ()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io_at(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io_at(path, e))?))
}

fn set_threads(n: usize) {
    // Fails only if a global pool already exists, which is fine.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

/// Mines rules; writes `rules.tsv` and `rule_stats.tsv`. Returns the rules.
pub fn cmd_mine(o: &Opts) -> Result<Vec<Rule>> {
    o.validate(false, false)?;
    set_threads(o.threads);
    let splits = o.load()?;
    let report = rules::mine(&splits.train, &MinerConfig::with_thresholds(o.thresholds()))?;
    let stats = rules::stats_block(&report.rules);
    let mut w = create(&o.rules_path())?;
    rules::write_rules(&mut w, &report.rules, splits.relations())?;
    w.flush()?;
    let mut w = create(&o.out.join("rule_stats.tsv"))?;
    w.write_all(stats.as_bytes())?;
    w.flush()?;
    print!("{stats}");
    Ok(report.rules)
}

fn read_rules_file(o: &Opts, splits: &DatasetSplits, hierarchy: &ConceptHierarchy) -> Result<Vec<Rule>> {
    let path = o.rules_path();
    rules::read_rules(open(&path)?, splits.relations(), hierarchy).map_err(|e| at_path(&path, e))
}

fn at_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { line, msg } => Error::Config(format!("{}:{line}: {msg}", path.display())),
        other => other,
    }
}

/// Grounds the rule file; writes `ground_rules.tsv`. Returns the ground rules.
pub fn cmd_ground(o: &Opts) -> Result<Vec<GroundRule>> {
    o.validate(false, false)?;
    require_file(&o.rules_path())?;
    let splits = o.load()?;
    let hierarchy = ConceptHierarchy::from_relations(splits.relations());
    let rule_list = read_rules_file(o, &splits, &hierarchy)?;
    let ground = rules::ground(&rule_list, &splits.train, o.grounding_mode());
    let mut w = create(&o.ground_rules_path())?;
    rules::write_ground_rules(&mut w, &ground, splits.entities(), splits.relations(), hierarchy.concepts())?;
    w.flush()?;
    println!("{} ground rules", ground.len());
    Ok(ground)
}

fn write_checkpoint(path: &Path, params: &ModelParams, splits: &DatasetSplits, concepts: &crate::kg::Vocab) -> Result<()> {
    let mut w = create(path)?;
    save_params(&mut w, params, splits.entities(), splits.relations(), concepts)?;
    w.flush()?;
    Ok(())
}

/// Trains per `--mode`; writes `model.ckpt` and `train_log.csv`.
pub fn cmd_train(o: &Opts) -> Result<ModelParams> {
    o.validate(false, false)?;
    match o.mode {
        Mode::Pre => require_file(&o.rules_path())?,
        Mode::Rule => require_file(&o.ground_rules_path())?,
        Mode::Baseline => {}
    }
    set_threads(o.threads);
    let splits = o.load()?;
    let hierarchy = ConceptHierarchy::from_relations(splits.relations());
    let mut config = o.train_config();
    let (graph, ground): (KnowledgeGraph, Vec<GroundRule>) = match o.mode {
        Mode::Baseline => {
            config.epochs2 = 0;
            (splits.train.clone(), Vec::new())
        }
        Mode::Pre => {
            config.epochs2 = 0;
            let rule_list = read_rules_file(o, &splits, &hierarchy)?;
            (augment_with_inferred(&splits.train, &rule_list), Vec::new())
        }
        Mode::Rule => {
            let path = o.ground_rules_path();
            let g = rules::read_ground_rules(open(&path)?, splits.entities(), splits.relations(), hierarchy.concepts())
                .map_err(|e| at_path(&path, e))?;
            (splits.train.clone(), g)
        }
    };
    let mut log_w = create(&o.out.join("train_log.csv"))?;
    writeln!(log_w, "{LOG_HEADER}")?;
    let every = o.checkpoint_every;
    let mut total_epochs = 0usize;
    let mut on_epoch = |l: &EpochLog, p: &ModelParams| -> Result<()> {
        writeln!(log_w, "{}", l.csv_line())?;
        total_epochs += 1;
        if let Some(n) = every {
            if total_epochs.is_multiple_of(n) {
                write_checkpoint(&o.out.join(format!("model.epoch{total_epochs}.ckpt")), p, &splits, hierarchy.concepts())?;
            }
        }
        Ok(())
    };
    let params = trainer::train(&graph, &ground, &config, &mut on_epoch)?;
    log_w.flush()?;
    write_checkpoint(&o.out.join("model.ckpt"), &params, &splits, hierarchy.concepts())?;
    Ok(params)
}

/// The graph's triples plus every triple the rules infer from them.
pub fn augment_with_inferred(graph: &KnowledgeGraph, rule_list: &[Rule]) -> KnowledgeGraph {
    let mut extra: FxHashSet<Triple> = FxHashSet::default();
    for r in rule_list {
        let cand = rules::RuleCandidate::new(r.rule_type, r.relations.clone());
        extra.extend(rules::get_new_triples(&cand, graph));
    }
    let triples = graph.triples().iter().copied().chain(extra);
    KnowledgeGraph::new(graph.entities().clone(), graph.relations().clone(), triples)
}

pub struct EvalOutput {
    pub lp: Vec<LpMetrics>,
    pub tc: Option<TcMetrics>,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub task: Task,
    pub setting: SettingArg,
    pub norm: Norm,
    pub tie: TieRule,
    pub tc_per_side: usize,
    pub seed: u64,
}

/// Link prediction and triple classification over the classification
/// protocol; shared by the CLI and library callers.
pub fn evaluate(
    params: &ModelParams,
    splits: &DatasetSplits,
    opts: &EvalOptions,
) -> Result<(EvalOutput, Option<evaluator::LinkPrediction>, Option<evaluator::ThresholdTable>)> {
    let EvalOptions { task, setting, norm, tie, tc_per_side, seed } = *opts;
    let mut lp = Vec::new();
    let mut lp_full = None;
    if matches!(task, Task::Lp | Task::Both) {
        let res = evaluator::link_prediction(params, &splits.test, &splits.all_triples, norm, tie)?;
        if matches!(setting, SettingArg::Raw | SettingArg::Both) {
            lp.push(res.raw.clone());
        }
        if matches!(setting, SettingArg::Filtered | SettingArg::Both) {
            lp.push(res.filtered.clone());
        }
        lp_full = Some(res);
    }
    let mut tc = None;
    let mut table = None;
    if matches!(task, Task::Tc | Task::Both) {
        let pools = PositionPools::new(&splits.all_triples, splits.relations().len());
        let n = splits.entities().len();
        let valid = evaluator::generate_tc_negatives(
            &splits.valid,
            &pools,
            &splits.all_triples,
            n,
            tc_per_side,
            &mut stream_rng(seed, "tc-valid"),
        )?;
        let test = evaluator::generate_tc_negatives(
            &splits.test,
            &pools,
            &splits.all_triples,
            n,
            tc_per_side,
            &mut stream_rng(seed, "tc-test"),
        )?;
        let t = evaluator::fit_thresholds(params, &valid, norm);
        tc = Some(evaluator::triple_classification(params, &t, &test, norm));
        table = Some(t);
    }
    Ok((EvalOutput { lp, tc }, lp_full, table))
}

/// Evaluates a checkpoint; writes `metrics.csv` and `metrics.txt` (plus
/// `thresholds.tsv` for classification and `ranks.csv` on request).
pub fn cmd_eval(o: &Opts) -> Result<EvalOutput> {
    let needs_tc = matches!(o.task, Task::Tc | Task::Both);
    o.validate(needs_tc, true)?;
    let ckpt = o.checkpoint_path();
    require_file(&ckpt)?;
    set_threads(o.threads);
    let splits = o.load()?;
    let hierarchy = ConceptHierarchy::from_relations(splits.relations());
    let params = load_params(open(&ckpt)?, splits.entities(), splits.relations(), hierarchy.concepts())
        .map_err(|e| at_path(&ckpt, e))?;
    if params.dim() != o.dim {
        return Err(Error::Mismatch(format!(
            "checkpoint {} has dimension {} but --dim is {}",
            ckpt.display(),
            params.dim(),
            o.dim
        )));
    }
    if params.kind() != o.model {
        return Err(Error::Mismatch(format!(
            "checkpoint {} is a {} model but --model is {}",
            ckpt.display(),
            params.kind(),
            o.model
        )));
    }
    let opts = EvalOptions {
        task: o.task,
        setting: o.setting,
        norm: o.norm,
        tie: o.tie_rule(),
        tc_per_side: o.tc_per_side,
        seed: o.seed,
    };
    let (out, lp_full, table) = evaluate(&params, &splits, &opts)?;
    let lp_refs: Vec<&LpMetrics> = out.lp.iter().collect();
    let mut w = create(&o.out.join("metrics.csv"))?;
    evaluator::write_metrics_csv(&mut w, &lp_refs, out.tc.as_ref())?;
    w.flush()?;
    let text = evaluator::format_table(&lp_refs, out.tc.as_ref());
    let mut w = create(&o.out.join("metrics.txt"))?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    print!("{text}");
    if let Some(t) = &table {
        let mut w = create(&o.out.join("thresholds.tsv"))?;
        evaluator::write_thresholds(&mut w, t, |r| splits.relations().label(r).to_owned())?;
        w.flush()?;
    }
    if let (true, Some(res)) = (o.rank_dump, &lp_full) {
        let mut w = create(&o.out.join("ranks.csv"))?;
        let (e, r) = (splits.entities(), splits.relations());
        evaluator::write_rank_dump(&mut w, &res.ranks, |t| {
            format!("{} {} {}", e.label(t.head), r.label(t.relation), e.label(t.tail))
        })?;
        w.flush()?;
    }
    Ok(out)
}
