use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use scirel::augment::{generate, to_corpus, EntityPair};
use scirel::config::Config;
use scirel::corpus::{
    merge, parse_abstracts, parse_relations, write_abstracts, write_relations, Dataset, Provenance, RelationInstance,
};
use scirel::ensemble::probabilities_tsv;
use scirel::features::{attach_pos, parse_pos_file};
use scirel::ngram_lm::{train_lm, NGramModel};
use scirel::pipeline::{
    cross_validate, evaluate, examples, predict, prepare, sweep, sweep_table, train, with_extra_relations,
    Architecture, Subtask, TrainedModel,
};
use scirel::synthetic;

#[derive(Parser)]
#[command(name = "scirel", version, about = "Relation classification and extraction for scientific abstracts")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an ensemble and write it to a model directory.
    Train(TrainArgs),
    /// Label pairs (subtask 1) or extract relations (subtask 2).
    Predict(PredictArgs),
    /// Score predicted relations against gold.
    Evaluate(EvaluateArgs),
    /// Generate synthetic training sentences filtered by an n-gram model.
    Augment(AugmentArgs),
    /// Document-grouped k-fold cross-validation.
    Cv(CvArgs),
    /// Cross-validate over a grid of one parameter.
    Sweep(SweepArgs),
    /// Print the effective configuration as TOML.
    Config(ConfigArgs),
    /// Write a small generated corpus for trying the tool out.
    DemoCorpus(DemoArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML configuration file; unspecified fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `--set training.epochs=10` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Members trained in parallel.
    #[arg(long)]
    workers: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        for o in &self.overrides {
            let (k, v) = o.split_once('=').with_context(|| format!("--set {o}: expected KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Abstract file (repeatable; paired with --relations in order).
    #[arg(long, required = true)]
    abstracts: Vec<PathBuf>,
    /// Relation file for the abstract file at the same position.
    #[arg(long)]
    relations: Vec<PathBuf>,
    /// POS tags, one `doc_id<TAB>tags` line per document.
    #[arg(long)]
    pos: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubtaskArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

impl From<SubtaskArg> for Subtask {
    fn from(s: SubtaskArg) -> Self {
        match s {
            SubtaskArg::One => Subtask::Classification,
            SubtaskArg::Two => Subtask::Extraction,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Cnn,
    Rnn,
    Ensemble,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Cnn => Architecture::Cnn,
            ArchArg::Rnn => Architecture::Rnn,
            ArchArg::Ensemble => Architecture::Ensemble,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    subtask: SubtaskArg,
    #[arg(long, value_enum, default_value = "ensemble")]
    arch: ArchArg,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Predicted relations over the training abstracts, added as extra
    /// training data (self-training).
    #[arg(long)]
    extra_relations: Vec<PathBuf>,
    /// Model directory to create.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the training plan and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Output relation file.
    #[arg(long)]
    out: PathBuf,
    /// Also write per-pair class probabilities as TSV.
    #[arg(long)]
    probabilities: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Human,
    Kv,
    Json,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, value_enum)]
    subtask: SubtaskArg,
    #[arg(long, required = true)]
    abstracts: Vec<PathBuf>,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_enum, default_value = "human")]
    format: Format,
}

#[derive(Args)]
struct AugmentArgs {
    /// Labeled training data supplying the templates.
    #[command(flatten)]
    data: DataArgs,
    /// Abstracts whose pairs are spliced into the templates.
    #[arg(long)]
    test_abstracts: PathBuf,
    /// Unlabeled pairs of the test abstracts.
    #[arg(long)]
    test_relations: PathBuf,
    /// Plain-text corpus for the language model, one sentence per line.
    #[arg(long, conflicts_with = "lm_model")]
    lm_corpus: Option<PathBuf>,
    /// Previously saved language model.
    #[arg(long)]
    lm_model: Option<PathBuf>,
    /// Save the trained language model here.
    #[arg(long)]
    save_lm: Option<PathBuf>,
    #[arg(long)]
    lm_order: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<f64>,
    #[arg(long)]
    min_interior: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out_abstracts: PathBuf,
    #[arg(long)]
    out_relations: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long, value_enum)]
    subtask: SubtaskArg,
    #[arg(long, value_enum, default_value = "ensemble")]
    arch: ArchArg,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of folds.
    #[arg(long)]
    k: Option<usize>,
    /// Seed of the fold split; defaults to the config seed.
    #[arg(long)]
    fold_seed: Option<u64>,
    /// Write the per-fold and aggregate results as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    subtask: SubtaskArg,
    #[arg(long, value_enum, default_value = "ensemble")]
    arch: ArchArg,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Parameter to vary, e.g. `training.learning_rate` or `dropout`.
    #[arg(long)]
    param: String,
    /// Explicit comma-separated values instead of the default grid.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Grid points over the parameter's range.
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    fold_seed: Option<u64>,
    /// Results table (TSV); printed when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 50)]
    docs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn stamp(hash: &str) -> String {
    format!("# config-hash: {hash}\n")
}

/// Reads `# config-hash:` from the head of an artifact, if present.
fn read_stamp(text: &str) -> Option<&str> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix("# config-hash:"))
        .map(str::trim)
}

fn load_data(args: &DataArgs, subtask: Option<Subtask>) -> Result<Dataset> {
    if args.relations.len() > args.abstracts.len() {
        bail!("more --relations than --abstracts");
    }
    let tags = match &args.pos {
        Some(p) => Some(parse_pos_file(&read(p)?)?),
        None => None,
    };
    let provenance = match subtask {
        Some(Subtask::Extraction) => Provenance::Subtask2,
        _ => Provenance::Subtask1_1,
    };
    let mut out: Option<Dataset> = None;
    for (i, a) in args.abstracts.iter().enumerate() {
        let mut docs = parse_abstracts(&read(a)?).with_context(|| a.display().to_string())?;
        if let Some(t) = &tags {
            attach_pos(&mut docs, t)?;
        }
        let rels = match args.relations.get(i) {
            Some(r) => parse_relations(&read(r)?, &docs).with_context(|| r.display().to_string())?,
            None => Vec::new(),
        };
        let ds = Dataset::new(docs, rels, provenance)?;
        out = Some(match out {
            Some(prev) => merge(&prev, &ds)?,
            None => ds,
        });
    }
    Ok(out.expect("at least one abstract file"))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let subtask = Subtask::from(a.subtask);
    let phase = subtask.phase(&cfg);
    if a.dry_run {
        println!("subtask={subtask}");
        println!("epochs={}", phase.epochs);
        println!("halve_every={}", phase.halve_every);
        println!("batch_size={}", cfg.training.batch_size);
        println!("ensemble_size={}", cfg.training.ensemble_size);
        println!("learning_rate={}", cfg.training.learning_rate);
        println!("config_hash={}", cfg.hash());
        return Ok(());
    }
    let out = a.out.context("--out is required unless --dry-run")?;
    let mut data = load_data(&a.data, Some(subtask))?;
    for path in &a.extra_relations {
        let extra = parse_relations(&read(path)?, data.documents())?;
        data = with_extra_relations(&data, &extra)?;
    }
    let model = train(&cfg, subtask, a.arch.into(), &data)?;
    model.save(&out)?;
    for (m, info) in model.members.iter().zip(&model.manifest.members) {
        let run = out.join(info.checkpoint.replace(".json", ".run.json"));
        info.run.save(&run)?;
        log::debug!("{}: {} parameters", info.checkpoint, m.parameter_count());
    }
    println!("wrote {} members to {} (config {})", model.members.len(), out.display(), cfg.hash());
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let model = TrainedModel::load(&a.model)?;
    let data = load_data(&a.data, Some(model.manifest.subtask))?;
    let pred = predict(&model, &data)?;
    let hash = &model.manifest.config_hash;
    write(&a.out, &(stamp(hash) + &write_relations(&pred.relations)))?;
    if let Some(p) = &a.probabilities {
        let names = model.manifest.scheme.class_names();
        write(p, &(stamp(hash) + &probabilities_tsv(&pred.ids, &names, &pred.probabilities)))?;
    }
    println!("wrote {} relations to {}", pred.relations.len(), a.out.display());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let mut docs = Vec::new();
    for p in &a.abstracts {
        docs.extend(parse_abstracts(&read(p)?)?);
    }
    let gold = parse_relations(&read(&a.gold)?, &docs).context("gold relations")?;
    let pred_text = read(&a.pred)?;
    let pred = parse_relations(&pred_text, &docs).context("predicted relations")?;
    let report = evaluate(a.subtask.into(), &gold, &pred);
    let hash = read_stamp(&pred_text);
    match a.format {
        Format::Human => {
            if let Some(h) = hash {
                println!("config {h}");
            }
            print!("{}", report.to_human());
        }
        Format::Kv => {
            if let Some(h) = hash {
                println!("config_hash={h}");
            }
            print!("{}", report.to_key_values());
        }
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn cmd_augment(a: AugmentArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(o) = a.lm_order {
        cfg.augment.lm_order = o;
    }
    if let Some(t) = a.threshold {
        cfg.augment.threshold = t;
    }
    if let Some(m) = a.min_interior {
        cfg.augment.min_interior = m;
    }
    cfg.validate()?;
    let lm = match (&a.lm_model, &a.lm_corpus) {
        (Some(p), _) => NGramModel::load(p)?,
        (None, Some(p)) => {
            let text = read(p)?;
            let sentences: Vec<Vec<&str>> = text
                .lines()
                .map(|l| l.split_whitespace().collect::<Vec<_>>())
                .filter(|s| !s.is_empty())
                .collect();
            train_lm(&sentences, cfg.augment.lm_order)?
        }
        (None, None) => bail!("either --lm-corpus or --lm-model is required"),
    };
    if let Some(p) = &a.save_lm {
        lm.save(p)?;
    }
    let train_data = prepare(&load_data(&a.data, None)?)?;
    // templates keep text order; generation skips reversed examples
    let templates = examples(&train_data, train_data.instances(), Subtask::Extraction)?;
    let test = prepare(&load_data(
        &DataArgs {
            abstracts: vec![a.test_abstracts.clone()],
            relations: vec![a.test_relations.clone()],
            pos: None,
        },
        None,
    )?)?;
    let pairs: Vec<EntityPair> = examples(&test, test.instances(), Subtask::Extraction)?
        .iter()
        .map(EntityPair::from_example)
        .collect();
    let samples = generate(&templates, &pairs, &lm, &cfg.augment, cfg.seed);
    let (docs, rels) = to_corpus(&samples);
    let hash = cfg.hash();
    write(&a.out_abstracts, &format!("<!-- config-hash: {hash} -->\n{}", write_abstracts(&docs)))?;
    write(&a.out_relations, &(stamp(&hash) + &write_relations(&rels)))?;
    println!(
        "kept {} of {} templates",
        samples.len(),
        templates.len()
    );
    Ok(())
}

fn cmd_cv(a: CvArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(k) = a.k {
        cfg.training.folds = k;
    }
    cfg.validate()?;
    let subtask = Subtask::from(a.subtask);
    let data = load_data(&a.data, Some(subtask))?;
    let cv = cross_validate(&cfg, subtask, a.arch.into(), &data, a.fold_seed.unwrap_or(cfg.seed))?;
    for f in &cv.folds {
        println!(
            "fold {}\tmacro_f1={:.6}\tmicro_f1={:.6}\tdocs={}/{}",
            f.fold, f.report.metrics.macro_f1, f.report.metrics.micro.f1, f.train_documents, f.validation_documents
        );
    }
    println!("mean_macro_f1={:.6}", cv.mean_macro_f1);
    println!("mean_micro_f1={:.6}", cv.mean_micro_f1);
    println!("mean_score={:.6}", cv.mean_headline);
    println!("std_score={:.6}", cv.std_headline);
    println!("config_hash={}", cv.config_hash);
    if let Some(p) = &a.out {
        write(p, &serde_json::to_string_pretty(&cv)?)?;
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(p) = a.points {
        cfg.sweep.points = p;
    }
    let subtask = Subtask::from(a.subtask);
    let values = if a.values.is_empty() {
        cfg.sweep.grid(&a.param)?
    } else {
        a.values.clone()
    };
    let data = load_data(&a.data, Some(subtask))?;
    let points = sweep(&cfg, subtask, a.arch.into(), &data, &a.param, &values, a.fold_seed.unwrap_or(cfg.seed))?;
    let table = sweep_table(&points);
    match &a.out {
        Some(p) => write(p, &table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_demo(a: DemoArgs) -> Result<()> {
    let ds = synthetic::corpus(a.docs, a.seed)?;
    let pairs: Vec<RelationInstance> = ds
        .instances()
        .iter()
        .map(|i| {
            let mut u = i.clone();
            u.kind = None;
            u
        })
        .collect();
    let lm: String = synthetic::lm_corpus(&ds).iter().map(|s| s.join(" ") + "\n").collect();
    write(&a.out_dir.join("abstracts.xml"), &write_abstracts(ds.documents()))?;
    write(&a.out_dir.join("relations.txt"), &write_relations(ds.instances()))?;
    write(&a.out_dir.join("pairs.txt"), &write_relations(&pairs))?;
    write(&a.out_dir.join("lm.txt"), &lm)?;
    println!(
        "wrote {} abstracts and {} relations to {}",
        ds.documents().len(),
        ds.instances().len(),
        a.out_dir.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Config(a) => {
            print!("{}", a.load()?.to_toml());
            Ok(())
        }
        Command::DemoCorpus(a) => cmd_demo(a),
    }
}
