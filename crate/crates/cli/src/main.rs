//! `treenc`: batch driver for tree generation, training, evaluation,
//! saliency analysis and the multi-run experiment protocols.

use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use treenc::config::Config;
use treenc::harness::{
    read_examples, read_trees, rho_sweep, synth_generate, tokenize, train, write_examples, Checkpoint, Dataset,
    Example, Experiment, SynthSpec, SynthTask, Trained,
};
use treenc::saliency::{positional_summary, saliency_agreement};
use treenc::{Error, LayoutKind};

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "TREENC_OUT_DIR";
const DEFAULT_OUT: &str = "treenc-out";

#[derive(Parser)]
#[command(name = "treenc", version, about = "Tree-structured LSTM sentence encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (`key = value`, `[section]` headers).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a setting, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory [default: $TREENC_OUT_DIR or ./treenc-out].
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print bracketed trees with depth statistics.
    Treegen {
        /// balanced, left, right or random.
        kind: String,
        /// Number of leaves (placeholder tokens t0 … t{n-1}).
        n: Option<usize>,
        /// One sentence per line instead of a leaf count.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Balanced-split probability of random trees.
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trees to sample per length (random trees only).
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Train a model; writes the checkpoint, epoch table and effective config.
    Train(RunArgs),
    /// Evaluate a checkpoint on a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file in the checkpoint's task format.
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        trees: Option<PathBuf>,
        /// Report per length group: [1,8], then [4i+1, 4i+4].
        #[arg(long)]
        by_length: bool,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Per-word saliency records for a corpus (one sentence per line).
    Saliency {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        trees: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Cross-model saliency agreement (mean average Pearson × 100).
    Agree {
        #[arg(long = "checkpoint", required = true, num_args = 1..)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        trees: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Train ρ-random tree encoders over a grid of ρ and seeds.
    SweepRho {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated ρ values in [0, 1].
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
    },
    /// Generate a synthetic dataset (train/dev/test files).
    Synth {
        /// copy, reverse, first-token-class or last-token-class.
        task: String,
        #[arg(long, default_value_t = 50)]
        vocab: usize,
        #[arg(long, default_value_t = 16)]
        min_len: usize,
        #[arg(long, default_value_t = 24)]
        max_len: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 20_000)]
        train: usize,
        #[arg(long, default_value_t = 500)]
        dev: usize,
        #[arg(long, default_value_t = 500)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn out_dir(explicit: Option<PathBuf>) -> Result<PathBuf> {
    let dir = explicit
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = create(path)?;
    for l in lines {
        writeln!(f, "{l}")?;
    }
    f.flush()?;
    Ok(())
}

/// Writes lines to `path` and echoes them on stdout.
fn emit(path: &Path, lines: &[String]) -> Result<()> {
    write_lines(path, lines)?;
    let stdout = io::stdout();
    let mut so = stdout.lock();
    for l in lines {
        writeln!(so, "{l}")?;
    }
    Ok(())
}

fn load_config(run: &RunArgs) -> Result<Config> {
    let mut cfg = Config::load(&run.config)?;
    for o in &run.overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

fn read_split(path: &Path, trees: Option<&Path>, exp: &Experiment) -> Result<Vec<Example>> {
    let mut ex = read_examples(path, exp.model.task)?;
    if let Some(t) = trees {
        read_trees(t, &mut ex)?;
    }
    Ok(ex)
}

fn load_dataset(exp: &Experiment) -> Result<Dataset> {
    let d = &exp.data;
    let train = d.train.as_deref().context("the config names no training file (data.train)")?;
    let opt = |p: &Option<PathBuf>, t: &Option<PathBuf>| -> Result<Vec<Example>> {
        match p {
            Some(p) => read_split(p, t.as_deref(), exp),
            None => Ok(Vec::new()),
        }
    };
    Ok(Dataset {
        task: exp.model.task,
        train: read_split(train, d.train_trees.as_deref(), exp)?,
        dev: opt(&d.dev, &d.dev_trees)?,
        test: opt(&d.test, &d.test_trees)?,
    })
}

fn read_corpus(path: &Path, trees: Option<&Path>) -> Result<Vec<Example>> {
    let f = fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    let mut out = Vec::new();
    for line in io::BufReader::new(f).lines() {
        let t = tokenize(&line?);
        if !t.is_empty() {
            out.push(Example {
                text: t,
                ..Default::default()
            });
        }
    }
    if let Some(t) = trees {
        read_trees(t, &mut out)?;
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| format!("{x:.6}"))
}

fn cmd_treegen(kind: &str, n: Option<usize>, corpus: Option<PathBuf>, rho: f64, seed: u64, count: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("rho must lie in [0, 1], got {rho}")).into());
    }
    let kind: LayoutKind = match kind {
        "random" => LayoutKind::Random(rho),
        k => k.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
    };
    if !matches!(
        kind,
        LayoutKind::Balanced | LayoutKind::Left | LayoutKind::Right | LayoutKind::Random(_)
    ) {
        return Err(Error::Config(format!("treegen cannot build `{kind}` trees")).into());
    }
    let sentences: Vec<Option<Vec<String>>> = match (n, corpus) {
        (Some(n), None) => vec![Some((0..n).map(|i| format!("t{i}")).collect())],
        (None, Some(p)) => read_corpus(&p, None)?.into_iter().map(|e| Some(e.text)).collect(),
        _ => return Err(Error::Config("give exactly one of a leaf count or --corpus".into()).into()),
    };
    let repeats = if matches!(kind, LayoutKind::Random(_)) { count.max(1) } else { 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stdout = io::stdout();
    let mut so = stdout.lock();
    writeln!(so, "tree\tmax_depth\tmean_leaf_depth")?;
    for tokens in sentences.into_iter().flatten() {
        for _ in 0..repeats {
            let layout = kind.build(tokens.len(), &mut rng)?;
            let s = layout.depth_stats();
            writeln!(so, "{}\t{}\t{:.6}", layout.render(&tokens)?, s.max_depth, s.mean_leaf_depth)?;
        }
    }
    Ok(())
}

fn cmd_train(run: RunArgs) -> Result<()> {
    let cfg = load_config(&run)?;
    let exp = Experiment::from_config(&cfg)?;
    let data = load_dataset(&exp)?;
    let dir = out_dir(run.out)?;
    exp.to_config().save(&dir.join("config.txt"))?;
    let out = train(&exp, &data)?;
    out.checkpoint.save(&dir.join("model.ckpt"))?;
    // the stored config carries the vocabulary sizes and class count
    out.checkpoint.config.save(&dir.join("config.txt"))?;
    let mut lines = vec!["epoch\tsteps\ttrain_loss\tdev_metric".to_owned()];
    for r in &out.history {
        lines.push(format!("{}\t{}\t{:.6}\t{}", r.epoch, r.steps, r.train_loss, fmt_opt(r.dev_metric)));
    }
    emit(&dir.join("epochs.tsv"), &lines)?;
    let mut summary = vec![
        "key\tvalue".to_owned(),
        format!("best_epoch\t{}", out.best_epoch),
        format!("dropped_long\t{}", out.dropped),
    ];
    if let Some(c) = out.coverage {
        summary.push(format!("embedding_coverage\t{:.6}", c.fraction()));
    }
    if !data.test.is_empty() {
        let r = Trained::from_checkpoint(&out.checkpoint)?.evaluate(&data.test)?;
        summary.push(format!("test_{}\t{:.6}", r.metric, r.value));
    }
    write_lines(&dir.join("summary.tsv"), &summary)
}

fn cmd_eval(checkpoint: PathBuf, split: PathBuf, trees: Option<PathBuf>, by_length: bool, out: Option<PathBuf>) -> Result<()> {
    let t = Trained::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
    let ex = read_split(&split, trees.as_deref(), &t.experiment)?;
    let dir = out_dir(out)?;
    let mut run = Config::new();
    run.set("eval.checkpoint", checkpoint.display());
    run.set("eval.split", split.display());
    if let Some(tr) = &trees {
        run.set("eval.trees", tr.display());
    }
    run.set("eval.by_length", by_length);
    run.save(&dir.join("config.txt"))?;
    let report = t.evaluate(&ex)?;
    let mut lines = Vec::new();
    if by_length {
        lines.push(format!("bucket\tmin_len\tmax_len\tcount\t{}", report.metric));
        for b in report.by_length()? {
            lines.push(format!("{}\t{}\t{}\t{}\t{}", b.bucket, b.min_len, b.max_len, b.count, fmt_opt(b.value)));
        }
    } else {
        lines.push("metric\tvalue\tcount".to_owned());
        lines.push(format!("{}\t{:.6}\t{}", report.metric, report.value, ex.len()));
    }
    emit(&dir.join("eval.tsv"), &lines)
}

fn cmd_saliency(checkpoint: PathBuf, corpus: PathBuf, trees: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let t = Trained::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
    let ex = read_corpus(&corpus, trees.as_deref())?;
    let dir = out_dir(out)?;
    let mut run = Config::new();
    run.set("saliency.checkpoint", checkpoint.display());
    run.set("saliency.corpus", corpus.display());
    if let Some(tr) = &trees {
        run.set("saliency.trees", tr.display());
    }
    run.save(&dir.join("config.txt"))?;
    let profiles = t.saliency(&ex)?;
    let mut lines = vec!["sentence\tposition\ttoken\tsaliency\tnormalized".to_owned()];
    for (s, (e, p)) in ex.iter().zip(&profiles).enumerate() {
        for (j, ((tok, raw), norm)) in e.text.iter().zip(&p.scores).zip(p.normalized()).enumerate() {
            lines.push(format!("{s}\t{j}\t{tok}\t{raw:.9e}\t{norm:.6}"));
        }
    }
    emit(&dir.join("saliency.tsv"), &lines)?;
    let scores: Vec<Vec<f64>> = profiles.into_iter().map(|p| p.scores).collect();
    let summary = positional_summary(&scores, 4)?;
    let mut f = create(&dir.join("quarters.tsv"))?;
    writeln!(f, "quarter\tmean_share\tsentences")?;
    for (q, v) in summary.parts.iter().enumerate() {
        writeln!(f, "{}\t{v:.6}\t{}", q + 1, summary.sentences)?;
    }
    f.flush()?;
    Ok(())
}

fn cmd_agree(checkpoints: Vec<PathBuf>, corpus: PathBuf, trees: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    if checkpoints.len() < 2 {
        return Err(Error::Config("agreement needs at least two checkpoints".into()).into());
    }
    let models = checkpoints
        .iter()
        .map(|c| Trained::from_checkpoint(&Checkpoint::load(c)?))
        .collect::<treenc::Result<Vec<_>>>()?;
    if models.iter().any(|m| m.vocab != models[0].vocab) {
        bail!(Error::Config("checkpoints do not share a vocabulary".into()));
    }
    let ex = read_corpus(&corpus, trees.as_deref())?;
    let dir = out_dir(out)?;
    let mut run = Config::new();
    for (i, c) in checkpoints.iter().enumerate() {
        run.set(&format!("agree.checkpoint{i}"), c.display());
    }
    run.set("agree.corpus", corpus.display());
    run.save(&dir.join("config.txt"))?;
    let profiles = models
        .iter()
        .map(|m| Ok(m.saliency(&ex)?.into_iter().map(|p| p.scores).collect()))
        .collect::<treenc::Result<Vec<Vec<Vec<f64>>>>>()?;
    let a = saliency_agreement(&profiles)?;
    let mut lines = vec!["first\tsecond\tmean_pearson\tundefined".to_owned()];
    for p in &a.pairs {
        lines.push(format!("{}\t{}\t{}\t{}", p.first, p.second, fmt_opt(p.mean), p.undefined));
    }
    lines.push(format!("all\tall\t{}\t{}", fmt_opt(a.mean.map(|m| m / 100.0)), a.excluded_short));
    lines.push(format!("# mean average Pearson x100 = {}; length-1 sentences excluded = {}", fmt_opt(a.mean), a.excluded_short));
    emit(&dir.join("agreement.tsv"), &lines)
}

fn cmd_sweep(run: RunArgs, grid: Vec<f64>, seeds: Vec<u64>) -> Result<()> {
    if let Some(r) = grid.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Config(format!("rho must lie in [0, 1], got {r}")).into());
    }
    let mut cfg = load_config(&run)?;
    // the layout is set per grid point
    cfg.remove("encoder.layout");
    let exp = Experiment::from_config(&cfg)?;
    let data = load_dataset(&exp)?;
    let dir = out_dir(run.out)?;
    let mut eff = exp.to_config();
    eff.set("sweep.grid", grid.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    eff.set("sweep.seeds", seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
    eff.save(&dir.join("config.txt"))?;
    let rows = rho_sweep(&exp, &grid, &data, &seeds)?;
    let mut lines = vec!["rho\tmean_depth\tmetric\tmean\tmedian\tper_seed".to_owned()];
    for r in rows {
        let per: Vec<String> = r.per_seed.iter().map(|v| format!("{v:.6}")).collect();
        lines.push(format!(
            "{}\t{:.6}\t{}\t{:.6}\t{:.6}\t{}",
            r.rho,
            r.mean_depth,
            r.metric,
            r.mean,
            r.median,
            per.join(",")
        ));
    }
    emit(&dir.join("sweep.tsv"), &lines)
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    task: &str,
    vocab: usize,
    min_len: usize,
    max_len: usize,
    classes: usize,
    train_n: usize,
    dev: usize,
    test: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let task: SynthTask = task.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
    let spec = SynthSpec {
        task,
        vocab,
        min_len,
        max_len,
        classes,
        train: train_n,
        dev,
        test,
        seed,
    };
    let data = synth_generate(&spec)?;
    let dir = out_dir(out)?;
    let mut run = Config::new();
    run.set("task", task.task_kind());
    run.set("synth.task", task);
    run.set("synth.vocab", vocab);
    run.set("synth.min_len", min_len);
    run.set("synth.max_len", max_len);
    run.set("synth.classes", classes);
    run.set("synth.train", train_n);
    run.set("synth.dev", dev);
    run.set("synth.test", test);
    run.set("synth.seed", seed);
    run.save(&dir.join("config.txt"))?;
    for (name, split) in [("train", &data.train), ("dev", &data.dev), ("test", &data.test)] {
        let p = dir.join(format!("{name}.tsv"));
        write_examples(&p, data.task, split)?;
        println!("{}\t{}", p.display(), split.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Treegen {
            kind,
            n,
            corpus,
            rho,
            seed,
            count,
        } => cmd_treegen(&kind, n, corpus, rho, seed, count),
        Command::Train(r) => cmd_train(r),
        Command::Eval {
            checkpoint,
            split,
            trees,
            by_length,
            out,
        } => cmd_eval(checkpoint, split, trees, by_length, out),
        Command::Saliency {
            checkpoint,
            corpus,
            trees,
            out,
        } => cmd_saliency(checkpoint, corpus, trees, out),
        Command::Agree {
            checkpoints,
            corpus,
            trees,
            out,
        } => cmd_agree(checkpoints, corpus, trees, out),
        Command::SweepRho { run, grid, seeds } => cmd_sweep(run, grid, seeds),
        Command::Synth {
            task,
            vocab,
            min_len,
            max_len,
            classes,
            train,
            dev,
            test,
            seed,
            out,
        } => cmd_synth(&task, vocab, min_len, max_len, classes, train, dev, test, seed, out),
    }
}

/// 1 usage/config, 2 data or I/O, 3 numeric failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numeric() => 3,
        Some(Error::Config(_)) => 1,
        Some(_) => 2,
        None if err.downcast_ref::<io::Error>().is_some() => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("treenc: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
