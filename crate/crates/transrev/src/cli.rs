//! The `transrev` command line.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 on any runtime
//! failure (unreadable input, diverged training, mismatched model file).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;
use transrev_core::{
    evaluate_mse, fit_offset, fit_svd, generate_planted, prepare_corpus, retrieve_reviews, train,
    word_scores, Format, GridSpec, Hyperparameters, PlantedConfig, ReviewIndex, TrainingRun,
    ValidationPoint,
};

use crate::config::{resolve, ConfigFile, HyperparameterOverlay};
use crate::dataset::{read_dataset, vocabulary_hash, write_dataset, Dataset};
use crate::error::{Error, Result};
use crate::grid::{results_tsv, svd_grid, transrev_grid};
use crate::model_file::{self, ModelFile, SavedModel};
use crate::reader::parse_corpus;

/// Environment variable holding the default dataset directory.
pub const DATA_ENV: &str = "TRANSREV_DATA";

#[derive(Debug, Parser)]
#[command(
    name = "transrev",
    version,
    about = "Review-translation rating prediction"
)]
pub struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize, split and encode a JSON-lines review dump into a dataset directory.
    Preprocess(PreprocessArgs),
    /// Write a synthetic corpus whose ratings are set by planted sentiment words.
    Synth(SynthArgs),
    /// Train the review-translation model.
    Train(TrainArgs),
    /// Fit the offset or biased-SVD baseline.
    TrainBaseline(BaselineArgs),
    /// Train every cell of a hyperparameter grid and keep the best model.
    Grid(GridArgs),
    /// Print the MSE of a model on one split.
    Evaluate(EvaluateArgs),
    /// Show the training reviews closest to the approximated review of a pair.
    Retrieve(RetrieveArgs),
    /// Write per-word rating scores and embeddings.
    ExportWords(ExportWordsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Amazon,
    Yelp,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Amazon => Format::Amazon,
            FormatArg::Yelp => Format::Yelp,
        }
    }
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// JSON-lines file, optionally gzipped.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: FormatArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Minimum fraction of training reviews a word must occur in.
    #[arg(long, default_value_t = transrev_core::corpus::DEFAULT_MIN_REVIEW_FRACTION)]
    pub min_df: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output JSON-lines file in the amazon layout.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `word<TAB>positive|negative|neutral`.
    #[arg(long)]
    pub words_out: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub users: usize,
    #[arg(long, default_value_t = 200)]
    pub items: usize,
    #[arg(long, default_value_t = 20)]
    pub reviews_per_user: usize,
    #[arg(long, default_value_t = 50)]
    pub vocab: usize,
    #[arg(long, default_value_t = 10)]
    pub positive: usize,
    #[arg(long, default_value_t = 10)]
    pub negative: usize,
    /// Gaussian noise on the latent pair score.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct HpFlags {
    /// TOML file with [hyperparameters] and [grid] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long = "batch")]
    pub batch_size: Option<usize>,
    #[arg(long = "epochs")]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub validate_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip the final partial batch of each epoch.
    #[arg(long)]
    pub drop_last: bool,
}

impl HpFlags {
    fn overlay(&self) -> HyperparameterOverlay {
        HyperparameterOverlay {
            k: self.k,
            lambda: self.lambda,
            mu: self.mu,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            validate_every: self.validate_every,
            seed: self.seed,
            drop_last: self.drop_last.then_some(true),
        }
    }

    pub fn resolve(&self) -> Result<(Hyperparameters, GridSpec)> {
        let file = self.config.as_deref().map(ConfigFile::load).transpose()?;
        let (hp, grid) = resolve(file.as_ref(), &self.overlay());
        hp.validate().map_err(|e| Error::Usage(e.to_string()))?;
        grid.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok((hp, grid))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `preprocess`.
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[command(flatten)]
    pub hp: HpFlags,
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics log; defaults to `<out>.metrics.tsv`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Offset,
    Svd,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub model: BaselineKind,
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[command(flatten)]
    pub hp: HpFlags,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridModel {
    Transrev,
    Svd,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[command(flatten)]
    pub hp: HpFlags,
    #[arg(long, value_enum, default_value = "transrev")]
    pub model: GridModel,
    /// Receives results.tsv, best.bin and best.metrics.tsv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    /// Original user id.
    #[arg(long)]
    pub user: String,
    /// Original item id.
    #[arg(long)]
    pub item: String,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    /// Only consider reviews of the queried item.
    #[arg(long)]
    pub same_item_only: bool,
}

#[derive(Debug, Args)]
pub struct ExportWordsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    match execute(cli.command) {
        Ok(()) => 0,
        Err(Error::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("try `transrev --help`");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Core(transrev_core::Error::AllRunsFailed(table)) = &e {
                eprint!("{}", results_tsv(table));
            }
            2
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Preprocess(a) => preprocess(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::TrainBaseline(a) => baseline_cmd(a),
        Command::Grid(a) => grid_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Retrieve(a) => retrieve_cmd(a),
        Command::ExportWords(a) => export_words_cmd(a),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn print(line: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

/// `epoch<TAB>train_loss<TAB>valid_mse`, one line per validation point.
pub fn metrics_tsv(history: &[ValidationPoint]) -> String {
    let mut out = String::new();
    for p in history {
        let _ = writeln!(out, "{}\t{}\t{}", p.epoch, p.train_loss, p.validation_mse);
    }
    out
}

fn default_metrics_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".metrics.tsv");
    PathBuf::from(s)
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    if !(a.min_df > 0.0 && a.min_df < 1.0) {
        return Err(Error::Usage(format!(
            "--min-df must lie strictly between 0 and 1, got {}",
            a.min_df
        )));
    }
    let format = Format::from(a.format);
    let parsed = parse_corpus(&a.input, format)?;
    let prepared = prepare_corpus(&parsed.reviews, format, a.seed, a.min_df)?;
    let m = write_dataset(&a.out, &prepared, parsed.skipped)?;
    print(&format!(
        "train={} validation={} test={} users={} items={} vocabulary={} removed_validation={} removed_test={}",
        m.counts.train,
        m.counts.validation,
        m.counts.test,
        m.counts.users,
        m.counts.items,
        m.counts.vocabulary,
        m.removed.validation,
        m.removed.test
    ))
}

fn synth(a: SynthArgs) -> Result<()> {
    let corpus = generate_planted(&PlantedConfig {
        users: a.users,
        items: a.items,
        reviews_per_user: a.reviews_per_user,
        vocab_size: a.vocab,
        positive_words: a.positive,
        negative_words: a.negative,
        noise_std: a.noise,
        seed: a.seed,
    })
    .map_err(|e| Error::Usage(e.to_string()))?;
    let mut out = String::new();
    for r in &corpus.reviews {
        let line = json!({
            "reviewerID": r.user_id,
            "asin": r.item_id,
            "overall": r.rating,
            "summary": r.text,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    write(&a.out, &out)?;
    if let Some(path) = &a.words_out {
        let mut words = String::new();
        for (list, tag) in [
            (&corpus.positive, "positive"),
            (&corpus.negative, "negative"),
            (&corpus.neutral, "neutral"),
        ] {
            for w in list {
                let _ = writeln!(words, "{w}\t{tag}");
            }
        }
        write(path, &words)?;
    }
    print(&format!("reviews={}", corpus.reviews.len()))
}

fn save_run<M>(
    run: &TrainingRun<M>,
    model: SavedModel,
    data: &Dataset,
    out: &Path,
    metrics: Option<&Path>,
) -> Result<()> {
    model_file::save(
        out,
        &ModelFile {
            model,
            vocabulary_hash: vocabulary_hash(&data.vocabulary),
        },
    )?;
    write(
        &metrics
            .map(Path::to_path_buf)
            .unwrap_or_else(|| default_metrics_path(out)),
        &metrics_tsv(&run.history),
    )?;
    print(&format!(
        "best_epoch={} valid_mse={}",
        run.best_epoch, run.best_validation_mse
    ))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let (hp, _) = a.hp.resolve()?;
    let data = read_dataset(&a.data)?;
    info!(
        "training k={} lr={} mu={} lambda={} on {} triples",
        hp.k,
        hp.learning_rate,
        hp.mu,
        hp.lambda,
        data.split.train.len()
    );
    let run = train(&data.split, &hp)?;
    let model = SavedModel::TransRev(run.best_parameters.clone());
    save_run(&run, model, &data, &a.out, a.metrics.as_deref())
}

fn baseline_cmd(a: BaselineArgs) -> Result<()> {
    let (hp, _) = a.hp.resolve()?;
    let data = read_dataset(&a.data)?;
    match a.model {
        BaselineKind::Offset => {
            let m = fit_offset(&data.split.train)?;
            let train_mse = evaluate_mse(&m, &data.split.train)?.mse;
            let valid = evaluate_mse(&m, &data.split.validation)?.mse;
            let run = TrainingRun {
                best_parameters: m,
                best_validation_mse: valid,
                best_epoch: 0,
                history: vec![ValidationPoint {
                    epoch: 0,
                    train_loss: train_mse,
                    validation_mse: valid,
                }],
                epoch_losses: Vec::new(),
                hyperparameters: hp,
            };
            save_run(
                &run,
                SavedModel::Offset(m),
                &data,
                &a.out,
                a.metrics.as_deref(),
            )
        }
        BaselineKind::Svd => {
            let run = fit_svd(&data.split, &hp)?;
            let model = SavedModel::Svd(run.best_parameters.clone());
            save_run(&run, model, &data, &a.out, a.metrics.as_deref())
        }
    }
}

fn grid_cmd(a: GridArgs) -> Result<()> {
    let (hp, grid) = a.hp.resolve()?;
    let data = read_dataset(&a.data)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(e.to_string()))?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let results = a.out_dir.join("results.tsv");
    let best_model = a.out_dir.join("best.bin");
    let best_metrics = a.out_dir.join("best.metrics.tsv");

    let outcome = pool.install(|| match a.model {
        GridModel::Transrev => transrev_grid(&data.split, &grid, &hp).map(|o| {
            let model = SavedModel::TransRev(o.best.best_parameters.clone());
            (o.table, o.best_row, model, o.best.history)
        }),
        GridModel::Svd => svd_grid(&data.split, &grid, &hp).map(|o| {
            let model = SavedModel::Svd(o.best.best_parameters.clone());
            (o.table, o.best_row, model, o.best.history)
        }),
    });
    let (table, best_row, model, history) = match outcome {
        Ok(v) => v,
        Err(Error::Core(transrev_core::Error::AllRunsFailed(table))) => {
            write(&results, &results_tsv(&table))?;
            return Err(Error::Core(transrev_core::Error::AllRunsFailed(table)));
        }
        Err(e) => return Err(e),
    };
    let failed = table.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        warn!(
            "{failed} of {} grid cells failed; see {}",
            table.len(),
            results.display()
        );
    }
    write(&results, &results_tsv(&table))?;
    model_file::save(
        &best_model,
        &ModelFile {
            model,
            vocabulary_hash: vocabulary_hash(&data.vocabulary),
        },
    )?;
    write(&best_metrics, &metrics_tsv(&history))?;
    let row = &table[best_row];
    let (mse, epoch) = row.outcome.clone().expect("best row succeeded");
    print(&format!(
        "best lr={} mu={} lambda={} valid_mse={mse} best_epoch={epoch}",
        row.learning_rate, row.mu, row.lambda
    ))
}

/// Loads a model and checks that it was trained on `data`'s vocabulary.
pub fn load_model_for(path: &Path, data: &Dataset) -> Result<SavedModel> {
    let file = model_file::load(path)?;
    if file.vocabulary_hash != vocabulary_hash(&data.vocabulary) {
        return Err(Error::BadModelFile {
            path: path.to_path_buf(),
            reason: "trained on a different vocabulary than this dataset".into(),
        });
    }
    Ok(file.model)
}

fn transrev_only<'a>(
    model: &'a SavedModel,
    path: &Path,
) -> Result<&'a transrev_core::ModelParameters> {
    model.as_transrev().ok_or_else(|| {
        Error::Usage(format!(
            "{} holds a `{}` model; this command needs a transrev model",
            path.display(),
            model.kind()
        ))
    })
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let model = load_model_for(&a.model, &data)?;
    let report = evaluate_mse(&model, data.part(&a.split)?)?;
    print(&format!("mse={} n={}", report.mse, report.n))
}

fn retrieve_cmd(a: RetrieveArgs) -> Result<()> {
    if a.top == 0 {
        return Err(Error::Usage("--top must be at least 1".into()));
    }
    let data = read_dataset(&a.data)?;
    let model = load_model_for(&a.model, &data)?;
    let params = transrev_only(&model, &a.model)?;
    let user = data
        .user_index(&a.user)
        .ok_or_else(|| Error::Usage(format!("unknown user `{}`", a.user)))?;
    let item = data
        .item_index(&a.item)
        .ok_or_else(|| Error::Usage(format!("unknown item `{}`", a.item)))?;
    let index = ReviewIndex::build(params, &data.split.train)?;
    let result = retrieve_reviews(params, &index, user, item, a.top, a.same_item_only)?;
    print("rank\tdistance\trating\tuser\titem\ttext")?;
    for (rank, n) in result.neighbors.iter().enumerate() {
        let t = &data.split.train[n.train_index];
        print(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            rank + 1,
            n.distance,
            n.rating,
            data.user_ids[t.user],
            data.item_ids[t.item],
            data.train_text[n.train_index]
        ))?;
    }
    Ok(())
}

fn export_words_cmd(a: ExportWordsArgs) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let model = load_model_for(&a.model, &data)?;
    let params = transrev_only(&model, &a.model)?;
    let mut out = String::new();
    for w in word_scores(params, &data.vocabulary, &data.split.train)? {
        let _ = write!(out, "{}\t{}", w.token, w.score);
        for x in &w.embedding {
            let _ = write!(out, "\t{x}");
        }
        out.push('\n');
    }
    write(&a.out, &out)?;
    print(&format!("words={}", data.vocabulary.len()))
}
