//! Command-line front end. Settings come from flags, then an optional TOML
//! config file, then built-in defaults; flags always win.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, MatchMethod};
use crate::corpus::{filter_corpus, load_corpus, save_corpus, CorpusFormat, NestedCorpus};
use crate::error::{Error, Result};
use crate::evaluation::{cross_validate, cv_csv, CvConfig, CvResult, CvSummary};
use crate::model::{ChainConfig, ModelSpec, PosteriorSummary, Variant};
use crate::sampler::{log_joint, Chain, Checkpoint};
use crate::simulate::{self, Scale, SyntheticTruth};

pub const DATA_DIR_ENV: &str = "NESTED_LDA_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "nested-lda", version, about = "Topic models for nested document collections")]
pub struct Cli {
    /// TOML file of default settings; command-line flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for folds, chains and held-out pages.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model by collapsed Gibbs sampling.
    Fit(FitArgs),
    /// Cross-validate a grid of variants and topic counts.
    Cv(CvArgs),
    /// Top words, prevalence, coverage, matching and interval reports.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic corpus with known truth.
    Simulate(SimulateArgs),
    /// Score a fit on a synthetic corpus against its truth.
    Score(ScoreArgs),
    /// Plot data from cross-validation results.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<CorpusFormat>,
    /// Drop pages with fewer tokens than this (applied with --min-word-pages).
    #[arg(long)]
    pub min_page_words: Option<usize>,
    /// Drop words that occur in fewer pages than this.
    #[arg(long)]
    pub min_word_pages: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ChainArgs {
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Log-normal proposal scale for the Metropolis-Hastings updates.
    #[arg(long)]
    pub step: Option<f64>,
    /// Keep only averages, not per-iteration conditional means.
    #[arg(long)]
    pub no_traces: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PriorArgs {
    #[arg(long)]
    pub a_alpha: Option<f64>,
    #[arg(long)]
    pub b_alpha: Option<f64>,
    /// Symmetric topic-word prior per word.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Symmetric local-topic word prior per word.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub base_shape: Option<f64>,
    #[arg(long)]
    pub base_rate: Option<f64>,
    /// Dirichlet mass of the shared alpha prior (default 1/K*).
    #[arg(long)]
    pub alpha_mass: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, value_enum)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[command(flatten)]
    pub prior: PriorArgs,
    /// Write a checkpoint after every this many saved iterations.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from a checkpoint written by an earlier run on the same corpus.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Comma-separated variants.
    #[arg(long, value_delimiter = ',', value_enum)]
    pub variants: Vec<Variant>,
    /// Comma-separated topic counts.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Fraction of each site's pages held out per fold.
    #[arg(long)]
    pub holdout: Option<f64>,
    /// Fixed particle count instead of 8000 / page length.
    #[arg(long)]
    pub particles: Option<usize>,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub summary: PathBuf,
    #[arg(long)]
    pub top_words: Option<usize>,
    /// One-based global topics for coverage and adjusted coverage.
    #[arg(long, value_delimiter = ',')]
    pub atc: Vec<usize>,
    /// One-based global topics for the top-word interval report.
    #[arg(long, value_delimiter = ',')]
    pub intervals: Vec<usize>,
    /// Summary whose global topics the local topics are matched against.
    #[arg(long)]
    pub match_against: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MatchMethod>,
    #[arg(long)]
    pub top_m: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: u8,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub scale: Option<Scale>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub summary: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Corpus the fit ran on; enables the word-count-ratio diagnostic.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<CorpusFormat>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// cv_summary.json written by `cv`.
    #[arg(long)]
    pub cv: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Keys accepted in the config file. Names match the long flags with dashes
/// replaced by underscores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub format: Option<CorpusFormat>,
    pub min_page_words: Option<usize>,
    pub min_word_pages: Option<usize>,
    pub variant: Option<Variant>,
    pub k: Option<usize>,
    pub variants: Option<Vec<Variant>>,
    pub ks: Option<Vec<usize>>,
    pub iters: Option<usize>,
    pub burnin: Option<usize>,
    pub thin: Option<usize>,
    pub seed: Option<u64>,
    pub step: Option<f64>,
    pub no_traces: Option<bool>,
    pub a_alpha: Option<f64>,
    pub b_alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub base_shape: Option<f64>,
    pub base_rate: Option<f64>,
    pub alpha_mass: Option<f64>,
    pub checkpoint_every: Option<usize>,
    pub folds: Option<usize>,
    pub holdout: Option<f64>,
    pub particles: Option<usize>,
    pub top_words: Option<usize>,
    pub level: Option<f64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

/// Relative inputs missing from the working directory are looked up in the
/// data directory.
fn resolve_input(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(dir) = data_dir() {
            return dir.join(path);
        }
    }
    path.to_path_buf()
}

fn output_dir(flag: Option<PathBuf>, file: &FileConfig, command: &str) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| data_dir().unwrap_or_else(|| PathBuf::from(".")).join("out").join(command));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    let path = resolve_input(path);
    fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
}

/// Everything needed to rerun a command: its resolved settings and versions.
#[derive(Debug, Clone, Serialize)]
struct Manifest<'a, T: Serialize> {
    command: &'a str,
    program: &'a str,
    version: &'a str,
    settings: &'a T,
}

fn write_manifest<T: Serialize>(dir: &Path, command: &str, settings: &T) -> Result<()> {
    let m = Manifest {
        command,
        program: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        settings,
    };
    write(&dir.join("manifest.json"), &serde_json::to_string_pretty(&m)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CorpusSettings {
    path: PathBuf,
    format: CorpusFormat,
    min_page_words: Option<usize>,
    min_word_pages: Option<usize>,
}

fn corpus_settings(args: &CorpusArgs, file: &FileConfig) -> Result<CorpusSettings> {
    let path = args
        .corpus
        .clone()
        .or_else(|| file.corpus.clone())
        .ok_or_else(|| Error::config("a corpus path is required (--corpus)"))?;
    let path = resolve_input(&path);
    let format = args.format.or(file.format).unwrap_or_else(|| guess_format(&path));
    Ok(CorpusSettings {
        path,
        format,
        min_page_words: args.min_page_words.or(file.min_page_words),
        min_word_pages: args.min_word_pages.or(file.min_word_pages),
    })
}

fn guess_format(path: &Path) -> CorpusFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => CorpusFormat::Jsonl,
        _ => CorpusFormat::TokenIndex,
    }
}

fn load(settings: &CorpusSettings) -> Result<NestedCorpus> {
    let corpus = load_corpus(&settings.path, settings.format)?;
    let corpus = if settings.min_page_words.is_some() || settings.min_word_pages.is_some() {
        let before = (corpus.num_pages(), corpus.vocab_size());
        let c = filter_corpus(
            &corpus,
            settings.min_page_words.unwrap_or(1),
            settings.min_word_pages.unwrap_or(1),
        )?;
        log::info!(
            "filtering kept {} of {} pages and {} of {} words",
            c.num_pages(),
            before.0,
            c.vocab_size(),
            before.1
        );
        c
    } else {
        corpus
    };
    log::info!(
        "corpus: {} sites, {} pages, {} tokens, {} words",
        corpus.num_sites(),
        corpus.num_pages(),
        corpus.num_tokens(),
        corpus.vocab_size()
    );
    Ok(corpus)
}

fn chain_config(args: &ChainArgs, file: &FileConfig) -> ChainConfig {
    let defaults = ChainConfig::comparison(1);
    ChainConfig {
        iters: args.iters.or(file.iters).unwrap_or(defaults.iters),
        burnin: args.burnin.or(file.burnin).unwrap_or(defaults.burnin),
        thin: args.thin.or(file.thin).unwrap_or(defaults.thin),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        step: args.step.or(file.step).unwrap_or(defaults.step),
        keep_traces: !(args.no_traces || file.no_traces.unwrap_or(false)),
    }
}

fn model_spec(variant: Variant, k: usize, args: &PriorArgs, file: &FileConfig) -> Result<ModelSpec> {
    let mut spec = ModelSpec::new(variant, k);
    spec.a_alpha = args.a_alpha.or(file.a_alpha).unwrap_or(spec.a_alpha);
    spec.b_alpha = args.b_alpha.or(file.b_alpha).unwrap_or(spec.b_alpha);
    spec.beta_scale = args.beta.or(file.beta).unwrap_or(spec.beta_scale);
    spec.gamma_scale = args.gamma.or(file.gamma).unwrap_or(spec.gamma_scale);
    spec.base_shape = args.base_shape.or(file.base_shape).unwrap_or(spec.base_shape);
    spec.base_rate = args.base_rate.or(file.base_rate).unwrap_or(spec.base_rate);
    spec.alpha_dirichlet_mass = args.alpha_mass.or(file.alpha_mass);
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Serialize)]
struct FitSettings {
    corpus: CorpusSettings,
    spec: ModelSpec,
    chain: ChainConfig,
    checkpoint_every: Option<usize>,
    resume: Option<PathBuf>,
}

fn cmd_fit(args: FitArgs, file: &FileConfig) -> Result<()> {
    let corpus_settings = corpus_settings(&args.corpus, file)?;
    let corpus = load(&corpus_settings)?;
    let out = output_dir(args.out.clone(), file, "fit")?;
    let checkpoint_every = args.checkpoint_every.or(file.checkpoint_every);
    if checkpoint_every == Some(0) {
        return Err(Error::config("--checkpoint-every must be at least 1"));
    }

    let chain = match &args.resume {
        Some(path) => {
            let cp = Checkpoint::from_json(&read(path)?)?;
            log::info!("resuming at sweep {} of {}", cp.iteration, cp.config.iters);
            Chain::resume(cp, &corpus)?
        }
        None => {
            let variant = args
                .variant
                .or(file.variant)
                .ok_or_else(|| Error::config("--variant is required"))?;
            let k = args.k.or(file.k).ok_or_else(|| Error::config("--k is required"))?;
            let spec = model_spec(variant, k, &args.prior, file)?;
            Chain::new(&spec, &corpus, &chain_config(&args.chain, file))?
        }
    };
    let settings = FitSettings {
        corpus: corpus_settings,
        spec: chain.spec().clone(),
        chain: chain.summary().chain,
        checkpoint_every,
        resume: args.resume.clone(),
    };
    write_manifest(&out, "fit", &settings)?;

    let checkpoint_path = out.join("checkpoint.json");
    let config = settings.chain;
    let summary = chain.run_with(|chain, stats| {
        let it = chain.iteration();
        if stats.non_finite > 0 {
            log::warn!("sweep {it}: {} proposals had a non-finite target", stats.non_finite);
        }
        if it % 100 == 0 {
            log::info!(
                "sweep {it}/{}: log joint {:.2}, c_alpha {:.4}, c_alpha acceptance {:.2}",
                config.iters,
                log_joint(chain.state(), chain.spec()),
                chain.state().c_alpha,
                chain.c_alpha_acceptance()
            );
        }
        if let Some(every) = checkpoint_every {
            let saved = chain.summary().saved;
            if config.is_saved(it) && saved % every == 0 {
                write(&checkpoint_path, &chain.checkpoint().to_json()?)?;
            }
        }
        Ok(())
    })?;
    log::info!(
        "saved {} iterations; mean c_alpha {:.4}",
        summary.saved,
        summary.mean_c_alpha()
    );
    write(&out.join("summary.json"), &summary.to_json()?)
}

#[derive(Debug, Serialize)]
struct CvSettings {
    corpus: CorpusSettings,
    specs: Vec<ModelSpec>,
    cv: CvConfig,
}

fn cmd_cv(args: CvArgs, file: &FileConfig) -> Result<()> {
    let corpus_settings = corpus_settings(&args.corpus, file)?;
    let corpus = load(&corpus_settings)?;
    let out = output_dir(args.out.clone(), file, "cv")?;
    let variants = if args.variants.is_empty() {
        file.variants.clone().unwrap_or_else(|| Variant::ALL.to_vec())
    } else {
        args.variants.clone()
    };
    let ks = if args.k.is_empty() {
        file.ks.clone().or_else(|| file.k.map(|k| vec![k])).ok_or_else(|| Error::config("--k is required"))?
    } else {
        args.k.clone()
    };
    let mut specs = Vec::new();
    for &k in &ks {
        for &variant in &variants {
            specs.push(model_spec(variant, k, &args.prior, file)?);
        }
    }
    let chain = chain_config(&args.chain, file);
    let mut cv = CvConfig::new(chain, chain.seed);
    cv.folds = args.folds.or(file.folds).unwrap_or(cv.folds);
    cv.fraction = args.holdout.or(file.holdout).unwrap_or(cv.fraction);
    cv.particles = args.particles.or(file.particles);
    let settings = CvSettings { corpus: corpus_settings, specs, cv };
    write_manifest(&out, "cv", &settings)?;

    let results = cross_validate(&settings.specs, &corpus, &settings.cv)?;
    for r in &results {
        log::info!("{} K={}: mean held-out log-likelihood {:.2}", r.variant, r.k, r.mean);
    }
    write(&out.join("cv.csv"), &cv_csv(&results))?;
    let summary = CvSummary {
        folds: settings.cv.folds,
        fraction: settings.cv.fraction,
        seed: settings.cv.seed,
        results,
    };
    write(&out.join("cv_summary.json"), &serde_json::to_string_pretty(&summary)?)
}

fn zero_based(topics: &[usize], k: usize) -> Result<Vec<usize>> {
    topics
        .iter()
        .map(|&t| {
            if t == 0 || t > k {
                Err(Error::TopicOutOfRange { topic: t, topics: k })
            } else {
                Ok(t - 1)
            }
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct AnalyzeSettings {
    summary: PathBuf,
    top_words: usize,
    atc: Vec<usize>,
    intervals: Vec<usize>,
    match_against: Option<PathBuf>,
    method: MatchMethod,
    top_m: Option<usize>,
    level: f64,
}

fn cmd_analyze(args: AnalyzeArgs, file: &FileConfig) -> Result<()> {
    let settings = AnalyzeSettings {
        summary: resolve_input(&args.summary),
        top_words: args.top_words.or(file.top_words).unwrap_or(10),
        atc: args.atc.clone(),
        intervals: args.intervals.clone(),
        match_against: args.match_against.as_deref().map(resolve_input),
        method: args.method.unwrap_or(MatchMethod::Rank),
        top_m: args.top_m,
        level: args.level.or(file.level).unwrap_or(0.95),
    };
    let summary = PosteriorSummary::from_json(&read(&settings.summary)?)?;
    let out = output_dir(args.out.clone(), file, "analyze")?;
    write_manifest(&out, "analyze", &settings)?;
    let n = settings.top_words.min(summary.v());

    write(&out.join("topics.csv"), &analysis::topics_csv(&summary, n)?)?;
    let atc = zero_based(&settings.atc, summary.k())?;
    if !atc.is_empty() {
        let rows = analysis::coverage_report(&summary, &atc, settings.level)?;
        write(&out.join("coverage.csv"), &analysis::coverage_csv(&rows))?;
    }
    let intervals = zero_based(&settings.intervals, summary.k())?;
    if !intervals.is_empty() {
        let rows = analysis::interval_report(&summary, &intervals, n)?;
        let mut csv = String::from("topic,rank,word,lo,median,hi\n");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.topic + 1,
                r.rank,
                r.word,
                r.interval.lo,
                r.interval.median,
                r.interval.hi
            ));
        }
        write(&out.join("intervals.csv"), &csv)?;
        for (a, b) in analysis::switching_suspects(&summary, &intervals, n)? {
            log::warn!("topics {} and {} have overlapping top-word intervals", a + 1, b + 1);
        }
    }
    if let Some(path) = &settings.match_against {
        let other = PosteriorSummary::from_json(&read(path)?)?;
        let matches = analysis::match_local_topics(&summary, &other, settings.method, settings.top_m)?;
        write(&out.join("matching.csv"), &analysis::matching_csv(&matches))?;
    }
    let plot_topics = if atc.is_empty() { intervals.clone() } else { atc };
    let plot = analysis::plot_data(&summary, n, &plot_topics)?;
    write(&out.join("plot_data.json"), &serde_json::to_string_pretty(&plot)?)
}

#[derive(Debug, Serialize)]
struct SimulateSettings {
    scenario: u8,
    seed: u64,
    scale: Scale,
}

fn cmd_simulate(args: SimulateArgs, file: &FileConfig) -> Result<()> {
    let settings = SimulateSettings {
        scenario: args.scenario,
        seed: args.seed.or(file.seed).unwrap_or(1),
        scale: args.scale.unwrap_or(Scale::Desk),
    };
    simulate::local_layout(settings.scenario, 1)?;
    let out = output_dir(args.out.clone(), file, "simulate")?;
    write_manifest(&out, "simulate", &settings)?;
    let (corpus, truth) = simulate::generate_scenario(settings.scenario, settings.scale, settings.seed)?;
    let path = out.join("corpus.txt");
    save_corpus(&corpus, &path, CorpusFormat::TokenIndex)?;
    log::info!("wrote {}", path.display());
    write(&out.join("truth.json"), &truth.to_json()?)
}

#[derive(Debug, Serialize)]
struct Extraneous {
    site: String,
    estimate: f64,
    words: Vec<String>,
    ratios: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct ScoreOutput {
    report: simulate::RecoveryReport,
    fraction_below_0_005: f64,
    fraction_within_0_05: f64,
    extraneous: Vec<Extraneous>,
}

fn cmd_score(args: ScoreArgs, file: &FileConfig) -> Result<()> {
    let summary = PosteriorSummary::from_json(&read(&args.summary)?)?;
    let truth = SyntheticTruth::from_json(&read(&args.truth)?)?;
    let out = output_dir(args.out.clone(), file, "score")?;
    write_manifest(&out, "score", &(&args.summary, &args.truth, &args.corpus))?;
    let report = simulate::recovery_score(&summary, &truth)?;

    // sites with a local topic the truth does not have
    let mut extraneous = Vec::new();
    if let Some(path) = &args.corpus {
        let path = resolve_input(path);
        let corpus = load_corpus(&path, args.format.unwrap_or_else(|| guess_format(&path)))?;
        let mean = summary.mean_means();
        for (i, s) in report.sites.iter().enumerate() {
            if truth.local_topics[i] == 0 && s.estimate > 0.02 {
                let words = analysis::top_word_indices(mean.psi_row(i), 3.min(summary.v()))?;
                extraneous.push(Extraneous {
                    site: s.site.clone(),
                    estimate: s.estimate,
                    words: words.iter().map(|&w| summary.vocabulary.word(w as u32).to_owned()).collect(),
                    ratios: words.iter().map(|&w| analysis::word_count_ratio(&corpus, i, w as u32)).collect(),
                });
            }
        }
    }
    write(&out.join("recovery.csv"), &report.to_csv())?;
    let output = ScoreOutput {
        fraction_below_0_005: report.fraction_below(0.005),
        fraction_within_0_05: report.fraction_within(0.05),
        report,
        extraneous,
    };
    log::info!(
        "{:.0}% of site estimates below 0.005, {:.0}% within 0.05 of the truth",
        100.0 * output.fraction_below_0_005,
        100.0 * output.fraction_within_0_05
    );
    write(&out.join("recovery.json"), &serde_json::to_string_pretty(&output)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub variant: Variant,
    pub k: usize,
    pub mean: f64,
    pub sd: f64,
    pub folds: Vec<f64>,
}

/// One point per variant and K with the spread across folds, ordered by
/// variant then K.
pub fn cv_plot_points(results: &[CvResult]) -> Vec<CvPoint> {
    let mut points: Vec<CvPoint> = results
        .iter()
        .map(|r| {
            let n = r.fold_logliks.len() as f64;
            let var = if n > 1.0 {
                r.fold_logliks.iter().map(|x| (x - r.mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            CvPoint {
                variant: r.variant,
                k: r.k,
                mean: r.mean,
                sd: var.sqrt(),
                folds: r.fold_logliks.clone(),
            }
        })
        .collect();
    points.sort_by_key(|p| (Variant::ALL.iter().position(|v| *v == p.variant), p.k));
    points
}

fn cmd_report(args: ReportArgs, file: &FileConfig) -> Result<()> {
    let cv: CvSummary = serde_json::from_str(&read(&args.cv)?)?;
    let out = output_dir(args.out.clone(), file, "report")?;
    write_manifest(&out, "report", &args.cv)?;
    let points = cv_plot_points(&cv.results);
    let mut csv = String::from("variant,K,mean,sd\n");
    for p in &points {
        csv.push_str(&format!("{},{},{},{}\n", p.variant, p.k, p.mean, p.sd));
    }
    write(&out.join("cv_plot.csv"), &csv)?;
    write(&out.join("cv_plot.json"), &serde_json::to_string_pretty(&points)?)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(&resolve_input(path))?,
        None => FileConfig::default(),
    };
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        if jobs == 0 {
            return Err(Error::config("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Fit(a) => cmd_fit(a, &file),
        Command::Cv(a) => cmd_cv(a, &file),
        Command::Analyze(a) => cmd_analyze(a, &file),
        Command::Simulate(a) => cmd_simulate(a, &file),
        Command::Score(a) => cmd_score(a, &file),
        Command::Report(a) => cmd_report(a, &file),
    }
}
