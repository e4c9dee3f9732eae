use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use glim_core::config::RunConfig;
use glim_core::data::container::{read_container, write_container};
use glim_core::data::preprocess::PreprocessOptions;
use glim_core::data::raw::prepare;
use glim_core::data::split::{split_dataset, SplitManifest};
use glim_core::data::Dataset;
use glim_core::eval::judge::KeywordJudge;
use glim_core::eval::report::{generations_txt, improvements_csv, report_csv, svg_bars, table, variants_csv};
use glim_core::eval::{evaluate, EvalReport};
use glim_core::lm::pretrain::{pretrain, PretrainConfig};
use glim_core::lm::tokenizer::Tokenizer;
use glim_core::lm::{FrozenLm, LmConfig, LmEmbedder};
use glim_core::nn::DType;
use glim_core::mtv::{regenerate_variants, BuiltinParaphraser, HttpConfig, HttpParaphraser, Paraphraser};
use glim_core::synth::{build_world_from, derive_seed, gen_corpus};
use glim_core::train::{train, GlimModel, SUMMARY_FILE};
use glim_core::{GlimError, Result};

const SPLIT_DIR: &str = "split";
const DEFAULT_LM: &str = "fixtures/lm";

#[derive(Parser)]
#[command(name = "glim", version, about = "EEG-to-text decoding with a frozen language model")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Engine {
    Builtin,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Cmd {
    /// Import raw recordings listed in a JSON manifest into a dataset container.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Skip per-channel standardisation.
        #[arg(long)]
        no_zscore: bool,
    },
    /// Generate a synthetic world (container plus split).
    Synth {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        lm: Option<PathBuf>,
    },
    /// Rebuild the text variants of every record.
    Mtv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "builtin")]
        engine: Engine,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output container; defaults to rewriting `--data`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "ckpt")]
        out: PathBuf,
        #[arg(long)]
        lm: Option<PathBuf>,
    },
    /// Score a checkpoint; noise-input columns are always included.
    Eval(EvalArgs),
    /// Noise-input columns only.
    NoiseTest(EvalArgs),
    /// Re-render a saved report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Lm(LmCmd),
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Report CSV path; companion files are written next to it.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: Part,
    /// Accepted for compatibility; noise-input metrics are always computed.
    #[arg(long)]
    noise: bool,
    #[arg(long)]
    noise_matched: bool,
    #[arg(long)]
    noise_repeats: Option<usize>,
    /// Skip beam-search generation (text metrics stay empty).
    #[arg(long)]
    no_generate: bool,
}

#[derive(Subcommand)]
enum LmCmd {
    /// Pretrain the frozen language model fixture.
    Pretrain {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[arg(long, default_value_t = 3000)]
        steps: usize,
    },
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("GLIM_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| GlimError::config(format!("GLIM_SEED={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    if let Ok(c) = std::env::var("GLIM_CACHE") {
        cfg.mtv_cache = Some(c.into());
    }
    Ok(cfg)
}

fn load_lm(flag: Option<&Path>, cfg: &mut RunConfig) -> Result<(FrozenLm, Tokenizer)> {
    let dir = flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.lm_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_LM));
    cfg.lm_dir = Some(dir.clone());
    FrozenLm::load_dir(&dir, DType::F32)
}

fn load_data(dir: &Path) -> Result<(Dataset, SplitManifest)> {
    let ds = read_container(dir)?;
    let split = SplitManifest::read_dir(&dir.join(SPLIT_DIR))?;
    Ok((ds, split))
}

fn write_report_files(report: &EvalReport, csv_path: &Path) -> Result<PathBuf> {
    let dir = csv_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    std::fs::write(csv_path, report_csv(report))?;
    render_companions(report, dir)?;
    let json = serde_json::to_vec_pretty(report).expect("report serializes");
    std::fs::write(dir.join("report.json"), json)?;
    Ok(dir.to_path_buf())
}

fn render_companions(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::write(dir.join("table.txt"), table(report))?;
    std::fs::write(dir.join("improvements.csv"), improvements_csv(report))?;
    std::fs::write(dir.join("variants.csv"), variants_csv(report))?;
    std::fs::write(dir.join("generations.tsv"), generations_txt(report))?;
    std::fs::write(dir.join("report.svg"), svg_bars(report))?;
    Ok(())
}

fn run_eval(args: EvalArgs, noise_only: bool) -> Result<()> {
    let archived = args.ckpt.join(glim_core::config::ARCHIVE_NAME);
    let cfg_path = args.config.clone().or_else(|| archived.exists().then_some(archived));
    let mut cfg = load_config(cfg_path.as_deref())?;
    if args.noise_matched {
        cfg.eval.noise_matched = true;
    }
    if let Some(r) = args.noise_repeats {
        cfg.eval.noise_repeats = r;
    }
    if args.no_generate {
        cfg.eval.generate = false;
    }
    cfg.validate()?;
    let model = GlimModel::load(&args.ckpt)?;
    let (dataset, split) = load_data(&args.data)?;
    let (lm, tok) = load_lm(args.lm.as_deref(), &mut cfg)?;
    check_lm(&args.ckpt, &lm)?;
    let ids = match args.split {
        Part::Train => &split.train,
        Part::Val => &split.val,
        Part::Test => &split.test,
    };
    let report = evaluate(&model, &lm, &tok, &dataset, ids, &cfg.eval, &KeywordJudge, noise_only)?;
    let dir = write_report_files(&report, &args.report)?;
    cfg.archive(&dir)?;
    print!("{}", table(&report));
    Ok(())
}

/// Refuses to score with a different LM than the one used in training.
fn check_lm(ckpt: &Path, lm: &FrozenLm) -> Result<()> {
    let path = ckpt.join(SUMMARY_FILE);
    if !path.exists() {
        return Ok(());
    }
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path)?)
        .map_err(|e| GlimError::format(e.column() as u64, format!("{}: {e}", path.display())))?;
    if let Some(sum) = v.get("lm_checksum_after").and_then(|s| s.as_str()) {
        let have = lm.checksum()?;
        if have != sum {
            return Err(GlimError::config(format!(
                "checkpoint was trained against LM {sum}, loaded LM is {have}"
            )));
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Prepare {
            input,
            out,
            config,
            no_zscore,
        } => {
            let cfg = load_config(config.as_deref())?;
            let opts = PreprocessOptions {
                zscore: !no_zscore,
                ..PreprocessOptions::default()
            };
            let ds = prepare(&input, &opts, cfg.world.grammar_seed)?;
            write_container(&out, &ds)?;
            let split = split_dataset(&ds, &cfg.split)?;
            split.write_dir(&out.join(SPLIT_DIR))?;
            cfg.archive(&out)?;
            let (a, b, c) = split.counts();
            println!("records={} samples={} split={a}/{b}/{c}", ds.records.len(), ds.samples.len());
        }
        Cmd::Synth {
            n,
            snr,
            seed,
            out,
            config,
            lm,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(n) = n {
                cfg.world.n_sentences = n;
            }
            if let Some(s) = snr {
                cfg.world.snr_db = s;
            }
            if let Some(s) = seed.or(env_seed()?) {
                cfg.world.grammar_seed = s;
                cfg.world.mixing_seed = derive_seed(s, 1);
                cfg.world.noise_seed = derive_seed(s, 2);
                cfg.split.seed = derive_seed(s, 3);
            }
            cfg.validate()?;
            let (lm, tok) = load_lm(lm.as_deref(), &mut cfg)?;
            let records = gen_corpus(&cfg.world)?;
            let (ds, _) = build_world_from(&cfg.world, records, &LmEmbedder { lm: &lm, tok: &tok })?;
            write_container(&out, &ds)?;
            let split = split_dataset(&ds, &cfg.split)?;
            split.write_dir(&out.join(SPLIT_DIR))?;
            cfg.archive(&out)?;
            let (a, b, c) = split.counts();
            println!("records={} samples={} split={a}/{b}/{c}", ds.records.len(), ds.samples.len());
        }
        Cmd::Mtv {
            data,
            engine,
            endpoint,
            model,
            cache,
            seed,
            out,
        } => {
            let mut ds = read_container(&data)?;
            let paraphraser: Box<dyn Paraphraser> = match engine {
                Engine::Builtin => Box::new(BuiltinParaphraser),
                Engine::Http => {
                    let mut hc = HttpConfig::default();
                    if let Some(e) = endpoint {
                        hc.endpoint = e;
                    }
                    if let Some(m) = model {
                        hc.model = m;
                    }
                    hc.api_key = std::env::var("GLIM_API_KEY").ok();
                    hc.cache_dir = cache.or_else(|| std::env::var("GLIM_CACHE").ok().map(PathBuf::from));
                    Box::new(HttpParaphraser::new(hc))
                }
            };
            regenerate_variants(&mut ds.records, paraphraser.as_ref(), seed)?;
            ds.validate()?;
            let out = out.unwrap_or(data.clone());
            write_container(&out, &ds)?;
            if out != data {
                let split = SplitManifest::read_dir(&data.join(SPLIT_DIR))?;
                split.write_dir(&out.join(SPLIT_DIR))?;
            }
            println!("records={}", ds.records.len());
        }
        Cmd::Train { config, data, out, lm } => {
            let mut cfg = load_config(config.as_deref())?;
            let (dataset, split) = load_data(&data)?;
            let (lm, tok) = load_lm(lm.as_deref(), &mut cfg)?;
            cfg.archive(&out)?;
            let res = train(&cfg.train_config(), &cfg.encoder, &dataset, &split, &lm, &tok, Some(&out))?;
            let s = &res.summary;
            println!(
                "epochs={} best_epoch={} best_val_total={} model_checksum={}",
                s.epochs,
                s.best_epoch,
                s.best_val_total.map_or("-".into(), |v| format!("{v:.4}")),
                s.model_checksum
            );
        }
        Cmd::Eval(args) => run_eval(args, false)?,
        Cmd::NoiseTest(args) => run_eval(args, true)?,
        Cmd::Report { input, out } => {
            let bytes = std::fs::read(&input)?;
            let report: EvalReport = serde_json::from_slice(&bytes)
                .map_err(|e| GlimError::format(e.column() as u64, format!("{}: {e}", input.display())))?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("report.csv"), report_csv(&report))?;
            render_companions(&report, &out)?;
            print!("{}", table(&report));
        }
        Cmd::Lm(LmCmd::Pretrain { out, seed, steps }) => {
            let cfg = PretrainConfig {
                seed,
                steps,
                ..PretrainConfig::default()
            };
            let res = pretrain(&cfg, LmConfig::default())?;
            let sum = res.lm.save_dir(&out, &res.tokenizer)?;
            println!("checksum={sum}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprint!("code=1 {e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("code={code} {e}");
            ExitCode::from(code)
        }
    }
}
