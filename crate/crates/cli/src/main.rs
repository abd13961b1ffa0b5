//! `irisward` command-line front end. Every subcommand resolves one
//! experiment plan (defaults, then `--config`, then `--set`/`--seed`) and
//! writes only below `--out`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use irisward::attack::{AttackConfig, AttackKind, CORPUS_VERSION};
use irisward::config::resolve;
use irisward::defense::{defend_batch, detection_log, write_detection_log, LabeledInput, Recognizer, Strategy, Tally, Truth};
use irisward::denoise::{DenoiserBank, BANK_VERSION};
use irisward::error::{Error, Result};
use irisward::harness::{ExperimentPlan, Harness, REPORT_VERSION};
use irisward::irispipe::{read_dataset, read_image, DATASET_VERSION};
use irisward::provenance::config_hash;
use irisward::tensornet::{denoiser_architecture, gradcheck, surrogate_architecture, NetworkModel, FORMAT_VERSION};
use irisward::wavelet::{uniform_decompose, WaveletFilters};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "irisward", about = "Wavelet sub-band defenses against adversarial iris images")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` plan file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output root; nothing is written elsewhere.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed (overrides the file and `--set`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Plan override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the gallery/probe corpus.
    Synth,
    /// Split one graymap into uniform wavelet sub-bands.
    Decompose {
        #[arg(long = "in", value_name = "PGM")]
        input: PathBuf,
        #[arg(long)]
        level: Option<usize>,
        #[arg(long)]
        wavelet: Option<String>,
    },
    /// Train and calibrate the per-band denoiser bank.
    TrainDenoisers,
    /// Recalibrate an existing bank on the probes of a corpus directory.
    Calibrate {
        #[arg(long, value_name = "DIR")]
        bank: PathBuf,
        #[arg(long, value_name = "DIR")]
        images: PathBuf,
    },
    /// Train the iris-code surrogate network.
    TrainSurrogate,
    /// Build adversarial corpora for the plan's attacks.
    Attack {
        /// Only this attack kind (fgsm, igsm, deepfool).
        #[arg(long)]
        kind: Option<String>,
    },
    /// Run one defense over an attack corpus and its paired benign probes.
    Defend {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        strategy: u8,
        #[arg(long, default_value_t = 15)]
        k: usize,
        #[arg(long, default_value_t = 5)]
        n: usize,
        /// Attack kind, or `none` for benign probes only (default: first plan attack).
        #[arg(long)]
        attack: Option<String>,
    },
    /// Every stage plus the defense sweeps and reports.
    Evaluate,
    /// Finite-difference check of a small network.
    Gradcheck {
        #[arg(long, value_parser = ["denoiser-small", "surrogate-small"])]
        net: String,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Decompose { .. } => "decompose",
            Command::TrainDenoisers => "train-denoisers",
            Command::Calibrate { .. } => "calibrate",
            Command::TrainSurrogate => "train-surrogate",
            Command::Attack { .. } => "attack",
            Command::Defend { .. } => "defend",
            Command::Evaluate => "evaluate",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }
}

fn version() -> String {
    format!(
        "{} (dataset {DATASET_VERSION}, network {FORMAT_VERSION}, bank {BANK_VERSION}, attack corpus {CORPUS_VERSION}, report {REPORT_VERSION})",
        env!("CARGO_PKG_VERSION")
    )
}

/// Outcome of a subcommand that ran but whose check failed.
struct CheckFailed(String);

enum Failure {
    User(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string().replace('\n', " ");
        match e {
            Error::Numeric(_) => Failure::Internal(msg),
            _ => Failure::User(msg),
        }
    }
}

impl From<CheckFailed> for Failure {
    fn from(c: CheckFailed) -> Self {
        Failure::Internal(c.0)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let matches = match Cli::command().version(&*Box::leak(version().into_boxed_str())).try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("irisward: error: {}", first_line(&e.to_string()));
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("irisward: error: {}", first_line(&e.to_string()));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(m)) => {
            eprintln!("irisward: error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("irisward: internal error: {m}");
            ExitCode::from(2)
        }
    }
}

fn first_line(s: &str) -> String {
    s.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim().trim_start_matches("error: ").to_string()
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    let c = &cli.common;
    if let Some(j) = c.jobs {
        if j == 0 {
            return Err(Failure::User("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::Internal(e.to_string()))?;
    }
    let mut plan = resolve(&ExperimentPlan::default(), c.config.as_deref(), &c.set)?;
    if let Some(s) = c.seed {
        plan.seed = s;
    }
    if let Command::Gradcheck { net, tolerance } = &cli.command {
        return gradcheck_net(net, *tolerance, plan.seed);
    }
    let out = c
        .out
        .clone()
        .ok_or_else(|| Failure::User(format!("{} needs --out DIR", cli.command.name())))?;
    let resolved = plan.resolved();
    log::info!("resolved plan: {}", serde_json::to_string(&resolved).map_err(Error::from)?);
    write_json(&out.join(format!("{}.config.json", cli.command.name())), &resolved)?;

    let mut h = Harness::new(&plan, &out)?;
    match cli.command {
        Command::Synth => {
            h.ensure_dataset()?;
            println!("{}", h.dataset_dir()?.display());
        }
        Command::Decompose { input, level, wavelet } => {
            let level = level.unwrap_or(plan.bank.level);
            let filters = WaveletFilters::by_name(wavelet.as_deref().unwrap_or(&plan.bank.wavelet))?;
            let image = read_image(&input)?;
            let set = uniform_decompose(image.pixels().view(), level, &filters)?;
            let dir = out.join("bands");
            set.dump_pgm_dir(&dir)?;
            println!("{}", dir.display());
        }
        Command::TrainDenoisers => {
            h.ensure_bank()?;
            println!("{}", h.bank_dir()?.display());
        }
        Command::Calibrate { bank, images } => {
            let mut b = DenoiserBank::load(&bank)?;
            let ds = read_dataset(&images)?;
            let probes: Vec<_> = ds.probes().map(|r| r.image.clone()).collect();
            b.calibrate(&probes)?;
            let dir = out.join("calibrated");
            b.save(&dir)?;
            log::info!("calibrated on {} probes; d_avg = {:?}", probes.len(), b.d_avg().unwrap_or_default());
            println!("{}", dir.display());
        }
        Command::TrainSurrogate => {
            h.ensure_surrogate()?;
            println!("{}", h.surrogate_dir()?.display());
        }
        Command::Attack { kind } => {
            let ds = h.ensure_dataset()?;
            for a in select_attacks(&plan, kind.as_deref())? {
                let set = h.ensure_attack(&a, &ds)?;
                log::info!("{}: success rate {:.2}%", a.kind.name(), set.success_rate());
                println!("{}", h.attack_dir(&a)?.display());
            }
        }
        Command::Defend { strategy, k, n, attack } => defend(&h, &plan, &out, strategy, k, n, attack.as_deref())?,
        Command::Evaluate => {
            h.run()?;
            println!("{}", h.report_dir()?.display());
        }
        Command::Gradcheck { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn select_attacks(plan: &ExperimentPlan, kind: Option<&str>) -> Result<Vec<AttackConfig>> {
    let Some(k) = kind else {
        return Ok(plan.attacks.clone());
    };
    let k = AttackKind::parse(k)?;
    let found: Vec<_> = plan.attacks.iter().filter(|a| a.kind == k).cloned().collect();
    if found.is_empty() {
        return Err(Error::Argument(format!("the plan has no {} attack", k.name())));
    }
    Ok(found)
}

#[derive(Serialize)]
struct DefendSummary {
    strategy: u8,
    attack: String,
    k: usize,
    n: usize,
    tally: Tally,
    success_rate: f64,
    benign_pass_rate: f64,
    detection_rate: f64,
}

fn defend(
    h: &Harness,
    plan: &ExperimentPlan,
    out: &Path,
    strategy: u8,
    k: usize,
    n: usize,
    attack: Option<&str>,
) -> Result<()> {
    let strategy = Strategy::from_number(strategy)?;
    let p = h.plan();
    let cfg = p.defense_config(strategy, k, n);
    cfg.validate()?;
    let ds = h.load_dataset()?;
    let bank = match strategy {
        Strategy::RandomMasking => None,
        _ => Some(h.load_bank()?),
    };
    let recognizer = Recognizer::from_records(h.gabor()?, ds.gallery(), p.match_threshold)?;

    let attack = attack.map(str::to_string).or_else(|| plan.attacks.first().map(|a| a.kind.name().to_string()));
    let mut inputs = Vec::new();
    let mut corpus = String::from("none");
    match attack.as_deref() {
        None | Some("none") => {
            inputs.extend(ds.probes().map(|r| LabeledInput {
                record: r.clone(),
                truth: Truth::Benign,
            }));
        }
        Some(kind) => {
            let a = &select_attacks(plan, Some(kind))?[0];
            let set = h.load_attack(a, &ds)?;
            corpus = set.hash.clone();
            for pair in set.pairs.iter().filter(|x| x.success) {
                inputs.push(LabeledInput {
                    record: pair.benign.clone(),
                    truth: Truth::Benign,
                });
                inputs.push(LabeledInput {
                    record: pair.adversarial.clone(),
                    truth: Truth::Adversarial,
                });
            }
        }
    }
    let results = defend_batch(&inputs, &recognizer, bank.as_ref(), &cfg)?;
    let tally = Tally::from_results(inputs.iter().map(|i| i.truth).zip(&results));
    let dir = out
        .join("defend")
        .join(config_hash(&(&cfg, &corpus, h.dataset_hash()?))?);
    write_detection_log(&dir.join("detections.json"), &detection_log(&inputs, &results, &cfg)?)?;
    let summary = DefendSummary {
        strategy: strategy.number(),
        attack: attack.unwrap_or_else(|| "none".into()),
        k,
        n,
        tally,
        success_rate: tally.success_rate(),
        benign_pass_rate: tally.benign_pass_rate(),
        detection_rate: tally.detection_rate(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    log::info!(
        "strategy {}: success {:.2}%, benign pass {:.2}%, detection {:.2}% over {} inputs",
        summary.strategy,
        summary.success_rate,
        summary.benign_pass_rate,
        summary.detection_rate,
        tally.total()
    );
    println!("{}", dir.display());
    Ok(())
}

fn gradcheck_net(net: &str, tolerance: f64, seed: u64) -> std::result::Result<(), Failure> {
    let arch = match net {
        "denoiser-small" => denoiser_architecture((8, 16), 0.125),
        _ => surrogate_architecture((32, 32), 1.0 / 64.0, 2),
    };
    let model = NetworkModel::new(arch, seed)?;
    let rep = gradcheck(&model, 2, tolerance, seed)?;
    println!("{}", serde_json::to_string(&rep).map_err(Error::from)?);
    if rep.passed {
        Ok(())
    } else {
        Err(CheckFailed(format!(
            "gradcheck {net}: max relative error {:e} in {} exceeds {tolerance:e}",
            rep.max_rel_error, rep.worst_tensor
        ))
        .into())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
