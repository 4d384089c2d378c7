use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use coms2t::data::{save_dataset, synth_generate, SynthConfig};
use coms2t::experiment::{
    emit_plots, evaluate, load_trained, prepare, pretrained_bank, run_dir, run_variants, save_trained, single_variant_report,
    temporal_shift_synth, train_variant, warm_up, write_run, ExperimentConfig, ExperimentReport, Variant,
};
use coms2t::theory::{theory_check, TheoryCheckConfig};
use coms2t::{Error, Result};

#[derive(Parser)]
#[command(name = "coms2t", version, about = "Complementary spatiotemporal learning: train, adapt, ablate and check")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration; the desk-scale preset is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving every artifact and the `report.json` index.
    #[arg(long, default_value = "coms2t-out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset bundle (config: synthetic generator JSON).
    Synth(Common),
    /// Warm up, disentangle, pre-train prompts and fine-tune one variant.
    Train(Common),
    /// Test-time adapt a trained run and evaluate it on the test split.
    Adapt(Common),
    /// Run all five ablation variants over every seed.
    Ablate(Common),
    /// Closed-form and Monte-Carlo checks of the error-amplification theory.
    TheoryCheck(Common),
    /// Print the summary of an existing `report.json`.
    Report(Common),
    /// Emit learning-curve, ledger and prompt plots for an existing report.
    Plot(Common),
}

/// `report.json` of the commands that do not produce an experiment report.
#[derive(Serialize)]
struct Index<T: Serialize> {
    command: &'static str,
    artifacts: Vec<PathBuf>,
    summary: T,
}

fn write_index<T: Serialize>(out: &Path, command: &'static str, artifacts: Vec<PathBuf>, summary: T) -> Result<()> {
    let index = Index { command, artifacts, summary };
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Load { path: path.to_path_buf(), reason: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn experiment_config(args: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::desk_scale(),
    };
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn print_report(report: &ExperimentReport) {
    println!("scenario {:?}: {} train / {} val / {} test windows", report.split.scenario, report.split.train_windows, report.split.val_windows, report.split.test_windows);
    println!("{:<11} {:>10} {:>10} {:>10} {:>8}", "variant", "test MAE", "± std", "val MAE", "seeds");
    for v in &report.variants {
        println!("{:<11} {:>10.4} {:>10.4} {:>10.4} {:>8}", v.variant.as_str(), v.test_mae_mean, v.test_mae_std, v.val_mae_mean, v.seeds.len());
    }
}

fn synth(args: &Common) -> Result<()> {
    let mut cfg: SynthConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => temporal_shift_synth(8, 14, 0),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let ds = synth_generate(&cfg)?;
    let dir = args.out_dir.join("dataset");
    save_dataset(&ds, &dir)?;
    write_index(&args.out_dir, "synth", vec![dir.clone()], ds.manifest())?;
    println!("wrote {} nodes × {} steps to {}", ds.n_nodes(), ds.n_steps(), dir.display());
    Ok(())
}

fn train(args: &Common) -> Result<()> {
    let cfg = experiment_config(args)?;
    let prep = prepare(&cfg)?;
    let mut artifacts = Vec::new();
    let mut summary = Vec::new();
    for &seed in &cfg.seeds {
        let warm = warm_up(&prep, seed)?;
        let pretrained = if cfg.variant.pretrains() { Some(pretrained_bank(&prep, seed)?) } else { None };
        let trained = train_variant(&prep, &warm, pretrained.as_ref(), cfg.variant)?;
        let dir = run_dir(&args.out_dir, cfg.variant, seed);
        save_trained(&trained, &dir)?;
        println!("{} seed {seed}: val MAE {:.4} after {} warm-up epochs", cfg.variant, trained.val_mae, trained.warmup_epochs);
        summary.push((seed, trained.val_mae));
        artifacts.push(dir);
    }
    write_index(&args.out_dir, "train", artifacts, summary)
}

fn adapt(args: &Common) -> Result<()> {
    let cfg = experiment_config(args)?;
    let prep = prepare(&cfg)?;
    let mut artifacts = Vec::new();
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let dir = run_dir(&args.out_dir, cfg.variant, seed);
        let trained = load_trained(&prep, &dir)?;
        let (mut report, trained) = evaluate(&prep, trained)?;
        write_run(&args.out_dir, &mut report, &trained, &mut artifacts)?;
        seeds.push(report);
    }
    let report = single_variant_report(&prep, cfg.variant, seeds, artifacts);
    report.write_json(args.out_dir.join("report.json"))?;
    print_report(&report);
    Ok(())
}

fn ablate(args: &Common) -> Result<()> {
    let cfg = experiment_config(args)?;
    let report = run_variants(&cfg, &Variant::ALL, Some(&args.out_dir))?;
    print_report(&report);
    Ok(())
}

fn check_theory(args: &Common) -> Result<()> {
    let mut cfg: TheoryCheckConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => TheoryCheckConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let report = theory_check(&cfg)?;
    let path = args.out_dir.join("theory.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    write_index(&args.out_dir, "theory-check", vec![path], &report.checks)?;
    for c in &report.checks {
        println!("{} {:<40} {:.6e} in [{:.6e}, {:.6e}]", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.lower, c.upper);
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Divergence("theory checks out of tolerance".into()))
    }
}

fn report(args: &Common) -> Result<()> {
    let report = ExperimentReport::read_json(args.out_dir.join("report.json"))?;
    print_report(&report);
    Ok(())
}

fn plot(args: &Common) -> Result<()> {
    let path = args.out_dir.join("report.json");
    let mut report = ExperimentReport::read_json(&path)?;
    let files = emit_plots(&report, &args.out_dir)?;
    for p in files.pngs.iter().chain(&files.csvs) {
        println!("{}", p.display());
        if !report.artifacts.contains(p) {
            report.artifacts.push(p.clone());
        }
    }
    report.write_json(&path)
}

fn run(cli: &Cli) -> Result<()> {
    let args = match &cli.command {
        Command::Synth(a)
        | Command::Train(a)
        | Command::Adapt(a)
        | Command::Ablate(a)
        | Command::TheoryCheck(a)
        | Command::Report(a)
        | Command::Plot(a) => a,
    };
    std::fs::create_dir_all(&args.out_dir)?;
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Adapt(a) => adapt(a),
        Command::Ablate(a) => ablate(a),
        Command::TheoryCheck(a) => check_theory(a),
        Command::Report(a) => report(a),
        Command::Plot(a) => plot(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
