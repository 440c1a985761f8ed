//! `spikecomm`: command-line front end to the staged pipeline, sweeps and
//! reports. Exit codes: 0 success, 2 configuration error, 3 divergence,
//! 1 anything else.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spiking_harq::backbone::{EpochLog, Feature};
use spiking_harq::baseline::run_baseline_session;
use spiking_harq::bench::report::{
    baseline_csv, build_report, correlations_csv, gaps_csv, harq_csv, surface_csv, thetas, write_report,
};
use spiking_harq::bench::sweep::{baseline_sweep, correlations, eval_sweep, gap_table, harq_table};
use spiking_harq::bench::{ExperimentConfig, Workspace};
use spiking_harq::channel::ChannelModel;
use spiking_harq::data::Dataset;
use spiking_harq::harq::{run_session, Models, ModelLink};
use spiking_harq::{Error, Result};

#[derive(Parser)]
#[command(name = "spikecomm", version, about = "Spiking semantic communication with similarity-driven HARQ")]
struct Cli {
    /// TOML configuration; anything it leaves out takes the default.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Directory for checkpoints, reports and transcripts.
    #[arg(long, global = true, default_value = "runs/default")]
    dir: PathBuf,
    /// Override one key, e.g. `--set codec.t0=3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Skip the effective-configuration dump.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train and test splits as CSV.
    GenData,
    /// Train the split classifier.
    TrainBackbone,
    /// Train the multi-rate codec on the frozen backbone.
    TrainCodec,
    /// Jointly finetune backbone and codec.
    Finetune,
    /// Train the similarity estimator with everything else frozen.
    TrainSimnet,
    /// BER × bandwidth sweep: surface.csv, harq.csv, correlations.csv.
    Sweep,
    /// Run individual HARQ sessions and write their transcripts.
    Harq {
        /// Similarity threshold; defaults to the first configured one.
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        ber: f64,
        /// Number of sessions, on the first test samples.
        #[arg(long, default_value_t = 8)]
        sessions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Separate-coding baseline sweep: baseline.csv. Trains the fixed-rate
    /// codec first when its checkpoint is missing or stale.
    Baseline {
        /// Also write this many per-session transcripts at each BER.
        #[arg(long, default_value_t = 0)]
        transcripts: usize,
    },
    /// HARQ versus interpolated manual-rate accuracy: gaps.csv.
    Gaps,
    /// Every report file from existing checkpoints.
    Report,
    /// Run whichever training stages are missing or stale, then report.
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Divergence { .. } => 3,
                _ => 1,
            })
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = ExperimentConfig::load_with(cli.config.as_deref(), &cli.overrides)?;
    if !cli.quiet {
        eprintln!("# effective configuration\n{}", cfg.to_toml());
    }
    let ws = Workspace::new(cfg, &cli.dir)?;
    match &cli.command {
        Command::GenData => gen_data(&ws),
        Command::TrainBackbone => print_log("train-backbone", ws.train_backbone()?),
        Command::TrainCodec => print_log("train-codec", ws.train_codec()?),
        Command::Finetune => print_log("finetune", ws.finetune()?),
        Command::TrainSimnet => print_log("train-simnet", ws.train_simnet()?),
        Command::Sweep => sweep(&ws),
        Command::Harq {
            theta,
            ber,
            sessions,
            seed,
        } => harq(&ws, *theta, *ber, *sessions, *seed),
        Command::Baseline { transcripts } => baseline(&ws, *transcripts),
        Command::Gaps => gaps(&ws),
        Command::Report => report(&ws),
        Command::All => {
            ws.resume()?;
            report(&ws)
        }
    }
}

fn print_log(stage: &str, log: Vec<EpochLog>) -> Result<()> {
    for e in log {
        println!("{stage} epoch {:>3}  loss {:.6}", e.epoch, e.loss);
    }
    Ok(())
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(&path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn dataset_csv(data: &Dataset) -> String {
    let pixels = data.images.len() / data.len();
    let mut s = String::from("label");
    for i in 0..pixels {
        write!(s, ",x{i}").unwrap();
    }
    s.push('\n');
    for (label, row) in data.labels.iter().zip(data.images.values().chunks(pixels)) {
        write!(s, "{label}").unwrap();
        for v in row {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn gen_data(ws: &Workspace) -> Result<()> {
    let (train, test) = ws.datasets()?;
    write(ws.path("data/train.csv"), &dataset_csv(&train))?;
    write(ws.path("data/test.csv"), &dataset_csv(&test))
}

fn sweep(ws: &Workspace) -> Result<()> {
    let (backbone, codec, simnet) = ws.load_semantic()?;
    let models = Models {
        backbone: &backbone,
        codec: &codec,
        simnet: &simnet,
    };
    let (_, test) = ws.datasets()?;
    let traces = eval_sweep(models, &test, &ws.cfg.sweep)?;
    let thetas = thetas(ws, &traces)?;
    let surface = traces.surface();
    write(ws.path("surface.csv"), &surface_csv(&surface))?;
    write(ws.path("harq.csv"), &harq_csv(&harq_table(&traces, &thetas, &ws.cfg.sweep.bers)?))?;
    write(
        ws.path("correlations.csv"),
        &correlations_csv(&correlations(&surface, &ws.cfg.sweep.correlation_bers)?),
    )
}

fn gaps(ws: &Workspace) -> Result<()> {
    let (backbone, codec, simnet) = ws.load_semantic()?;
    let models = Models {
        backbone: &backbone,
        codec: &codec,
        simnet: &simnet,
    };
    let (_, test) = ws.datasets()?;
    let traces = eval_sweep(models, &test, &ws.cfg.sweep)?;
    let thetas = thetas(ws, &traces)?;
    let rows = gap_table(&traces, &thetas, &ws.cfg.harq.bers)?;
    for r in &rows {
        println!(
            "theta {:.4}  ber {:.2}  bits {:>7.1}  harq {:.4}  surface {:.4}  gap {:.4}",
            r.theta, r.ber, r.bandwidth, r.harq_acc, r.surface_acc, r.gap
        );
    }
    write(ws.path("gaps.csv"), &gaps_csv(&rows))
}

fn feature(backbone: &spiking_harq::backbone::Backbone, test: &Dataset, i: usize) -> Result<Feature> {
    backbone.extract_features(&test.sample(i)?.input)
}

fn harq(ws: &Workspace, theta: Option<f64>, ber: f64, sessions: usize, seed: u64) -> Result<()> {
    let theta = theta.or_else(|| ws.cfg.harq.thetas.first().copied()).ok_or_else(|| {
        Error::Config("no threshold: pass --theta or set harq.thetas (calibrated values are in gaps.csv)".into())
    })?;
    let (backbone, codec, simnet) = ws.load_semantic()?;
    let models = Models {
        backbone: &backbone,
        codec: &codec,
        simnet: &simnet,
    };
    let cfg = models.harq_config(theta);
    cfg.validate()?;
    let (_, test) = ws.datasets()?;
    if sessions > test.len() {
        return Err(Error::Config(format!("{sessions} sessions exceed the test split {}", test.len())));
    }
    let channel = ChannelModel::new(ber, seed)?;
    for i in 0..sessions {
        let mut link = ModelLink::new(models, feature(&backbone, &test, i)?, channel, i as u64)?;
        let s = run_session(&mut link, &cfg)?;
        let predicted = s.final_prediction.as_ref().map(|p| p.class());
        println!(
            "session {i}: final_t {} bits {} predicted {} label {}",
            s.final_t,
            s.total_bits,
            predicted.map_or("-".into(), |c| c.to_string()),
            test.labels[i]
        );
        write(ws.path(&format!("transcripts/harq-p{ber}-s{i}.tsv")), &s.to_log())?;
    }
    Ok(())
}

fn baseline(ws: &Workspace, transcripts: usize) -> Result<()> {
    let backbone = ws.load_finetuned()?.0;
    if !ws.is_current(spiking_harq::bench::pipeline::BASELINE) {
        print_log("train-baseline", ws.train_baseline_codec()?)?;
    }
    let codec = ws.load_baseline_codec(&backbone)?;
    let (_, test) = ws.datasets()?;
    let points = baseline_sweep(&backbone, &codec, &test, &ws.cfg.sweep, &ws.cfg.baseline)?;
    for p in &points {
        println!(
            "ber {:.3}  bits {:>7.1}  acc {:.4}  crc ok {:.3}",
            p.ber, p.bandwidth, p.acc, p.success
        );
    }
    let scheme = ws.cfg.baseline.scheme();
    for &ber in &ws.cfg.baseline.bers {
        let channel = ChannelModel::new(ber, ws.cfg.sweep.channel_seed)?;
        for i in 0..transcripts.min(test.len()) {
            let s = run_baseline_session(&feature(&backbone, &test, i)?, &backbone, &codec, &channel, i as u64, &scheme)?;
            write(ws.path(&format!("transcripts/baseline-p{ber}-s{i}.tsv")), &s.to_log())?;
        }
    }
    write(ws.path("baseline.csv"), &baseline_csv(&points))
}

fn report(ws: &Workspace) -> Result<()> {
    let (report, _) = build_report(ws)?;
    write_report(&report, &ws.dir)?;
    for f in spiking_harq::bench::report::REPORT_FILES {
        println!("wrote {}", Path::new(&ws.dir).join(f).display());
    }
    Ok(())
}
