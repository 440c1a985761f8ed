//! Trains every stage (reusing current checkpoints), sweeps BER × bandwidth,
//! and writes the CSV reports.
//!
//! ```text
//! cargo run --release --example full_pipeline -- [config.toml] [out-dir]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use spiking_harq::bench::report::{build_report, write_report};
use spiking_harq::bench::{ExperimentConfig, Workspace};

fn main() -> spiking_harq::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(path) if path != "-" => ExperimentConfig::load(&PathBuf::from(path))?,
        _ => ExperimentConfig::default(),
    };
    let dir = args.next().unwrap_or_else(|| "runs/example".into());
    let ws = Workspace::new(cfg, dir)?;

    let start = Instant::now();
    let models = ws.resume()?;
    let (_, test) = ws.datasets()?;
    println!("trained in {:.1?}", start.elapsed());
    println!("backbone accuracy {:.4}", models.backbone.accuracy(&test)?);

    let (report, _) = build_report(&ws)?;
    write_report(&report, &ws.dir)?;
    println!("swept in {:.1?}", start.elapsed());

    println!("\nsurface (acc / mean estimated similarity)");
    for p in &report.surface {
        println!("  ber {:.2}  bits {:>4}  acc {:.4}  sim {:.4}", p.ber, p.bandwidth, p.acc, p.sim);
    }
    println!("\nthetas {:?}", report.thetas);
    for g in &report.gaps {
        println!(
            "  theta {:.4}  ber {:.2}  bits {:>7.1}  harq {:.4}  surface {:.4}  gap {:.4}",
            g.theta, g.ber, g.bandwidth, g.harq_acc, g.surface_acc, g.gap
        );
    }
    println!("\ncorrelations {:?}", report.correlations);
    println!("\nbaseline");
    for b in &report.baseline {
        println!(
            "  ber {:.3}  bits {:>6.1}  acc {:.4}  crc ok {:.3}",
            b.ber, b.bandwidth, b.acc, b.success
        );
    }
    println!("\nwrote reports to {}", ws.dir.display());
    Ok(())
}
