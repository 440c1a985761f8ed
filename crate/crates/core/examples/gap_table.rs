//! Compares adaptive HARQ with the fixed-rate operating points: for each
//! threshold and BER, HARQ's mean bandwidth and accuracy against the
//! manual-rate accuracy surface interpolated at that same bandwidth.
//!
//! ```text
//! cargo run --release --example gap_table -- [config.toml] [run-dir]
//! ```

use spiking_harq::bench::report::thetas;
use spiking_harq::bench::sweep::{eval_sweep, gap_table};
use spiking_harq::bench::{ExperimentConfig, Workspace};

fn main() -> spiking_harq::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(path) if path != "-" => ExperimentConfig::load(path.as_ref())?,
        _ => ExperimentConfig::default(),
    };
    let ws = Workspace::new(cfg, args.next().unwrap_or_else(|| "runs/example".into()))?;
    let models = ws.resume()?;
    let (_, test) = ws.datasets()?;
    let traces = eval_sweep(models.models(), &test, &ws.cfg.sweep)?;
    let thetas = thetas(&ws, &traces)?;

    println!("bits per step {}, prior bits {}", traces.step_bits, traces.prior_bits);
    println!("theta    ber   mean bits  harq acc  surface acc  gap (points)");
    let mut worst: f64 = 0.0;
    for r in gap_table(&traces, &thetas, &ws.cfg.harq.bers)? {
        println!(
            "{:.4}   {:.2}  {:>9.1}  {:.4}    {:.4}       {:.2}",
            r.theta,
            r.ber,
            r.bandwidth,
            r.harq_acc,
            r.surface_acc,
            100.0 * r.gap
        );
        worst = worst.max(r.gap);
    }
    println!("largest gap {:.2} points", 100.0 * worst);
    Ok(())
}
