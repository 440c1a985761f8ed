//! Separate source/channel coding against semantic HARQ as the BER grows.
//! The FEC + CRC baseline holds its noiseless accuracy until errors exceed
//! what the code corrects, then collapses; the spiking codec degrades
//! gradually.
//!
//! ```text
//! cargo run --release --example cliff_effect -- [config.toml] [run-dir]
//! ```

use spiking_harq::bench::report::thetas;
use spiking_harq::bench::sweep::{baseline_sweep, eval_sweep};
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
    let grid = &ws.cfg.sweep;

    let baseline = baseline_sweep(&models.backbone, &models.baseline_codec, &test, grid, &ws.cfg.baseline)?;
    println!("baseline ({:?}, CRC-16)", ws.cfg.baseline.fec);
    println!("  ber     mean bits  accuracy  crc ok");
    for p in &baseline {
        println!("  {:<6}  {:>9.1}  {:.4}    {:.3}", p.ber, p.bandwidth, p.acc, p.success);
    }

    let traces = eval_sweep(models.models(), &test, grid)?;
    for theta in thetas(&ws, &traces)? {
        println!("semantic HARQ, theta {theta:.4}");
        println!("  ber     mean bits  accuracy  mean steps");
        for &ber in &grid.bers {
            let h = traces.harq(theta, ber)?;
            println!("  {:<6}  {:>9.1}  {:.4}    {:.2}", ber, h.bandwidth, h.acc, h.mean_t);
        }
    }
    Ok(())
}
