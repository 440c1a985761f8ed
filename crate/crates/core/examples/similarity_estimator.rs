//! Trains (or reuses) the pipeline and checks how well the similarity
//! estimator tracks the true task-output cosine on held-out data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spiking_harq::bench::{pearson, ExperimentConfig, Workspace};
use spiking_harq::simnet::simnet_holdout;

fn main() -> spiking_harq::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(path) if path != "-" => ExperimentConfig::load(path.as_ref())?,
        _ => ExperimentConfig::default(),
    };
    let ws = Workspace::new(cfg, args.next().unwrap_or_else(|| "runs/example".into()))?;
    let models = ws.resume()?;
    let (train, test) = ws.datasets()?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (fit, fit_truth) = simnet_holdout(&models.backbone, &models.codec, &models.simnet, &train, 50, &mut rng)?;
    println!("training-set pearson {:.4} over {} samples", pearson(&fit, &fit_truth)?, fit.len());
    let (est, truth) = simnet_holdout(&models.backbone, &models.codec, &models.simnet, &test, 50, &mut rng)?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let mse = est.iter().zip(&truth).map(|(e, t)| (e - t) * (e - t)).sum::<f64>() / est.len() as f64;
    let var = truth.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / truth.len() as f64;
    println!("held-out samples {}", est.len());
    println!("true similarity mean {mean:.4}  variance {var:.5}");
    println!("estimator mse {mse:.5}  (predicting the mean: {var:.5})");
    println!("pearson(estimate, true) {:.4}", pearson(&est, &truth)?);
    Ok(())
}
