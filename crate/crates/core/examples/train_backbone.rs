//! Trains the toy split classifier on the synthetic dataset and reports the
//! clean held-out accuracy of `f_T(f_E(x))`.
//!
//! ```bash
//! cargo run --release --example train_backbone
//! ```

use spiking_harq::backbone::{train_backbone, BackboneConfig};
use spiking_harq::data::{generate, DataConfig};

fn main() -> spiking_harq::Result<()> {
    let data_cfg = DataConfig::default();
    let (train, test) = generate(&data_cfg)?;
    let cfg = BackboneConfig::default();
    let start = std::time::Instant::now();
    let (model, log) = train_backbone(&train, &cfg)?;
    for e in &log {
        println!("epoch {:>2}  loss {:.4}", e.epoch, e.loss);
    }
    println!(
        "test accuracy {:.4}  train accuracy {:.4}  ({:.1?})",
        model.accuracy(&test)?,
        model.accuracy(&train)?,
        start.elapsed()
    );
    Ok(())
}
