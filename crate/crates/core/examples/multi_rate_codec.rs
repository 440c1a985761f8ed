//! Trains a backbone and a multi-rate spiking codec, then prints held-out
//! accuracy for every number of time steps and several channel BERs. One
//! model serves every bandwidth.

use std::time::Instant;

use spiking_harq::backbone::{train_backbone, BackboneConfig};
use spiking_harq::channel::substream;
use spiking_harq::codec::{evaluate_codec, train_codec, Codec, CodecConfig, CodecStage};
use spiking_harq::data::{generate, DataConfig};

fn main() -> spiking_harq::Result<()> {
    let start = Instant::now();
    let (train, test) = generate(&DataConfig::default())?;
    let (mut backbone, _) = train_backbone(&train, &BackboneConfig::default())?;
    println!("backbone accuracy {:.4}", backbone.accuracy(&test)?);

    let cfg = CodecConfig::default();
    let mut codec = Codec::init(&cfg, backbone.feature_shape())?;
    for log in train_codec(&mut backbone, &mut codec, &train, CodecStage::Train)? {
        println!("codec epoch {:>2}  loss {:.4}", log.epoch, log.loss);
    }
    for log in train_codec(&mut backbone, &mut codec, &train, CodecStage::Finetune)? {
        println!("finetune epoch {:>2}  loss {:.4}", log.epoch, log.loss);
    }
    println!("{} bits per step, trained in {:.1?}", codec.step_bits(), start.elapsed());

    let eval = test.take(1000)?;
    print!("ber \\ t ");
    for t in cfg.t0..=cfg.t_max {
        print!("{t:>7}");
    }
    println!();
    for (i, ber) in [0.0, 0.05, 0.1, 0.2, 0.3].into_iter().enumerate() {
        print!("{ber:<8}");
        for t in cfg.t0..=cfg.t_max {
            let mut rng = substream(99, i as u64, t as u64);
            let r = evaluate_codec(&backbone, &codec, &eval, t, ber, &mut rng)?;
            print!("{:>7.3}", r.accuracy);
        }
        println!();
    }
    let mut rng = substream(99, 0, 0);
    let r = evaluate_codec(&backbone, &codec, &eval, cfg.t_max, 0.0, &mut rng)?;
    println!("spike rate at full bandwidth {:.3}", r.spike_rate);
    Ok(())
}
