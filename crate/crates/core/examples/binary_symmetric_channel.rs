//! Sends a long bit stream over the binary symmetric channel and compares the
//! measured flip rate with the binomial 3σ band. Also shows that per-session
//! substreams are reproducible.

use rand::Rng;

use spiking_harq::channel::{bsc_transmit, empirical_ber, BitStream, ChannelModel};
use spiking_harq::neuron::SpikeTensor;

fn main() -> spiking_harq::Result<()> {
    let n = 1_000_000;
    let mut src = ChannelModel::new(0.0, 1)?.substream(0, 0);
    let sent = BitStream::from_bits((0..n).map(|_| src.random::<bool>()));
    for ber in [0.01, 0.05, 0.1, 0.3] {
        let channel = ChannelModel::new(ber, 42)?;
        let received = bsc_transmit(&sent, &channel, &mut channel.substream(0, 1));
        let measured = empirical_ber(&sent, &received)?;
        let band = 3.0 * (ber * (1.0 - ber) / n as f64).sqrt();
        println!("p = {ber:<5} measured {measured:.5}  3σ band ±{band:.5}  inside: {}", (measured - ber).abs() <= band);
    }

    let channel = ChannelModel::new(0.2, 7)?;
    let spikes = SpikeTensor::zeros(&[2, 4, 4]);
    let a = bsc_transmit(&spikes, &channel, &mut channel.substream(3, 1));
    let b = bsc_transmit(&spikes, &channel, &mut channel.substream(3, 1));
    let c = bsc_transmit(&spikes, &channel, &mut channel.substream(3, 2));
    println!("session 3 round 1 replayed identically: {}", a == b);
    println!("round 2 differs from round 1: {}", a != c);
    Ok(())
}
