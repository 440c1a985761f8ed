//! Steps IF and IHF neurons through a constant input and prints spikes and
//! membrane potentials under both reset rules.

use spiking_harq::neuron::{NeuronKind, NeuronParams, NeuronState, ResetMode};
use spiking_harq::tensor::Tensor;

fn main() -> spiking_harq::Result<()> {
    let input = Tensor::new(vec![3], vec![0.3, 0.6, 1.5])?;
    for reset in [ResetMode::Soft, ResetMode::Hard] {
        let params = NeuronParams {
            reset,
            ..NeuronParams::default()
        };
        println!("{reset:?} reset, inputs {:?}", input.values());
        let mut layer = NeuronState::new(&[3], params, NeuronKind::If)?;
        for t in 1..=6 {
            let s = layer.if_step(&input)?;
            println!("  IF  t={t} spikes {:?} membrane {:.2?}", s.bits(), layer.membrane.values());
        }
        let mut layer = NeuronState::new(&[3], params, NeuronKind::Ihf)?;
        let mut spikes = 0;
        for _ in 0..6 {
            let (s, _) = layer.ihf_step(&input)?;
            spikes += s.bits().iter().map(|&b| b as usize).sum::<usize>();
        }
        println!("  IHF after 6 steps: {spikes} spikes, membrane {:.2?}", layer.membrane.values());
    }
    Ok(())
}
