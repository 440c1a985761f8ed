//! The separate-coding baseline's bit pipeline on its own: CRC-16 framing,
//! systematic FEC, the incremental-parity schedule, and the residual error
//! rate of each code over the BSC. Frame success drops off sharply once the
//! BER passes what the code can correct.

use rand::Rng;

use spiking_harq::baseline::{crc_attach, crc_check, crc16, fec_decode, fec_encode, BaselineConfig, FecKind};
use spiking_harq::channel::{bsc_transmit, empirical_ber, BitStream, ChannelModel};

fn main() -> spiking_harq::Result<()> {
    let ascii = BitStream::from_bits(b"123456789".iter().flat_map(|&c| (0..8).rev().map(move |i| c >> i & 1 == 1)));
    println!("crc16(\"123456789\") = {:#06x}", crc16(&ascii));

    let mut rng = ChannelModel::new(0.0, 3)?.substream(0, 0);
    let payload = BitStream::from_bits((0..192).map(|_| rng.random::<bool>()));
    let frame = crc_attach(&payload);
    for fec in [FecKind::Repetition3, FecKind::Hamming74] {
        let cfg = BaselineConfig {
            fec,
            ..BaselineConfig::default()
        };
        println!("\n{fec:?}: rate {:.3}, cumulative bits per round {:?}", fec.rate(), cfg.schedule(frame.len()));
        println!("  ber    residual  frame ok");
        for ber in [0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2] {
            let channel = ChannelModel::new(ber, 11)?;
            let (mut ok, mut residual) = (0, 0.0);
            let trials = 400;
            for s in 0..trials {
                let codeword = fec_encode(&frame, fec);
                let received = bsc_transmit(&codeword, &channel, &mut channel.substream(s, 1));
                let decoded = fec_decode(&received, frame.len(), fec)?;
                residual += empirical_ber(&frame, &decoded)?;
                ok += usize::from(crc_check(&decoded) && decoded == frame);
            }
            println!("  {ber:<6} {:.5}   {:.3}", residual / trials as f64, ok as f64 / trials as f64);
        }
    }
    Ok(())
}
