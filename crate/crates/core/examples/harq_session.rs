//! HARQ sessions driven by scripted similarity scores: the receiver ACKs once
//! the score clears the threshold, otherwise asks for one more time step until
//! the maximum is reached. Uses the full-scale payload sizes (32-bit prior,
//! 512 bits per step, t0 = 4, T = 8).

use spiking_harq::harq::{bandwidth_of, run_session, HarqConfig, ScriptedLink};

fn main() -> spiking_harq::Result<()> {
    let scores = vec![0.2, 0.4, 0.5, 0.61, 0.63, 0.64, 0.66, 0.7];
    for theta in [-1.0, 0.6, 0.635, 0.65, 1.0] {
        let cfg = HarqConfig {
            t0: 4,
            t_max: 8,
            theta,
            step_bits: 512,
            prior_bits: 32,
        };
        let mut link = ScriptedLink {
            prior_bits: 32,
            step_bits: 512,
            scores: scores.clone(),
        };
        let session = run_session(&mut link, &cfg)?;
        println!(
            "theta {theta:>6}: stopped at t = {}, {} bits on the forward link",
            session.final_t,
            bandwidth_of(&session)
        );
        if theta == 0.65 {
            print!("{}", session.to_log());
        }
    }
    Ok(())
}
