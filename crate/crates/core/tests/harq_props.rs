use proptest::prelude::*;

use spiking_harq::harq::{bandwidth_of, run_session, Decision, HarqConfig, ScriptedLink};

fn config(theta: f64) -> HarqConfig {
    HarqConfig {
        t0: 4,
        t_max: 8,
        theta,
        step_bits: 512,
        prior_bits: 32,
    }
}

fn link(scores: Vec<f64>) -> ScriptedLink {
    ScriptedLink {
        prior_bits: 32,
        step_bits: 512,
        scores,
    }
}

#[test]
fn forced_policies_give_full_scale_bit_counts() {
    let mut totals = Vec::new();
    for final_t in 4..=8 {
        // Scores clear the threshold exactly at `final_t`.
        let scores: Vec<f64> = (1..=8).map(|t| if t >= final_t { 1.0 } else { -1.0 }).collect();
        let s = run_session(&mut link(scores), &config(0.0)).unwrap();
        assert_eq!(s.final_t, final_t);
        assert_eq!(s.total_bits, bandwidth_of(&s));
        totals.push(s.total_bits);
    }
    assert_eq!(totals, vec![2080, 2592, 3104, 3616, 4128]);

    let ack = run_session(&mut link(vec![0.0; 8]), &config(-1.0)).unwrap();
    assert_eq!((ack.final_t, ack.total_bits), (4, 2080));
    let nack = run_session(&mut link(vec![0.99; 8]), &config(1.0)).unwrap();
    assert_eq!((nack.final_t, nack.total_bits), (8, 4128));
    assert_eq!(nack.rounds.last().unwrap().decision, Decision::MaxSteps);
}

#[test]
fn score_equal_to_threshold_is_a_nack() {
    let s = run_session(&mut link(vec![0.5; 8]), &config(0.5)).unwrap();
    assert_eq!(s.final_t, 8);
}

#[test]
fn transcript_lists_every_round() {
    let s = run_session(&mut link(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.9, 0.9, 0.9]), &config(0.6)).unwrap();
    let log = s.to_log();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "step\tbits\tscore\tdecision\tdigest");
    assert_eq!(lines.len(), 1 + 3);
    assert!(lines[1].starts_with("4\t2080\t0.400000000\tNACK"));
    assert!(lines[3].starts_with("6\t512\t0.900000000\tACK"));
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        HarqConfig { t0: 0, ..config(0.0) },
        HarqConfig { t0: 8, ..config(0.0) },
        HarqConfig { theta: 1.5, ..config(0.0) },
    ] {
        assert!(matches!(run_session(&mut link(vec![0.0; 8]), &cfg), Err(spiking_harq::Error::Config(_))));
    }
    let mut short = link(vec![0.0; 8]);
    short.step_bits = 100;
    assert!(run_session(&mut short, &config(0.0)).is_err());
}

proptest! {
    #[test]
    fn higher_threshold_never_stops_earlier(
        scores in prop::collection::vec(-1.0f64..=1.0, 8),
        a in -1.0f64..=1.0,
        b in -1.0f64..=1.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let s_lo = run_session(&mut link(scores.clone()), &config(lo)).unwrap();
        let s_hi = run_session(&mut link(scores), &config(hi)).unwrap();
        prop_assert!(s_lo.final_t <= s_hi.final_t);
        prop_assert!(s_lo.total_bits <= s_hi.total_bits);
        prop_assert!((4..=8).contains(&s_hi.final_t));
        prop_assert_eq!(s_hi.total_bits, 32 + 512 * s_hi.final_t);
    }
}
