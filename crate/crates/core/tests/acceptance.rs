//! End-to-end acceptance run: one PASS/FAIL line per criterion. Trains the
//! full default pipeline twice, so expect several minutes per run. Built
//! without the test harness so the lines always show.

mod common;

use std::fs;
use std::path::Path;

use spiking_harq::bench::report::{build_report, write_report, Report, REPORT_FILES};
use spiking_harq::bench::{ExperimentConfig, Workspace};
use spiking_harq::channel::{bsc_transmit, empirical_ber, BitStream, ChannelModel};
use spiking_harq::codec::{entropy_penalty, entropy_regularizer};
use spiking_harq::harq::{run_session, HarqConfig, ScriptedLink};
use spiking_harq::neuron::{NeuronParams, ResetMode, SpikeTensor};

use common::{neuron_oracle_mismatches, random_traces, reduced_codec_gradcheck};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn bandwidth_arithmetic() -> Outcome {
    let cfg = |theta| HarqConfig {
        t0: 4,
        t_max: 8,
        theta,
        step_bits: 512,
        prior_bits: 32,
    };
    let mut totals = Vec::new();
    for final_t in 4..=8 {
        let scores = (1..=8).map(|t| if t >= final_t { 1.0 } else { -1.0 }).collect();
        let mut link = ScriptedLink {
            prior_bits: 32,
            step_bits: 512,
            scores,
        };
        totals.push(run_session(&mut link, &cfg(0.0)).unwrap().total_bits);
    }
    let forced = |theta| {
        let mut link = ScriptedLink {
            prior_bits: 32,
            step_bits: 512,
            scores: vec![0.5; 8],
        };
        run_session(&mut link, &cfg(theta)).unwrap().total_bits
    };
    let ends = (forced(-1.0), forced(1.0));
    outcome(
        totals == [2080, 2592, 3104, 3616, 4128] && ends == (2080, 4128),
        format!("totals {totals:?}, forced ack/nack {ends:?}"),
    )
}

fn neuron_oracle() -> Outcome {
    let mut mismatches = 0;
    for (seed, reset) in [(11, ResetMode::Soft), (12, ResetMode::Hard)] {
        let params = NeuronParams {
            reset,
            ..NeuronParams::default()
        };
        mismatches += neuron_oracle_mismatches(&random_traces(seed, 1000, 16), params);
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches over 1000 traces x 16 steps per mode"))
}

fn gradient_fidelity() -> Outcome {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for t in [2, 3] {
        let (n, report) = reduced_codec_gradcheck(t);
        params = n;
        ok &= n <= 1000 && report.checked == n && report.passed() && report.tolerance <= 1e-4;
        worst = worst.max(report.max_rel_error);
    }
    outcome(ok, format!("{params} parameters, max relative error {worst:.2e}"))
}

fn bsc_statistics() -> Outcome {
    let n = 1_000_000;
    let mut rng = ChannelModel::noiseless().substream(7, 7);
    let sent = BitStream::from_bits((0..n).map(|_| rand::Rng::random::<bool>(&mut rng)));
    let mut ok = true;
    let mut rates = Vec::new();
    for p in [0.05, 0.1, 0.3] {
        let ch = ChannelModel::new(p, 2024).unwrap();
        let rate = empirical_ber(&sent, &bsc_transmit(&sent, &ch, &mut ch.substream(0, 1))).unwrap();
        ok &= (rate - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        rates.push(format!("{p}: {rate:.5}"));
    }
    outcome(ok, rates.join(", "))
}

fn entropy_analytics() -> Outcome {
    let half = SpikeTensor::new(vec![8], vec![1, 0, 1, 0, 1, 0, 1, 0]).unwrap();
    let ones = SpikeTensor::new(vec![8], vec![1; 8]).unwrap();
    let zeros = SpikeTensor::zeros(&[8]);
    let values = [
        entropy_regularizer(&[half.clone(), half]),
        entropy_regularizer(&[ones]),
        entropy_regularizer(&[zeros]),
        entropy_penalty(&[1.0, 0.5]),
    ];
    outcome(values == [0.0, 1.0, 1.0, 0.0625], format!("{values:?}"))
}

fn acc_at(report: &Report, ber: f64, bandwidth: usize) -> f64 {
    report
        .surface
        .iter()
        .find(|p| p.ber == ber && p.bandwidth == bandwidth)
        .map(|p| p.acc)
        .unwrap_or(f64::NAN)
}

fn multi_rate_monotonicity(cfg: &ExperimentConfig, report: &Report) -> Outcome {
    let mut bandwidths: Vec<usize> = report.surface.iter().map(|p| p.bandwidth).collect();
    bandwidths.sort_unstable();
    bandwidths.dedup();
    let (Some(&least), Some(&most)) = (bandwidths.first(), bandwidths.last()) else {
        return outcome(false, "empty surface");
    };
    let (low, high) = (acc_at(report, 0.1, least), acc_at(report, 0.1, most));
    let clean_wins = bandwidths.iter().all(|&b| acc_at(report, 0.0, b) >= acc_at(report, 0.3, b));
    outcome(
        high >= low && clean_wins && bandwidths.len() == cfg.codec.t_max - cfg.codec.t0 + 1 && cfg.sweep.seeds >= 5,
        format!(
            "p=0.1: t={} {low:.4}, t={} {high:.4}; p=0 above p=0.3 at every t: {clean_wins}; {} seeds",
            cfg.codec.t0, cfg.codec.t_max, cfg.sweep.seeds
        ),
    )
}

fn similarity_correlation(report: &Report) -> Outcome {
    let ok = !report.correlations.is_empty() && report.correlations.iter().all(|&(_, r)| r >= 0.9);
    let rows: Vec<String> = report.correlations.iter().map(|(p, r)| format!("{p}: {r:.3}")).collect();
    outcome(ok, rows.join(", "))
}

fn gap_table(report: &Report) -> Outcome {
    let worst = report.gaps.iter().map(|g| g.gap.abs()).fold(0.0, f64::max);
    let thetas = report.thetas.len();
    outcome(
        thetas == 3 && report.gaps.len() == 12 && worst <= 0.02,
        format!("{thetas} thresholds, largest gap {:.2} points", 100.0 * worst),
    )
}

fn cliff_effect(cfg: &ExperimentConfig, report: &Report) -> Outcome {
    let mut base = report.baseline.clone();
    base.sort_by(|a, b| a.ber.total_cmp(&b.ber));
    let clean = base[0].acc;
    let knee = base
        .iter()
        .take_while(|b| clean - b.acc <= 0.01)
        .last()
        .map_or(0.0, |b| b.ber);
    let at_worst = base.iter().find(|b| b.ber == 0.3).map_or(f64::NAN, |b| b.acc);
    let baseline_ok = base[0].ber == 0.0 && knee > 0.0 && clean - at_worst >= 0.2;

    let theta = report.thetas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let harq = |ber: f64| {
        report
            .harq
            .iter()
            .find(|h| h.theta == theta && h.ber == ber)
            .map_or(f64::NAN, |h| h.acc)
    };
    let drop = harq(0.0) - harq(0.3);
    let others: Vec<String> = report
        .thetas
        .iter()
        .map(|&th| {
            let a = |ber: f64| report.harq.iter().find(|h| h.theta == th && h.ber == ber).map_or(f64::NAN, |h| h.acc);
            format!("{th:.4}: {:.1}", 100.0 * (a(0.0) - a(0.3)))
        })
        .collect();
    outcome(
        baseline_ok && drop < 0.10 && cfg.sweep.seeds >= 5,
        format!(
            "baseline {clean:.4} -> {at_worst:.4} (knee p={knee}); HARQ drop at theta {theta:.4}: {:.1} points; all thresholds [{}]",
            100.0 * drop,
            others.join(", ")
        ),
    )
}

fn run_pipeline(dir: &Path) -> Report {
    let ws = Workspace::new(ExperimentConfig::default(), dir).unwrap();
    ws.resume().unwrap();
    let (report, _) = build_report(&ws).unwrap();
    write_report(&report, dir).unwrap();
    report
}

fn replay(a: &Path, b: &Path) -> Outcome {
    let differing: Vec<&str> = REPORT_FILES
        .iter()
        .copied()
        .filter(|f| fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok() || fs::read(a.join(f)).is_err())
        .collect();
    outcome(differing.is_empty(), format!("{} files compared, differing {differing:?}", REPORT_FILES.len()))
}

fn main() {
    let cfg = ExperimentConfig::default();
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let (report, _) = std::thread::scope(|s| {
        let a = s.spawn(|| run_pipeline(first.path()));
        let b = s.spawn(|| run_pipeline(second.path()));
        (a.join().unwrap(), b.join().unwrap())
    });

    let results = [
        ("bandwidth arithmetic", bandwidth_arithmetic()),
        ("neuron oracle equivalence", neuron_oracle()),
        ("gradient fidelity", gradient_fidelity()),
        ("BSC statistics", bsc_statistics()),
        ("entropy regularizer analytics", entropy_analytics()),
        ("multi-rate monotonicity", multi_rate_monotonicity(&cfg, &report)),
        ("similarity-accuracy correlation", similarity_correlation(&report)),
        ("HARQ gap table", gap_table(&report)),
        ("cliff effect", cliff_effect(&cfg, &report)),
        ("replay determinism", replay(first.path(), second.path())),
    ];
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {:>2} {name}: {} ({})", i + 1, if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|(_, o)| !o.passed).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
