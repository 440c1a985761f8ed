//! BER × bandwidth sweeps of the multi-rate codec, HARQ replays, threshold
//! calibration, gap analysis and the baseline cliff sweep.
//!
//! Cell `(seed s, ber p)` uses channel seed `channel_seed + s` and session id
//! = test-sample index, so every cell sees the same per-session substreams
//! and HARQ results at any threshold replay the surface's own realisations.

use std::thread;

use serde::Serialize;

use crate::backbone::{Backbone, Feature};
use crate::baseline::run_baseline_session;
use crate::channel::ChannelModel;
use crate::codec::Codec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harq::{batch_traces, Models, SessionTrace};

use super::config::{BaselineSettings, SweepGrid};
use super::stats::{interpolate_surface, pearson, quantile, SurfacePoint};

/// Environment variable that caps worker threads.
pub const THREADS_ENV: &str = "SPIKECOMM_THREADS";

const BATCH: usize = 250;

fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, usize::from))
}

/// Maps `f` over `items` on up to [`thread_count`] threads; output order
/// follows input order.
fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> Result<U> + Sync) -> Result<Vec<U>> {
    let n = thread_count().min(items.len()).max(1);
    if n == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(n);
    let f = &f;
    thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(move || c.iter().map(f).collect::<Result<Vec<U>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("sweep worker panicked")?);
        }
        Ok(out)
    })
}

/// Per-session traces of one `(seed, ber)` cell.
#[derive(Clone, Debug)]
pub struct CellTraces {
    pub seed: usize,
    pub ber: f64,
    pub labels: Vec<usize>,
    pub traces: Vec<SessionTrace>,
}

#[derive(Clone, Debug)]
pub struct SweepTraces {
    pub cells: Vec<CellTraces>,
    pub t0: usize,
    pub t_max: usize,
    pub prior_bits: usize,
    pub step_bits: usize,
}

/// Runs every `(seed, ber)` cell of `grid` on the first `grid.samples` test
/// samples, recording scores and predictions at every step.
pub fn eval_sweep(m: Models<'_>, test: &Dataset, grid: &SweepGrid) -> Result<SweepTraces> {
    let data = test.take(grid.samples)?;
    let features = m.backbone.extract_features_batch(&data.images)?;
    let cells: Vec<(usize, f64)> = (0..grid.seeds)
        .flat_map(|s| grid.bers.iter().map(move |&p| (s, p)))
        .collect();
    let out = par_map(&cells, |&(seed, ber)| {
        let channel = ChannelModel::new(ber, grid.channel_seed + seed as u64)?;
        let mut traces = Vec::with_capacity(data.len());
        for start in (0..data.len()).step_by(BATCH) {
            let end = (start + BATCH).min(data.len());
            let sessions: Vec<u64> = (start as u64..end as u64).collect();
            traces.extend(batch_traces(m, &features.slice_batch(start, end)?, &channel, &sessions)?);
        }
        Ok(CellTraces {
            seed,
            ber,
            labels: data.labels.clone(),
            traces,
        })
    })?;
    Ok(SweepTraces {
        cells: out,
        t0: m.codec.cfg.t0,
        t_max: m.codec.cfg.t_max,
        prior_bits: m.simnet.cfg.prior_bits,
        step_bits: m.codec.step_bits(),
    })
}

/// HARQ outcome at one `(theta, ber)` averaged over seeds and samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HarqPoint {
    pub theta: f64,
    pub ber: f64,
    pub bandwidth: f64,
    pub acc: f64,
    pub mean_t: f64,
    pub n: usize,
}

/// `|HARQ accuracy − interpolated surface accuracy|` at HARQ's mean bandwidth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GapRow {
    pub theta: f64,
    pub ber: f64,
    pub bandwidth: f64,
    pub harq_acc: f64,
    pub surface_acc: f64,
    pub gap: f64,
}

/// Mean true similarity of one grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SimilarityPoint {
    pub ber: f64,
    pub t: usize,
    pub similarity: f64,
}

impl SweepTraces {
    pub fn bandwidth_at(&self, t: usize) -> usize {
        self.prior_bits + t * self.step_bits
    }

    fn bers(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.cells.iter().map(|c| c.ber).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    fn cells_at(&self, ber: f64) -> impl Iterator<Item = &CellTraces> {
        self.cells.iter().filter(move |c| c.ber == ber)
    }

    /// Manual-rate performance surface, ordered by BER then bandwidth.
    pub fn surface(&self) -> Vec<SurfacePoint> {
        let mut out = Vec::new();
        for ber in self.bers() {
            for t in self.t0..=self.t_max {
                let (mut correct, mut sim, mut n) = (0usize, 0.0, 0usize);
                for c in self.cells_at(ber) {
                    for (tr, &l) in c.traces.iter().zip(&c.labels) {
                        correct += usize::from(tr.prediction_at(t) == l);
                        sim += tr.scores[t - self.t0];
                        n += 1;
                    }
                }
                out.push(SurfacePoint {
                    ber,
                    bandwidth: self.bandwidth_at(t),
                    acc: correct as f64 / n as f64,
                    sim: sim / n as f64,
                    n,
                });
            }
        }
        out
    }

    pub fn true_similarity(&self) -> Vec<SimilarityPoint> {
        let mut out = Vec::new();
        for ber in self.bers() {
            for t in self.t0..=self.t_max {
                let (mut sum, mut n) = (0.0, 0usize);
                for c in self.cells_at(ber) {
                    for tr in &c.traces {
                        sum += tr.similarities[t - self.t0];
                        n += 1;
                    }
                }
                out.push(SimilarityPoint {
                    ber,
                    t,
                    similarity: sum / n as f64,
                });
            }
        }
        out
    }

    /// Replays every session of the `ber` cells with threshold `theta`.
    pub fn harq(&self, theta: f64, ber: f64) -> Result<HarqPoint> {
        let (mut correct, mut bits, mut steps, mut n) = (0usize, 0usize, 0usize, 0usize);
        for c in self.cells_at(ber) {
            for (tr, &l) in c.traces.iter().zip(&c.labels) {
                let t = tr.final_t(theta);
                correct += usize::from(tr.prediction_at(t) == l);
                bits += self.bandwidth_at(t);
                steps += t;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Config(format!("BER {ber} was not swept")));
        }
        Ok(HarqPoint {
            theta,
            ber,
            bandwidth: bits as f64 / n as f64,
            acc: correct as f64 / n as f64,
            mean_t: steps as f64 / n as f64,
            n,
        })
    }

    /// Estimated similarities after `t0` steps, pooled over every cell.
    pub fn initial_scores(&self) -> Vec<f64> {
        self.cells
            .iter()
            .flat_map(|c| c.traces.iter().map(|t| t.scores[0]))
            .collect()
    }
}

/// Thresholds at the given quantile levels of the pooled `t0` scores.
pub fn calibrate_thetas(traces: &SweepTraces, levels: &[f64]) -> Result<Vec<f64>> {
    let scores = traces.initial_scores();
    levels.iter().map(|&q| quantile(&scores, q)).collect()
}

pub fn gap_table(traces: &SweepTraces, thetas: &[f64], bers: &[f64]) -> Result<Vec<GapRow>> {
    let surface = traces.surface();
    let mut out = Vec::new();
    for &theta in thetas {
        for &ber in bers {
            let h = traces.harq(theta, ber)?;
            let surface_acc = interpolate_surface(&surface, h.bandwidth, ber)?;
            out.push(GapRow {
                theta,
                ber,
                bandwidth: h.bandwidth,
                harq_acc: h.acc,
                surface_acc,
                gap: (h.acc - surface_acc).abs(),
            });
        }
    }
    Ok(out)
}

/// Per-row Pearson correlation between mean estimated similarity and accuracy
/// across bandwidths. A row where either series is constant yields NaN.
pub fn correlations(surface: &[SurfacePoint], bers: &[f64]) -> Result<Vec<(f64, f64)>> {
    bers.iter()
        .map(|&ber| {
            let row: Vec<&SurfacePoint> = surface.iter().filter(|p| p.ber == ber).collect();
            let sims: Vec<f64> = row.iter().map(|p| p.sim).collect();
            let accs: Vec<f64> = row.iter().map(|p| p.acc).collect();
            match pearson(&sims, &accs) {
                Ok(r) => Ok((ber, r)),
                Err(Error::Degenerate(_)) if row.len() >= 2 => Ok((ber, f64::NAN)),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// HARQ replays for every `(theta, ber)` pair, thresholds outermost.
pub fn harq_table(traces: &SweepTraces, thetas: &[f64], bers: &[f64]) -> Result<Vec<HarqPoint>> {
    let mut out = Vec::with_capacity(thetas.len() * bers.len());
    for &theta in thetas {
        for &ber in bers {
            out.push(traces.harq(theta, ber)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BaselinePoint {
    pub ber: f64,
    pub bandwidth: f64,
    pub acc: f64,
    pub success: f64,
    pub n: usize,
}

/// Separate-coding baseline over `settings.bers`, with the sweep's seeds,
/// samples and channel seeds. `codec` is the fixed-rate baseline codec.
pub fn baseline_sweep(
    backbone: &Backbone,
    codec: &Codec,
    test: &Dataset,
    grid: &SweepGrid,
    settings: &BaselineSettings,
) -> Result<Vec<BaselinePoint>> {
    let data = test.take(grid.samples)?;
    let features = backbone.extract_features_batch(&data.images)?;
    let scheme = settings.scheme();
    let cells: Vec<(usize, f64)> = settings
        .bers
        .iter()
        .flat_map(|&p| (0..grid.seeds).map(move |s| (s, p)))
        .collect();
    let per_cell = par_map(&cells, |&(seed, ber)| {
        let channel = ChannelModel::new(ber, grid.channel_seed + seed as u64)?;
        let (mut correct, mut bits, mut ok) = (0usize, 0usize, 0usize);
        for i in 0..data.len() {
            let f = Feature::new(features.slice_batch(i, i + 1)?.reshaped(&backbone.feature_shape())?)?;
            let s = run_baseline_session(&f, backbone, codec, &channel, i as u64, &scheme)?;
            correct += usize::from(s.prediction.class() == data.labels[i]);
            bits += s.total_bits;
            ok += usize::from(s.success);
        }
        Ok((correct, bits, ok))
    })?;
    let mut out = Vec::new();
    for (k, &ber) in settings.bers.iter().enumerate() {
        let (mut correct, mut bits, mut ok) = (0, 0, 0);
        for &(c, b, o) in &per_cell[k * grid.seeds..(k + 1) * grid.seeds] {
            correct += c;
            bits += b;
            ok += o;
        }
        let n = grid.seeds * data.len();
        out.push(BaselinePoint {
            ber,
            bandwidth: bits as f64 / n as f64,
            acc: correct as f64 / n as f64,
            success: ok as f64 / n as f64,
            n,
        });
    }
    Ok(out)
}
