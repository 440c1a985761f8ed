//! CSV reports. Files and columns:
//!
//! | file | columns |
//! |------|---------|
//! | `surface.csv` | `ber,bandwidth,acc,sim,n` |
//! | `harq.csv` | `theta,ber,bandwidth,acc,mean_t,n` |
//! | `gaps.csv` | `theta,ber,bandwidth,harq_acc,surface_acc,gap` |
//! | `baseline.csv` | `ber,bandwidth,acc,success,n` |
//! | `correlations.csv` | `ber,pearson` |
//!
//! Reals are printed with six decimals, so reports are byte-stable.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;

use super::pipeline::Workspace;
use super::stats::SurfacePoint;
use super::sweep::{
    baseline_sweep, calibrate_thetas, correlations, eval_sweep, gap_table, harq_table, BaselinePoint, GapRow, HarqPoint,
    SweepTraces,
};

pub const REPORT_FILES: [&str; 5] = ["surface.csv", "harq.csv", "gaps.csv", "baseline.csv", "correlations.csv"];

#[derive(Clone, Debug)]
pub struct Report {
    pub thetas: Vec<f64>,
    pub surface: Vec<SurfacePoint>,
    pub harq: Vec<HarqPoint>,
    pub gaps: Vec<GapRow>,
    pub baseline: Vec<BaselinePoint>,
    pub correlations: Vec<(f64, f64)>,
}

pub fn surface_csv(points: &[SurfacePoint]) -> String {
    let mut s = String::from("ber,bandwidth,acc,sim,n\n");
    for p in points {
        writeln!(s, "{:.6},{},{:.6},{:.6},{}", p.ber, p.bandwidth, p.acc, p.sim, p.n).unwrap();
    }
    s
}

pub fn harq_csv(points: &[HarqPoint]) -> String {
    let mut s = String::from("theta,ber,bandwidth,acc,mean_t,n\n");
    for p in points {
        writeln!(s, "{:.6},{:.6},{:.6},{:.6},{:.6},{}", p.theta, p.ber, p.bandwidth, p.acc, p.mean_t, p.n).unwrap();
    }
    s
}

pub fn gaps_csv(rows: &[GapRow]) -> String {
    let mut s = String::from("theta,ber,bandwidth,harq_acc,surface_acc,gap\n");
    for r in rows {
        writeln!(
            s,
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.theta, r.ber, r.bandwidth, r.harq_acc, r.surface_acc, r.gap
        )
        .unwrap();
    }
    s
}

pub fn baseline_csv(points: &[BaselinePoint]) -> String {
    let mut s = String::from("ber,bandwidth,acc,success,n\n");
    for p in points {
        writeln!(s, "{:.6},{:.6},{:.6},{:.6},{}", p.ber, p.bandwidth, p.acc, p.success, p.n).unwrap();
    }
    s
}

pub fn correlations_csv(rows: &[(f64, f64)]) -> String {
    let mut s = String::from("ber,pearson\n");
    for (ber, r) in rows {
        writeln!(s, "{ber:.6},{r:.6}").unwrap();
    }
    s
}

/// Thresholds from the config, or calibrated from the sweep when none are set.
pub fn thetas(ws: &Workspace, traces: &SweepTraces) -> Result<Vec<f64>> {
    if ws.cfg.harq.thetas.is_empty() {
        calibrate_thetas(traces, &ws.cfg.harq.theta_quantiles)
    } else {
        Ok(ws.cfg.harq.thetas.clone())
    }
}

/// Sweeps the trained models and computes every report table.
pub fn build_report(ws: &Workspace) -> Result<(Report, SweepTraces)> {
    let models = ws.load_models()?;
    let (_, test) = ws.datasets()?;
    let traces = eval_sweep(models.models(), &test, &ws.cfg.sweep)?;
    let thetas = thetas(ws, &traces)?;
    let surface = traces.surface();
    let harq = harq_table(&traces, &thetas, &ws.cfg.sweep.bers)?;
    let gaps = gap_table(&traces, &thetas, &ws.cfg.harq.bers)?;
    let correlations = correlations(&surface, &ws.cfg.sweep.correlation_bers)?;
    let baseline = baseline_sweep(
        &models.backbone,
        &models.baseline_codec,
        &test,
        &ws.cfg.sweep,
        &ws.cfg.baseline,
    )?;
    Ok((
        Report {
            thetas,
            surface,
            harq,
            gaps,
            baseline,
            correlations,
        },
        traces,
    ))
}

pub fn write_report(report: &Report, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("surface.csv"), surface_csv(&report.surface))?;
    fs::write(out_dir.join("harq.csv"), harq_csv(&report.harq))?;
    fs::write(out_dir.join("gaps.csv"), gaps_csv(&report.gaps))?;
    fs::write(out_dir.join("baseline.csv"), baseline_csv(&report.baseline))?;
    fs::write(out_dir.join("correlations.csv"), correlations_csv(&report.correlations))?;
    Ok(())
}
