//! Central finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::graph::{FireMode, Graph, Var};
use crate::tensor::{GroupTag, ParamGroup};

/// Largest parameter count a check will perturb.
pub const MAX_CHECKED_PARAMS: usize = 10_000;

/// Gradients below this magnitude are compared absolutely rather than relatively.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradMismatch {
    pub group: GroupTag,
    pub id: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub failing: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the tape's analytic gradient with `(L(θ+h) − L(θ−h)) / 2h` for
/// every entry of every group. `build` must construct the scalar loss from
/// the given groups; it is invoked on graphs using `fire_mode`, so a
/// [`FireMode::Relaxed`] check differentiates the surrogate firing function.
pub fn finite_diff_check<F>(
    build: F,
    groups: &mut [ParamGroup],
    fire_mode: FireMode,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[ParamGroup]) -> Result<Var>,
{
    let total: usize = groups.iter().map(ParamGroup::num_params).sum();
    if total > MAX_CHECKED_PARAMS {
        return Err(Error::OutOfRange {
            what: "finite-difference parameter count",
            value: total as f64,
        });
    }

    let mut g = Graph::new(fire_mode);
    let loss = build(&mut g, groups)?;
    let analytic = g.backward(loss)?.param_grads();

    let eval = |groups: &[ParamGroup]| -> Result<f64> {
        let mut g = Graph::new(fire_mode);
        let loss = build(&mut g, groups)?;
        Ok(g.value(loss)[0])
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        tolerance,
        failing: Vec::new(),
    };
    for gi in 0..groups.len() {
        let tag = groups[gi].tag();
        let ids: Vec<String> = groups[gi].iter().map(|(id, _)| id.clone()).collect();
        for id in ids {
            let n = groups[gi].get(&id).map_or(0, |t| t.len());
            let grad = analytic
                .get(&(tag, id.clone()))
                .cloned()
                .unwrap_or_else(|| vec![0.0; n]);
            for i in 0..n {
                let orig = groups[gi].get(&id).unwrap().values()[i];
                groups[gi].get_mut(&id).unwrap().values_mut()[i] = orig + h;
                let plus = eval(groups)?;
                groups[gi].get_mut(&id).unwrap().values_mut()[i] = orig - h;
                let minus = eval(groups)?;
                groups[gi].get_mut(&id).unwrap().values_mut()[i] = orig;

                let numeric = (plus - minus) / (2.0 * h);
                let err = rel_error(grad[i], numeric);
                report.checked += 1;
                report.max_rel_error = report.max_rel_error.max(err);
                if err > tolerance {
                    report.failing.push(GradMismatch {
                        group: tag,
                        id: id.clone(),
                        index: i,
                        analytic: grad[i],
                        numeric,
                        rel_error: err,
                    });
                }
            }
        }
    }
    Ok(report)
}
