//! Parameterised layer helpers shared by the networks.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::{ParamGroup, Tensor};

/// Registers `{id}.w` `[out, in, k, k]` (Kaiming-uniform) and `{id}.b` (zeros).
pub fn init_conv<R: Rng + ?Sized>(
    group: &mut ParamGroup,
    id: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    rng: &mut R,
) {
    let fan_in = c_in * k * k;
    group.insert(
        format!("{id}.w"),
        Tensor::kaiming_uniform(&[c_out, c_in, k, k], fan_in, rng),
    );
    group.insert(format!("{id}.b"), Tensor::zeros(&[c_out]));
}

/// Registers `{id}.w` `[out, in]` (Kaiming-uniform) and `{id}.b` (zeros).
pub fn init_linear<R: Rng + ?Sized>(
    group: &mut ParamGroup,
    id: &str,
    n_out: usize,
    n_in: usize,
    rng: &mut R,
) {
    group.insert(
        format!("{id}.w"),
        Tensor::kaiming_uniform(&[n_out, n_in], n_in, rng),
    );
    group.insert(format!("{id}.b"), Tensor::zeros(&[n_out]));
}

pub fn conv(g: &mut Graph, group: &ParamGroup, id: &str, x: Var) -> Result<Var> {
    let w = g.param(group, &format!("{id}.w"))?;
    let b = g.param(group, &format!("{id}.b"))?;
    let y = g.conv2d(x, w)?;
    g.bias_add(y, b)
}

pub fn linear(g: &mut Graph, group: &ParamGroup, id: &str, x: Var) -> Result<Var> {
    let w = g.param(group, &format!("{id}.w"))?;
    let b = g.param(group, &format!("{id}.b"))?;
    let y = g.linear(x, w)?;
    g.bias_add(y, b)
}

/// Index of the largest entry of each row of `[B, K]` values.
pub fn argmax_rows(values: &[f64], k: usize) -> Vec<usize> {
    values
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}
