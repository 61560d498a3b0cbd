//! Forward/backward pairs for every layer the network uses.
//!
//! Layouts are channels-first: a signal is `[channels, length]`, conv kernels
//! are `[filters, in_channels, kernel]`, dense weights are `[out, in]`.
//! Convolution is valid-mode cross-correlation with stride 1.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};
use crate::tensor::Tensor;

/// Whether stochastic layers (dropout) are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

fn matrix_dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [rows, cols] => Ok((rows, cols)),
        _ => Err(HarError::dim(
            what,
            format!("expected a rank-2 tensor, got shape {:?}", t.shape()),
        )),
    }
}

fn expect_len(t: &Tensor, n: usize, what: &str) -> Result<()> {
    if t.len() != n {
        return Err(HarError::dim(
            what,
            format!("expected {n} elements, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// `out[f][t] = bias[f] + sum_{c,k} input[c][t+k] * kernels[f][c][k]`.
///
/// The sum runs over `k` innermost, then `c`, into an accumulator that starts
/// at zero; the bias is added last.
pub fn conv1d_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c_in, len) = matrix_dims(input, "input")?;
    let (filters, kc, k) = match *kernels.shape() {
        [f, c, k] => (f, c, k),
        _ => {
            return Err(HarError::dim(
                "kernels",
                format!("expected [filters, channels, kernel], got {:?}", kernels.shape()),
            ))
        }
    };
    if kc != c_in {
        return Err(HarError::dim(
            "channels",
            format!("input has {c_in} channels, kernels expect {kc}"),
        ));
    }
    if k > len {
        return Err(HarError::dim(
            "length",
            format!("kernel size {k} exceeds input length {len}"),
        ));
    }
    expect_len(bias, filters, "bias")?;

    let out_len = len - k + 1;
    let x = input.values();
    let w = kernels.values();
    let b = bias.values();
    let mut out = vec![0.0; filters * out_len];
    for f in 0..filters {
        let wf = &w[f * c_in * k..(f + 1) * c_in * k];
        let row = &mut out[f * out_len..(f + 1) * out_len];
        // Every output keeps the scalar order (c outer, k inner, bias last);
        // sweeping t innermost only lets the loop vectorize.
        for c in 0..c_in {
            let xc = &x[c * len..(c + 1) * len];
            for kk in 0..k {
                let wv = wf[c * k + kk];
                for (slot, xv) in row.iter_mut().zip(&xc[kk..kk + out_len]) {
                    *slot += xv * wv;
                }
            }
        }
        for slot in row.iter_mut() {
            *slot += b[f];
        }
    }
    Tensor::new(&[filters, out_len], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

pub fn conv1d_backward(input: &Tensor, kernels: &Tensor, upstream: &Tensor) -> Result<Conv1dGrads> {
    conv1d_backward_impl(input, kernels, upstream, true)
}

/// Same as [`conv1d_backward`] but skips the input gradient when the caller
/// has no use for it (the returned `input` tensor is then all zeros).
pub(crate) fn conv1d_backward_impl(
    input: &Tensor,
    kernels: &Tensor,
    upstream: &Tensor,
    want_input: bool,
) -> Result<Conv1dGrads> {
    let (c_in, len) = matrix_dims(input, "input")?;
    let (filters, kc, k) = match *kernels.shape() {
        [f, c, k] => (f, c, k),
        _ => {
            return Err(HarError::dim(
                "kernels",
                format!("expected [filters, channels, kernel], got {:?}", kernels.shape()),
            ))
        }
    };
    if kc != c_in || k > len {
        return Err(HarError::dim(
            "kernels",
            format!(
                "kernels {:?} incompatible with input {:?}",
                kernels.shape(),
                input.shape()
            ),
        ));
    }
    let out_len = len - k + 1;
    if upstream.shape() != [filters, out_len] {
        return Err(HarError::dim(
            "upstream",
            format!("expected [{filters}, {out_len}], got {:?}", upstream.shape()),
        ));
    }

    let x = input.values();
    let w = kernels.values();
    let g = upstream.values();
    let mut gx = vec![0.0; c_in * len];
    let mut gw = vec![0.0; filters * c_in * k];
    let mut gb = vec![0.0; filters];
    for f in 0..filters {
        let gf = &g[f * out_len..(f + 1) * out_len];
        gb[f] = gf.iter().sum();
        for c in 0..c_in {
            let xc = &x[c * len..(c + 1) * len];
            let base = (f * c_in + c) * k;
            for kk in 0..k {
                gw[base + kk] = dot(gf, &xc[kk..kk + out_len]);
            }
            if want_input {
                let gxc = &mut gx[c * len..(c + 1) * len];
                for kk in 0..k {
                    let wv = w[base + kk];
                    for (dst, gv) in gxc[kk..kk + out_len].iter_mut().zip(gf) {
                        *dst += gv * wv;
                    }
                }
            }
        }
    }
    Ok(Conv1dGrads {
        input: Tensor::new(input.shape(), gx)?,
        kernels: Tensor::new(kernels.shape(), gw)?,
        bias: Tensor::new(&[filters], gb)?,
    })
}

/// Dot product with four independent partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        for i in 0..4 {
            lanes[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.clear_grad();
    for v in out.values_mut() {
        *v = v.max(0.0);
    }
    out
}

/// Passes `upstream` where `x > 0`; the subgradient at exactly zero is 0.
pub fn relu_backward(x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if x.shape() != upstream.shape() {
        return Err(HarError::dim(
            "upstream",
            format!("expected {:?}, got {:?}", x.shape(), upstream.shape()),
        ));
    }
    let g = x
        .values()
        .iter()
        .zip(upstream.values())
        .map(|(&xv, &u)| if xv > 0.0 { u } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), g)
}

/// Non-overlapping max pooling over the length axis. Trailing samples that
/// do not fill a window are dropped.
pub fn maxpool1d(x: &Tensor, pool: usize) -> Result<Tensor> {
    Ok(maxpool1d_with_argmax(x, pool)?.0)
}

/// Pooled output plus, per output element, the flat input index it came
/// from (first maximum in the window).
pub fn maxpool1d_with_argmax(x: &Tensor, pool: usize) -> Result<(Tensor, Vec<usize>)> {
    let (channels, len) = matrix_dims(x, "input")?;
    if pool == 0 {
        return Err(HarError::Parameter("pool size must be at least 1".into()));
    }
    if pool > len {
        return Err(HarError::dim(
            "length",
            format!("pool size {pool} exceeds input length {len}"),
        ));
    }
    let out_len = len / pool;
    let v = x.values();
    let mut out = Vec::with_capacity(channels * out_len);
    let mut argmax = Vec::with_capacity(channels * out_len);
    for c in 0..channels {
        for t in 0..out_len {
            let start = c * len + t * pool;
            let mut best = start;
            for i in start + 1..start + pool {
                if v[i] > v[best] {
                    best = i;
                }
            }
            out.push(v[best]);
            argmax.push(best);
        }
    }
    Ok((Tensor::new(&[channels, out_len], out)?, argmax))
}

pub fn maxpool1d_backward(x: &Tensor, pool: usize, upstream: &Tensor) -> Result<Tensor> {
    let (pooled, argmax) = maxpool1d_with_argmax(x, pool)?;
    route_to_argmax(x.shape(), &argmax, pooled.shape(), upstream)
}

pub(crate) fn route_to_argmax(
    input_shape: &[usize],
    argmax: &[usize],
    pooled_shape: &[usize],
    upstream: &Tensor,
) -> Result<Tensor> {
    if upstream.shape() != pooled_shape {
        return Err(HarError::dim(
            "upstream",
            format!("expected {pooled_shape:?}, got {:?}", upstream.shape()),
        ));
    }
    let mut g = vec![0.0; input_shape.iter().product()];
    for (&idx, &u) in argmax.iter().zip(upstream.values()) {
        g[idx] += u;
    }
    Tensor::new(input_shape, g)
}

/// Looks up one table row per id; column `t` of the `[E, L]` result is
/// `table[ids[t]]`.
pub fn embedding_forward(ids: &[usize], table: &Tensor) -> Result<Tensor> {
    let (rows, dim) = matrix_dims(table, "table")?;
    if ids.is_empty() {
        return Err(HarError::dim("ids", "id sequence is empty"));
    }
    check_ids(ids, rows)?;
    let len = ids.len();
    let tv = table.values();
    let mut out = vec![0.0; dim * len];
    for (t, &id) in ids.iter().enumerate() {
        for e in 0..dim {
            out[e * len + t] = tv[id * dim + e];
        }
    }
    Tensor::new(&[dim, len], out)
}

/// Gradient with respect to a `[rows, E]` table; repeated ids accumulate.
pub fn embedding_backward(ids: &[usize], upstream: &Tensor, rows: usize) -> Result<Tensor> {
    let (dim, len) = matrix_dims(upstream, "upstream")?;
    if len != ids.len() {
        return Err(HarError::dim(
            "length",
            format!("upstream has {len} columns, {} ids given", ids.len()),
        ));
    }
    check_ids(ids, rows)?;
    let mut g = Tensor::zeros(&[rows, dim]);
    accumulate_embedding_grad(ids, upstream.values(), dim, g.values_mut());
    Ok(g)
}

pub(crate) fn accumulate_embedding_grad(ids: &[usize], upstream: &[f64], dim: usize, table_grad: &mut [f64]) {
    let len = ids.len();
    for (t, &id) in ids.iter().enumerate() {
        for e in 0..dim {
            table_grad[id * dim + e] += upstream[e * len + t];
        }
    }
}

fn check_ids(ids: &[usize], rows: usize) -> Result<()> {
    match ids.iter().position(|&id| id >= rows) {
        Some(position) => Err(HarError::Index {
            position,
            index: ids[position],
            bound: rows,
        }),
        None => Ok(()),
    }
}

/// `out = W x + b`.
pub fn dense_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, d) = matrix_dims(weight, "weight")?;
    expect_len(x, d, "input")?;
    expect_len(bias, m, "bias")?;
    let xv = x.values();
    let out = (0..m)
        .map(|i| {
            let dot: f64 = weight.row(i).iter().zip(xv).map(|(w, x)| w * x).sum();
            dot + bias.values()[i]
        })
        .collect();
    Tensor::new(&[m], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(x: &Tensor, weight: &Tensor, upstream: &Tensor) -> Result<DenseGrads> {
    let (m, d) = matrix_dims(weight, "weight")?;
    expect_len(x, d, "input")?;
    expect_len(upstream, m, "upstream")?;
    let xv = x.values();
    let u = upstream.values();
    let mut gw = vec![0.0; m * d];
    let mut gx = vec![0.0; d];
    for i in 0..m {
        let row = weight.row(i);
        for j in 0..d {
            gw[i * d + j] = u[i] * xv[j];
            gx[j] += u[i] * row[j];
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(x.shape(), gx)?,
        weight: Tensor::new(&[m, d], gw)?,
        bias: Tensor::new(&[m], u.to_vec())?,
    })
}

/// Per-element multipliers drawn by [`dropout`]; `None` means identity.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(pub Option<Vec<f64>>);

/// Inverted dropout: in train mode each element survives with probability
/// `1 - rate` and is scaled by `1 / (1 - rate)`. Eval mode is the identity.
pub fn dropout<R: Rng + ?Sized>(
    x: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(HarError::Parameter(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        let mut out = x.clone();
        out.clear_grad();
        return Ok((out, DropoutMask(None)));
    }
    let scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
        .collect();
    let out = x.values().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((Tensor::new(x.shape(), out)?, DropoutMask(Some(mask))))
}

pub fn dropout_backward(mask: &DropoutMask, upstream: &Tensor) -> Result<Tensor> {
    match &mask.0 {
        None => {
            let mut g = upstream.clone();
            g.clear_grad();
            Ok(g)
        }
        Some(m) => {
            expect_len(upstream, m.len(), "upstream")?;
            let g = upstream.values().iter().zip(m).map(|(u, m)| u * m).collect();
            Tensor::new(upstream.shape(), g)
        }
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Returns `-log softmax(logits)[label]` and its gradient
/// `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let z = logits.values();
    if label >= z.len() {
        return Err(HarError::Index {
            position: 0,
            index: label,
            bound: z.len(),
        });
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - z[label];
    let mut grad = softmax(z);
    grad[label] -= 1.0;
    Ok((loss, Tensor::new(logits.shape(), grad)?))
}
