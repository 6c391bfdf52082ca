//! Exact reverse-mode gradients for the pooled-sequence regressor:
//! LSTM trunk over `T` steps, arithmetic mean over the per-step top outputs,
//! head 0, MSE against a target. Feed-forward nets (no LSTM layers) take a
//! single-step "sequence" and skip the trunk.

use super::{affine, sigmoid, Activation, Network};
use crate::error::NnError;

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64, NnError> {
    if pred.len() != target.len() {
        return Err(NnError::DimensionMismatch { what: "target", expected: pred.len(), got: target.len() });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Per-layer forward record of an unrolled LSTM.
struct LayerTape {
    /// `[x_t; h_{t-1}]` for each step.
    xh: Vec<f64>,
    /// Activated gates `i, f, g, o` for each step.
    gates: Vec<f64>,
    /// Cell states, `c_0 … c_T`.
    c: Vec<f64>,
    /// Hidden outputs `h_1 … h_T`.
    h: Vec<f64>,
}

/// Reusable gradient workspace bound to one network.
pub struct SequenceGradient<'a> {
    net: &'a Network,
}

impl<'a> SequenceGradient<'a> {
    pub fn new(net: &'a Network) -> Self {
        Self { net }
    }

    /// Adds `weight · ∂L/∂θ` into `grad` and returns the unweighted loss.
    pub fn accumulate(&self, params: &[f64], sequence: &[f64], target: &[f64], weight: f64, grad: &mut [f64]) -> Result<f64, NnError> {
        let net = self.net;
        let layout = net.layout();
        if params.len() != layout.total || grad.len() != layout.total {
            return Err(NnError::DimensionMismatch {
                what: "parameter/gradient vector",
                expected: layout.total,
                got: params.len().min(grad.len()),
            });
        }
        let dim = net.input_dim();
        if sequence.is_empty() {
            return Err(NnError::EmptySequence);
        }
        if !sequence.len().is_multiple_of(dim) || (layout.lstm.is_empty() && sequence.len() != dim) {
            return Err(NnError::DimensionMismatch { what: "sequence", expected: dim, got: sequence.len() });
        }
        let steps = sequence.len() / dim;

        // Trunk forward.
        let mut tapes: Vec<LayerTape> = Vec::with_capacity(layout.lstm.len());
        let mut z = Vec::new();
        for (k, l) in layout.lstm.iter().enumerate() {
            let (hd, cols) = (l.hidden, l.cols());
            let mut tape = LayerTape {
                xh: vec![0.0; steps * cols],
                gates: vec![0.0; steps * 4 * hd],
                c: vec![0.0; (steps + 1) * hd],
                h: vec![0.0; steps * hd],
            };
            for t in 0..steps {
                let input = if k == 0 { &sequence[t * dim..(t + 1) * dim] } else { &tapes[k - 1].h[t * l.input..(t + 1) * l.input] };
                let xh = &mut tape.xh[t * cols..(t + 1) * cols];
                xh[..l.input].copy_from_slice(input);
                if t > 0 {
                    let (prev, _) = tape.h.split_at(t * hd);
                    xh[l.input..].copy_from_slice(&prev[(t - 1) * hd..]);
                }
                affine(params, l.w, l.b, 4 * hd, &tape.xh[t * cols..(t + 1) * cols], &mut z);
                for j in 0..hd {
                    let i = sigmoid(z[j]);
                    let f = sigmoid(z[hd + j]);
                    let g = z[2 * hd + j].tanh();
                    let o = sigmoid(z[3 * hd + j]);
                    let gt = &mut tape.gates[t * 4 * hd..(t + 1) * 4 * hd];
                    gt[j] = i;
                    gt[hd + j] = f;
                    gt[2 * hd + j] = g;
                    gt[3 * hd + j] = o;
                    let c = f * tape.c[t * hd + j] + i * g;
                    tape.c[(t + 1) * hd + j] = c;
                    tape.h[t * hd + j] = o * c.tanh();
                }
            }
            tapes.push(tape);
        }

        let pooled: Vec<f64> = match (tapes.last(), layout.lstm.last()) {
            (Some(tape), Some(l)) => {
                let mut acc = vec![0.0; l.hidden];
                for t in 0..steps {
                    acc.iter_mut().zip(&tape.h[t * l.hidden..(t + 1) * l.hidden]).for_each(|(a, v)| *a += v);
                }
                acc.iter_mut().for_each(|a| *a /= steps as f64);
                acc
            }
            _ => sequence.to_vec(),
        };

        // Head forward.
        let head = &layout.heads[0];
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(head.len() + 1);
        acts.push(pooled);
        for d in head {
            let mut out = Vec::with_capacity(d.units);
            affine(params, d.w, d.b, d.units, acts.last().unwrap(), &mut out);
            d.activation.apply(&mut out);
            acts.push(out);
        }
        let pred = acts.last().unwrap();
        let loss = mse_loss(pred, target)?;
        if !loss.is_finite() {
            return Err(NnError::NonFinite("loss"));
        }

        // Head backward.
        let n_out = pred.len() as f64;
        let mut dy: Vec<f64> = pred.iter().zip(target).map(|(p, t)| weight * 2.0 * (p - t) / n_out).collect();
        for (li, d) in head.iter().enumerate().rev() {
            let y = &acts[li + 1];
            let x = &acts[li];
            let dz = activation_backward(d.activation, y, &dy);
            let mut dx = vec![0.0; d.fan_in];
            for r in 0..d.units {
                let g = dz[r];
                grad[d.b + r] += g;
                let row = d.w + r * d.fan_in;
                for col in 0..d.fan_in {
                    grad[row + col] += g * x[col];
                    dx[col] += params[row + col] * g;
                }
            }
            dy = dx;
        }

        // Trunk backward through the mean pool and all steps.
        if let Some(top) = layout.lstm.last() {
            let mut dh_out = vec![0.0; steps * top.hidden];
            for t in 0..steps {
                for j in 0..top.hidden {
                    dh_out[t * top.hidden + j] = dy[j] / steps as f64;
                }
            }
            for (k, l) in layout.lstm.iter().enumerate().rev() {
                let tape = &tapes[k];
                let (hd, cols) = (l.hidden, l.cols());
                let mut dx_below = vec![0.0; steps * l.input];
                let mut dh_next = vec![0.0; hd];
                let mut dc_next = vec![0.0; hd];
                let mut dz = vec![0.0; 4 * hd];
                for t in (0..steps).rev() {
                    let gt = &tape.gates[t * 4 * hd..(t + 1) * 4 * hd];
                    for j in 0..hd {
                        let (i, f, g, o) = (gt[j], gt[hd + j], gt[2 * hd + j], gt[3 * hd + j]);
                        let c_prev = tape.c[t * hd + j];
                        let tc = tape.c[(t + 1) * hd + j].tanh();
                        let dh = dh_out[t * hd + j] + dh_next[j];
                        let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
                        dz[j] = dc * g * i * (1.0 - i);
                        dz[hd + j] = dc * c_prev * f * (1.0 - f);
                        dz[2 * hd + j] = dc * i * (1.0 - g * g);
                        dz[3 * hd + j] = dh * tc * o * (1.0 - o);
                        dc_next[j] = dc * f;
                    }
                    let xh = &tape.xh[t * cols..(t + 1) * cols];
                    let mut dxh = vec![0.0; cols];
                    for r in 0..4 * hd {
                        let g = dz[r];
                        if g == 0.0 {
                            continue;
                        }
                        grad[l.b + r] += g;
                        let row = l.w + r * cols;
                        for col in 0..cols {
                            grad[row + col] += g * xh[col];
                            dxh[col] += params[row + col] * g;
                        }
                    }
                    dx_below[t * l.input..(t + 1) * l.input].copy_from_slice(&dxh[..l.input]);
                    dh_next.copy_from_slice(&dxh[l.input..]);
                }
                dh_out = dx_below;
            }
        }
        Ok(loss)
    }
}

fn activation_backward(act: Activation, y: &[f64], dy: &[f64]) -> Vec<f64> {
    match act {
        Activation::Identity => dy.to_vec(),
        Activation::Relu => y.iter().zip(dy).map(|(&y, &d)| if y > 0.0 { d } else { 0.0 }).collect(),
        Activation::Tanh => y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect(),
        Activation::Sigmoid => y.iter().zip(dy).map(|(y, d)| d * y * (1.0 - y)).collect(),
        Activation::SoftmaxGrouped(k) => y
            .chunks(k)
            .zip(dy.chunks(k))
            .flat_map(|(s, g)| {
                let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
                s.iter().zip(g).map(move |(a, b)| a * (b - dot))
            })
            .collect(),
    }
}

impl Network {
    /// Loss and full gradient of `MSE(head0(mean_t LSTM(x_t)), target)`.
    pub fn backward_bptt(&self, params: &[f64], sequence: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
        let mut grad = vec![0.0; self.param_count()];
        let loss = SequenceGradient::new(self).accumulate(params, sequence, target, 1.0, &mut grad)?;
        Ok((loss, grad))
    }

    pub fn pooled_loss(&self, params: &[f64], sequence: &[f64], target: &[f64]) -> Result<f64, NnError> {
        let pred = self.forward_pooled(params, sequence, 0)?;
        mse_loss(&pred, target)
    }
}
