//! Bidirectional LSTM over the unmasked token positions, with the traces
//! needed for backpropagation through time.

use super::params::{EncoderParams, LstmWeights};
use super::{BiLstmStates, HiddenStates};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cached values of one recurrence step.
#[derive(Debug, Clone)]
pub(crate) struct StepTrace {
    t: usize,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `i, f, g, o`, each of length `h`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct DirectionTrace {
    steps: Vec<StepTrace>,
}

/// Runs one direction and writes its hidden states into columns
/// `offset..offset + h` of `out` (row stride `2h`). Masked positions keep the
/// carried state and leave their output row untouched (zero).
pub(crate) fn run_direction(
    w: &LstmWeights,
    x: &HiddenStates,
    mask: &[u8],
    hidden: usize,
    reverse: bool,
    out: &mut [f64],
    offset: usize,
) -> DirectionTrace {
    let d = x.dim;
    let h = hidden;
    let mut h_state = vec![0.0; h];
    let mut c_state = vec![0.0; h];
    let mut trace = DirectionTrace::default();
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..x.rows).rev())
    } else {
        Box::new(0..x.rows)
    };
    let mut pre = vec![0.0; 4 * h];
    for t in order {
        if mask[t] == 0 {
            continue;
        }
        let xt = x.row(t);
        for (r, a) in pre.iter_mut().enumerate() {
            let wi = &w.w_ih[r * d..(r + 1) * d];
            let wh = &w.w_hh[r * h..(r + 1) * h];
            let mut acc = w.bias[r];
            for k in 0..d {
                acc += wi[k] * xt[k];
            }
            for k in 0..h {
                acc += wh[k] * h_state[k];
            }
            *a = acc;
        }
        let mut gates = vec![0.0; 4 * h];
        for j in 0..h {
            gates[j] = sigmoid(pre[j]);
            gates[h + j] = sigmoid(pre[h + j]);
            gates[2 * h + j] = pre[2 * h + j].tanh();
            gates[3 * h + j] = sigmoid(pre[3 * h + j]);
        }
        let h_prev = h_state.clone();
        let c_prev = c_state.clone();
        let mut tanh_c = vec![0.0; h];
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            c_state[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c_state[j].tanh();
            h_state[j] = o * tanh_c[j];
        }
        out[t * 2 * h + offset..t * 2 * h + offset + h].copy_from_slice(&h_state);
        trace.steps.push(StepTrace {
            t,
            h_prev,
            c_prev,
            gates,
            tanh_c,
        });
    }
    trace
}

/// Backpropagation through time for one direction.
///
/// `d_out` is the gradient wrt the `n x 2h` BiLSTM output; gradients are
/// accumulated into `grads` and `d_x` (`n x d`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn backprop_direction(
    w: &LstmWeights,
    trace: &DirectionTrace,
    x: &HiddenStates,
    d_out: &[f64],
    hidden: usize,
    offset: usize,
    grads: &mut LstmWeights,
    d_x: &mut [f64],
) {
    let d = x.dim;
    let h = hidden;
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut da = vec![0.0; 4 * h];
    for step in trace.steps.iter().rev() {
        let t = step.t;
        let g_out = &d_out[t * 2 * h + offset..t * 2 * h + offset + h];
        for j in 0..h {
            let (i, f, g, o) = (
                step.gates[j],
                step.gates[h + j],
                step.gates[2 * h + j],
                step.gates[3 * h + j],
            );
            let dh = g_out[j] + dh_next[j];
            let tc = step.tanh_c[j];
            let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
            da[j] = dc * g * i * (1.0 - i);
            da[h + j] = dc * step.c_prev[j] * f * (1.0 - f);
            da[2 * h + j] = dc * i * (1.0 - g * g);
            da[3 * h + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        let xt = x.row(t);
        let dxt = &mut d_x[t * d..(t + 1) * d];
        dh_next.fill(0.0);
        for (r, &dar) in da.iter().enumerate() {
            grads.bias[r] += dar;
            let wi = &w.w_ih[r * d..(r + 1) * d];
            let gi = &mut grads.w_ih[r * d..(r + 1) * d];
            for k in 0..d {
                gi[k] += dar * xt[k];
                dxt[k] += wi[k] * dar;
            }
            let wh = &w.w_hh[r * h..(r + 1) * h];
            let gh = &mut grads.w_hh[r * h..(r + 1) * h];
            for k in 0..h {
                gh[k] += dar * step.h_prev[k];
                dh_next[k] += wh[k] * dar;
            }
        }
    }
}

/// Forward pass of both directions; traces are returned for backprop.
pub(crate) fn bilstm_with_trace(
    x: &HiddenStates,
    mask: &[u8],
    params: &EncoderParams,
) -> (BiLstmStates, DirectionTrace, DirectionTrace) {
    let h = params.shape.hidden;
    let mut data = vec![0.0; x.rows * 2 * h];
    let fwd = run_direction(&params.weights.lstm_fwd, x, mask, h, false, &mut data, 0);
    let bwd = run_direction(&params.weights.lstm_bwd, x, mask, h, true, &mut data, h);
    (
        BiLstmStates {
            rows: x.rows,
            hidden: h,
            data,
        },
        fwd,
        bwd,
    )
}
