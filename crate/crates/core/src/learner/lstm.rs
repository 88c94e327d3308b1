//! LSTM cell, single-vector reference path and batched training path.
//!
//! Every gate owns a weight matrix of shape `[hidden, hidden + input]`
//! applied to the concatenation `[h_prev, x]`, plus a bias of length
//! `hidden`.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::tensor::ParameterSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Gate {
    Forget,
    Input,
    Candidate,
    Output,
}

pub(crate) const GATES: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Candidate, Gate::Output];

impl Gate {
    pub(crate) fn weight_name(self) -> &'static str {
        match self {
            Gate::Forget => "lstm.forget.weight",
            Gate::Input => "lstm.input.weight",
            Gate::Candidate => "lstm.candidate.weight",
            Gate::Output => "lstm.output.weight",
        }
    }

    pub(crate) fn bias_name(self) -> &'static str {
        match self {
            Gate::Forget => "lstm.forget.bias",
            Gate::Input => "lstm.input.bias",
            Gate::Candidate => "lstm.candidate.bias",
            Gate::Output => "lstm.output.bias",
        }
    }
}

/// Hidden and cell vectors carried between time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

/// Gate activations of one cell step: forget, input, output in (0, 1) and
/// the candidate in (-1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct GateTrace {
    pub forget: Vec<f64>,
    pub input: Vec<f64>,
    pub candidate: Vec<f64>,
    pub output: Vec<f64>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Returns `(hidden, input)` sizes implied by the forget-gate weight.
fn cell_dims(params: &ParameterSet) -> Result<(usize, usize)> {
    let w = params.get(Gate::Forget.weight_name())?;
    match w.shape() {
        [h, cols] if cols > h => Ok((*h, cols - h)),
        shape => Err(Error::Shape(format!("bad LSTM weight shape {shape:?}"))),
    }
}

/// One cell step for a single input vector, evaluated element by element.
pub fn lstm_cell_forward(params: &ParameterSet, x: &[f64], prev: &LstmState) -> Result<(LstmState, GateTrace)> {
    let (hidden, input) = cell_dims(params)?;
    if x.len() != input {
        return Err(Error::Shape(format!("input has {} features, cell expects {input}", x.len())));
    }
    if prev.h.len() != hidden || prev.c.len() != hidden {
        return Err(Error::Shape(format!("state dims ({}, {}) != hidden {hidden}", prev.h.len(), prev.c.len())));
    }
    let concat: Vec<f64> = prev.h.iter().chain(x).copied().collect();

    let mut pre = Vec::with_capacity(4);
    for gate in GATES {
        let w = params.get(gate.weight_name())?;
        let b = params.get(gate.bias_name())?;
        if w.shape() != [hidden, hidden + input] || b.shape() != [hidden] {
            return Err(Error::Shape(format!("gate {gate:?} tensors have inconsistent shapes")));
        }
        let z: Vec<f64> = (0..hidden)
            .map(|row| {
                let w_row = &w.values()[row * concat.len()..(row + 1) * concat.len()];
                w_row.iter().zip(&concat).map(|(a, b)| a * b).sum::<f64>() + b.values()[row]
            })
            .collect();
        pre.push(z);
    }

    let forget: Vec<f64> = pre[0].iter().map(|&z| sigmoid(z)).collect();
    let input_gate: Vec<f64> = pre[1].iter().map(|&z| sigmoid(z)).collect();
    let candidate: Vec<f64> = pre[2].iter().map(|&z| z.tanh()).collect();
    let output: Vec<f64> = pre[3].iter().map(|&z| sigmoid(z)).collect();

    let c: Vec<f64> = (0..hidden).map(|k| forget[k] * prev.c[k] + input_gate[k] * candidate[k]).collect();
    let h: Vec<f64> = (0..hidden).map(|k| output[k] * c[k].tanh()).collect();

    Ok((LstmState { h, c }, GateTrace { forget, input: input_gate, candidate, output }))
}

/// Intermediate values of a batched cell step, kept for the backward pass.
pub(crate) struct CellCache {
    x: Array2<f64>,
    h_prev: Option<Array2<f64>>,
    c_prev: Option<Array2<f64>>,
    forget: Array2<f64>,
    input: Array2<f64>,
    candidate: Array2<f64>,
    output: Array2<f64>,
    tanh_c: Array2<f64>,
    pub(crate) h: Array2<f64>,
}

fn gate_preactivation(
    params: &ParameterSet,
    gate: Gate,
    hidden: usize,
    x: &ArrayView2<'_, f64>,
    h_prev: Option<&Array2<f64>>,
) -> Result<Array2<f64>> {
    let w = params.get(gate.weight_name())?.matrix()?;
    let b = params.get(gate.bias_name())?.vector();
    let mut z = x.dot(&w.slice(s![.., hidden..]).t());
    if let Some(h) = h_prev {
        z += &h.dot(&w.slice(s![.., ..hidden]).t());
    }
    z += &b;
    Ok(z)
}

/// Batched cell step; `None` previous state means all zeros, which skips the
/// recurrent products.
pub(crate) fn cell_forward_batch(
    params: &ParameterSet,
    hidden: usize,
    x: ArrayView2<'_, f64>,
    h_prev: Option<Array2<f64>>,
    c_prev: Option<Array2<f64>>,
) -> Result<CellCache> {
    let mut forget = gate_preactivation(params, Gate::Forget, hidden, &x, h_prev.as_ref())?;
    let mut input = gate_preactivation(params, Gate::Input, hidden, &x, h_prev.as_ref())?;
    let mut candidate = gate_preactivation(params, Gate::Candidate, hidden, &x, h_prev.as_ref())?;
    let mut output = gate_preactivation(params, Gate::Output, hidden, &x, h_prev.as_ref())?;
    forget.mapv_inplace(sigmoid);
    input.mapv_inplace(sigmoid);
    candidate.mapv_inplace(f64::tanh);
    output.mapv_inplace(sigmoid);

    let mut c = &input * &candidate;
    if let Some(cp) = &c_prev {
        c += &(&forget * cp);
    }
    let tanh_c = c.mapv(f64::tanh);
    let h = &output * &tanh_c;
    Ok(CellCache { x: x.to_owned(), h_prev, c_prev, forget, input, candidate, output, tanh_c, h })
}

/// Accumulates parameter gradients of a batched cell step given `dL/dh`.
pub(crate) fn cell_backward_batch(
    cache: &CellCache,
    hidden: usize,
    dh: &Array2<f64>,
    grads: &mut ParameterSet,
) -> Result<()> {
    let mut d_output = Array2::<f64>::zeros(dh.raw_dim());
    let mut d_cell = Array2::<f64>::zeros(dh.raw_dim());
    Zip::from(&mut d_output)
        .and(&mut d_cell)
        .and(dh)
        .and(&cache.tanh_c)
        .and(&cache.output)
        .for_each(|dz_o, dc, &g, &tc, &o| {
            *dz_o = g * tc * o * (1.0 - o);
            *dc = g * o * (1.0 - tc * tc);
        });

    let mut d_input = Array2::<f64>::zeros(dh.raw_dim());
    let mut d_candidate = Array2::<f64>::zeros(dh.raw_dim());
    Zip::from(&mut d_input)
        .and(&mut d_candidate)
        .and(&d_cell)
        .and(&cache.input)
        .and(&cache.candidate)
        .for_each(|dz_i, dz_c, &dc, &i, &cand| {
            *dz_i = dc * cand * i * (1.0 - i);
            *dz_c = dc * i * (1.0 - cand * cand);
        });

    let d_forget = match &cache.c_prev {
        Some(cp) => {
            let mut d = Array2::<f64>::zeros(dh.raw_dim());
            Zip::from(&mut d).and(&d_cell).and(cp).and(&cache.forget).for_each(|dz_f, &dc, &c0, &f| {
                *dz_f = dc * c0 * f * (1.0 - f);
            });
            Some(d)
        }
        None => None,
    };

    let pairs = [
        (Gate::Forget, d_forget.as_ref()),
        (Gate::Input, Some(&d_input)),
        (Gate::Candidate, Some(&d_candidate)),
        (Gate::Output, Some(&d_output)),
    ];
    for (gate, dz) in pairs {
        let Some(dz) = dz else { continue };
        {
            let mut dw = grads.get_mut(gate.weight_name())?.matrix_mut()?;
            dw.slice_mut(s![.., hidden..]).scaled_add(1.0, &dz.t().dot(&cache.x));
            if let Some(hp) = &cache.h_prev {
                dw.slice_mut(s![.., ..hidden]).scaled_add(1.0, &dz.t().dot(hp));
            }
        }
        let mut db = grads.get_mut(gate.bias_name())?.vector_mut();
        db += &dz.sum_axis(Axis(0));
    }
    Ok(())
}
