use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::lstm::{cell_backward_batch, cell_forward_batch, CellCache, GATES};
use super::{LearnerConfig, LearnerKind};
use crate::error::{Error, Result};
use crate::tensor::{ParameterSet, Tensor};

const LOGITS_WEIGHT: &str = "logits.weight";
const LOGITS_BIAS: &str = "logits.bias";

fn dense_weight(i: usize) -> String {
    format!("dense{i}.weight")
}

fn dense_bias(i: usize) -> String {
    format!("dense{i}.bias")
}

/// Ordered `(name, shape)` list of every tensor the configured model owns.
pub fn parameter_layout(config: &LearnerConfig) -> Vec<(String, Vec<usize>)> {
    let mut layout = Vec::new();
    let mut width = config.input_dim;
    if config.kind == LearnerKind::LstmClassifier {
        let h = config.hidden_size;
        for gate in GATES {
            layout.push((gate.weight_name().to_string(), vec![h, h + config.input_dim]));
            layout.push((gate.bias_name().to_string(), vec![h]));
        }
        width = h;
        for (i, &d) in config.dense_sizes.iter().enumerate() {
            layout.push((dense_weight(i), vec![d, width]));
            layout.push((dense_bias(i), vec![d]));
            width = d;
        }
    }
    layout.push((LOGITS_WEIGHT.to_string(), vec![config.num_classes, width]));
    layout.push((LOGITS_BIAS.to_string(), vec![config.num_classes]));
    layout
}

/// Glorot-uniform weights, zero biases. Deterministic in `seed`.
pub fn init_model(config: &LearnerConfig, seed: u64) -> Result<ParameterSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = parameter_layout(config)
        .into_iter()
        .map(|(name, shape)| {
            if let [fan_out, fan_in] = shape[..] {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                let values = (0..fan_out * fan_in).map(|_| dist.sample(&mut rng)).collect();
                Tensor::new(name, shape, values)
            } else {
                Tensor::zeros(name, shape)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ParameterSet::new(tensors)
}

fn check_schema(params: &ParameterSet, config: &LearnerConfig) -> Result<()> {
    let layout = parameter_layout(config);
    let ok = layout.len() == params.len()
        && layout.iter().zip(params.tensors()).all(|((name, shape), t)| t.name() == name && t.shape() == &shape[..]);
    if ok {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "parameters (schema {}) do not match the configured {:?} architecture",
            params.schema_id(),
            config.kind
        )))
    }
}

struct ForwardCache {
    lstm: Option<CellCache>,
    /// Inputs to each dense layer followed by the input to the logit layer.
    layer_inputs: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

fn affine(input: &ArrayView2<'_, f64>, params: &ParameterSet, weight: &str, bias: &str) -> Result<Array2<f64>> {
    let w = params.get(weight)?.matrix()?;
    let b = params.get(bias)?.vector();
    let mut z = input.dot(&w.t());
    z += &b;
    Ok(z)
}

fn forward_cached(params: &ParameterSet, config: &LearnerConfig, features: ArrayView2<'_, f64>) -> Result<ForwardCache> {
    check_schema(params, config)?;
    if features.ncols() != config.input_dim {
        return Err(Error::Shape(format!(
            "features have {} columns, model expects {}",
            features.ncols(),
            config.input_dim
        )));
    }
    let mut layer_inputs = Vec::with_capacity(config.dense_sizes.len() + 1);
    let lstm = match config.kind {
        LearnerKind::SoftmaxRegression => {
            layer_inputs.push(features.to_owned());
            None
        }
        LearnerKind::LstmClassifier => {
            // Tabular rows are length-1 sequences starting from a zero state.
            let cache = cell_forward_batch(params, config.hidden_size, features, None, None)?;
            let mut current = cache.h.clone();
            for i in 0..config.dense_sizes.len() {
                let mut z = affine(&current.view(), params, &dense_weight(i), &dense_bias(i))?;
                z.mapv_inplace(|v| v.max(0.0));
                layer_inputs.push(current);
                current = z;
            }
            layer_inputs.push(current);
            Some(cache)
        }
    };
    let last = layer_inputs.last().expect("at least one layer input");
    let logits = affine(&last.view(), params, LOGITS_WEIGHT, LOGITS_BIAS)?;
    Ok(ForwardCache { lstm, layer_inputs, logits })
}

/// Pre-softmax logits, `[batch, num_classes]`.
pub fn forward(params: &ParameterSet, config: &LearnerConfig, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    Ok(forward_cached(params, config, features)?.logits)
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Data(format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::Data(format!("label {l} at row {i} outside [0, {classes})")));
    }
    Ok(())
}

fn log_sum_exp(row: ndarray::ArrayView1<'_, f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax.
pub fn softmax(logits: &ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let lse = log_sum_exp(row.view());
        row.mapv_inplace(|v| (v - lse).exp());
    }
    out
}

/// Mean sparse categorical cross-entropy.
pub fn loss(logits: &ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    check_labels(labels, logits.nrows(), logits.ncols())?;
    if labels.is_empty() {
        return Err(Error::Data("loss over an empty batch".into()));
    }
    let total: f64 = logits.rows().into_iter().zip(labels).map(|(row, &l)| log_sum_exp(row) - row[l]).sum();
    Ok(total / labels.len() as f64)
}

/// Batch loss together with its gradient (same schema as the parameters).
#[derive(Debug, Clone)]
pub struct Gradient {
    pub loss: f64,
    pub grads: ParameterSet,
}

pub fn backward(
    params: &ParameterSet,
    config: &LearnerConfig,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<Gradient> {
    let cache = forward_cached(params, config, features)?;
    let batch_loss = loss(&cache.logits.view(), labels)?;
    let mut grads = params.zeros_like();

    let n = labels.len() as f64;
    let mut delta = softmax(&cache.logits.view());
    for (mut row, &l) in delta.rows_mut().into_iter().zip(labels) {
        row[l] -= 1.0;
        row.mapv_inplace(|v| v / n);
    }

    let mut layer_grad = |delta: &Array2<f64>, input: &Array2<f64>, weight: &str, bias: &str| -> Result<()> {
        grads.get_mut(weight)?.matrix_mut()?.assign(&delta.t().dot(input));
        grads.get_mut(bias)?.vector_mut().assign(&delta.sum_axis(Axis(0)));
        Ok(())
    };

    let inputs = &cache.layer_inputs;
    layer_grad(&delta, inputs.last().expect("layer input"), LOGITS_WEIGHT, LOGITS_BIAS)?;

    if let Some(lstm) = &cache.lstm {
        let mut upstream = delta.dot(&params.get(LOGITS_WEIGHT)?.matrix()?);
        for i in (0..config.dense_sizes.len()).rev() {
            // inputs[i + 1] is this layer's ReLU output.
            let mut dz = upstream;
            Zip::from(&mut dz).and(&inputs[i + 1]).for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            layer_grad(&dz, &inputs[i], &dense_weight(i), &dense_bias(i))?;
            upstream = dz.dot(&params.get(&dense_weight(i))?.matrix()?);
        }
        cell_backward_batch(lstm, config.hidden_size, &upstream, &mut grads)?;
    }

    Ok(Gradient { loss: batch_loss, grads })
}
