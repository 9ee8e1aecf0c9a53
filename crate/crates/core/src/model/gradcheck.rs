//! Finite-difference check of the analytic gradients.

use super::network::Model;
use super::train::Example;
use super::ModelError;
use crate::seed::rng_for;
use rand::Rng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct GroupError {
    pub name: String,
    /// ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)
    pub relative: f64,
    pub max_abs: f64,
    pub norm: f64,
}

/// Adds uniform noise in ±`scale` to every parameter, so zero-initialized
/// layers take part in the check.
pub fn jitter(model: &mut Model, seed: u64, scale: f64) {
    let mut rng = rng_for(seed, &[]);
    for p in model.params.iter_mut() {
        for x in p.data.iter_mut() {
            *x += rng.gen_range(-scale..scale);
        }
    }
}

fn mean_loss(model: &Model, examples: &[Example]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for ex in examples {
        total += model.loss(&ex.graph, &ex.tokens)?.total;
    }
    Ok(total / examples.len() as f64)
}

/// Central differences with step `h` on every parameter element.
pub fn gradient_check(model: &mut Model, examples: &[Example], h: f64) -> Result<Vec<GroupError>, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut grads = model.zero_grads();
    let scale = 1.0 / examples.len() as f64;
    for ex in examples {
        model.loss_and_grad(&ex.graph, &ex.tokens, scale, &mut grads)?;
    }
    let mut out = Vec::with_capacity(grads.len());
    for (pi, analytic) in grads.iter().enumerate() {
        let (mut diff2, mut a2, mut n2, mut max_abs) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for k in 0..analytic.len() {
            let orig = model.params[pi].data[k];
            model.params[pi].data[k] = orig + h;
            let plus = mean_loss(model, examples)?;
            model.params[pi].data[k] = orig - h;
            let minus = mean_loss(model, examples)?;
            model.params[pi].data[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let d = analytic[k] - numeric;
            diff2 += d * d;
            a2 += analytic[k] * analytic[k];
            n2 += numeric * numeric;
            max_abs = max_abs.max(d.abs());
        }
        let denom = a2.sqrt().max(n2.sqrt());
        out.push(GroupError {
            name: model.names()[pi].clone(),
            relative: if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom },
            max_abs,
            norm: a2.sqrt(),
        });
    }
    Ok(out)
}
