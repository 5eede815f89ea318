//! Central finite-difference checks of analytic gradients.

use serde::Serialize;

use crate::config::{Config, LossConfig};
use crate::data::{DialogueRecord, Utterance, Vocabulary};
use crate::error::Result;
use crate::loss::loss_on_tape;
use crate::model::Model;

pub const FD_EPS: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-3;
/// Denominator floor: below it the relative error becomes an absolute one.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for every coordinate.
pub fn numerical_gradient<F>(mut f: F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let hi = f(&probe);
            probe[i] = x[i] - eps;
            let lo = f(&probe);
            probe[i] = x[i];
            (hi - lo) / (2.0 * eps)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// A two-utterance, three-candidate dialogue with course features.
pub fn tiny_dialogue() -> DialogueRecord {
    let toks = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    DialogueRecord {
        id: "gradcheck".into(),
        utterances: vec![
            Utterance {
                speaker: 1,
                tokens: toks("<speaker1> is eecs280 hard"),
            },
            Utterance {
                speaker: 2,
                tokens: toks("<speaker2> take eecs281"),
            },
        ],
        candidates: vec![toks("yes eecs281"), toks("no idea"), toks("try eecs370 first")],
        labels: vec![1, 0, 0],
        prior_courses: vec!["eecs280".into()],
        suggested_courses: vec!["eecs281".into(), "eecs370".into()],
    }
}

/// A freshly initialized model over the vocabulary of [`tiny_dialogue`].
pub fn tiny_model(cfg: &Config) -> Result<(Model, DialogueRecord)> {
    let record = tiny_dialogue();
    let model = Model::new(cfg.model.clone(), Vocabulary::build([&record]))?;
    Ok((model, record))
}

pub fn model_loss(model: &Model, record: &DialogueRecord, loss: &LossConfig) -> Result<f64> {
    let mut tape = model.tape();
    let scores = model.score_vector(&mut tape, record)?;
    let l = loss_on_tape(&mut tape, loss, scores, &record.labels)?;
    Ok(tape.value(l).item())
}

/// Compares backpropagated gradients with central differences for every
/// parameter entry, or at most `sample` evenly spaced entries per parameter.
pub fn check_model_gradients(
    model: &Model,
    record: &DialogueRecord,
    loss: &LossConfig,
    eps: f64,
    tolerance: f64,
    sample: Option<usize>,
) -> Result<GradCheckReport> {
    let analytic = {
        let mut tape = model.tape();
        let scores = model.score_vector(&mut tape, record)?;
        let l = loss_on_tape(&mut tape, loss, scores, &record.labels)?;
        tape.backward(l)?
    };

    let mut probe = model.clone();
    let mut params = Vec::new();
    let ids: Vec<_> = model.params.store.ids().collect();
    for id in ids {
        let n = model.params.store.get(id).len();
        let zeros = vec![0.0; n];
        let grad = analytic.param(id).unwrap_or(&zeros);
        let indices: Vec<usize> = match sample {
            Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
            _ => (0..n).collect(),
        };
        let mut check = ParamCheck {
            name: model.params.store.name(id).to_string(),
            checked: indices.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
        };
        for i in indices {
            let orig = model.params.store.get(id).data()[i];
            probe.params.store.get_mut(id).data_mut()[i] = orig + eps;
            let hi = model_loss(&probe, record, loss)?;
            probe.params.store.get_mut(id).data_mut()[i] = orig - eps;
            let lo = model_loss(&probe, record, loss)?;
            probe.params.store.get_mut(id).data_mut()[i] = orig;
            let numeric = (hi - lo) / (2.0 * eps);
            let rel = relative_error(grad[i], numeric);
            check.max_abs_error = check.max_abs_error.max((grad[i] - numeric).abs());
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_index = i;
            }
        }
        params.push(check);
    }
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params,
        max_rel_error,
        tolerance,
        passed: max_rel_error < tolerance,
    })
}
