use serde::{Deserialize, Serialize};

use super::model::forward_unchecked;
use super::{DenseParams, LayerSpec, Mask, NnetError, OutputHead};
use crate::data::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Macro average of `per_class_f1`.
    pub f1: f64,
    pub per_class_f1: Vec<f64>,
}

/// Class decision from a network output: threshold 0.5 for the sigmoid head
/// (exactly 0.5 goes to class 0), argmax with lowest-index ties otherwise.
pub fn predict_class(head: OutputHead, output: &[f64]) -> usize {
    match head {
        OutputHead::SigmoidBce => usize::from(output[0] > 0.5),
        OutputHead::SoftmaxCe => {
            let mut best = 0;
            for (j, &p) in output.iter().enumerate().skip(1) {
                if p > output[best] {
                    best = j;
                }
            }
            best
        }
    }
}

/// Accuracy and macro-F1 from predicted and true class ids.
pub(crate) fn score(predicted: &[usize], labels: &[usize], n_classes: usize) -> Evaluation {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    let mut correct = 0usize;
    for (&p, &y) in predicted.iter().zip(labels) {
        if p == y {
            correct += 1;
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let per_class_f1: Vec<f64> = (0..n_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                log::warn!("class {c} absent from both predictions and labels; F1 counted as 0");
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    Evaluation {
        accuracy: correct as f64 / labels.len() as f64,
        f1: per_class_f1.iter().sum::<f64>() / n_classes as f64,
        per_class_f1,
    }
}

pub fn evaluate(spec: &LayerSpec, params: &DenseParams, mask: &Mask, data: &Dataset) -> Result<Evaluation, NnetError> {
    if data.n_samples() == 0 {
        return Err(NnetError::EmptyData);
    }
    if data.n_features() != spec.inputs() {
        return Err(NnetError::Dimension(format!(
            "data has {} features, network expects {}",
            data.n_features(),
            spec.inputs()
        )));
    }
    params.check_shapes(spec)?;
    mask.check(spec)?;
    let predicted: Vec<usize> = data
        .features
        .rows()
        .into_iter()
        .map(|row| {
            let x = row.as_slice().expect("standard layout rows");
            predict_class(spec.output_head, &forward_unchecked(spec, params, Some(mask), x))
        })
        .collect();
    Ok(score(&predicted, &data.labels, spec.n_classes().max(data.n_classes)))
}
