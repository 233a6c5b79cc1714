//! Central finite differences against analytic gradients.

use rand::seq::index::sample;

use super::params::{Gradients, Parameters};
use crate::error::{Error, Result};
use crate::rng::seeded;

pub const MIN_SAMPLES_PER_TENSOR: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` with `(loss(p + eps) - loss(p - eps)) / 2 eps` on a
/// seeded sample of at least [`MIN_SAMPLES_PER_TENSOR`] entries per tensor
/// (every entry for smaller tensors). `params` is restored afterwards.
pub fn grad_check<P, F>(
    params: &mut P,
    analytic: &Gradients,
    mut loss: F,
    epsilon: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    P: Parameters,
    F: FnMut(&P) -> Result<f64>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let shapes: Vec<(String, usize)> = params.tensors().iter().map(|t| (t.name.clone(), t.len())).collect();
    if analytic.0.len() != shapes.len() || analytic.0.iter().zip(&shapes).any(|(g, (_, n))| g.len() != *n) {
        return Err(Error::ShapeMismatch("gradients do not align with parameters".into()));
    }
    let per_tensor = samples_per_tensor.max(MIN_SAMPLES_PER_TENSOR);
    let mut rng = seeded(seed);
    let mut tensors = Vec::with_capacity(shapes.len());
    for (ti, (name, len)) in shapes.into_iter().enumerate() {
        let indices: Vec<usize> =
            if len <= per_tensor { (0..len).collect() } else { sample(&mut rng, len, per_tensor).into_vec() };
        let mut worst: f64 = 0.0;
        for &i in &indices {
            let original = params.tensors()[ti].data[i];
            params.tensors_mut()[ti].data[i] = original + epsilon;
            let plus = loss(params);
            params.tensors_mut()[ti].data[i] = original - epsilon;
            let minus = loss(params);
            params.tensors_mut()[ti].data[i] = original;
            let numeric = (plus? - minus?) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic.0[ti][i], numeric));
        }
        tensors.push(TensorCheck { name, checked: indices.len(), max_rel_error: worst });
    }
    Ok(GradCheckReport { tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::head::{Head, HeadKind};
    use crate::encoder::loss::{head_backward, head_objective, Labels};

    #[test]
    fn linear_head_is_exact() {
        let mut head = Head::new(HeadKind::Regression, 6, 9).unwrap();
        head.bias_mut().data = vec![0.3];
        let reps: Vec<f64> = (0..30).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect();
        let labels = Labels::Values(vec![0.5, -1.0, 2.0, 0.0, 1.5]);
        let (_, d_out) = head_objective(&head, &reps, &labels).unwrap();
        let (grads, _) = head_backward(&head, &reps, &d_out);
        let report = grad_check(&mut head, &grads, |h| Ok(head_objective(h, &reps, &labels)?.0), 1e-5, 20, 0).unwrap();
        assert!(report.max_rel_error() <= 1e-7, "{report:?}");
        assert_eq!(report.tensors[0].checked, 6);
    }

    #[test]
    fn classification_head_matches_differences() {
        let mut head = Head::new(HeadKind::Classification { num_classes: 3 }, 4, 2).unwrap();
        for (i, w) in head.weight_mut().data.iter_mut().enumerate() {
            *w = (i as f64 * 0.37).sin();
        }
        let reps: Vec<f64> = (0..16).map(|i| (i as f64 * 0.21).cos()).collect();
        let labels = Labels::Classes(vec![0, 2, 1, 2]);
        let (_, d_out) = head_objective(&head, &reps, &labels).unwrap();
        let (grads, _) = head_backward(&head, &reps, &d_out);
        let report = grad_check(&mut head, &grads, |h| Ok(head_objective(h, &reps, &labels)?.0), 1e-5, 20, 0).unwrap();
        assert!(report.max_rel_error() <= 1e-6, "{report:?}");
    }

    #[test]
    fn nonpositive_epsilon_is_rejected() {
        let mut head = Head::new(HeadKind::Regression, 2, 0).unwrap();
        let grads = Gradients::zeros_like(&head);
        for eps in [0.0, -1e-5, f64::NAN] {
            let r = grad_check(&mut head, &grads, |_| Ok(0.0), eps, 20, 0);
            assert!(matches!(r, Err(Error::InvalidArgument(_))));
        }
    }
}
