//! Central finite-difference gradient verification.
//!
//! The caller runs its analytic backward pass first (populating tensor
//! gradients), then hands over a pure loss closure. Coordinates are sampled
//! per tensor so large models stay cheap to check.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::tensor::Parameterized;

#[derive(Debug, Clone)]
pub struct GradCheckOpts {
    /// Central-difference step.
    pub step: f64,
    /// Max coordinates sampled per tensor; all coordinates if the tensor is smaller.
    pub max_coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOpts {
    fn default() -> Self {
        GradCheckOpts {
            step: 1e-5,
            max_coords_per_tensor: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (tensor name, flat coordinate) of the worst disagreement.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// rel err = |a - n| / max(|a|, |n|, 1e-8), maximised over sampled coordinates.
pub fn grad_check<M, F>(model: &mut M, mut loss: F, opts: &GradCheckOpts) -> GradCheckReport
where
    M: Parameterized,
    F: FnMut(&M) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n_tensors = model.tensors().len();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: 0,
    };

    for ti in 0..n_tensors {
        let (len, name) = {
            let t = model.tensors()[ti];
            (t.len(), t.name().to_string())
        };
        let coords: Vec<usize> = if len <= opts.max_coords_per_tensor {
            (0..len).collect()
        } else {
            (0..opts.max_coords_per_tensor)
                .map(|_| rng.gen_range(0..len))
                .collect()
        };

        for &k in &coords {
            let analytic = model.tensors()[ti].grad()[k];
            let orig = model.tensors()[ti].values()[k];

            model.tensors_mut()[ti].values_mut()[k] = orig + opts.step;
            let lp = loss(model);
            model.tensors_mut()[ti].values_mut()[k] = orig - opts.step;
            let lm = loss(model);
            model.tensors_mut()[ti].values_mut()[k] = orig;

            let numeric = (lp - lm) / (2.0 * opts.step);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), k));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::softmax_xent;
    use crate::nn::tensor::{ParamTensor, TensorSet};

    fn quadratic_loss(set: &TensorSet) -> f64 {
        0.5 * set.0[0].values().iter().map(|x| x * x).sum::<f64>()
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        let vals = vec![0.8, -1.3, 2.1, 0.02];
        let mut t = ParamTensor::from_values("p", &[4], vals.clone()).unwrap();
        t.grad_mut().copy_from_slice(&vals); // d(0.5 ||p||^2)/dp = p
        let mut set = TensorSet(vec![t]);
        let report = grad_check(&mut set, quadratic_loss, &GradCheckOpts::default());
        assert!(report.max_rel_err < 1e-9, "rel err = {}", report.max_rel_err);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let vals = vec![0.8, -1.3, 2.1];
        let mut t = ParamTensor::from_values("p", &[3], vals.clone()).unwrap();
        let mut g = vals.clone();
        g[1] += 1.0; // fault injection
        t.grad_mut().copy_from_slice(&g);
        let mut set = TensorSet(vec![t]);
        let report = grad_check(&mut set, quadratic_loss, &GradCheckOpts::default());
        assert!(report.max_rel_err > 0.1, "rel err = {}", report.max_rel_err);
        assert_eq!(report.worst.unwrap().1, 1);
    }

    #[test]
    fn softmax_xent_gradient_passes() {
        let logits = vec![0.3, -0.9, 1.4, 0.0, 2.2];
        let (_, grad) = softmax_xent(&logits, 2).unwrap();
        let mut t = ParamTensor::from_values("logits", &[5], logits).unwrap();
        t.grad_mut().copy_from_slice(&grad);
        let mut set = TensorSet(vec![t]);
        let report = grad_check(
            &mut set,
            |s| softmax_xent(s.0[0].values(), 2).unwrap().0,
            &GradCheckOpts::default(),
        );
        assert!(report.max_rel_err < 1e-8, "rel err = {}", report.max_rel_err);
    }
}
