//! Central finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::tensor::{Parameterized, Tensor};

/// Maximum relative error per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub per_parameter: Vec<f64>,
}

impl GradCheckReport {
    pub fn max(&self) -> f64 {
        self.per_parameter.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares `analytic` (ordered like `model.parameters()`) against central
/// differences of `loss`.
///
/// The error for a coordinate is `|analytic - fd| / max(1, |fd|)`. With
/// `max_coords = Some(n)` at most `n` evenly strided coordinates per tensor
/// are probed.
pub fn finite_diff_check<M, F>(
    model: &mut M,
    analytic: &[Tensor],
    eps: f64,
    max_coords: Option<usize>,
    mut loss: F,
) -> Result<GradCheckReport>
where
    M: Parameterized + ?Sized,
    F: FnMut(&M) -> Result<f64>,
{
    let count = model.parameters().len();
    if analytic.len() != count {
        return Err(Error::Dimension(format!(
            "{} analytic gradients for {count} parameters",
            analytic.len()
        )));
    }
    let mut per_parameter = Vec::with_capacity(count);
    for (p, grad) in analytic.iter().enumerate() {
        let len = grad.len();
        let stride = match max_coords {
            Some(n) if n > 0 && len > n => len.div_ceil(n),
            _ => 1,
        };
        let mut worst: f64 = 0.0;
        for i in (0..len).step_by(stride) {
            let original = model.parameters()[p].value.data()[i];
            model.parameters_mut()[p].value.data_mut()[i] = original + eps;
            let plus = loss(model);
            model.parameters_mut()[p].value.data_mut()[i] = original - eps;
            let minus = loss(model);
            model.parameters_mut()[p].value.data_mut()[i] = original;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite("finite-difference loss".into()));
            }
            let fd = (plus - minus) / (2.0 * eps);
            let err = (grad.data()[i] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
        per_parameter.push(worst);
    }
    Ok(GradCheckReport { per_parameter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Parameter;

    struct Scalar(Parameter);

    impl Parameterized for Scalar {
        fn parameters(&self) -> Vec<&Parameter> {
            vec![&self.0]
        }
        fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn square_function() {
        let mut s = Scalar(Parameter::new(Tensor::new(&[1], vec![3.0]).unwrap()));
        let analytic = vec![Tensor::new(&[1], vec![6.0]).unwrap()];
        let report = finite_diff_check(&mut s, &analytic, 1e-5, None, |m| {
            let x = m.0.value.data()[0];
            Ok(x * x)
        })
        .unwrap();
        assert!(report.max() < 1e-9);
        assert_eq!(s.0.value.data()[0], 3.0);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut s = Scalar(Parameter::new(Tensor::new(&[1], vec![0.0]).unwrap()));
        let analytic = vec![Tensor::zeros(&[1])];
        let r = finite_diff_check(&mut s, &analytic, 1e-5, None, |_| Ok(f64::NAN));
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let mut s = Scalar(Parameter::new(Tensor::new(&[1], vec![1.0]).unwrap()));
        let analytic = vec![Tensor::new(&[1], vec![5.0]).unwrap()];
        let report =
            finite_diff_check(&mut s, &analytic, 1e-5, None, |m| Ok(m.0.value.data()[0])).unwrap();
        assert!((report.max() - 4.0).abs() < 1e-6);
    }
}
