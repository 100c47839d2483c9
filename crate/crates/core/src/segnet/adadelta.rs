use crate::error::{Error, Result};

/// Running averages of squared gradients and squared updates.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub accum_grad_sq: Vec<f64>,
    pub accum_update_sq: Vec<f64>,
}

impl OptimizerState {
    pub fn zeros(len: usize) -> Self {
        OptimizerState {
            accum_grad_sq: vec![0.0; len],
            accum_update_sq: vec![0.0; len],
        }
    }
}

/// One AdaDelta update, in place. A non-finite gradient entry aborts the
/// step before anything is modified.
pub fn adadelta_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut OptimizerState,
    rho: f64,
    eps: f64,
) -> Result<()> {
    if grad.len() != params.len()
        || state.accum_grad_sq.len() != params.len()
        || state.accum_update_sq.len() != params.len()
    {
        return Err(Error::Shape(format!(
            "params {}, grad {}, state {}/{}",
            params.len(),
            grad.len(),
            state.accum_grad_sq.len(),
            state.accum_update_sq.len()
        )));
    }
    if !(rho > 0.0 && rho < 1.0) || !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "AdaDelta needs 0 < rho < 1 and eps > 0, got {rho}, {eps}"
        )));
    }
    let bad: Vec<usize> = (0..grad.len()).filter(|&i| !grad[i].is_finite()).collect();
    if let Some(&index) = bad.first() {
        return Err(Error::NonFiniteGradient {
            index,
            value: grad[index],
            count: bad.len(),
        });
    }
    for i in 0..params.len() {
        let g = grad[i];
        let eg = rho * state.accum_grad_sq[i] + (1.0 - rho) * g * g;
        let dx = -((state.accum_update_sq[i] + eps).sqrt() / (eg + eps).sqrt()) * g;
        state.accum_grad_sq[i] = eg;
        state.accum_update_sq[i] = rho * state.accum_update_sq[i] + (1.0 - rho) * dx * dx;
        params[i] += dx;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn first_step_closed_form() {
        let (rho, eps) = (0.95, 1e-6);
        let g = [0.3, -2.0, 1e-4];
        let mut x = [1.0, 1.0, 1.0];
        let mut state = OptimizerState::zeros(3);
        adadelta_step(&mut x, &g, &mut state, rho, eps).unwrap();
        for i in 0..3 {
            let expect = -(eps.sqrt() / ((1.0 - rho) * g[i] * g[i] + eps).sqrt()) * g[i];
            assert_relative_eq!(x[i] - 1.0, expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut x = vec![0.5, -3.0];
        let mut state = OptimizerState::zeros(2);
        for _ in 0..10 {
            adadelta_step(&mut x, &[0.0, 0.0], &mut state, 0.95, 1e-6).unwrap();
        }
        assert_eq!(x, vec![0.5, -3.0]);
    }

    #[test]
    fn descends_on_a_parabola() {
        let mut x = [5.0];
        let mut state = OptimizerState::zeros(1);
        for _ in 0..200 {
            let g = [2.0 * x[0]];
            adadelta_step(&mut x, &g, &mut state, 0.95, 1e-6).unwrap();
        }
        assert!(x[0].abs() < 5.0);
        assert!(x[0] * x[0] < 25.0);
        assert!(state.accum_grad_sq[0] >= 0.0 && state.accum_update_sq[0] >= 0.0);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut x = vec![1.0, 2.0, 3.0];
        let mut state = OptimizerState::zeros(3);
        let err = adadelta_step(
            &mut x,
            &[0.1, f64::NAN, f64::INFINITY],
            &mut state,
            0.95,
            1e-6,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::NonFiniteGradient {
                index: 1,
                count: 2,
                ..
            }
        ));
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
        assert_eq!(state, OptimizerState::zeros(3));
    }

    #[test]
    fn shape_and_hyperparameter_errors() {
        let mut state = OptimizerState::zeros(2);
        assert!(adadelta_step(&mut [0.0], &[0.0], &mut state, 0.95, 1e-6).is_err());
        let mut state = OptimizerState::zeros(1);
        assert!(adadelta_step(&mut [0.0], &[0.0], &mut state, 1.0, 1e-6).is_err());
        assert!(adadelta_step(&mut [0.0], &[0.0], &mut state, 0.9, 0.0).is_err());
    }
}
