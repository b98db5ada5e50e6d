//! Adaptive-moment optimizer with bias correction.

use crate::error::{MagError, Result};
use crate::model::ParameterSet;
use crate::train::trainer::TrainSpec;

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParameterSet,
    pub v: ParameterSet,
    /// Number of updates applied so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// Apply update number `state.t + 1`:
///
/// ```text
/// m ← β1·m + (1−β1)·g        v ← β2·v + (1−β2)·g²
/// θ ← θ − lr · m̂ / (sqrt(v̂) + ε),   m̂ = m/(1−β1^t), v̂ = v/(1−β2^t)
/// ```
pub fn adam_step(params: &mut ParameterSet, grads: &ParameterSet, state: &mut AdamState, spec: &TrainSpec) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) || !params.same_layout(&state.v) {
        return Err(MagError::Data("optimizer state does not match the parameter layout".into()));
    }
    if grads.iter().any(|(_, g)| !g.is_finite()) {
        return Err(MagError::numeric("gradient"));
    }
    state.t += 1;
    let t = state.t as f64;
    let (b1, b2) = (spec.beta1, spec.beta2);
    let c1 = 1.0 - libm::pow(b1, t);
    let c2 = 1.0 - libm::pow(b2, t);
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= spec.lr * m_hat / (libm::sqrt(v_hat) + spec.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn scalar(v: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("x", Matrix::filled(1, 1, v));
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar(1.5);
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &scalar(0.0), &mut state, &TrainSpec::default()).unwrap();
        assert_eq!(p, scalar(1.5));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let spec = TrainSpec {
            lr: 0.01,
            ..TrainSpec::default()
        };
        for g in [0.3, -4.0, 1e3] {
            let mut p = scalar(0.0);
            let mut state = AdamState::new(&p);
            adam_step(&mut p, &scalar(g), &mut state, &spec).unwrap();
            // m̂ = g, v̂ = g², so the step is lr·|g|/(|g|+ε).
            let moved = p.get("x").unwrap().data()[0].abs();
            let expected = spec.lr * g.abs() / (g.abs() + spec.epsilon);
            assert!((moved - expected).abs() < 1e-15, "{moved} vs {expected}");
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = scalar(0.0);
        let mut state = AdamState::new(&p);
        let r = adam_step(&mut p, &scalar(f64::NAN), &mut state, &TrainSpec::default());
        assert!(matches!(r, Err(MagError::Numeric { .. })));
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = (x − 3)², minimum at 3.
        let spec = TrainSpec {
            lr: 0.1,
            ..TrainSpec::default()
        };
        let mut p = scalar(-2.0);
        let mut state = AdamState::new(&p);
        let mut steps = 0;
        while steps < 500 {
            let x = p.get("x").unwrap().data()[0];
            if (x - 3.0).abs() < 1e-6 && steps > 0 {
                break;
            }
            adam_step(&mut p, &scalar(2.0 * (x - 3.0)), &mut state, &spec).unwrap();
            steps += 1;
        }
        let x = p.get("x").unwrap().data()[0];
        assert!((x - 3.0).abs() < 1e-6, "x = {x} after {steps} steps");
    }
}
