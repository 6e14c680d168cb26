use crate::error::{Error, Result};
use crate::harness::model::{Gradients, MlpModel, Velocity};

/// Heavy-ball SGD: `v <- momentum * v + g`, then `w <- w - lr * v`.
///
/// Returns the updated model and velocity; the inputs are left untouched so
/// the caller can discard a step that produced non-finite parameters.
pub fn sgd_momentum_step(
    model: &MlpModel,
    grads: &Gradients,
    velocity: &Velocity,
    lr: f64,
    momentum: f64,
) -> Result<(MlpModel, Velocity)> {
    if !lr.is_finite() {
        return Err(Error::domain(format!(
            "learning rate must be finite, got {lr}"
        )));
    }
    if !momentum.is_finite() {
        return Err(Error::domain(format!(
            "momentum must be finite, got {momentum}"
        )));
    }
    let n = model.params().layers.len();
    if grads.layers.len() != n || velocity.layers.len() != n {
        return Err(Error::Shape(
            "gradient/velocity layer count differs from model".into(),
        ));
    }
    let mut next = model.clone();
    let mut v_next = velocity.clone();
    for ((p, g), v) in next
        .params_mut()
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut v_next.layers)
    {
        if g.weights.len() != p.weights.len()
            || g.biases.len() != p.biases.len()
            || v.weights.len() != p.weights.len()
            || v.biases.len() != p.biases.len()
        {
            return Err(Error::Shape(
                "gradient/velocity layer widths differ from model".into(),
            ));
        }
        let pairs = p
            .weights
            .iter_mut()
            .zip(&g.weights)
            .zip(&mut v.weights)
            .chain(p.biases.iter_mut().zip(&g.biases).zip(&mut v.biases));
        for ((w, &g), v) in pairs {
            *v = momentum * *v + g;
            *w -= lr * *v;
        }
    }
    Ok((next, v_next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::model::{Activation, ParamBuffers, ParamIndex};

    const W: ParamIndex = ParamIndex::Weight { layer: 0, index: 0 };

    fn scalar(w: f64) -> MlpModel {
        let mut m = MlpModel::zeros(&[1, 1], Activation::Tanh).unwrap();
        m.set(W, w);
        m
    }

    fn buf(v: f64) -> ParamBuffers {
        let mut b = ParamBuffers::zeros(&[1, 1]);
        b.layers[0].weights[0] = v;
        b
    }

    #[test]
    fn plain_sgd_step() {
        let (m, v) = sgd_momentum_step(&scalar(1.0), &buf(0.5), &buf(0.0), 0.1, 0.0).unwrap();
        assert!((m.get(W) - 0.95).abs() < 1e-15);
        assert_eq!(v.get(W), 0.5);
    }

    #[test]
    fn momentum_step() {
        let (m, v) = sgd_momentum_step(&scalar(1.0), &buf(0.5), &buf(0.2), 0.1, 0.9).unwrap();
        assert!((v.get(W) - 0.68).abs() < 1e-15);
        assert!((m.get(W) - 0.932).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_accumulates_velocity_only() {
        let (m, v) = sgd_momentum_step(&scalar(1.0), &buf(0.5), &buf(0.2), 0.0, 0.9).unwrap();
        assert_eq!(m.get(W), 1.0);
        assert!((v.get(W) - 0.68).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(sgd_momentum_step(&scalar(1.0), &buf(0.5), &buf(0.0), f64::NAN, 0.9).is_err());
        let wide = ParamBuffers::zeros(&[2, 1]);
        assert!(matches!(
            sgd_momentum_step(&scalar(1.0), &wide, &buf(0.0), 0.1, 0.9),
            Err(Error::Shape(_))
        ));
    }
}
