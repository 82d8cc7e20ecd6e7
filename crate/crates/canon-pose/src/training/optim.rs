//! Adam with decoupled weight decay, the adversarial-training configuration
//! (beta1 = 0.5, beta2 = 0.9).

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::model::{NetOptState, ParameterSet};

pub const BETA1: f64 = 0.5;
pub const BETA2: f64 = 0.9;
pub const EPS: f64 = 1e-8;

/// One Adam update over a parameter set. `grads` is aligned with the set's
/// entries; `None` slots (parameters the loss does not touch) are skipped.
/// Weight decay is decoupled: `p -= lr * wd * p` on top of the moment step.
pub fn adam_step(
    params: &mut ParameterSet<f32>,
    grads: &[Option<&ArrayD<f32>>],
    state: &mut NetOptState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Dimension(
            "optimizer state is not aligned with the parameter set".into(),
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    let b1 = BETA1 as f32;
    let b2 = BETA2 as f32;
    let lr32 = lr as f32;
    let wd = weight_decay as f32;
    let eps = EPS as f32;
    let bc1 = bc1 as f32;
    let bc2 = bc2 as f32;

    for (i, grad) in grads.iter().enumerate() {
        let Some(g) = grad else { continue };
        if g.shape() != params.value(i).shape() {
            return Err(Error::Dimension(format!(
                "gradient shape {:?} vs parameter {:?}",
                g.shape(),
                params.value(i).shape()
            )));
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let p = params.value_mut(i);
        let ms = m.as_slice_mut().expect("standard layout");
        let vs = v.as_slice_mut().expect("standard layout");
        let ps = p.as_slice_mut().expect("standard layout");
        let gs = g.as_slice().expect("standard layout");
        for k in 0..gs.len() {
            ms[k] = b1 * ms[k] + (1.0 - b1) * gs[k];
            vs[k] = b2 * vs[k] + (1.0 - b2) * gs[k] * gs[k];
            let mhat = ms[k] / bc1;
            let vhat = vs[k] / bc2;
            ps[k] -= lr32 * (mhat / (vhat.sqrt() + eps) + wd * ps[k]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Net, NetworkSpec};
    use ndarray::IxDyn;

    #[test]
    fn adam_moves_against_gradient() {
        let spec = NetworkSpec::with_defaults(16, 4).unwrap();
        let mut params = init_params::<f32>(&spec, Net::Critic, 1).unwrap();
        let before = params.value(0).clone();
        let mut state = NetOptState::zeros_like(&params);
        let grads: Vec<ArrayD<f32>> = (0..params.len())
            .map(|i| ArrayD::from_elem(params.value(i).raw_dim(), 1.0f32))
            .collect();
        let grad_refs: Vec<Option<&ArrayD<f32>>> = grads.iter().map(Some).collect();
        adam_step(&mut params, &grad_refs, &mut state, 0.01, 0.0).unwrap();
        assert_eq!(state.t, 1);
        // Positive gradient everywhere: every weight decreases.
        for (a, b) in params.value(0).iter().zip(before.iter()) {
            assert!(a < b);
        }
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let spec = NetworkSpec::with_defaults(16, 4).unwrap();
        let mut params = init_params::<f32>(&spec, Net::Critic, 2).unwrap();
        let before = params.value(0).clone();
        let mut state = NetOptState::zeros_like(&params);
        let zero: Vec<ArrayD<f32>> = (0..params.len())
            .map(|i| ArrayD::zeros(params.value(i).raw_dim()))
            .collect();
        let grad_refs: Vec<Option<&ArrayD<f32>>> = zero.iter().map(Some).collect();
        adam_step(&mut params, &grad_refs, &mut state, 0.1, 0.5).unwrap();
        for (a, b) in params.value(0).iter().zip(before.iter()) {
            assert!((a - b * (1.0 - 0.1 * 0.5)).abs() < 1e-6);
        }
    }

    #[test]
    fn misaligned_state_rejected() {
        let spec = NetworkSpec::with_defaults(16, 4).unwrap();
        let mut params = init_params::<f32>(&spec, Net::Critic, 3).unwrap();
        let mut state = NetOptState {
            t: 0,
            m: vec![ArrayD::zeros(IxDyn(&[1]))],
            v: vec![ArrayD::zeros(IxDyn(&[1]))],
        };
        let grads: Vec<Option<&ArrayD<f32>>> = vec![None; params.len()];
        assert!(adam_step(&mut params, &grads, &mut state, 0.1, 0.0).is_err());
    }
}
