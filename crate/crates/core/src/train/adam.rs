use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam hyperparameters. Weight decay is intentionally absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "adam betas must lie in [0,1): beta1={} beta2={}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("adam eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// First and second moments for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamSlot<T> {
    pub name: String,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Optimizer state for one sub-network: a step counter plus per-parameter
/// moments in the network's entry order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub t: u64,
    pub slots: Vec<AdamSlot<T>>,
}

impl<T: Elem> AdamState<T> {
    pub fn new(entries: &[(String, &Tensor<T>)]) -> Self {
        Self {
            t: 0,
            slots: entries
                .iter()
                .map(|(name, tensor)| AdamSlot {
                    name: name.clone(),
                    m: vec![T::zero(); tensor.len()],
                    v: vec![T::zero(); tensor.len()],
                })
                .collect(),
        }
    }
}

/// One Adam update over a parameter set. `params` and `grads` must align
/// with the state's slots; a NaN gradient aborts with the parameter's name.
///
/// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
/// theta <- theta - lr * m-hat / (sqrt(v-hat) + eps)
pub fn adam_step<T: Elem>(
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
    lr: f64,
    params: &mut [(String, &mut Tensor<T>)],
    grads: &[(&str, &[T])],
) -> Result<()> {
    cfg.validate()?;
    if params.len() != state.slots.len() || grads.len() != state.slots.len() {
        return Err(Error::Config(format!(
            "adam_step arity mismatch: {} slots, {} params, {} grads",
            state.slots.len(),
            params.len(),
            grads.len()
        )));
    }
    state.t += 1;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let corr1 = T::from_f64(1.0 - cfg.beta1.powi(state.t as i32));
    let corr2 = T::from_f64(1.0 - cfg.beta2.powi(state.t as i32));
    let lr_t = T::from_f64(lr);
    let eps = T::from_f64(cfg.eps);

    for (slot, ((pname, param), (gname, grad))) in
        state.slots.iter_mut().zip(params.iter_mut().zip(grads))
    {
        if slot.name != *pname || slot.name != *gname {
            return Err(Error::Config(format!(
                "adam_step order mismatch: slot `{}` vs param `{pname}` vs grad `{gname}`",
                slot.name
            )));
        }
        if grad.iter().any(|g| g.is_nan()) {
            return Err(Error::NanGradient {
                param: slot.name.clone(),
            });
        }
        let data = param.data_mut();
        for i in 0..data.len() {
            let g = grad[i];
            slot.m[i] = b1 * slot.m[i] + (one - b1) * g;
            slot.v[i] = b2 * slot.v[i] + (one - b2) * g * g;
            let m_hat = slot.m[i] / corr1;
            let v_hat = slot.v[i] / corr2;
            data[i] = data[i] - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64) -> (AdamState<f64>, Tensor<f64>) {
        let t = Tensor::scalar(value);
        let entries = vec![("p".to_string(), &t)];
        (AdamState::new(&entries), t.clone())
    }

    #[test]
    fn hand_derived_single_step() {
        // theta = 0, g = 2, lr = 1e-3, t = 1:
        // m-hat = 2, v-hat = 4, theta' = -1e-3 * 2 / (2 + 1e-8)
        let (mut state, mut p) = one_param(0.0);
        let grad = [2.0f64];
        adam_step(
            &mut state,
            &AdamConfig::default(),
            1e-3,
            &mut [("p".to_string(), &mut p)],
            &[("p", &grad)],
        )
        .unwrap();
        let expected = -1e-3 * 2.0 / (2.0 + 1e-8);
        assert!((p.item() - expected).abs() < 1e-12, "{}", p.item());
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let (mut state, mut p) = one_param(0.5);
        // one real step to give the moments mass
        adam_step(
            &mut state,
            &AdamConfig::default(),
            1e-3,
            &mut [("p".to_string(), &mut p)],
            &[("p", &[1.0])],
        )
        .unwrap();
        let m1 = state.slots[0].m[0];
        let before = p.item();
        // zero grads: moments decay toward zero; theta still moves because
        // m-hat stays nonzero, so check the moment decay only
        adam_step(
            &mut state,
            &AdamConfig::default(),
            0.0,
            &mut [("p".to_string(), &mut p)],
            &[("p", &[0.0])],
        )
        .unwrap();
        assert!(state.slots[0].m[0].abs() < m1.abs());
        assert_eq!(p.item(), before, "lr 0 must not move parameters");
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let (mut state, mut p) = one_param(0.25);
            for i in 0..50 {
                let g = [((i * 37) % 11) as f64 / 7.0 - 0.5];
                adam_step(
                    &mut state,
                    &AdamConfig::default(),
                    2e-3,
                    &mut [("p".to_string(), &mut p)],
                    &[("p", &g)],
                )
                .unwrap();
            }
            (p.item(), state.slots[0].m[0], state.slots[0].v[0])
        };
        let a = run();
        let b = run();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
        assert_eq!(a.2.to_bits(), b.2.to_bits());
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let (mut state, mut p) = one_param(0.0);
        let err = adam_step(
            &mut state,
            &AdamConfig::default(),
            1e-3,
            &mut [("p".to_string(), &mut p)],
            &[("p", &[f64::NAN])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::NanGradient { param } if param == "p"));
    }
}
