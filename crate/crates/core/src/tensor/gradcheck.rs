use super::{NodeId, Tape, Tensor};
use crate::elem::Elem;
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    /// Max relative error per checked input, in input order.
    pub per_input: Vec<f64>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub pass: bool,
}

const DENOM_FLOOR: f64 = 1e-6;

/// Check the tape's reverse-mode gradients of a scalar-valued function
/// against central finite differences with the given step.
///
/// `f` is rebuilt on a fresh tape for every perturbed evaluation, so it must
/// be a pure function of its inputs. Relative error per element is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn gradcheck<T, F>(f: F, inputs: &[Tensor<T>], step: f64, tol: f64) -> Result<GradcheckReport>
where
    T: Elem,
    F: Fn(&mut Tape<T>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |tensors: &[Tensor<T>], with_grad: bool| -> Result<(Tape<T>, Vec<NodeId>, NodeId)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), with_grad))
            .collect();
        let root = f(&mut tape, &ids)?;
        if !tape.value(root).is_scalar() {
            return Err(Error::Domain {
                op: "gradcheck",
                detail: format!("f must return a scalar, got shape {:?}", tape.shape(root)),
            });
        }
        Ok((tape, ids, root))
    };

    let (mut tape, ids, root) = eval(inputs, true)?;
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(id, t)| match tape.grad(*id) {
            Some(g) => g.data().iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; t.len()],
        })
        .collect();

    let mut per_input = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let mut worst = 0.0f64;
        for j in 0..input.len() {
            let base = input.data()[j].as_f64();
            let probe = |x: f64| -> Result<f64> {
                let mut shifted = inputs.to_vec();
                shifted[i].data_mut()[j] = T::from_f64(x);
                let (t, _, r) = eval(&shifted, false)?;
                Ok(t.value(r).item().as_f64())
            };
            let fp = probe(base + step)?;
            let fm = probe(base - step)?;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[i][j];
            let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            let rel = (a - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
        per_input.push(worst);
    }

    let max_rel_error = per_input.iter().cloned().fold(0.0, f64::max);
    Ok(GradcheckReport {
        per_input,
        max_rel_error,
        tol,
        pass: max_rel_error <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        // dyadic point and step keep every FD evaluation exact
        let x = Tensor::<f64>::new(vec![1], vec![0.5]).unwrap();
        let report = gradcheck(
            |tape, ids| {
                let y = tape.scale(ids[0], 3.0)?;
                tape.sum(y)
            },
            &[x],
            0.25,
            1e-12,
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert!(report.pass);
    }

    #[test]
    fn relu_chain_matches_finite_differences() {
        let mut rng = crate::rng::Rng::new(5);
        let w = Tensor::<f64>::from_fn(vec![4, 3], |_| rng.next_range(-1.0, 1.0));
        let x = Tensor::<f64>::from_fn(vec![1, 3], |_| rng.next_range(-1.0, 1.0));
        let b = Tensor::<f64>::zeros(vec![4]);
        let report = gradcheck(
            |tape, ids| {
                let y = tape.fully_connected(ids[0], ids[1], ids[2])?;
                let r = tape.relu(y)?;
                tape.mean(r)
            },
            &[x, w, b],
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_error);
    }

    #[test]
    fn detached_path_fails_as_negative_control() {
        let x = Tensor::<f64>::new(vec![2], vec![0.3, -0.4]).unwrap();
        let report = gradcheck(
            |tape, ids| {
                // clone the VALUE into a fresh leaf: analytic grad of the
                // original input is zero while the output still moves
                let detached = tape.constant(tape.value(ids[0]).clone());
                tape.sum(detached)
            },
            &[x],
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn non_scalar_output_is_error() {
        let x = Tensor::<f64>::new(vec![2], vec![1.0, 2.0]).unwrap();
        let r = gradcheck(|_tape, ids| Ok(ids[0]), &[x], 1e-4, 1e-4);
        assert!(r.is_err());
    }
}
