use super::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub probes: usize,
    /// Probes redrawn because the ±h perturbation flipped a ReLU.
    pub rejected: usize,
}

/// Denominator floor for the relative error; below it the comparison is
/// effectively absolute.
const REL_FLOOR: f64 = 1e-6;

fn evaluate<F>(loss: &F, store: &ParamStore) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = loss(&mut tape, store)?;
    Ok((tape.value(out).item()?, tape.relu_pattern()))
}

/// Compares analytic gradients of `loss` with respect to `params` against
/// central differences on `n_probes` random entries.
///
/// A probe whose `+h` or `-h` evaluation lands on a different ReLU
/// activation pattern than the unperturbed point straddles a kink and is
/// redrawn. `store` is restored before returning; the grads of `params` are
/// cleared.
pub fn grad_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    loss: F,
    n_probes: usize,
    h: f64,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if n_probes == 0 || h <= 0.0 {
        return Err(Error::contract("grad_check needs n_probes >= 1 and h > 0"));
    }
    store.clear_grads(params);
    let mut tape = Tape::new();
    let out = loss(&mut tape, store)?;
    tape.backward(out, store)?;
    let base_pattern = tape.relu_pattern();
    drop(tape);

    let sizes: Vec<usize> = params.iter().map(|&id| store.get(id).value.as_slice().len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::contract("grad_check over zero parameter entries"));
    }

    let mut worst = 0.0f64;
    let mut accepted = 0;
    let mut rejected = 0;
    while accepted < n_probes {
        if rejected > 100 * n_probes {
            return Err(Error::contract("grad_check could not find probes away from ReLU kinks"));
        }
        let mut flat = rng.below(total);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let id = params[which];
        let original = store.get(id).value.as_slice()[flat];

        store.get_mut(id).value.as_mut_slice()[flat] = original + h;
        let plus = evaluate(&loss, store);
        store.get_mut(id).value.as_mut_slice()[flat] = original - h;
        let minus = evaluate(&loss, store);
        store.get_mut(id).value.as_mut_slice()[flat] = original;
        let ((f_plus, pat_plus), (f_minus, pat_minus)) = (plus?, minus?);

        if pat_plus != base_pattern || pat_minus != base_pattern {
            rejected += 1;
            continue;
        }
        let numeric = (f_plus - f_minus) / (2.0 * h);
        let analytic = store.get(id).grad.as_slice()[flat];
        let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max((analytic - numeric).abs() / denom);
        accepted += 1;
    }
    store.clear_grads(params);
    Ok(GradCheckReport {
        max_relative_error: worst,
        probes: accepted,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Matrix, Parameter};

    #[test]
    fn quadratic_is_essentially_exact() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(11);
        let vals: Vec<f64> = (0..12).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let id = store.add(Parameter::new("w", Matrix::from_vec(3, 4, vals).unwrap()));
        let report = grad_check(
            &mut store,
            &[id],
            |tape, store| {
                let w = tape.param(store, id);
                let sq = tape.mul(w, w)?;
                Ok(tape.sum(sq))
            },
            50,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-8, "{report:?}");
    }

    #[test]
    fn dead_relu_region_is_handled() {
        // Half of the pre-activations are negative; probes that would cross
        // zero are redrawn.
        let mut store = ParamStore::new();
        let w = store.add(Parameter::new(
            "w",
            Matrix::from_rows(&[vec![1.0, -1.0, 0.5], vec![-0.5, 2.0, -3.0]]).unwrap(),
        ));
        let x = Matrix::from_rows(&[vec![1.0, 0.2], vec![-0.3, 0.9], vec![2.0, -1.0]]).unwrap();
        let mut rng = Rng::new(5);
        let report = grad_check(
            &mut store,
            &[w],
            |tape, store| {
                let xv = tape.constant(x.clone());
                let wv = tape.param(store, w);
                let z = tape.matmul(xv, wv)?;
                let a = tape.relu(z);
                let sq = tape.mul(a, a)?;
                tape.mean(sq)
            },
            100,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }
}
