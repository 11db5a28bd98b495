use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Network, NnError, Tensor};

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a ReLU kink.
    pub excluded: usize,
}

/// Smallest gradient magnitude used as the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares backpropagated gradients of `sum(output * R)` (R a fixed random
/// projection) against central differences, in inference mode.
///
/// Checks a random subset of at least `min_coords` parameter coordinates plus
/// up to `min_coords` input coordinates. Coordinates whose perturbation flips
/// the sign of any ReLU input are excluded.
pub fn finite_diff_check(
    net: &Network,
    input: &Tensor,
    eps: f64,
    min_coords: usize,
    seed: u64,
) -> Result<GradCheckReport, NnError> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(NnError::InvalidTensor(format!(
            "eps {eps} outside (0, 1e-2]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = net.infer(input)?;
    let projection: Vec<f64> = (0..base.output().len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let grad_out = Tensor::new(base.output().shape().to_vec(), projection.clone())?;
    let grads = net.backward(&base, &grad_out)?;
    let pattern = net.kink_pattern(&base);

    let scalar = |acts: &super::Activations| -> f64 {
        acts.output()
            .data()
            .iter()
            .zip(&projection)
            .map(|(a, b)| a * b)
            .sum()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded: 0,
    };
    let probe = |report: &mut GradCheckReport,
                 plus: &Network,
                 plus_in: &Tensor,
                 minus: &Network,
                 minus_in: &Tensor,
                 analytic: f64|
     -> Result<(), NnError> {
        let up = plus.infer(plus_in)?;
        let dn = minus.infer(minus_in)?;
        if plus.kink_pattern(&up) != pattern || minus.kink_pattern(&dn) != pattern {
            report.excluded += 1;
            return Ok(());
        }
        let numeric = (scalar(&up) - scalar(&dn)) / (2.0 * eps);
        report.max_rel_error = report.max_rel_error.max(relative_error(analytic, numeric));
        report.checked += 1;
        Ok(())
    };

    // Parameter coordinates, addressed as (buffer, offset) over the flat order.
    let lens: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
    let total: usize = lens.iter().sum();
    let analytic_params: Vec<f64> = grads.param_slices().concat();
    let picks = sample(&mut rng, total, min_coords.min(total)).into_vec();
    for flat in picks {
        let (mut buf, mut off) = (0, flat);
        while off >= lens[buf] {
            off -= lens[buf];
            buf += 1;
        }
        let mut plus = net.clone();
        plus.param_slices_mut()[buf][off] += eps;
        let mut minus = net.clone();
        minus.param_slices_mut()[buf][off] -= eps;
        probe(
            &mut report,
            &plus,
            input,
            &minus,
            input,
            analytic_params[flat],
        )?;
    }

    let in_picks = sample(&mut rng, input.len(), min_coords.min(input.len())).into_vec();
    for i in in_picks {
        let mut up = input.clone();
        up.data_mut()[i] += eps;
        let mut dn = input.clone();
        dn.data_mut()[i] -= eps;
        probe(&mut report, net, &up, net, &dn, grads.input.data()[i])?;
    }
    Ok(report)
}
