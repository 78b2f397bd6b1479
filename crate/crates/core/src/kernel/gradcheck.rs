use super::params::ParamSet;
use super::tensor::Real;
use crate::error::{Error, Result};

pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Compares the analytic gradients already accumulated in `params` with
/// central differences `(f(x+eps) - f(x-eps)) / 2eps`, coordinate by
/// coordinate over every trainable parameter. The relative error of a
/// coordinate is `|a - n| / max(|a|, |n|, GRAD_FLOOR)`; the floor sits well
/// above the resolution of central differences in f64, so gradients that
/// vanish exactly do not report roundoff as error.
pub fn finite_diff_check<T, F>(params: &mut ParamSet<T>, eps: f64, mut f: F) -> Result<GradCheckReport>
where
    T: Real,
    F: FnMut(&ParamSet<T>) -> Result<T>,
{
    if eps <= 0.0 {
        return Err(Error::Config("finite-difference eps must be positive".into()));
    }
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_param: String::new(), worst_index: 0, coordinates: 0 };
    let ids: Vec<_> = params.trainable_ids().collect();
    for id in ids {
        let analytic: Vec<f64> = params.get(id).grad().expect("trainable").iter().map(|v| v.to_f64_lossy()).collect();
        for (j, a) in analytic.into_iter().enumerate() {
            let orig = params.get(id).data()[j];
            params.get_mut(id).data_mut()[j] = orig + T::of(eps);
            let plus = f(params)?.to_f64_lossy();
            params.get_mut(id).data_mut()[j] = orig - T::of(eps);
            let minus = f(params)?.to_f64_lossy();
            params.get_mut(id).data_mut()[j] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("objective at `{}`[{j}]", params.name(id))));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            report.coordinates += 1;
            if rel >= report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = params.name(id).to_string();
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}
