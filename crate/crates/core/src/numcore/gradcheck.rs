//! Central finite-difference check of tape gradients.

use super::{NumError, ParamSet, Tape, Var};

#[derive(Clone, Debug)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
}

impl FdReport {
    pub fn within(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FdOptions {
    pub step: f64,
    /// Check at most this many evenly spaced entries per tensor.
    pub max_per_tensor: Option<usize>,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            step: 1e-5,
            max_per_tensor: None,
        }
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares tape gradients of `f` against symmetric differences
/// `(f(p + h) - f(p - h)) / 2h` for every selected parameter entry.
///
/// `f` builds a scalar loss on the tape it is given. A closure whose output
/// passes through a hard selection (argmax and the like) has no gradient and
/// should return [`NumError::NonDifferentiable`]; that error is passed through.
pub fn finite_diff_check<F>(
    params: &ParamSet,
    options: FdOptions,
    f: F,
) -> Result<FdReport, NumError>
where
    F: Fn(&mut Tape) -> Result<Var, NumError>,
{
    if options.step <= 0.0 {
        return Err(NumError::Shape(
            "finite-difference step must be positive".into(),
        ));
    }
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |ps: &ParamSet| -> Result<f64, NumError> {
        let mut tape = Tape::new(ps);
        let loss = f(&mut tape)?;
        Ok(tape.scalar(loss))
    };

    let mut probe = params.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        let stride = match options.max_per_tensor {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        for k in (0..n).step_by(stride) {
            let original = params.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = original + options.step;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = original - options.step;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * options.step);
            let a = analytic.get(id).data()[k];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).to_string(), k));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
