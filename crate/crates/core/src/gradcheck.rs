//! Central finite-difference check of tape gradients.

use crate::autograd::{ParamSet, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TensorReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Analytic and numeric value at the worst entry.
    pub worst_pair: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub tensors: Vec<TensorReport>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorReport> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Magnitude below which gradients of an O(1) loss are compared
/// absolutely; central differences carry rounding noise around `1e-11`.
pub const SCALE_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, SCALE_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_floor(analytic, numeric, SCALE_FLOOR)
}

fn rel_err_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradient of `loss` with `(L(x + h) - L(x - h)) / 2h` for
/// every entry of every tensor in `params` (at most `max_entries` entries
/// per tensor, evenly strided). A tensor the loss never touches must have a
/// zero numeric gradient. The absolute floor grows with `|L|`, since the
/// rounding noise of the difference quotient does.
pub fn check<F>(params: &ParamSet, step: f64, max_entries: usize, loss: F) -> Result<GradReport>
where
    F: Fn(&ParamSet, &mut Tape) -> Result<Var>,
{
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss(p, &mut tape)?;
        Ok(tape.value(l).item())
    };
    let mut tape = Tape::new();
    let l = loss(params, &mut tape)?;
    if !tape.value(l).is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    let grads = tape.backward(l, params);
    let floor = SCALE_FLOOR * tape.value(l).item().abs().max(1.0);

    let mut work = params.clone();
    let mut tensors = Vec::new();
    for id in params.ids() {
        let len = params.get(id).len();
        let stride = len.div_ceil(max_entries.max(1)).max(1);
        let mut worst: f64 = 0.0;
        let mut worst_pair = (0.0, 0.0);
        let mut checked = 0;
        for k in (0..len).step_by(stride) {
            let orig = params.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + step;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - step;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[k]);
            let err = rel_err_floor(analytic, numeric, floor);
            if err >= worst {
                worst = err;
                worst_pair = (analytic, numeric);
            }
            checked += 1;
        }
        tensors.push(TensorReport {
            name: params.name(id).to_string(),
            checked,
            max_rel_err: worst,
            worst_pair,
        });
    }
    Ok(GradReport { tensors })
}
