//! Central finite-difference gradient checker.

use crate::error::Result;
use crate::tensor_core::ParamSet;

/// Denominator floor for the relative error, so that near-zero gradients are
/// compared with an absolute tolerance of `tol * RELATIVE_FLOOR`.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// Result of evaluating a differentiable objective at one point.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub grad: ParamSet,
    /// Identifies the smooth piece the point lies in (see
    /// [`Graph::activation_pattern`](crate::tensor_core::Graph::activation_pattern)).
    /// Objectives without kinks return a constant.
    pub pattern: u64,
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Coordinates skipped because a probe crossed a ReLU or max-pool kink.
    pub excluded: usize,
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub h: f64,
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err <= self.tol)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn excluded(&self) -> usize {
        self.params.iter().map(|p| p.excluded).sum()
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_err > self.tol)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares the analytic gradient of `f` at `params` with central differences
/// `(f(p + h e_i) - f(p - h e_i)) / 2h` for every coordinate.
pub fn grad_check<F>(mut f: F, params: &ParamSet, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet) -> Result<Evaluation>,
{
    let base = f(params)?;
    base.grad.check_compatible(params)?;
    let mut probe = params.clone();
    let mut checks = Vec::with_capacity(params.len());

    for (slot, (name, tensor)) in params.iter().enumerate() {
        let analytic = base.grad.iter().nth(slot).map(|(_, g)| g.data().to_vec()).unwrap_or_default();
        let mut check = ParamCheck {
            name: name.to_string(),
            checked: 0,
            excluded: 0,
            max_rel_err: 0.0,
            worst_index: None,
        };
        for i in 0..tensor.numel() {
            let orig = tensor.data()[i];
            set_coord(&mut probe, slot, i, orig + h);
            let plus = f(&probe)?;
            set_coord(&mut probe, slot, i, orig - h);
            let minus = f(&probe)?;
            set_coord(&mut probe, slot, i, orig);

            if plus.pattern != base.pattern || minus.pattern != base.pattern {
                check.excluded += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * h);
            let err = relative_error(analytic[i], numeric);
            check.checked += 1;
            if err > check.max_rel_err || check.worst_index.is_none() {
                check.max_rel_err = err.max(check.max_rel_err);
                check.worst_index = Some(i);
            }
        }
        checks.push(check);
    }
    Ok(GradCheckReport {
        h,
        tol,
        params: checks,
    })
}

fn set_coord(params: &mut ParamSet, slot: usize, index: usize, value: f64) {
    if let Some((_, t)) = params.iter_mut().nth(slot) {
        t.data_mut()[index] = value;
    }
}
