//! Central finite-difference gradient checking for f64 parameter stores.

use candle_core::{Device, Tensor, Var};
use rand::Rng;

use crate::error::Result;

/// Smallest magnitude treated as a nonzero gradient.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheck {
    /// Largest relative error over the sampled coordinates.
    pub worst: f64,
    pub sampled: usize,
    /// Sampled coordinates whose analytic gradient exceeds [`GRAD_FLOOR`].
    pub informative: usize,
}

impl GradCheck {
    pub fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            worst: self.worst.max(other.worst),
            sampled: self.sampled + other.sampled,
            informative: self.informative + other.informative,
        }
    }
}

fn values(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_vec1::<f64>()?)
}

fn set_element(var: &Var, idx: usize, value: f64) -> Result<()> {
    let mut v = values(var.as_tensor())?;
    v[idx] = value;
    var.set(&Tensor::from_vec(v, var.shape(), &Device::Cpu)?)?;
    Ok(())
}

/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Compares the backpropagated gradient of the scalar `loss` with central
/// differences of step `step` at `coords` random coordinates of `vars`.
/// Every variable must be f64.
pub fn check_gradients(
    vars: &[Var],
    loss: &dyn Fn() -> Result<Tensor>,
    coords: usize,
    step: f64,
    rng: &mut impl Rng,
) -> Result<GradCheck> {
    let grads = loss()?.backward()?;
    let mut out = GradCheck::default();
    for _ in 0..coords {
        let var = &vars[rng.random_range(0..vars.len())];
        let idx = rng.random_range(0..var.elem_count());
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => values(g)?[idx],
            None => 0.0,
        };
        let orig = values(var.as_tensor())?[idx];
        set_element(var, idx, orig + step)?;
        let up = loss()?.to_scalar::<f64>()?;
        set_element(var, idx, orig - step)?;
        let down = loss()?.to_scalar::<f64>()?;
        set_element(var, idx, orig)?;
        let numeric = (up - down) / (2.0 * step);
        out.worst = out.worst.max(relative_error(analytic, numeric));
        out.sampled += 1;
        if analytic.abs() > GRAD_FLOOR {
            out.informative += 1;
        }
    }
    Ok(out)
}
