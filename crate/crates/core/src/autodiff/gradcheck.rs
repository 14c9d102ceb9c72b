use alloc::vec::Vec;

use super::graph::{Graph, Var};
use crate::tensor::Tensor;

use crate::error::{invalid, Error, Result};

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(invalid!("step must be positive, got {h}"));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteValue { coord: i });
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Backward-pass and central-difference gradients of a scalar graph with
/// respect to all of its inputs, flattened in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    /// `|analytic - numeric| / (|analytic| + |numeric|)` in the Euclidean norm,
    /// 0 when both vanish.
    pub fn relative_error(&self) -> f64 {
        let norm = |v: &mut dyn Iterator<Item = f64>| libm::sqrt(v.map(|x| x * x).sum());
        let diff = norm(&mut self.analytic.iter().zip(&self.numeric).map(|(a, b)| a - b));
        let scale = norm(&mut self.analytic.iter().copied()) + norm(&mut self.numeric.iter().copied());
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }
}

/// Builds the graph of `build` on constant leaves holding `inputs` and
/// compares its gradients with central differences of step `h`.
pub fn check_gradients(
    inputs: &[Tensor],
    h: f64,
    mut build: impl FnMut(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<GradCheck> {
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let loss = build(&mut g, &leaves)?;
    let grads = g.backward_full(loss)?;
    let mut analytic = Vec::new();
    for (leaf, t) in leaves.iter().zip(inputs) {
        match grads.of(*leaf) {
            Some(d) => analytic.extend_from_slice(d.data()),
            None => analytic.extend(core::iter::repeat_n(0.0, t.data().len())),
        }
    }
    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let mut failure = None;
    let numeric = finite_diff_grad(
        |x| {
            let mut g = Graph::new();
            let mut offset = 0;
            let leaves: Vec<Var> = inputs
                .iter()
                .map(|t| {
                    let n = t.data().len();
                    let v = Tensor::from_vec(t.rows(), t.cols(), x[offset..offset + n].to_vec()).expect("same shape");
                    offset += n;
                    g.constant(v)
                })
                .collect();
            match build(&mut g, &leaves).and_then(|l| g.scalar(l)) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &flat,
        h,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(GradCheck {
        analytic,
        numeric: numeric?,
    })
}
