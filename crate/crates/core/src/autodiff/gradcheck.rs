use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-3;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub analytic: Tensor,
    pub numeric: Tensor,
    pub max_relative_error: f64,
}

/// Compare the reverse-mode gradient of a scalar function with central differences.
///
/// `f` receives a fresh graph and the input as a gradient-tracking leaf and
/// must return a scalar node.
pub fn finite_diff_gradcheck<F>(f: F, x: &Tensor, step: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::invalid("gradcheck", format!("step must be positive, got {step}")));
    }
    let mut g = Graph::new();
    let xv = g.variable(x.clone());
    let root = f(&mut g, xv)?;
    g.backward(root)?;
    let analytic = g.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |input: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.variable(input);
        let root = f(&mut g, xv)?;
        g.value(root).item().ok_or(Error::NonScalarRoot(g.value(root).shape()))
    };

    let mut numeric = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.data().len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = eval(probe.clone())?;
        probe.data_mut()[i] = orig - step;
        let minus = eval(probe.clone())?;
        probe.data_mut()[i] = orig;
        numeric.data_mut()[i] = (plus - minus) / (2.0 * step);
    }

    let max_relative_error = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max);
    Ok(GradcheckReport { analytic, numeric, max_relative_error })
}
