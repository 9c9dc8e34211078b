//! Central finite-difference gradient checking.
//!
//! The graph builder is re-run twice per parameter element with the element
//! nudged by ±h, so builders must be deterministic: fix dropout masks with
//! [`Tape::dropout_with_mask`](super::Tape::dropout_with_mask) instead of
//! sampling inside the builder.

use super::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest elementwise error, scaled as `|a - n| / max(1, |a|, |n|)`.
    pub max_rel_err: f64,
    /// `(parameter index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    /// Total elements compared.
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compare analytic gradients of a scalar-valued graph against central
/// differences with step `h` for every element of every parameter.
///
/// `build` receives a fresh tape plus one leaf [`Var`] per parameter (in
/// order) and must return the scalar root.
pub fn check_gradients<F>(
    params: &[Tensor],
    h: f64,
    mut build: F,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = build(&mut tape, &vars)?;
        tape.backward(root)?;
        vars.iter()
            .zip(params)
            .map(|(&v, p)| {
                tape.take_grad(v)
                    .unwrap_or_else(|| Tensor::zeros(p.shape()))
            })
            .collect()
    };

    let eval = |params: &[Tensor], build: &mut F| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = build(&mut tape, &vars)?;
        Ok(tape.value(root).item())
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let plus = eval(&work, &mut build)?;
            work[pi].data_mut()[ei] = orig - h;
            let minus = eval(&work, &mut build)?;
            work[pi].data_mut()[ei] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi].data()[ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((pi, ei));
            }
        }
    }
    Ok(report)
}
