//! Central finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::tensor::array::Array;
use crate::tensor::graph::{Graph, Var};

/// Finite-difference step. Double precision makes this reliable; single
/// precision would not be.
pub const FD_STEP: f64 = 1e-6;

/// Outcome of a gradient check.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// (input index, entry index) of the worst entry.
    pub worst: (usize, usize),
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

/// Compare reverse-mode gradients of a scalar-valued closure against central
/// finite differences over every entry of every input.
///
/// The closure must be a pure function of the inputs: it receives a fresh
/// graph and leaf vars (in input order) and returns the scalar output var.
/// The relative error is `|a − n| / max(1, |a|, |n|)`, so small gradients are
/// compared absolutely.
pub fn grad_check<F>(f: F, inputs: &[Array]) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |arrays: &[Array]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = arrays.iter().map(|a| g.leaf(a.clone(), false)).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).numel() != 1 {
            return Err(Error::shape(
                "grad_check",
                format!("closure output must be scalar, got {:?}", g.value(out).shape()),
            ));
        }
        Ok(g.value(out).item())
    };

    // Analytic gradients in one reverse sweep.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|a| g.leaf(a.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::shape(
            "grad_check",
            format!("closure output must be scalar, got {:?}", g.value(out).shape()),
        ));
    }
    g.backward(out)?;
    let analytic: Vec<Array> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, a)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Array::zeros(a.shape()))
        })
        .collect();
    for (ii, grad) in analytic.iter().enumerate() {
        if let Some(entry) = grad.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGrad { input: ii, entry });
        }
    }

    let mut work: Vec<Array> = inputs.to_vec();
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    for ii in 0..inputs.len() {
        for e in 0..inputs[ii].numel() {
            let orig = work[ii].data()[e];
            work[ii].data_mut()[e] = orig + FD_STEP;
            let plus = eval(&work)?;
            work[ii].data_mut()[e] = orig - FD_STEP;
            let minus = eval(&work)?;
            work[ii].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            if !numeric.is_finite() {
                return Err(Error::NonFiniteGrad { input: ii, entry: e });
            }
            let a = analytic[ii].data()[e];
            let rel = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (ii, e);
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

/// Run [`grad_check`] and panic with a diagnostic if the error exceeds `tol`.
pub fn assert_grad_check<F>(f: F, inputs: &[Array], tol: f64)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let report = grad_check(f, inputs).expect("grad check failed to run");
    assert!(
        report.max_rel_err < tol,
        "gradient mismatch: rel err {:.3e} ≥ {tol:.1e} at input {} entry {} (analytic {:.9e}, numeric {:.9e})",
        report.max_rel_err,
        report.worst.0,
        report.worst.1,
        report.analytic_at_worst,
        report.numeric_at_worst,
    );
}
