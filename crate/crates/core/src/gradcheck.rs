//! Central finite-difference verification of analytic gradients.
//!
//! The checker only ever calls the forward evaluation closure, so it stays
//! independent of the tape's backward rules — the thing it is checking.

/// Worst observed deviation between analytic and numeric gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
}

/// Relative error with a unit floor, the usual gradient-check metric:
/// `|a - b| / max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

/// Probes `indices` of the flat parameter vector with central differences
/// `(f(x+h) - f(x-h)) / 2h` and compares against `analytic`.
pub fn check_gradient(
    mut eval: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    h: f64,
    indices: &[usize],
) -> GradCheck {
    assert_eq!(params.len(), analytic.len());
    let mut work = params.to_vec();
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
    };
    for &i in indices {
        let orig = work[i];
        work[i] = orig + h;
        let fp = eval(&work);
        work[i] = orig - h;
        let fm = eval(&work);
        work[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let e = rel_err(analytic[i], numeric);
        report.checked += 1;
        if e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst_index = i;
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = numeric;
        }
    }
    report
}

/// Convenience: checks every coordinate.
pub fn check_gradient_full(
    eval: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    h: f64,
) -> GradCheck {
    let indices: Vec<usize> = (0..params.len()).collect();
    check_gradient(eval, params, analytic, h, &indices)
}
