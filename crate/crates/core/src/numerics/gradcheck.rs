//! Finite-difference verification of tape gradients.

use super::{BoundParams, NumericsError, ParamSet, Tape, Var};

/// Worst relative error observed for one named parameter.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for p in &self.params {
            out.push_str(&format!(
                "{}\tmax_rel_err={:.3e}\tat={}\tanalytic={:.6e}\tnumeric={:.6e}\n",
                p.name, p.max_rel_err, p.worst_index, p.analytic, p.numeric
            ));
        }
        out.push_str(&format!(
            "overall\tmax_rel_err={:.3e}\ttolerance={:.1e}\t{}\n",
            self.max_rel_err,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// Compares tape gradients of a scalar loss against central finite
/// differences, parameter scalar by parameter scalar.
///
/// `build` must deterministically construct the loss on a fresh tape from
/// bound parameters; it is re-run twice up front and an error is returned
/// if the two loss values differ. Relative error per scalar is
/// `|ga - gf| / max(|ga|, |gf|, 1e-8)`.
pub fn grad_check<F>(
    params: &ParamSet,
    build: F,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var, NumericsError>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(NumericsError::BadEpsilon(epsilon));
    }

    let eval = |p: &ParamSet| -> Result<f64, NumericsError> {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let loss = build(&mut tape, &bound)?;
        Ok(tape.value(loss).data()[0])
    };

    let l0 = eval(params)?;
    let l1 = eval(params)?;
    if l0 != l1 {
        return Err(NumericsError::NonDeterministicLoss(l0, l1));
    }

    // Analytic gradients from one tape.
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = build(&mut tape, &bound)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport { params: Vec::new(), max_rel_err: 0.0, tolerance };
    let mut work = params.clone();
    for (name, tensor) in params.iter() {
        let analytic = grads.dense(bound.var(name)?, tensor.len());
        let mut check = ParamCheck {
            name: name.to_string(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for idx in 0..tensor.len() {
            let original = tensor.data()[idx];
            work.get_mut(name)?.data_mut()[idx] = original + epsilon;
            let plus = eval(&work)?;
            work.get_mut(name)?.data_mut()[idx] = original - epsilon;
            let minus = eval(&work)?;
            work.get_mut(name)?.data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let ga = analytic[idx];
            let rel = (ga - numeric).abs() / ga.abs().max(numeric.abs()).max(1e-8);
            if rel > check.max_rel_err {
                check.max_rel_err = rel;
                check.worst_index = idx;
                check.analytic = ga;
                check.numeric = numeric;
            }
        }
        report.max_rel_err = report.max_rel_err.max(check.max_rel_err);
        report.params.push(check);
    }
    Ok(report)
}
