//! Central finite-difference checks for tape gradients.

use super::{AutodiffError, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Relative error, falling back to absolute error when both values are
/// below `1e-6` in magnitude.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-6 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares the tape gradient of `f` at `inputs` with central differences of
/// step `h`. `f` must build a scalar from the leaves it is given.
pub fn check_inputs<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |vals: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    let mut vals = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v);
        for j in 0..inputs[i].len() {
            let x0 = vals[i].data()[j];
            vals[i].data_mut()[j] = x0 + h;
            let up = eval(&vals)?;
            vals[i].data_mut()[j] = x0 - h;
            let down = eval(&vals)?;
            vals[i].data_mut()[j] = x0;
            let num = (up - down) / (2.0 * h);
            let e = rel_error(g.data()[j], num);
            report.checked += 1;
            if e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst = Some((format!("input{i}"), j));
            }
        }
    }
    Ok(report)
}

/// Same check over every scalar of a parameter store; `f` reads parameters
/// through [`Tape::param`].
pub fn check_params<F>(store: &ParamStore, h: f64, f: F) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, AutodiffError>,
{
    let eval = |s: &ParamStore| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new();
    let root = f(&mut tape, store)?;
    let grads = tape.backward(root)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    let mut probe = store.clone();
    for id in store.ids() {
        let g = grads.param(id).unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        for j in 0..store.get(id).len() {
            let x0 = store.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = x0 + h;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = x0 - h;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = x0;
            let num = (up - down) / (2.0 * h);
            let e = rel_error(g.data()[j], num);
            report.checked += 1;
            if e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst = Some((store.name(id).to_string(), j));
            }
        }
    }
    Ok(report)
}
