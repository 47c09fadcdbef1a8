use std::collections::BTreeMap;

use crate::array::Array;
use crate::autodiff::{AdError, NodeId, ParamBinder, ParameterSet, Tape};

/// Central-difference gradient check report.
#[derive(Clone, Debug)]
pub struct FdiffReport {
    /// Max relative error per parameter entry, name order.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub pass: bool,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Checks `backward` of the scalar graph built by `build` against central
/// finite differences over every coordinate of every parameter.
///
/// The numeric side re-evaluates the forward pass at perturbed parameters,
/// so it is independent of any gradient rule it is checking.
pub fn finite_diff_check<F>(
    params: &ParameterSet,
    build: F,
    step: f64,
    tol: f64,
) -> Result<FdiffReport, AdError>
where
    F: Fn(&mut Tape, &mut ParamBinder) -> NodeId,
{
    assert!(step > 0.0, "finite_diff_check: step must be positive");
    let analytic = analytic_grads(params, &build)?;

    let mut work = params.clone();
    let mut per_param = Vec::new();
    let mut max_rel = 0.0f64;
    let names: Vec<String> = params.names().map(|s| s.to_string()).collect();
    for name in &names {
        let numel = params.get(name).numel();
        let ana = &analytic[name];
        let mut worst = 0.0f64;
        for idx in 0..numel {
            let orig = work.get(name).data()[idx];
            work.get_mut(name).data_mut()[idx] = orig + step;
            let fp = eval_scalar(&work, &build)?;
            work.get_mut(name).data_mut()[idx] = orig - step;
            let fm = eval_scalar(&work, &build)?;
            work.get_mut(name).data_mut()[idx] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            worst = worst.max(rel_err(ana.data()[idx], numeric));
        }
        max_rel = max_rel.max(worst);
        per_param.push((name.clone(), worst));
    }
    Ok(FdiffReport { per_param, max_rel_err: max_rel, pass: max_rel <= tol })
}

pub(crate) fn analytic_grads<F>(
    params: &ParameterSet,
    build: &F,
) -> Result<BTreeMap<String, Array>, AdError>
where
    F: Fn(&mut Tape, &mut ParamBinder) -> NodeId,
{
    let mut tape = Tape::new();
    let mut binder = ParamBinder::new(params);
    let root = build(&mut tape, &mut binder);
    let grads = tape.backward(root)?;
    Ok(binder.collect(&grads))
}

fn eval_scalar<F>(params: &ParameterSet, build: &F) -> Result<f64, AdError>
where
    F: Fn(&mut Tape, &mut ParamBinder) -> NodeId,
{
    let mut tape = Tape::new();
    let mut binder = ParamBinder::new(params);
    let root = build(&mut tape, &mut binder);
    tape.status()?;
    Ok(tape.value(root).scalar_value())
}
