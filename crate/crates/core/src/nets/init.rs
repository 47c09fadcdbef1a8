use rand::Rng;

use crate::array::Array;
use crate::autodiff::{ParamGroup, ParameterSet};

/// Uniform fan-in init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), for both
/// weights and biases.
pub fn linear(
    params: &mut ParameterSet,
    group: ParamGroup,
    rng: &mut impl Rng,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    let b: Vec<f64> = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    params.insert(&format!("{name}.w"), group, Array::mat(fan_in, fan_out, w));
    params.insert(&format!("{name}.b"), group, Array::new(vec![fan_out], b));
}

pub fn zeros(
    params: &mut ParameterSet,
    group: ParamGroup,
    name: &str,
    shape: &[usize],
) {
    params.insert(name, group, Array::zeros(shape));
}

pub fn constant(
    params: &mut ParameterSet,
    group: ParamGroup,
    name: &str,
    shape: &[usize],
    value: f64,
) {
    params.insert(name, group, Array::full(shape, value));
}
