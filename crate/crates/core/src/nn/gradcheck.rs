//! Reverse-mode gradients against central finite differences.

use rand::Rng;

use super::tape::{Tape, Var};
use super::Scalar;
use crate::rng;

/// A scalar function of several 2-D inputs, buildable at either precision.
pub trait Graph {
    fn build<T: Scalar>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Var;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Tensor {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor shape");
        Tensor { data, rows, cols }
    }

    pub fn random(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        Tensor::new((0..rows * cols).map(|_| r.random_range(lo..hi)).collect(), rows, cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Entries checked per input; all of them when the input is smaller.
    pub samples_per_input: usize,
    /// Denominator floor as a fraction of the largest checked gradient.
    pub floor: f64,
    /// Floor for the single-precision comparison, whose rounding scales with
    /// the largest terms rather than with each entry.
    pub floor_f32: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            samples_per_input: 12,
            floor: 1e-3,
            floor_f32: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error_f64: f64,
    /// Single-precision reverse pass against the double-precision differences.
    pub max_rel_error_f32: f64,
    pub checked: usize,
}

fn eval<T: Scalar, G: Graph>(g: &G, inputs: &[Tensor]) -> (T, Vec<Vec<T>>) {
    let mut tape = Tape::<T>::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.param(t.data.iter().map(|&v| T::lit(v)).collect(), t.rows, t.cols))
        .collect();
    let out = g.build(&mut tape, &vars);
    let grads = tape.backward(out);
    let gs = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).map_or_else(|| vec![T::zero(); t.data.len()], <[T]>::to_vec))
        .collect();
    (tape.scalar(out), gs)
}

fn value<G: Graph>(g: &G, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.param(t.data.clone(), t.rows, t.cols))
        .collect();
    let out = g.build(&mut tape, &vars);
    tape.scalar(out)
}

pub fn grad_check<G: Graph>(g: &G, inputs: &[Tensor], opts: &GradCheckOptions) -> GradCheckReport {
    let mut r = rng::seeded(opts.seed);
    let (_, g64) = eval::<f64, G>(g, inputs);
    let (_, g32) = eval::<f32, G>(g, inputs);
    let mut picks = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        let n = t.data.len();
        if n <= opts.samples_per_input {
            picks.extend((0..n).map(|k| (i, k)));
        } else {
            picks.extend((0..opts.samples_per_input).map(|_| (i, r.random_range(0..n))));
        }
    }
    let mut work = inputs.to_vec();
    let numeric: Vec<f64> = picks
        .iter()
        .map(|&(i, k)| {
            let x = work[i].data[k];
            work[i].data[k] = x + opts.step;
            let up = value(g, &work);
            work[i].data[k] = x - opts.step;
            let down = value(g, &work);
            work[i].data[k] = x;
            (up - down) / (2.0 * opts.step)
        })
        .collect();
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rel = |a: f64, n: f64, floor: f64| (a - n).abs() / a.abs().max(n.abs()).max((floor * scale).max(1e-12));
    let mut e64 = 0.0f64;
    let mut e32 = 0.0f64;
    for (&(i, k), &n) in picks.iter().zip(&numeric) {
        e64 = e64.max(rel(g64[i][k], n, opts.floor));
        e32 = e32.max(rel(g32[i][k].as_f64(), n, opts.floor_f32));
    }
    GradCheckReport {
        max_rel_error_f64: e64,
        max_rel_error_f32: e32,
        checked: picks.len(),
    }
}
