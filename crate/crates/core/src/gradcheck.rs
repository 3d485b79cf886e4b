//! Central finite differences as an oracle for the analytic adjoints.
//!
//! The oracle only ever evaluates the forward value of a function, so it is
//! independent of every backward rule it is used to check.

use crate::autodiff::{Primitive, Tape, Var};
use crate::error::{Error, Result};
use crate::param::{Bindings, ParamStore};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Floor on the denominator of [`relative_error`].
pub const REL_FLOOR: f64 = 1e-8;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn checksum(store: &ParamStore) -> u64 {
    // FNV-1a over the raw bits of every entry.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in store.iter() {
        for x in p.tensor.data() {
            for b in x.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    h
}

/// `(f(θ+ε) − f(θ−ε)) / 2ε` for every entry of every trainable parameter.
///
/// `f` is evaluated at the unperturbed point before and after the sweep; any
/// difference between the two (or any drift in the parameter state) means
/// the function is not deterministic and the estimate is rejected.
pub fn finite_diff_gradient<F>(store: &mut ParamStore, epsilon: f64, mut f: F) -> Result<Vec<Option<Tensor>>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(epsilon > 0.0) {
        return Err(Error::contract(format!("epsilon must be positive, got {epsilon}")));
    }
    let before_sum = checksum(store);
    let before = f(store)?;
    let ids: Vec<_> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        if !store.get(id).trainable {
            out.push(None);
            continue;
        }
        let n = store.get(id).tensor.len();
        let mut g = Tensor::zeros(store.get(id).tensor.shape());
        for i in 0..n {
            let orig = store.get(id).tensor.data()[i];
            store.get_mut(id).tensor.data_mut()[i] = orig + epsilon;
            let plus = f(store);
            store.get_mut(id).tensor.data_mut()[i] = orig - epsilon;
            let minus = f(store);
            store.get_mut(id).tensor.data_mut()[i] = orig;
            g.data_mut()[i] = (plus? - minus?) / (2.0 * epsilon);
        }
        out.push(Some(g));
    }
    let after = f(store)?;
    if before.to_bits() != after.to_bits() || checksum(store) != before_sum {
        return Err(Error::OracleInvalid(format!(
            "function value changed between unperturbed evaluations ({before} vs {after})"
        )));
    }
    Ok(out)
}

/// Forward value and reverse-mode gradients for a tape-building function.
pub fn analytic_gradient<F>(store: &ParamStore, f: F) -> Result<(f64, Vec<Option<Tensor>>)>
where
    F: FnOnce(&mut Tape, &Bindings) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bindings = store.bind(&mut tape);
    let out = f(&mut tape, &bindings)?;
    let value = tape.value(out).item()?;
    let grads = bindings.collect(store, tape.backward(out)?);
    Ok((value, grads.iter().map(|g| g.cloned()).collect()))
}

/// Forward value only.
pub fn evaluate<F>(store: &ParamStore, f: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &Bindings) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bindings = store.bind(&mut tape);
    let out = f(&mut tape, &bindings)?;
    tape.value(out).item()
}

/// How far a recorded forward pass is from a point where it is not
/// differentiable: the smallest `|x|` fed to a ReLU and the smallest gap
/// between the two largest entries of a max row. Infinite when neither occurs.
pub fn kink_distance(tape: &Tape) -> f64 {
    let mut d = f64::INFINITY;
    for v in tape.vars() {
        let Some(prim) = tape.primitive(v) else { continue };
        let x = tape.value(tape.inputs(v)[0]);
        match prim {
            Primitive::Relu => {
                d = x.data().iter().fold(d, |m, v| m.min(v.abs()));
            }
            Primitive::MaxLastAxis => {
                let n = *x.shape().last().unwrap_or(&1);
                for row in x.data().chunks(n.max(1)) {
                    let mut top = [f64::NEG_INFINITY; 2];
                    for &v in row {
                        if v > top[0] {
                            top = [v, top[0]];
                        } else if v > top[1] {
                            top[1] = v;
                        }
                    }
                    if row.len() > 1 {
                        d = d.min(top[0] - top[1]);
                    }
                }
            }
            _ => {}
        }
    }
    d
}

#[derive(Debug, Clone)]
pub struct ParamError {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub value: f64,
    pub params: Vec<ParamError>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compare reverse-mode gradients against central differences for every
/// trainable parameter of `store`.
pub fn check<F>(store: &mut ParamStore, epsilon: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var>,
{
    let (value, analytic) = analytic_gradient(store, &f)?;
    let numeric = finite_diff_gradient(store, epsilon, |s| evaluate(s, &f))?;
    let mut params = Vec::new();
    for ((p, a), n) in store.iter().zip(&analytic).zip(&numeric) {
        let (Some(a), Some(n)) = (a, n) else { continue };
        let max_rel_error = a
            .data()
            .iter()
            .zip(n.data())
            .map(|(&x, &y)| relative_error(x, y))
            .fold(0.0, f64::max);
        params.push(ParamError {
            name: p.name.clone(),
            max_rel_error,
            max_abs_grad: a.max_abs(),
        });
    }
    Ok(GradCheck { value, params })
}
