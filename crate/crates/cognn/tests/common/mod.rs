//! Shared helpers for the integration tests.

#![allow(dead_code)]

use cognn::tensor::{Bindings, Param, Tape, Tensor};

/// Step and relative tolerance used by every finite-difference check.
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xs = x.to_vec();
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + h;
        let up = f(&xs);
        xs[i] = orig - h;
        let down = f(&xs);
        xs[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// Assert elementwise relative agreement, with the denominator floored at 1
/// so that near-zero entries are compared absolutely.
pub fn assert_close_rel(analytic: &[f64], numeric: &[f64], tol: f64, what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: gradient length");
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1.0);
        assert!(
            rel < tol,
            "{what}[{i}]: analytic {a} vs numeric {n} (rel err {rel:.3e})"
        );
    }
}

/// Compare the tape's gradients of a scalar-valued tensor program against
/// central finite differences in every entry of every input.
///
/// `f` receives the tape and one tracked tensor per entry of `inputs`
/// (given as `(rows, cols, data)`) and must return a `[1, 1]` loss.
pub fn check_gradients<F>(what: &str, inputs: &[(usize, usize, Vec<f64>)], f: F)
where
    F: Fn(&Tape, &[Tensor]) -> Tensor,
{
    // Analytic pass.
    let tape = Tape::new();
    let mut binds = Bindings::default();
    let params: Vec<Param> = inputs
        .iter()
        .enumerate()
        .map(|(i, (r, c, d))| {
            Param::new(
                format!("in{i}"),
                Tensor::from_vec(&[*r, *c], d.clone()).expect("consistent input shape"),
            )
        })
        .collect();
    let tracked: Vec<Tensor> = params
        .iter()
        .map(|p| binds.track(&tape, p).expect("fresh tape"))
        .collect();
    let loss = f(&tape, &tracked);
    assert_eq!(loss.shape(), [1, 1], "{what}: loss must be scalar");
    let grads = loss.backward().expect("backward");
    let named = binds.named_grads(&grads);
    let mut analytic = Vec::new();
    for p in &params {
        let g = named
            .get(&p.name)
            .unwrap_or_else(|| panic!("{what}: no gradient for {}", p.name));
        analytic.extend_from_slice(g.data());
    }

    // Numeric pass over the concatenated input entries.
    let offsets: Vec<usize> = inputs
        .iter()
        .scan(0, |acc, (r, c, _)| {
            let start = *acc;
            *acc += r * c;
            Some(start)
        })
        .collect();
    let flat0: Vec<f64> = inputs.iter().flat_map(|(_, _, d)| d.clone()).collect();
    let mut eval = |flat: &[f64]| -> f64 {
        let tape = Tape::new();
        let mut binds = Bindings::default();
        let tracked: Vec<Tensor> = inputs
            .iter()
            .zip(&offsets)
            .enumerate()
            .map(|(i, ((r, c, _), &o))| {
                let p = Param::new(
                    format!("in{i}"),
                    Tensor::from_vec(&[*r, *c], flat[o..o + r * c].to_vec())
                        .expect("consistent input shape"),
                );
                binds.track(&tape, &p).expect("fresh tape")
            })
            .collect();
        f(&tape, &tracked).data()[0]
    };
    let numeric = numeric_grad(&mut eval, &flat0, FD_STEP);
    assert_close_rel(&analytic, &numeric, FD_TOL, what);
}
