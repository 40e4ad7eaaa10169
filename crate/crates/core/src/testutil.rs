//! Finite-difference gradient oracle shared by unit tests.

use crate::tensorgraph::{Graph, Tensor, Var};

/// Relative error `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, floor)`
/// between backward gradients and central differences with step `h`, over
/// every coordinate of every input.
pub(crate) fn grad_check(inputs: &[Tensor<f64>], h: f64, build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let root = build(&mut g, &vars);
        g.value(root).item().unwrap()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &vars);
    g.backward(root).unwrap();
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|&v| {
            g.grad(v)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; g.value(v).len()])
        })
        .collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for t in 0..inputs.len() {
        for i in 0..inputs[t].len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let plus = eval(&work);
            work[t].data_mut()[i] = orig - h;
            let minus = eval(&work);
            work[t].data_mut()[i] = orig;
            numeric.push((plus - minus) / (2.0 * h));
        }
    }
    relative_error(&analytic, &numeric)
}

pub(crate) fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}
