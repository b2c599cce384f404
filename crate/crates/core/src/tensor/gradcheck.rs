use rand::Rng;

use super::{Graph, ParamStore, Var};
use crate::seed;

/// Coordinates sampled per check (all of them if the model is smaller).
const SAMPLED_COORDS: usize = 256;
/// Denominator floor so vanishing gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Parameter path and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// on a seeded sample of parameter coordinates.
///
/// `loss_fn` must build a deterministic scalar loss from the given store.
/// Relative error is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<F>(loss_fn: F, store: &ParamStore, eps: f64) -> GradCheckReport
where
    F: Fn(&mut Graph, &ParamStore) -> Var,
{
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store);
    let analytic = g.backward(loss).into_params();

    let mut coords: Vec<(String, usize)> = Vec::new();
    for (path, t) in store.iter() {
        coords.extend((0..t.len()).map(|i| (path.to_string(), i)));
    }
    if coords.len() > SAMPLED_COORDS {
        let mut rng = seed::rng(0, &[b"grad-check"]);
        // Partial Fisher-Yates: the first SAMPLED_COORDS entries are a
        // uniform sample without replacement.
        for i in 0..SAMPLED_COORDS {
            let j = rng.gen_range(i..coords.len());
            coords.swap(i, j);
        }
        coords.truncate(SAMPLED_COORDS);
    }

    let eval = |s: &ParamStore| {
        let mut g = Graph::new();
        let l = loss_fn(&mut g, s);
        g.value(l).item()
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: coords.len(),
        worst: None,
    };
    for (path, i) in coords {
        let original = store.get(&path).expect("sampled from store").data()[i];
        work.get_mut(&path).unwrap().data_mut()[i] = original + eps;
        let plus = eval(&work);
        work.get_mut(&path).unwrap().data_mut()[i] = original - eps;
        let minus = eval(&work);
        work.get_mut(&path).unwrap().data_mut()[i] = original;

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.get(&path).map_or(0.0, |t| t.data()[i]);
        let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
        let rel = (a - numeric).abs() / denom;
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((path, i));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamSpec, Tensor};

    fn inputs(rows: usize, cols: usize, phase: f64) -> Tensor {
        let data = (0..rows * cols)
            .map(|i| ((i as f64) * 0.73 + phase).sin())
            .collect();
        Tensor::new([rows, cols], data)
    }

    #[test]
    fn linear_model_is_exact() {
        let store = ParamStore::init(
            5,
            &[ParamSpec::weight("w", [4, 2]), ParamSpec::weight("b", [2])],
        );
        let x = inputs(6, 4, 0.1);
        let report = grad_check(
            |g, s| {
                let xi = g.input(x.clone());
                let w = g.param(s, "w");
                let b = g.param(s, "b");
                let y = g.matmul(xi, w);
                let y = g.add_row(y, b);
                g.sum(y)
            },
            &store,
            1e-4,
        );
        assert!(report.max_rel_error < 1e-7, "{report:?}");
    }

    fn three_layer(g: &mut Graph, s: &ParamStore, x: &Tensor, corrupt: bool) -> Var {
        let xi = g.input(x.clone());
        let mut h = xi;
        for (layer, act) in ["l1", "l2", "l3"].iter().zip(0..) {
            let w = g.param(s, &format!("{layer}/w"));
            let b = g.param(s, &format!("{layer}/b"));
            h = g.matmul(h, w);
            h = g.add_row(h, b);
            h = match act {
                0 if corrupt => g.map(h, f64::tanh, |x| 0.5 * (1.0 - x.tanh().powi(2))),
                0 => g.tanh(h),
                1 => g.sigmoid(h),
                _ => h,
            };
        }
        let p = g.softmax(h);
        let sq = g.squared_error(p, Tensor::full(g.value(p).shape().to_vec(), 0.25));
        let ce = g.cross_entropy(h, &[0, 1, 2, 0, 1]);
        g.add(sq, ce)
    }

    fn mlp_store() -> ParamStore {
        ParamStore::init(
            11,
            &[
                ParamSpec::weight("l1/w", [6, 12]),
                ParamSpec::weight("l1/b", [12]),
                ParamSpec::weight("l2/w", [12, 12]),
                ParamSpec::weight("l2/b", [12]),
                ParamSpec::weight("l3/w", [12, 3]),
                ParamSpec::weight("l3/b", [3]),
            ],
        )
    }

    #[test]
    fn three_layer_net_matches_central_differences() {
        let x = inputs(5, 6, 0.4);
        let report = grad_check(|g, s| three_layer(g, s, &x, false), &mlp_store(), 1e-4);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert!(report.coords_checked >= 200);
    }

    #[test]
    fn corrupted_derivative_is_detected() {
        let x = inputs(5, 6, 0.4);
        let report = grad_check(|g, s| three_layer(g, s, &x, true), &mlp_store(), 1e-4);
        assert!(report.max_rel_error > 1e-2, "{report:?}");
    }
}
