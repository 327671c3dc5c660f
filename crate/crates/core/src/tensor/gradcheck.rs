//! Central finite-difference verification of analytic gradients.

use super::{Elem, Graph, NodeId, Tensor};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Compares the graph's analytic gradient against central finite differences
/// for every coordinate of every input. Returns the worst relative error.
///
/// `build` receives one variable node per input tensor and must return a
/// scalar node.
pub fn grad_check<T, F>(mut build: F, inputs: &[Tensor<T>], eps: f64) -> f64
where
    T: Elem,
    F: FnMut(&mut Graph<T>, &[NodeId]) -> NodeId,
{
    let coords: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.len()).collect()).collect();
    check_coords(&mut build, inputs, eps, &coords)
}

/// Like [`grad_check`] but verifying at most `max_coords_per_input` randomly
/// sampled coordinates of each input. Deterministic per seed. Full sweeps on
/// multi-million-parameter composites are impractical; sampling keeps the
/// check cheap while still touching every input tensor.
pub fn grad_check_sampled<T, F>(
    mut build: F,
    inputs: &[Tensor<T>],
    eps: f64,
    max_coords_per_input: usize,
    seed: u64,
) -> f64
where
    T: Elem,
    F: FnMut(&mut Graph<T>, &[NodeId]) -> NodeId,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            if t.len() <= max_coords_per_input {
                (0..t.len()).collect()
            } else {
                let mut idx = sample(&mut rng, t.len(), max_coords_per_input).into_vec();
                idx.sort_unstable();
                idx
            }
        })
        .collect();
    check_coords(&mut build, inputs, eps, &coords)
}

fn eval<T, F>(build: &mut F, inputs: &[Tensor<T>]) -> f64
where
    T: Elem,
    F: FnMut(&mut Graph<T>, &[NodeId]) -> NodeId,
{
    let mut g = Graph::new();
    let vars: Vec<NodeId> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.value(out).item().to_f64()
}

fn check_coords<T, F>(
    build: &mut F,
    inputs: &[Tensor<T>],
    eps: f64,
    coords: &[Vec<usize>],
) -> f64
where
    T: Elem,
    F: FnMut(&mut Graph<T>, &[NodeId]) -> NodeId,
{
    // Analytic gradients from one backward pass.
    let mut g = Graph::new();
    let vars: Vec<NodeId> = inputs.iter().map(|t| g.var(t.clone())).collect();
    let out = build(&mut g, &vars);
    assert_eq!(g.value(out).len(), 1, "grad_check target must be scalar");
    g.backward(out).expect("finite loss required for grad check");
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(g);

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor<T>> = inputs.to_vec();
    for (i, coord_list) in coords.iter().enumerate() {
        for &j in coord_list {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + T::from_f64(eps);
            let plus = eval(build, &probe);
            probe[i].data_mut()[j] = orig - T::from_f64(eps);
            let minus = eval(build, &probe);
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let ana = analytic[i].data()[j].to_f64();
            let rel = (ana - numeric).abs() / (ana.abs() + numeric.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::<f64>::new(&[4], vec![0.3, -1.2, 2.0, 0.7]);
        let err = grad_check(
            |g, vars| {
                let s = g.scale(vars[0], 3.5);
                g.mse_const(s, 0.0)
            },
            std::slice::from_ref(&x),
            1e-4,
        );
        // mse is quadratic; central differences are exact on quadratics too
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn swish_gradient_near_half() {
        let x = Tensor::<f64>::scalar(0.5);
        let err = grad_check(
            |g, vars| {
                let y = g.swish(vars[0]);
                g.scale(y, 1.0)
            },
            std::slice::from_ref(&x),
            1e-4,
        );
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn sampled_subset_matches_full_on_small_input() {
        let x = Tensor::<f64>::new(&[3], vec![0.1, 0.2, 0.3]);
        let f = |g: &mut Graph<f64>, vars: &[NodeId]| {
            let y = g.swish(vars[0]);
            g.mse_const(y, 1.0)
        };
        let full = grad_check(f, std::slice::from_ref(&x), 1e-4);
        let sampled = grad_check_sampled(f, std::slice::from_ref(&x), 1e-4, 10, 7);
        assert!((full - sampled).abs() < 1e-12);
    }
}
