//! Central finite differences for verifying analytic gradients.

use super::Trainable;

/// Central-difference gradient of `f` at `x`.
pub fn finite_difference<F>(f: F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// All parameters of a model, flattened in `params_mut` order.
pub fn flat_params<T: Trainable + Clone>(model: &T) -> Vec<f64> {
    let mut m = model.clone();
    m.params_mut()
        .into_iter()
        .flat_map(|p| p.iter().copied().collect::<Vec<_>>())
        .collect()
}

/// A copy of `model` with its parameters replaced by `theta`.
pub fn with_params<T: Trainable + Clone>(model: &T, theta: &[f64]) -> T {
    let mut m = model.clone();
    let mut it = theta.iter();
    for mut p in m.params_mut() {
        p.iter_mut().for_each(|x| *x = *it.next().expect("theta too short"));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = finite_difference(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
        assert!(relative_error(&g, &[4.0, 3.0]) < 1e-8);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }
}
