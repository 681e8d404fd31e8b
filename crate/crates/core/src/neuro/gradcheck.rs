use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NeuroError, ParamStore};

/// Denominator floor so coordinates whose true gradient is zero are judged
/// on absolute error.
const FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter, coordinate, analytic and numeric gradient of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compare the analytic gradient produced by `loss` (which must accumulate
/// into the store's gradient buffers) with central differences. At most
/// `max_coords` coordinates per parameter are checked (0 checks all),
/// preferring coordinates with a non-zero analytic gradient.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    eps: f64,
    max_coords: usize,
    mut loss: F,
) -> Result<GradCheck, NeuroError>
where
    F: FnMut(&mut ParamStore) -> Result<f64, NeuroError>,
{
    store.zero_grads();
    loss(store)?;
    let analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| store.grad(id).data().to_vec())
        .collect();
    store.zero_grads();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut result = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let g = &analytic[id.index()];
        let coords: Vec<usize> = if max_coords == 0 || g.len() <= max_coords {
            (0..g.len()).collect()
        } else {
            let (nonzero, zero): (Vec<usize>, Vec<usize>) =
                (0..g.len()).partition(|&k| g[k] != 0.0);
            let want_zero = (max_coords / 4).min(zero.len());
            let mut picked: Vec<usize> = nonzero
                .choose_multiple(&mut rng, max_coords - want_zero.min(max_coords))
                .copied()
                .collect();
            picked.extend(zero.choose_multiple(&mut rng, want_zero));
            picked.sort_unstable();
            picked
        };
        for k in coords {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + eps;
            let plus = loss(store)?;
            store.value_mut(id).data_mut()[k] = orig - eps;
            let minus = loss(store)?;
            store.value_mut(id).data_mut()[k] = orig;
            store.zero_grads();
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(g[k], numeric);
            result.checked += 1;
            if err > result.max_rel_error || result.worst.is_none() {
                result.max_rel_error = result.max_rel_error.max(err);
                result.worst = Some((store.name(id).to_string(), k, g[k], numeric));
            }
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuro::Init;

    #[test]
    fn quadratic_is_exact() {
        let mut s = ParamStore::new(5);
        let w = s.add("w", &[6], Init::Uniform { fan_in: 1 }).unwrap();
        let check = finite_diff_check(&mut s, 1e-5, 0, |s| {
            let v = s.value(w).data().to_vec();
            for (g, x) in s.grad_mut(w).data_mut().iter_mut().zip(&v) {
                *g += x;
            }
            Ok(0.5 * v.iter().map(|x| x * x).sum::<f64>())
        })
        .unwrap();
        assert!(check.max_rel_error < 1e-9, "{check:?}");
        assert_eq!(check.checked, 6);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut s = ParamStore::new(5);
        s.add("w", &[3], Init::Uniform { fan_in: 1 }).unwrap();
        let check = finite_diff_check(&mut s, 1e-5, 0, |_| Ok(3.0)).unwrap();
        assert_eq!(check.max_rel_error, 0.0);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut s = ParamStore::new(5);
        let w = s.add("w", &[2], Init::Constant(1.0)).unwrap();
        let check = finite_diff_check(&mut s, 1e-5, 0, |s| {
            let x = s.value(w).data()[0];
            s.grad_mut(w).data_mut()[0] += 3.0 * x;
            Ok(x * x)
        })
        .unwrap();
        assert!(check.max_rel_error > 0.3);
    }
}
