use crate::{Error, Result};

/// Lower clamp applied before exponentiation.
pub const GEM_EPS: f64 = 1e-6;

/// Default GeM exponent.
pub const DEFAULT_GEM_P: f64 = 3.0;

/// Generalised-mean pooling of a `K × D` feature map into `D` values:
/// `out_d = ((1/K) Σ_k max(f_kd, ε)^p)^(1/p)`.
///
/// `p = 1` is average pooling; large `p` approaches max pooling.
pub fn gem_pool<R: AsRef<[f64]>>(features: &[R], p: f64) -> Result<Vec<f64>> {
    let Some(first) = features.first() else {
        return Err(Error::invalid("gem_pool on an empty feature map"));
    };
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::invalid(format!("gem exponent must be >= 1, got {p}")));
    }
    let dim = first.as_ref().len();
    let mut acc = vec![0.0f64; dim];
    for row in features {
        let row = row.as_ref();
        if row.len() != dim {
            return Err(Error::invalid("gem_pool rows have differing lengths"));
        }
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v.max(GEM_EPS).powf(p);
        }
    }
    let k = features.len() as f64;
    Ok(acc.into_iter().map(|a| (a / k).powf(1.0 / p)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_row_is_returned() {
        for p in [1.0, 2.0, 3.0, 7.5] {
            let out = gem_pool(&[vec![0.5, 2.0, 9.0]], p).unwrap();
            for (a, b) in out.iter().zip([0.5, 2.0, 9.0]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn p_one_is_the_mean() {
        let out = gem_pool(&[vec![1.0, 3.0], vec![3.0, 1.0]], 1.0).unwrap();
        assert_eq!(out, vec![2.0, 2.0]);
    }

    #[test]
    fn cubic_mean_by_hand() {
        let out = gem_pool(&[vec![1.0, 0.001], vec![2.0, 0.001]], 3.0).unwrap();
        let expected = (4.5f64).cbrt(); // ((1 + 8) / 2)^(1/3)
        assert!((out[0] - expected).abs() < 1e-12);
        assert!((out[0] - 1.6510).abs() < 1e-4);
        assert!((out[1] - 0.001).abs() < 1e-12);
    }

    #[test]
    fn large_p_approaches_max() {
        let out = gem_pool(&[vec![1.0], vec![4.0], vec![2.0]], 200.0).unwrap();
        assert!((out[0] - 4.0).abs() < 0.03);
    }

    #[test]
    fn empty_map_is_rejected() {
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(matches!(gem_pool(&empty, 3.0), Err(Error::InvalidArgument(_))));
    }

    proptest! {
        #[test]
        fn p_one_equals_column_mean(rows in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 4), 1..20)) {
            let out = gem_pool(&rows, 1.0).unwrap();
            for d in 0..4 {
                let mean = rows.iter().map(|r| r[d].max(GEM_EPS)).sum::<f64>() / rows.len() as f64;
                prop_assert!((out[d] - mean).abs() < 1e-12);
            }
        }

        #[test]
        fn monotone_in_p(rows in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 3), 1..20)) {
            let pooled: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 4.0].iter().map(|&p| gem_pool(&rows, p).unwrap()).collect();
            for w in pooled.windows(2) {
                for d in 0..3 {
                    prop_assert!(w[1][d] >= w[0][d] - 1e-12);
                }
            }
        }
    }
}
