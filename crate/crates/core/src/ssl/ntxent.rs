//! NT-Xent over `2N` projections laid out as `[a_0..a_{N-1}, b_0..b_{N-1}]`;
//! the positive partner of row `i` is row `(i + N) mod 2N`.

use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.5;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Loss averaged over all `2N` anchors and its gradient with respect to
/// every projection.
pub fn nt_xent_loss(projections: &[Vec<f64>], tau: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let m = projections.len();
    if m < 4 || !m.is_multiple_of(2) {
        return Err(Error::invalid(format!("NT-Xent needs 2N rows with N >= 2, got {m}")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let p = projections[0].len();
    if let Some(bad) = projections.iter().find(|v| v.len() != p) {
        return Err(Error::shape("projection", p, bad.len()));
    }
    let n = m / 2;
    let norms: Vec<f64> = projections.iter().map(|v| norm(v)).collect();
    if norms.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::invalid("zero or non-finite projection vector"));
    }
    let unit: Vec<Vec<f64>> = projections
        .iter()
        .zip(&norms)
        .map(|(v, r)| v.iter().map(|x| x / r).collect())
        .collect();

    let mut sim = vec![0.0; m * m];
    for i in 0..m {
        for k in i..m {
            let s = unit[i].iter().zip(&unit[k]).map(|(a, b)| a * b).sum::<f64>() / tau;
            sim[i * m + k] = s;
            sim[k * m + i] = s;
        }
    }

    // g[i][k] = dL/ds_ik from anchor i
    let mut loss = 0.0;
    let mut g = vec![0.0; m * m];
    let scale = 1.0 / m as f64;
    for i in 0..m {
        let partner = (i + n) % m;
        let row = &sim[i * m..(i + 1) * m];
        let max = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &s)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &s)| (s - max).exp())
            .sum();
        loss += max + z.ln() - row[partner];
        for k in (0..m).filter(|&k| k != i) {
            g[i * m + k] = scale * (row[k] - max).exp() / z;
        }
        g[i * m + partner] -= scale;
    }
    loss *= scale;

    let grads = (0..m)
        .map(|i| {
            // dL/du_i = sum_k (g_ik + g_ki) u_k / tau
            let mut du = vec![0.0; p];
            for k in (0..m).filter(|&k| k != i) {
                let c = (g[i * m + k] + g[k * m + i]) / tau;
                for (d, u) in du.iter_mut().zip(&unit[k]) {
                    *d += c * u;
                }
            }
            // project out the radial component and undo the normalisation
            let radial = du.iter().zip(&unit[i]).map(|(a, b)| a * b).sum::<f64>();
            du.iter()
                .zip(&unit[i])
                .map(|(d, u)| (d - radial * u) / norms[i])
                .collect()
        })
        .collect();
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{finite_diff_grad, max_relative_error};
    use crate::seed::rng_for;
    use rand::Rng;
    use rand_distr::StandardNormal;

    // Direct summation straight from the definition.
    fn oracle(v: &[Vec<f64>], tau: f64) -> f64 {
        let m = v.len();
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            d / (norm(a) * norm(b))
        };
        let mut total = 0.0;
        for i in 0..m {
            let j = (i + m / 2) % m;
            let denom: f64 = (0..m).filter(|&k| k != i).map(|k| (cos(&v[i], &v[k]) / tau).exp()).sum();
            total += -((cos(&v[i], &v[j]) / tau).exp() / denom).ln();
        }
        total / m as f64
    }

    fn random(m: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_for(seed, 0);
        (0..m).map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect()).collect()
    }

    #[test]
    fn identical_rows_give_log_2n_minus_1() {
        for n in 2..6 {
            let v = vec![vec![0.3, -1.0, 2.0]; 2 * n];
            let (l, _) = nt_xent_loss(&v, 0.5).unwrap();
            assert!((l - ((2 * n - 1) as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_pairs() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let (l, _) = nt_xent_loss(&v, 0.5).unwrap();
        assert!((l - (1.0 + 2.0 * (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!((l - 0.2395).abs() < 1e-4);
    }

    #[test]
    fn matches_oracle_and_is_view_symmetric() {
        for seed in 0..20 {
            let v = random(8, 5, seed);
            let (l, _) = nt_xent_loss(&v, 0.7).unwrap();
            assert!((l - oracle(&v, 0.7)).abs() < 1e-12);
            let mut swapped = v[4..].to_vec();
            swapped.extend_from_slice(&v[..4]);
            assert!((nt_xent_loss(&swapped, 0.7).unwrap().0 - l).abs() < 1e-12);
            assert!(l > 0.0);
        }
    }

    #[test]
    fn gradient_check() {
        for seed in 0..30 {
            let (m, p) = (4 + 2 * (seed as usize % 3), 3);
            let v = random(m, p, seed);
            let (_, g) = nt_xent_loss(&v, 0.5).unwrap();
            let flat: Vec<f64> = v.concat();
            let numeric = finite_diff_grad(
                |t| {
                    let rows: Vec<Vec<f64>> = t.chunks(p).map(<[f64]>::to_vec).collect();
                    nt_xent_loss(&rows, 0.5).unwrap().0
                },
                &flat,
                1e-6,
            );
            assert!(max_relative_error(&g.concat(), &numeric) < 1e-4);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(nt_xent_loss(&random(2, 3, 0), 0.5).is_err());
        assert!(nt_xent_loss(&random(5, 3, 0), 0.5).is_err());
        let mut v = random(4, 3, 0);
        v[2] = vec![0.0; 3];
        assert!(nt_xent_loss(&v, 0.5).is_err());
        assert!(nt_xent_loss(&random(4, 3, 0), 0.0).is_err());
    }
}
