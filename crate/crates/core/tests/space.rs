use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use stancealign::space::{fit_dataset_space, fit_space, inversion_reflection_check, AnswerMatrix};
use stancealign::survey::Group;
use stancealign::synth;

/// Cyclic Jacobi rotations on a symmetric matrix; returns eigenvalues and
/// eigenvectors (as columns) in descending order.
fn jacobi(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|x, y| a[*y][*y].total_cmp(&a[*x][*x]));
    let vals = idx.iter().map(|i| a[*i][*i]).collect();
    let vecs = idx.iter().map(|i| v.iter().map(|row| row[*i]).collect()).collect();
    (vals, vecs)
}

fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, p) = (rows.len(), rows[0].len());
    let means: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    (0..p)
        .map(|i| {
            (0..p)
                .map(|j| rows.iter().map(|r| (r[i] - means[i]) * (r[j] - means[j])).sum::<f64>() / (n - 1) as f64)
                .collect()
        })
        .collect()
}

fn binary_rows(rng: &mut impl Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..p).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn pca_matches_jacobi_on_random_binary_matrices() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
    let mut compared = 0;
    for _ in 0..200 {
        let rows = binary_rows(&mut rng, 20, 10);
        let Ok(model) = fit_space(&AnswerMatrix::from_rows(rows.clone()).unwrap()) else { continue };
        let cov = covariance(&rows);
        let total: f64 = (0..10).map(|i| cov[i][i]).sum();
        let (vals, vecs) = jacobi(cov);
        assert!((model.total_variance - total).abs() < 1e-10);
        for k in 0..2 {
            assert!((model.explained_variance[k] - vals[k]).abs() < 1e-9);
            if vals[k] - vals[k + 1] > 1e-6 && (k == 0 || vals[k - 1] - vals[k] > 1e-6) {
                assert!((dot(&model.components[k], &vecs[k]).abs() - 1.0).abs() < 1e-7);
            }
        }
        assert!(dot(&model.components[0], &model.components[1]).abs() < 1e-10);
        compared += 1;
    }
    assert!(compared > 150);
}

#[test]
fn inversion_is_a_point_reflection() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let rows = binary_rows(&mut rng, 30, 12);
    let model = fit_space(&AnswerMatrix::from_rows(rows.clone()).unwrap()).unwrap();
    assert!(inversion_reflection_check(&model, &rows).unwrap() < 1e-12);
    let c = model.reflection_center();
    let v = &rows[0];
    let inv: Vec<f64> = v.iter().map(|x| 1.0 - x).collect();
    let (a, b) = (model.project(v).unwrap(), model.project(&inv).unwrap());
    assert!((a.0 + b.0 - c.0).abs() < 1e-12 && (a.1 + b.1 - c.1).abs() < 1e-12);
}

#[test]
fn duplicating_rows_keeps_the_axes() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let rows = binary_rows(&mut rng, 25, 8);
    let a = fit_space(&AnswerMatrix::from_rows(rows.clone()).unwrap()).unwrap();
    let twice: Vec<Vec<f64>> = rows.iter().chain(&rows).cloned().collect();
    let b = fit_space(&AnswerMatrix::from_rows(twice).unwrap()).unwrap();
    for k in 0..2 {
        assert!((dot(&a.components[k], &b.components[k]) - 1.0).abs() < 1e-9);
        assert!((a.explained_ratio()[k] - b.explained_ratio()[k]).abs() < 1e-12);
    }
    assert_eq!(a.column_means, b.column_means);
}

#[test]
fn oriented_synthetic_space_puts_right_at_positive_x() {
    let (d, _) = synth::smartvote(1).unwrap();
    let (model, matrix, _) = fit_dataset_space(&d).unwrap();
    let xs: Vec<f64> = matrix
        .unit_ids
        .iter()
        .zip(&matrix.rows)
        .filter(|(id, _)| d.unit(id).unwrap().group == Some(Group::Right))
        .map(|(_, r)| model.project(r).unwrap().0)
        .collect();
    assert!(!xs.is_empty());
    assert!(xs.iter().sum::<f64>() > 0.0);
}

#[test]
fn shape_errors() {
    assert!(AnswerMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0]]).is_err());
    assert!(fit_space(&AnswerMatrix::from_rows(vec![vec![1.0, 0.0]; 5]).unwrap()).is_err());
    let m = fit_space(&AnswerMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap()).unwrap();
    assert!(m.project(&[1.0]).is_err());
}

proptest! {
    #[test]
    fn projection_is_affine(seed in 0u64..1000, t in 0.0f64..1.0) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows = binary_rows(&mut rng, 15, 6);
        let Ok(model) = fit_space(&AnswerMatrix::from_rows(rows.clone()).unwrap()) else { return Ok(()); };
        let mix: Vec<f64> = rows[0].iter().zip(&rows[1]).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let (p, q, m) = (model.project(&rows[0]).unwrap(), model.project(&rows[1]).unwrap(), model.project(&mix).unwrap());
        prop_assert!((m.0 - (t * p.0 + (1.0 - t) * q.0)).abs() < 1e-12);
        prop_assert!((m.1 - (t * p.1 + (1.0 - t) * q.1)).abs() < 1e-12);
    }

    #[test]
    fn projected_scores_have_the_explained_variance(seed in 0u64..1000) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows = binary_rows(&mut rng, 20, 7);
        let Ok(model) = fit_space(&AnswerMatrix::from_rows(rows.clone()).unwrap()) else { return Ok(()); };
        let xs: Vec<f64> = rows.iter().map(|r| model.project(r).unwrap().0).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / 19.0;
        prop_assert!((var - model.explained_variance[0]).abs() < 1e-9);
    }
}
