//! Two-dimensional political space: PCA over a binary answer matrix,
//! projection, orientation and displacement summaries.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stance::{LabelSpace, Stance};
use crate::survey::{Country, Dataset, Group, UnitProfile};

/// Binary answers, Yes = 1 and No = 0, one row per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerMatrix {
    pub unit_ids: Vec<String>,
    pub question_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn encode(s: Stance) -> Option<f64> {
    match s {
        Stance::Yes => Some(1.0),
        Stance::No => Some(0.0),
        Stance::Neutral => None,
    }
}

impl AnswerMatrix {
    /// Builds the matrix over all dataset questions. Units with a missing
    /// answer are excluded and returned separately.
    pub fn from_dataset(dataset: &Dataset) -> Result<(AnswerMatrix, Vec<String>)> {
        if dataset.label_space != LabelSpace::Binary {
            return Err(Error::Unsupported("the political space needs binary answers".into()));
        }
        let question_ids: Vec<String> = dataset.questions.iter().map(|q| q.id.clone()).collect();
        let mut m = AnswerMatrix {
            unit_ids: Vec::new(),
            question_ids,
            rows: Vec::new(),
        };
        let mut excluded = Vec::new();
        for u in &dataset.units {
            match m.row_for(u) {
                Some(r) => {
                    m.unit_ids.push(u.unit_id.clone());
                    m.rows.push(r);
                }
                None => excluded.push(u.unit_id.clone()),
            }
        }
        Ok((m, excluded))
    }

    fn row_for(&self, unit: &UnitProfile) -> Option<Vec<f64>> {
        self.question_ids
            .iter()
            .map(|q| unit.response(q).and_then(encode))
            .collect()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<AnswerMatrix> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Dimension {
                expected: cols,
                got: r.len(),
            });
        }
        Ok(AnswerMatrix {
            unit_ids: (0..rows.len()).map(|i| format!("row{i}")).collect(),
            question_ids: (0..cols).map(|j| format!("col{j}")).collect(),
            rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.question_ids.len()
    }
}

/// A unit's answer vector with test answers replaced by predictions.
/// Unresolved or Neutral predictions sit at 0.5.
pub fn agent_vector(
    unit: &UnitProfile,
    question_ids: &[String],
    predictions: &BTreeMap<String, Option<Stance>>,
) -> Result<Vec<f64>> {
    question_ids
        .iter()
        .map(|q| match predictions.get(q) {
            Some(p) => Ok(p.and_then(encode).unwrap_or(0.5)),
            None => unit
                .response(q)
                .and_then(encode)
                .ok_or_else(|| Error::Metric(format!("unit {} lacks a binary answer to {q}", unit.unit_id))),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceModel {
    pub column_means: Vec<f64>,
    /// Two orthonormal directions.
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
    pub total_variance: f64,
}

/// Mean-centered PCA with the sample covariance (n - 1). Each component is
/// signed so its largest-magnitude loading is positive.
pub fn fit_space(matrix: &AnswerMatrix) -> Result<SpaceModel> {
    let (n, p) = (matrix.n_rows(), matrix.n_cols());
    if n < 3 || p < 2 {
        return Err(Error::Decomposition(format!("need at least 3 rows and 2 columns, got {n}x{p}")));
    }
    let x = DMatrix::from_fn(n, p, |i, j| matrix.rows[i][j]);
    let means: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    let mut centered = x;
    for j in 0..p {
        let m = means[j];
        centered.column_mut(j).iter_mut().for_each(|v| *v -= m);
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let total_variance = cov.trace();
    if total_variance <= 1e-12 {
        return Err(Error::Decomposition("answer matrix has no variance".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let component = |k: usize| -> Vec<f64> {
        let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() + 1e-12 { i } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    Ok(SpaceModel {
        column_means: means,
        components: [component(0), component(1)],
        explained_variance: [eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]].max(0.0)],
        total_variance,
    })
}

impl SpaceModel {
    pub fn explained_ratio(&self) -> [f64; 2] {
        [
            self.explained_variance[0] / self.total_variance,
            self.explained_variance[1] / self.total_variance,
        ]
    }

    pub fn project(&self, answers: &[f64]) -> Result<(f64, f64)> {
        if answers.len() != self.column_means.len() {
            return Err(Error::Dimension {
                expected: self.column_means.len(),
                got: answers.len(),
            });
        }
        let dot = |c: &[f64]| -> f64 {
            answers
                .iter()
                .zip(&self.column_means)
                .zip(c)
                .map(|((a, m), w)| (a - m) * w)
                .sum()
        };
        Ok((dot(&self.components[0]), dot(&self.components[1])))
    }

    /// Flips axes so the mean of `right` lies at positive x and the mean of
    /// `conservative` at negative y. Empty sets leave an axis as is.
    pub fn orient(&mut self, right: &[Vec<f64>], conservative: &[Vec<f64>]) -> Result<()> {
        let mean_of = |rows: &[Vec<f64>], k: usize| -> Result<Option<f64>> {
            if rows.is_empty() {
                return Ok(None);
            }
            let mut s = 0.0;
            for r in rows {
                let (x, y) = self.project(r)?;
                s += if k == 0 { x } else { y };
            }
            Ok(Some(s / rows.len() as f64))
        };
        let flip_x = mean_of(right, 0)?.is_some_and(|x| x < 0.0);
        let flip_y = mean_of(conservative, 1)?.is_some_and(|y| y > 0.0);
        if flip_x {
            self.components[0].iter_mut().for_each(|v| *v = -*v);
        }
        if flip_y {
            self.components[1].iter_mut().for_each(|v| *v = -*v);
        }
        Ok(())
    }

    /// `(1 - 2 * column_means) . components`: the constant that
    /// `project(1 - v) + project(v)` equals for every `v`.
    pub fn reflection_center(&self) -> (f64, f64) {
        let c = |w: &[f64]| -> f64 { self.column_means.iter().zip(w).map(|(m, w)| (1.0 - 2.0 * m) * w).sum() };
        (c(&self.components[0]), c(&self.components[1]))
    }
}

/// Fits the space to a binary dataset and orients it by the Right group and
/// the country's most conservative party. Returns the model, matrix and
/// excluded units.
pub fn fit_dataset_space(dataset: &Dataset) -> Result<(SpaceModel, AnswerMatrix, Vec<String>)> {
    let (matrix, excluded) = AnswerMatrix::from_dataset(dataset)?;
    let mut model = fit_space(&matrix)?;
    let cons = most_conservative(dataset.country());
    let mut right = Vec::new();
    let mut conservative = Vec::new();
    for (id, row) in matrix.unit_ids.iter().zip(&matrix.rows) {
        let u = dataset.unit(id).expect("matrix rows come from the dataset");
        if u.group == Some(Group::Right) {
            right.push(row.clone());
        }
        if u.party_or_ideology.eq_ignore_ascii_case(cons) {
            conservative.push(row.clone());
        }
    }
    model.orient(&right, &conservative)?;
    Ok((model, matrix, excluded))
}

pub fn most_conservative(country: Country) -> &'static str {
    match country {
        Country::CH => "SVP",
        Country::DE => "AfD",
        Country::US => "Extremely conservative",
    }
}

/// Mean `agent - human` per group. Groups without pairs are omitted.
pub fn displacement_vectors(pairs: &[(Group, (f64, f64), (f64, f64))]) -> BTreeMap<Group, (f64, f64)> {
    let mut acc: BTreeMap<Group, (f64, f64, usize)> = BTreeMap::new();
    for (g, h, a) in pairs {
        let e = acc.entry(*g).or_insert((0.0, 0.0, 0));
        e.0 += a.0 - h.0;
        e.1 += a.1 - h.1;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(g, (x, y, n))| (g, (x / n as f64, y / n as f64)))
        .collect()
}

/// Largest per-coordinate deviation of `project(1 - v) + project(v)` from
/// [`SpaceModel::reflection_center`] over `vectors`.
pub fn inversion_reflection_check(model: &SpaceModel, vectors: &[Vec<f64>]) -> Result<f64> {
    let c = model.reflection_center();
    let mut worst: f64 = 0.0;
    for v in vectors {
        let inv: Vec<f64> = v.iter().map(|x| 1.0 - x).collect();
        let (a, b) = (model.project(v)?, model.project(&inv)?);
        worst = worst.max((a.0 + b.0 - c.0).abs()).max((a.1 + b.1 - c.1).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_matrix() -> AnswerMatrix {
        AnswerMatrix::from_rows(vec![
            vec![0.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn rank_one_explains_everything() {
        let m = fit_space(&line_matrix()).unwrap();
        assert!((m.explained_ratio()[0] - 1.0).abs() < 1e-12);
        assert!(m.explained_ratio()[1].abs() < 1e-12);
        assert!((m.components[0][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let flat = AnswerMatrix::from_rows(vec![vec![1.0, 0.0]; 4]).unwrap();
        assert!(matches!(fit_space(&flat), Err(Error::Decomposition(_))));
        let small = AnswerMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(fit_space(&small).is_err());
    }

    #[test]
    fn projection_centering_and_dimension() {
        let m = fit_space(&line_matrix()).unwrap();
        let (x, y) = m.project(&m.column_means.clone()).unwrap();
        assert!(x.abs() < 1e-15 && y.abs() < 1e-15);
        assert!(matches!(m.project(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn displacement_means() {
        let d = displacement_vectors(&[
            (Group::Left, (0.0, 0.0), (1.0, 2.0)),
            (Group::Left, (1.0, 1.0), (1.0, -1.0)),
            (Group::Right, (0.5, 0.5), (0.5, 0.5)),
        ]);
        assert_eq!(d[&Group::Left], (0.5, 0.0));
        assert_eq!(d[&Group::Right], (0.0, 0.0));
        assert!(!d.contains_key(&Group::Center));
    }

    #[test]
    fn orient_flips_axes() {
        let mut m = fit_space(&line_matrix()).unwrap();
        let left_row = vec![0.0, 1.0, 0.0];
        m.orient(&[left_row.clone()], &[]).unwrap();
        assert!(m.project(&left_row).unwrap().0 > 0.0);
    }
}
