//! Temperature-scaled cosine similarity and in-batch contrastive losses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{MASKED_LOGIT, NORM_FLOOR};
use crate::error::{Error, Result};

/// Default softmax temperature.
pub const TEMPERATURE: f64 = 0.05;

/// `rows x cols` matrix of `cos(q_i, c_j) / T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub temperature: f64,
    pub data: Vec<f64>,
}

impl SimilarityMatrix {
    /// Wrap raw logits, e.g. for evaluating a loss directly.
    pub fn from_rows(rows: &[Vec<f64>], temperature: f64) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged similarity rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            temperature,
            data: rows.concat(),
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.get(i, j);
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            temperature: self.temperature,
            data,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; 0 when either vector is (near) zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

fn check_batch(queries: &[Vec<f64>], candidates: &[Vec<f64>], temperature: f64) -> Result<usize> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if queries.len() != candidates.len() {
        return Err(Error::Shape(format!(
            "{} queries vs {} candidates",
            queries.len(),
            candidates.len()
        )));
    }
    let dim = queries.first().map_or(0, Vec::len);
    if queries.iter().chain(candidates).any(|v| v.len() != dim) {
        return Err(Error::Shape("embeddings differ in dimension".into()));
    }
    Ok(dim)
}

pub fn similarity_matrix(
    queries: &[Vec<f64>],
    candidates: &[Vec<f64>],
    temperature: f64,
) -> Result<SimilarityMatrix> {
    check_batch(queries, candidates, temperature)?;
    let b = queries.len();
    let mut data = Vec::with_capacity(b * b);
    for q in queries {
        for c in candidates {
            data.push(cosine(q, c) / temperature);
        }
    }
    Ok(SimilarityMatrix {
        rows: b,
        cols: b,
        temperature,
        data,
    })
}

/// Per-vector gradients for the query and candidate sides.
pub type VectorGrads = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Gradient of a loss wrt the query and candidate vectors given its gradient
/// wrt every similarity entry.
pub fn similarity_backward(
    queries: &[Vec<f64>],
    candidates: &[Vec<f64>],
    temperature: f64,
    d_sim: &[f64],
) -> Result<VectorGrads> {
    let dim = check_batch(queries, candidates, temperature)?;
    let b = queries.len();
    if d_sim.len() != b * b {
        return Err(Error::Shape(format!(
            "gradient of length {} for a {b}x{b} matrix",
            d_sim.len()
        )));
    }
    let q_norms: Vec<f64> = queries.iter().map(|q| norm(q)).collect();
    let c_norms: Vec<f64> = candidates.iter().map(|c| norm(c)).collect();
    let mut d_q = vec![vec![0.0; dim]; b];
    let mut d_c = vec![vec![0.0; dim]; b];
    for i in 0..b {
        for j in 0..b {
            let (nq, nc) = (q_norms[i], c_norms[j]);
            if nq < NORM_FLOOR || nc < NORM_FLOOR {
                continue;
            }
            let g = d_sim[i * b + j] / temperature;
            if g == 0.0 {
                continue;
            }
            let (q, c) = (&queries[i], &candidates[j]);
            let cos = q.iter().zip(c).map(|(x, y)| x * y).sum::<f64>() / (nq * nc);
            for k in 0..dim {
                d_q[i][k] += g * (c[k] / (nq * nc) - cos * q[k] / (nq * nq));
                d_c[j][k] += g * (q[k] / (nq * nc) - cos * c[k] / (nc * nc));
            }
        }
    }
    Ok((d_q, d_c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Row-wise softmax cross-entropy against the diagonal.
    Mnr,
    /// Mean of the row-wise and column-wise cross-entropies.
    Symmetric,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mnr => "mnr",
            LossKind::Symmetric => "symmetric",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnr" => Ok(LossKind::Mnr),
            "symmetric" => Ok(LossKind::Symmetric),
            other => Err(Error::InvalidArgument(format!("unknown loss {other:?}"))),
        }
    }
}

/// Scalar loss and its gradient wrt each entry of `S` (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
}

fn check_square(s: &SimilarityMatrix, exclude: Option<&[bool]>) -> Result<()> {
    if s.rows != s.cols {
        return Err(Error::Shape(format!(
            "loss needs a square matrix, got {}x{}",
            s.rows, s.cols
        )));
    }
    if let Some(ex) = exclude {
        if ex.len() != s.data.len() {
            return Err(Error::Shape("exclusion mask does not match matrix".into()));
        }
    }
    Ok(())
}

/// Mean cross-entropy of each line of `S` (rows, or columns when
/// `by_column`) against the diagonal. Adds `weight * ∂loss/∂S` into `grad`.
fn diagonal_cross_entropy(
    s: &SimilarityMatrix,
    exclude: Option<&[bool]>,
    by_column: bool,
    weight: f64,
    grad: &mut [f64],
) -> f64 {
    let b = s.rows;
    let at = |line: usize, k: usize| {
        if by_column {
            k * b + line
        } else {
            line * b + k
        }
    };
    let mut total = 0.0;
    let mut logits = vec![0.0; b];
    for line in 0..b {
        for (k, z) in logits.iter_mut().enumerate() {
            let idx = at(line, k);
            let masked = k != line && exclude.is_some_and(|ex| ex[idx]);
            *z = if masked { MASKED_LOGIT } else { s.data[idx] };
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - logits[line];
        for (k, z) in logits.iter().enumerate() {
            let idx = at(line, k);
            if k != line && exclude.is_some_and(|ex| ex[idx]) {
                continue;
            }
            let p = (z - lse).exp();
            let target = if k == line { 1.0 } else { 0.0 };
            grad[idx] += weight * (p - target) / b as f64;
        }
    }
    total / b as f64
}

/// Contrastive loss with optional false-negative exclusion. `exclude[i*B+j]`
/// removes candidate `j` from row `i` (and from column `j`'s view of row `i`
/// in the symmetric case); diagonal entries are never excluded.
pub fn contrastive_loss(
    s: &SimilarityMatrix,
    kind: LossKind,
    exclude: Option<&[bool]>,
) -> Result<LossOutput> {
    check_square(s, exclude)?;
    let mut grad = vec![0.0; s.data.len()];
    if s.rows == 0 {
        return Ok(LossOutput { loss: 0.0, grad });
    }
    let loss = match kind {
        LossKind::Mnr => diagonal_cross_entropy(s, exclude, false, 1.0, &mut grad),
        LossKind::Symmetric => {
            let rows = diagonal_cross_entropy(s, exclude, false, 0.5, &mut grad);
            let cols = diagonal_cross_entropy(s, exclude, true, 0.5, &mut grad);
            0.5 * (rows + cols)
        }
    };
    Ok(LossOutput { loss, grad })
}

/// Multiple-negatives ranking loss: batch mean of
/// `-log(exp(S_ii) / Σ_j exp(S_ij))`.
pub fn mnr_loss(s: &SimilarityMatrix) -> Result<LossOutput> {
    contrastive_loss(s, LossKind::Mnr, None)
}

/// `½ (CE(S, y) + CE(Sᵀ, y))` with diagonal targets.
pub fn symmetric_loss(s: &SimilarityMatrix) -> Result<LossOutput> {
    contrastive_loss(s, LossKind::Symmetric, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(rows: &[&[f64]]) -> SimilarityMatrix {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        SimilarityMatrix::from_rows(&rows, 1.0).unwrap()
    }

    #[test]
    fn similarity_examples() {
        let s = similarity_matrix(&[vec![0.6, 0.8]], &[vec![0.6, 0.8]], TEMPERATURE).unwrap();
        assert!((s.get(0, 0) - 20.0).abs() < 1e-12);
        let s = similarity_matrix(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]], 0.3).unwrap();
        assert_eq!(s.get(0, 0), 0.0);
        let s = similarity_matrix(&[vec![0.0, 0.0]], &[vec![0.0, 1.0]], 0.3).unwrap();
        assert_eq!(s.get(0, 0), 0.0);
        assert!(similarity_matrix(&[vec![1.0]], &[vec![1.0]], 0.0).is_err());
        assert!(similarity_matrix(&[vec![1.0]], &[vec![1.0, 0.0]], 1.0).is_err());
    }

    #[test]
    fn mnr_examples() {
        // log(1 + e^-2), evaluated independently at high precision
        let expected = 0.126_928_011_042_972_5;
        let out = mnr_loss(&matrix(&[&[2.0, 0.0], &[0.0, 2.0]])).unwrap();
        assert!((out.loss - expected).abs() < 1e-10);
        assert_eq!(mnr_loss(&matrix(&[&[3.3]])).unwrap().loss, 0.0);
        let out = mnr_loss(&matrix(&[
            &[50.0, 0.0, 0.0],
            &[0.0, 50.0, 0.0],
            &[0.0, 0.0, 50.0],
        ]))
        .unwrap();
        assert!(out.loss < 1e-20);
        assert!(mnr_loss(&matrix(&[&[1.0, 2.0]])).is_err());
    }

    #[test]
    fn exclusion_removes_false_negative() {
        let s = matrix(&[&[1.0, 5.0], &[0.5, 1.0]]);
        let ex = [false, true, true, false];
        let out = contrastive_loss(&s, LossKind::Symmetric, Some(&ex)).unwrap();
        assert!(out.loss.abs() < 1e-12);
        assert_eq!(out.grad[1], 0.0);
    }

    fn square(n: usize) -> impl Strategy<Value = SimilarityMatrix> {
        proptest::collection::vec(-20.0f64..20.0, n * n).prop_map(move |data| SimilarityMatrix {
            rows: n,
            cols: n,
            temperature: 1.0,
            data,
        })
    }

    proptest! {
        #[test]
        fn symmetric_is_mean_of_both_directions(s in (1usize..7).prop_flat_map(square)) {
            let sym = symmetric_loss(&s).unwrap().loss;
            let a = mnr_loss(&s).unwrap().loss;
            let b = mnr_loss(&s.transpose()).unwrap().loss;
            prop_assert!((sym - 0.5 * (a + b)).abs() <= 1e-12);
            let sym_t = symmetric_loss(&s.transpose()).unwrap().loss;
            prop_assert!((sym - sym_t).abs() <= 1e-12);
        }

        #[test]
        fn row_shift_invariance(s in (2usize..6).prop_flat_map(square), row in 0usize..6, shift in -30.0f64..30.0) {
            let row = row % s.rows;
            let mut shifted = s.clone();
            for j in 0..s.cols {
                shifted.data[row * s.cols + j] += shift;
            }
            let a = mnr_loss(&s).unwrap().loss;
            let b = mnr_loss(&shifted).unwrap().loss;
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn mnr_gradient_is_softmax_minus_onehot(s in (1usize..6).prop_flat_map(square)) {
            let out = mnr_loss(&s).unwrap();
            let b = s.rows;
            for i in 0..b {
                let row = &s.data[i * b..(i + 1) * b];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                for j in 0..b {
                    let p = (row[j] - max).exp() / z;
                    let expect = (p - if i == j { 1.0 } else { 0.0 }) / b as f64;
                    prop_assert!((out.grad[i * b + j] - expect).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn symmetric_equals_mnr_on_symmetric_matrix() {
        let s = matrix(&[&[1.0, 0.3, -2.0], &[0.3, 4.0, 0.7], &[-2.0, 0.7, 0.1]]);
        assert_eq!(symmetric_loss(&s).unwrap().loss, mnr_loss(&s).unwrap().loss);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let s = matrix(&[
            &[1.0, -0.4, 2.2, 0.1],
            &[0.3, 0.9, -1.1, 0.0],
            &[2.0, 0.5, 0.2, -0.7],
            &[-0.3, 1.4, 0.6, 1.7],
        ]);
        let ex = vec![
            false, false, true, false, false, false, false, false, true, false, false, false,
            false, false, false, false,
        ];
        for kind in [LossKind::Mnr, LossKind::Symmetric] {
            let out = contrastive_loss(&s, kind, Some(&ex)).unwrap();
            for idx in 0..16 {
                let step = 1e-6;
                let mut plus = s.clone();
                plus.data[idx] += step;
                let mut minus = s.clone();
                minus.data[idx] -= step;
                let fd = (contrastive_loss(&plus, kind, Some(&ex)).unwrap().loss
                    - contrastive_loss(&minus, kind, Some(&ex)).unwrap().loss)
                    / (2.0 * step);
                let a = out.grad[idx];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                assert!(
                    rel <= 1e-6 || (a - fd).abs() < 1e-10,
                    "{kind} idx {idx}: {a} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn similarity_gradient_matches_finite_differences() {
        let q = vec![vec![0.3, -1.2, 0.5], vec![1.0, 0.4, -0.2]];
        let c = vec![vec![-0.7, 0.2, 0.9], vec![0.1, 0.1, 1.5]];
        let weights = [0.7, -1.3, 0.2, 2.0];
        let f = |q: &[Vec<f64>], c: &[Vec<f64>]| -> f64 {
            let s = similarity_matrix(q, c, 0.5).unwrap();
            s.data.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let (dq, dc) = similarity_backward(&q, &c, 0.5, &weights).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            for k in 0..3 {
                let mut qp = q.clone();
                qp[i][k] += h;
                let mut qm = q.clone();
                qm[i][k] -= h;
                let fd = (f(&qp, &c) - f(&qm, &c)) / (2.0 * h);
                assert!((dq[i][k] - fd).abs() < 1e-7);
                let mut cp = c.clone();
                cp[i][k] += h;
                let mut cm = c.clone();
                cm[i][k] -= h;
                let fd = (f(&q, &cp) - f(&q, &cm)) / (2.0 * h);
                assert!((dc[i][k] - fd).abs() < 1e-7);
            }
        }
    }
}
