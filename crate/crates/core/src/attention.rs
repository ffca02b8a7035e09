//! Attention building blocks shared by the readers.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// `A[i, j] = w1·x_i + w2·y_j + w3·(x_i ∘ y_j)` for the columns of
/// `x` (`k × n`) and `y` (`k × m`); the weights are `k × 1` columns.
/// Returns `n × m`.
pub fn trilinear(g: &mut Graph, x: Var, y: Var, w1: Var, w2: Var, w3: Var) -> Result<Var> {
    let k = g.shape(x).0;
    if g.shape(y).0 != k || [w1, w2, w3].iter().any(|&w| g.shape(w) != (k, 1)) {
        return Err(Error::Shape {
            op: "trilinear",
            lhs: vec![g.shape(x).0, g.shape(x).1],
            rhs: vec![g.shape(y).0, g.shape(y).1],
        });
    }
    let xw = g.mul_col(x, w3)?;
    let xwt = g.transpose(xw)?;
    let prod = g.matmul(xwt, y)?;
    let w1t = g.transpose(w1)?;
    let row = g.matmul(w1t, x)?;
    let col = g.transpose(row)?;
    let w2t = g.transpose(w2)?;
    let yrow = g.matmul(w2t, y)?;
    let a = g.add_row(prod, yrow)?;
    g.add_col(a, col)
}

/// Row-softmax of `scores` (`n × m`) used to average the columns of `y`
/// (`k × m`): returns `y · Pᵀ`, `k × n`.
pub fn attend(g: &mut Graph, scores: Var, y: Var, mask: Option<&[bool]>) -> Result<Var> {
    let p = match mask {
        Some(m) => g.masked_softmax(scores, 1, m)?,
        None => g.softmax(scores, 1)?,
    };
    let pt = g.transpose(p)?;
    g.matmul(y, pt)
}

/// Softmax over `max_j scores[i, j]`, used to pool the columns of `x`
/// into one `k × 1` summary vector.
pub fn max_pool_attend(g: &mut Graph, scores: Var, x: Var) -> Result<Var> {
    let m = g.max_over_columns(scores)?;
    let b = g.softmax(m, 0)?;
    g.matmul(x, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn trilinear_matches_per_entry_evaluation() {
        let x = Tensor::from_rows(&[vec![0.3, -1.0], vec![0.7, 0.2]]).unwrap();
        let y = Tensor::from_rows(&[vec![1.5, -0.4, 0.1], vec![-0.6, 0.9, 2.0]]).unwrap();
        let w = [vec![0.5, -0.25], vec![1.0, 0.75], vec![-2.0, 0.5]];
        let mut g = Graph::new();
        let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
        let ws: Vec<Var> = w.iter().map(|v| g.constant(Tensor::column(v.clone()))).collect();
        let a = trilinear(&mut g, xv, yv, ws[0], ws[1], ws[2]).unwrap();
        assert_eq!(g.shape(a), (2, 3));
        for i in 0..2 {
            for j in 0..3 {
                let expect: f64 = (0..2)
                    .map(|k| {
                        let (xi, yj) = (x.at(k, i), y.at(k, j));
                        w[0][k] * xi + w[1][k] * yj + w[2][k] * xi * yj
                    })
                    .sum();
                assert!((g.value(a).at(i, j) - expect).abs() < 1e-12);
            }
        }
    }
}
