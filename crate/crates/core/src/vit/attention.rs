use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix};

/// Per-head query, key and value matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInputs {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

/// `Softmax(Q·Kᵀ / √d) · V`, row-wise softmax with the row maximum subtracted.
pub fn attention(inputs: &AttentionInputs) -> Result<Matrix> {
    let AttentionInputs { q, k, v } = inputs;
    if q.rows() == 0 {
        return Err(Error::DimensionMismatch(
            "attention over zero queries".into(),
        ));
    }
    if q.cols() != k.cols() || k.rows() != v.rows() || k.rows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "attention: q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut out = Matrix::zeros(q.rows(), v.cols());
    let mut logits = vec![0.0f64; k.rows()];
    let mut acc = vec![0.0f64; v.cols()];
    for i in 0..q.rows() {
        let qi = q.row(i);
        let mut max = f64::NEG_INFINITY;
        for (j, l) in logits.iter_mut().enumerate() {
            *l = dot(qi, k.row(j)) * scale;
            max = max.max(*l);
        }
        let mut denom = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            denom += *l;
        }
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (j, &wj) in logits.iter().enumerate() {
            let w = wj / denom;
            for (a, &vj) in acc.iter_mut().zip(v.row(j)) {
                *a += w * vj as f64;
            }
        }
        for (o, a) in out.row_mut(i).iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    }
    Ok(out)
}

/// Multi-head attention from a fused `n × 3L` QKV projection. Each group of
/// row indices attends only within itself (one group for global attention,
/// one per window for windowed attention). Returns `n × L` and the MACs
/// spent on the two attention products.
pub fn multi_head_attention(
    qkv: &Matrix,
    num_heads: usize,
    groups: &[Vec<usize>],
) -> Result<(Matrix, usize)> {
    if qkv.cols() % (3 * num_heads) != 0 {
        return Err(Error::DimensionMismatch(format!(
            "qkv width {} not divisible by 3·{num_heads}",
            qkv.cols()
        )));
    }
    let embed = qkv.cols() / 3;
    let d = embed / num_heads;
    let mut out = Matrix::zeros(qkv.rows(), embed);
    let mut macs = 0;
    for group in groups {
        let m = group.len();
        if m == 0 {
            continue;
        }
        for h in 0..num_heads {
            let mut q = Matrix::zeros(m, d);
            let mut k = Matrix::zeros(m, d);
            let mut v = Matrix::zeros(m, d);
            for (i, &row) in group.iter().enumerate() {
                let src = qkv.row(row);
                q.row_mut(i).copy_from_slice(&src[h * d..(h + 1) * d]);
                k.row_mut(i)
                    .copy_from_slice(&src[embed + h * d..embed + (h + 1) * d]);
                v.row_mut(i)
                    .copy_from_slice(&src[2 * embed + h * d..2 * embed + (h + 1) * d]);
            }
            let head = attention(&AttentionInputs { q, k, v })?;
            for (i, &row) in group.iter().enumerate() {
                out.row_mut(row)[h * d..(h + 1) * d].copy_from_slice(head.row(i));
            }
        }
        macs += 2 * m * m * embed;
    }
    Ok((out, macs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f32]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_token_returns_value() {
        let out = attention(&AttentionInputs {
            q: m(&[&[3.0, -1.0]]),
            k: m(&[&[0.5, 2.0]]),
            v: m(&[&[7.0, 8.0]]),
        })
        .unwrap();
        assert_eq!(out.row(0), &[7.0, 8.0]);
    }

    #[test]
    fn two_token_hand_computed() {
        // weights for query 0: [σ(1), 1 − σ(1)] with σ(1) = e / (e + 1)
        let out = attention(&AttentionInputs {
            q: m(&[&[1.0], &[0.0]]),
            k: m(&[&[1.0], &[0.0]]),
            v: m(&[&[2.0], &[4.0]]),
        })
        .unwrap();
        let e = std::f64::consts::E;
        let w0 = e / (e + 1.0);
        assert!((w0 - 0.7311).abs() < 1e-4);
        let expected = 2.0 * w0 + 4.0 * (1.0 - w0);
        assert!((out.get(0, 0) as f64 - expected).abs() < 1e-6);
        assert!((out.get(0, 0) - 2.5379).abs() < 1e-4);
        // query 1 sees equal logits.
        assert!((out.get(1, 0) - 3.0).abs() < 1e-6);
    }

    #[test]
    fn constant_logits_average_values() {
        let out = attention(&AttentionInputs {
            q: m(&[&[1.0, 1.0], &[0.0, 2.0]]),
            k: m(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]),
            v: m(&[&[1.0, 0.0], &[2.0, 3.0], &[6.0, 3.0]]),
        })
        .unwrap();
        for r in 0..2 {
            assert!((out.get(r, 0) - 3.0).abs() < 1e-6);
            assert!((out.get(r, 1) - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let out = attention(&AttentionInputs {
            q: m(&[&[1000.0]]),
            k: m(&[&[1000.0], &[-1000.0]]),
            v: m(&[&[1.0], &[5.0]]),
        })
        .unwrap();
        assert_eq!(out.get(0, 0), 1.0);
    }

    #[test]
    fn dimension_errors() {
        let r = attention(&AttentionInputs {
            q: m(&[&[1.0, 2.0]]),
            k: m(&[&[1.0]]),
            v: m(&[&[1.0]]),
        });
        assert!(r.is_err());
        let r = attention(&AttentionInputs {
            q: Matrix::zeros(0, 1),
            k: m(&[&[1.0]]),
            v: m(&[&[1.0]]),
        });
        assert!(r.is_err());
    }
}
