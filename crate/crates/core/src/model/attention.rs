use crate::conditioning::PromptTrack;
use crate::error::{ensure, Result};
use crate::numerics::{Graph, Matrix, NodeId};

/// Projections for frame-level cross-attention. `w_q` is `D×d`; `w_k` and
/// `w_v` are `D_text×d`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttentionWeights {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

/// Cross-attention on the tape. `x` is `F×D`, `c` holds the stacked
/// `(F·tokens)×D_text` prompt blocks. Row `f` attends only to rows
/// `f·tokens..(f+1)·tokens` of `c`.
pub fn cross_attention_node(
    g: &mut Graph<'_>,
    x: NodeId,
    c: NodeId,
    w_q: NodeId,
    w_k: NodeId,
    w_v: NodeId,
    tokens: usize,
) -> Result<NodeId> {
    let d = g.value(w_q).cols();
    let q = g.matmul(x, w_q)?;
    let k = g.matmul(c, w_k)?;
    let v = g.matmul(c, w_v)?;
    let scores = g.block_row_dot(q, k, tokens)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
    let att = g.softmax_rows(scores)?;
    g.block_mix(att, v, tokens)
}

/// Matrix form of [`cross_attention_node`] for a prompt track.
pub fn frame_level_cross_attention(
    queries: &Matrix,
    prompts: &PromptTrack,
    weights: &CrossAttentionWeights,
) -> Result<Matrix> {
    ensure!(
        prompts.frames() == queries.rows(),
        Dimension,
        "{} query frames but {} prompt blocks",
        queries.rows(),
        prompts.frames()
    );
    ensure!(
        weights.w_q.rows() == queries.cols()
            && weights.w_k.rows() == prompts.text_dim()
            && weights.w_v.rows() == prompts.text_dim()
            && weights.w_k.cols() == weights.w_q.cols(),
        Dimension,
        "projection shapes {:?} {:?} {:?} for queries {:?}, text width {}",
        weights.w_q.shape(),
        weights.w_k.shape(),
        weights.w_v.shape(),
        queries.shape(),
        prompts.text_dim()
    );
    let mut g = Graph::default();
    let x = g.constant(queries.clone());
    let c = g.constant(prompts.stacked().clone());
    let (wq, wk, wv) = (
        g.constant(weights.w_q.clone()),
        g.constant(weights.w_k.clone()),
        g.constant(weights.w_v.clone()),
    );
    let out = cross_attention_node(&mut g, x, c, wq, wk, wv, prompts.tokens())?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::PromptSource;

    fn track(blocks: &[Matrix]) -> PromptTrack {
        PromptTrack::from_blocks(blocks, PromptSource::FrameLevel, None).unwrap()
    }

    #[test]
    fn single_token_identity_returns_caption() {
        let blocks: Vec<Matrix> = [0.3, -1.2, 4.0].iter().map(|&v| Matrix::filled(1, 1, v)).collect();
        let w = CrossAttentionWeights {
            w_q: Matrix::identity(1),
            w_k: Matrix::identity(1),
            w_v: Matrix::identity(1),
        };
        let q = Matrix::from_vec(3, 1, vec![5.0, -2.0, 0.1]).unwrap();
        let out = frame_level_cross_attention(&q, &track(&blocks), &w).unwrap();
        assert_eq!(out.data(), &[0.3, -1.2, 4.0]);
    }

    #[test]
    fn two_frames_two_tokens_hand_expanded() {
        let q = Matrix::from_rows(&[vec![1.0, 0.5], vec![-0.3, 2.0]]).unwrap();
        let c0 = Matrix::from_rows(&[vec![0.2, 1.0, -0.5], vec![1.5, -0.4, 0.3]]).unwrap();
        let c1 = Matrix::from_rows(&[vec![-1.0, 0.1, 0.7], vec![0.6, 0.9, -1.1]]).unwrap();
        let w = CrossAttentionWeights {
            w_q: Matrix::from_rows(&[vec![0.5, -0.2], vec![0.1, 0.9]]).unwrap(),
            w_k: Matrix::from_rows(&[vec![1.0, 0.3], vec![-0.7, 0.2], vec![0.4, 0.8]]).unwrap(),
            w_v: Matrix::from_rows(&[vec![0.9, -0.1], vec![0.2, 0.6], vec![-0.5, 1.3]]).unwrap(),
        };
        let out = frame_level_cross_attention(&q, &track(&[c0.clone(), c1.clone()]), &w).unwrap();

        // Scalar loops over the definition.
        let proj = |x: &[f64], m: &Matrix| -> Vec<f64> {
            (0..m.cols()).map(|j| (0..x.len()).map(|i| x[i] * m.get(i, j)).sum()).collect()
        };
        for (f, c) in [c0, c1].iter().enumerate() {
            let qf = proj(q.row(f), &w.w_q);
            let s: Vec<f64> = (0..2)
                .map(|l| {
                    let k = proj(c.row(l), &w.w_k);
                    (qf[0] * k[0] + qf[1] * k[1]) / 2f64.sqrt()
                })
                .collect();
            let z = s[0].exp() + s[1].exp();
            let a = [s[0].exp() / z, s[1].exp() / z];
            let v0 = proj(c.row(0), &w.w_v);
            let v1 = proj(c.row(1), &w.w_v);
            for j in 0..2 {
                let want = a[0] * v0[j] + a[1] * v1[j];
                assert!((out.get(f, j) - want).abs() <= 1e-12, "f{f} j{j}");
            }
        }
    }

    #[test]
    fn frame_count_mismatch() {
        let w = CrossAttentionWeights {
            w_q: Matrix::identity(1),
            w_k: Matrix::identity(1),
            w_v: Matrix::identity(1),
        };
        let q = Matrix::zeros(2, 1);
        let err = frame_level_cross_attention(&q, &track(&[Matrix::zeros(1, 1)]), &w).unwrap_err();
        assert!(matches!(err, crate::Error::Dimension(_)));
    }
}
