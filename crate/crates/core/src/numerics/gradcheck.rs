use super::graph::{Graph, NodeId, ParamSet};
use crate::error::{ensure, Result};

/// Denominator floor for the relative error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter name, flat index)` of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares backward-pass gradients against central differences for every
/// scalar of every parameter.
///
/// `build` must construct the same scalar loss from scratch on each call.
/// Returns the max over entries of
/// `|analytic - fd| / max(|analytic|, |fd|, GRAD_CHECK_FLOOR)`.
pub fn grad_check<F>(params: &ParamSet, perturbation: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    ensure!(
        perturbation > 0.0 && perturbation <= 1e-3,
        Contract,
        "perturbation {perturbation} outside (0, 1e-3]"
    );
    let analytic = {
        let mut g = Graph::new(params);
        let loss = build(&mut g)?;
        g.backward(loss)?.into_dense()
    };

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new(p);
        let loss = build(&mut g)?;
        g.scalar(loss)
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    for p in 0..params.len() {
        for i in 0..params.get(p).data().len() {
            let orig = params.get(p).data()[i];
            work.get_mut(p).data_mut()[i] = orig + perturbation;
            let up = eval(&work)?;
            work.get_mut(p).data_mut()[i] = orig - perturbation;
            let down = eval(&work)?;
            work.get_mut(p).data_mut()[i] = orig;

            let fd = (up - down) / (2.0 * perturbation);
            let a = analytic[p].data()[i];
            let denom = a.abs().max(fd.abs()).max(GRAD_CHECK_FLOOR);
            let rel = (a - fd).abs() / denom;
            report.checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((params.name(p).to_string(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    #[test]
    fn linear_loss_is_exact() {
        let x = Matrix::from_rows(&[vec![0.3], vec![-1.2], vec![2.5]]).unwrap();
        let mut p = ParamSet::new();
        p.push("w", Matrix::row_vector(&[0.1, 0.2, -0.4]));
        let build = |g: &mut Graph<'_>| {
            let w = g.param(0);
            let xc = g.constant(x.clone());
            g.matmul(w, xc)
        };
        let mut g = Graph::new(&p);
        let loss = build(&mut g).unwrap();
        assert_eq!(g.backward(loss).unwrap().param(0).data(), x.data());
        let report = grad_check(&p, 1e-4, build).unwrap();
        assert!(report.max_relative_error <= 1e-9, "{report:?}");
    }

    #[test]
    fn softmax_dot_loss() {
        let target = Matrix::from_rows(&[vec![0.2, -0.7, 1.1, 0.4]]).unwrap();
        let mut p = ParamSet::new();
        p.push("logits", Matrix::from_rows(&[vec![0.5, -0.3, 1.7, 0.05]]).unwrap());
        let report = grad_check(&p, 1e-4, |g| {
            let l = g.param(0);
            let s = g.softmax_rows(l)?;
            let t = g.constant(target.clone());
            let m = g.mul(s, t)?;
            Ok(g.sum(m))
        })
        .unwrap();
        assert!(report.max_relative_error <= 1e-6, "{report:?}");
    }

    #[test]
    fn every_op_matches_central_differences() {
        let mut p = ParamSet::new();
        let m = |r, c, s: f64| Matrix::from_fn(r, c, |i, j| ((i * 7 + j * 3) as f64 * s).sin());
        p.push("a", m(3, 4, 0.37));
        p.push("b", m(4, 4, 0.53));
        p.push("gain", m(1, 4, 0.9).map(|v| 1.0 + 0.3 * v));
        p.push("bias", m(1, 4, 1.3));
        p.push("kv", m(6, 2, 0.71));
        p.push("table", m(5, 4, 0.29));
        let report = grad_check(&p, 1e-5, |g| {
            let a = g.param(0);
            let b = g.param(1);
            let ab = g.matmul(a, b)?;
            let abt = g.matmul_bt(ab, b)?;
            let gain = g.param(2);
            let bias = g.param(3);
            let ln = g.layer_norm(abt, gain, bias, 1e-5)?;
            let act = g.gelu(ln);
            let sm = g.softmax_rows(act)?;
            let biased = g.add_row(sm, bias)?;
            let table = g.param(5);
            let rows = g.gather_rows(table, &[4, 0, 4])?;
            let mixed = g.mul(biased, rows)?;
            let left = g.slice_cols(mixed, 0, 2)?;
            let right = g.slice_cols(mixed, 2, 2)?;
            let kv = g.param(4);
            let scores = g.block_row_dot(left, kv, 2)?;
            let w = g.softmax_rows(scores)?;
            let attended = g.block_mix(w, kv, 2)?;
            let joined = g.concat_cols(&[attended, right])?;
            let scaled = g.scale(joined, 1.7);
            let diff = g.sub(scaled, mixed)?;
            let loss1 = g.mse(diff, act)?;
            let s = g.sum(diff);
            let s = g.scale(s, 0.01);
            Ok(g.add(loss1, s)?)
        })
        .unwrap();
        assert!(report.max_relative_error <= 1e-6, "{report:?}");
        assert_eq!(report.checked, 12 + 16 + 4 + 4 + 12 + 20);
    }

    #[test]
    fn rejects_bad_perturbation() {
        let p = ParamSet::new();
        assert!(grad_check(&p, 0.0, |g| Ok(g.constant(Matrix::zeros(1, 1)))).is_err());
        assert!(grad_check(&p, 1e-2, |g| Ok(g.constant(Matrix::zeros(1, 1)))).is_err());
    }
}
