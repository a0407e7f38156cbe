use std::collections::BTreeMap;

use super::array::{Array, Precision};
use super::expr::{gradient, Bindings, Expr, NodeId, NumericsError};

/// Compares reverse-mode gradients against central differences.
///
/// Returns the largest `|analytic − central| / max(|analytic|, |central|, 1e-8)`
/// over every entry of every parameter in `wrt`. The expression must be
/// built in exact precision.
pub fn finite_difference_check<B: Bindings + ?Sized>(
    expr: &Expr,
    root: NodeId,
    bindings: &B,
    wrt: &[String],
    step: f64,
) -> Result<f64, NumericsError> {
    assert!(step > 0.0, "step must be positive");
    assert_eq!(expr.precision(), Precision::Exact, "finite differences need exact precision");
    let analytic = gradient(expr, root, bindings, wrt)?;

    let mut perturbed: BTreeMap<String, Array> = BTreeMap::new();
    for name in expr.parameter_names().iter().chain(wrt) {
        if let Some(a) = bindings.lookup(name) {
            perturbed.insert(name.clone(), a.clone());
        }
    }

    let mut worst: f64 = 0.0;
    for name in wrt {
        let n = analytic[name].len();
        for idx in 0..n {
            let original = perturbed[name].data()[idx];
            perturbed.get_mut(name).unwrap().data_mut()[idx] = original + step;
            let up = super::expr::evaluate(expr, root, &perturbed)?.item();
            perturbed.get_mut(name).unwrap().data_mut()[idx] = original - step;
            let down = super::expr::evaluate(expr, root, &perturbed)?.item();
            perturbed.get_mut(name).unwrap().data_mut()[idx] = original;

            let central = (up - down) / (2.0 * step);
            let a = analytic[name].data()[idx];
            let denom = a.abs().max(central.abs()).max(1e-8);
            worst = worst.max((a - central).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn quadratic_passes() {
        let mut e = Expr::new(Precision::Exact);
        let x = e.param("x");
        let sq = e.mul(x, x);
        let s = e.sum(sq, None);
        let half = e.affine(s, 0.5, 0.0);
        let mut b = HashMap::new();
        b.insert("x".to_string(), Array::row(vec![0.3, -1.2, 2.5, 0.01]));
        let err = finite_difference_check(&e, half, &b, &["x".into()], 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_expression_has_zero_error() {
        let mut e = Expr::new(Precision::Exact);
        let c = e.constant(Array::scalar(4.0));
        let _unused = e.param("x");
        let y = e.exp(c);
        let mut b = HashMap::new();
        b.insert("x".to_string(), Array::row(vec![1.0, 2.0]));
        let g = gradient(&e, y, &b, &["x".into()]).unwrap();
        assert!(g["x"].data().iter().all(|v| *v == 0.0));
        assert_eq!(finite_difference_check(&e, y, &b, &["x".into()], 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn every_op_passes_on_a_composite() {
        let mut e = Expr::new(Precision::Exact);
        let a = e.param("a");
        let b = e.param("b");
        let c = e.param("c");
        let ab = e.matmul(a, b); // 3x2
        let t = e.tanh(ab);
        let cc = e.concat(&[t, c], 1); // 3x4
        let sm = e.softmax(cc, 1);
        let sl = e.slice(sm, 1, 1, 3); // 3x2
        let g = e.gather_rows(sl, vec![2, 0, 0, 1]); // 4x2
        let q = e.slice(t, 0, 0, 2); // 2x2
        let att = e.attention(q, g, g, vec![0, 3, 4]); // 2x2
        let ss = e.segment_sum(g, vec![0, 1, 4]); // 2x2
        let mix = e.mul(att, ss);
        let sg = e.sigmoid(mix);
        let lg = e.log(sg);
        let cs = e.cos(lg);
        let ex = e.exp(cs);
        let ls = e.log_sigmoid(ex);
        let col = e.sum(ls, Some(0));
        let row = e.sum(ls, Some(1));
        let s1 = e.mean(col);
        let s2 = e.sum(row, None);
        let d = e.sub(s1, s2);
        let k = e.affine(d, 1.5, -0.2);
        let root = e.mul(k, s1);
        let mut bind = HashMap::new();
        bind.insert("a".to_string(), Array::matrix(3, 2, vec![0.3, -0.7, 1.1, 0.2, -0.5, 0.9]));
        bind.insert("b".to_string(), Array::matrix(2, 2, vec![0.4, 1.3, -0.8, 0.6]));
        bind.insert("c".to_string(), Array::matrix(3, 2, vec![0.1, -0.2, 0.3, 0.4, -0.6, 0.5]));
        let wrt: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let err = finite_difference_check(&e, root, &bind, &wrt, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
