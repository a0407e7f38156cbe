use crate::model::{mlp_score, ParamStore};
use crate::numerics::dot;

/// A concrete pair-scoring rule. The MLP variant borrows the scorer
/// parameters of a model.
#[derive(Debug, Clone, Copy)]
pub enum PairScorer<'a> {
    Dot,
    Cosine,
    Mlp(&'a ParamStore),
}

/// Score of candidate `a` against source `b`.
pub fn pair_score(a: &[f64], b: &[f64], scorer: PairScorer<'_>) -> f64 {
    match scorer {
        PairScorer::Dot => {
            assert_eq!(a.len(), b.len(), "dot score needs equal widths");
            dot(a, b)
        }
        PairScorer::Cosine => {
            assert_eq!(a.len(), b.len(), "cosine score needs equal widths");
            let na = dot(a, a).sqrt();
            let nb = dot(b, b).sqrt();
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                dot(a, b) / (na * nb)
            }
        }
        PairScorer::Mlp(params) => mlp_score(params, a, b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_and_cosine_examples() {
        assert_eq!(pair_score(&[1.0, 0.0], &[0.0, 1.0], PairScorer::Dot), 0.0);
        assert_eq!(pair_score(&[1.0, 2.0], &[3.0, 4.0], PairScorer::Dot), 11.0);
        let u = [0.6, 0.8];
        assert!((pair_score(&u, &u, PairScorer::Cosine) - 1.0).abs() < 1e-15);
        assert_eq!(pair_score(&[0.0, 0.0], &u, PairScorer::Cosine), 0.0);
    }
}
