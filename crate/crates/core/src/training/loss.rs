use crate::model::Forward;
use crate::numerics::{log_sigmoid, Expr, NodeId as ExprNode};

/// `−log σ(s⁺) − Σ log σ(−s⁻)` for one interaction, from single-row
/// embeddings of the source, the target and each negative.
pub fn link_loss(f: &mut Forward<'_>, h_u: ExprNode, h_v: ExprNode, negatives: &[ExprNode]) -> ExprNode {
    assert!(!negatives.is_empty(), "the loss needs at least one negative");
    let pos = f.scores(h_v, h_u, 1);
    let negs: Vec<ExprNode> = negatives.iter().map(|&n| f.scores(n, h_u, 1)).collect();
    let negs = if negs.len() == 1 { negs[0] } else { f.expr.concat(&negs, 0) };
    batch_link_loss(&mut f.expr, pos, negs, 1)
}

/// Mean over `batch` interactions of the link loss, given a column of
/// positive scores and a column holding every negative score.
pub fn batch_link_loss(e: &mut Expr, positive: ExprNode, negative: ExprNode, batch: usize) -> ExprNode {
    let lp = e.log_sigmoid(positive);
    let sp = e.sum(lp, None);
    let nn = e.neg(negative);
    let ln = e.log_sigmoid(nn);
    let sn = e.sum(ln, None);
    let total = e.add(sp, sn);
    e.affine(total, -1.0 / batch as f64, 0.0)
}

/// The same loss evaluated directly on scores.
pub fn link_loss_value(positive: f64, negatives: &[f64]) -> f64 {
    -log_sigmoid(positive) - negatives.iter().map(|&s| log_sigmoid(-s)).sum::<f64>()
}

/// Loss contributed by one negative, `−log σ(−s⁻)`.
pub fn negative_term(score: f64) -> f64 {
    -log_sigmoid(-score)
}
