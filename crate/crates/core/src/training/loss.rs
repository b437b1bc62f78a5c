use crate::data::TokenId;
use crate::error::Result;
use crate::tensor::{Graph, Var};

/// Summed next-token cross-entropy over positions whose target is not
/// `pad_id`, with the number of positions scored.
pub fn masked_xe_sum(graph: &mut Graph, logits: Var, targets: &[TokenId], pad_id: TokenId) -> Result<(Var, usize)> {
    let targets: Vec<Option<usize>> = targets
        .iter()
        .map(|&t| (t != pad_id).then_some(t as usize))
        .collect();
    graph.cross_entropy_sum(logits, &targets)
}

/// Mean of `−log softmax(logits)[target]` over non-PAD positions.
pub fn masked_xe_loss(graph: &mut Graph, logits: Var, targets: &[TokenId], pad_id: TokenId) -> Result<Var> {
    let (sum, count) = masked_xe_sum(graph, logits, targets, pad_id)?;
    graph.scale(sum, 1.0 / count as f64)
}
