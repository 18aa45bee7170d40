use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};

/// Temperature-scaled cosine similarity: `(a . b) / (tau |a| |b|)`.
pub fn cosine_sim(a: &[f64], b: &[f64], tau: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Contract(format!(
            "cosine_sim needs equal nonempty lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Contract(format!("temperature must be positive, got {tau}")));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Contract("cosine_sim of a zero vector".into()));
    }
    Ok(dot / (tau * na * nb))
}

fn check_views(view1: &[&[f64]], view2: &[&[f64]], tau: f64) -> Result<usize> {
    let b = view1.len();
    if b < 2 || view2.len() != b {
        return Err(Error::Contract(format!(
            "contrastive loss needs two equal views of >= 2 embeddings, got {b} and {}",
            view2.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Contract(format!("temperature must be positive, got {tau}")));
    }
    Ok(b)
}

/// Reference implementation of the batch contrastive loss, computed directly
/// from the definition: for every anchor, the negative log of the softmax
/// weight its positive receives against the other `2B - 2` embeddings
/// (`2B - 1` when `include_positive` keeps the positive in the denominator),
/// summed over all `2B` anchors. Similarities are cosine, divided by `tau`.
pub fn contrastive_loss_direct(
    view1: &[&[f64]],
    view2: &[&[f64]],
    tau: f64,
    include_positive: bool,
) -> Result<f64> {
    let b = check_views(view1, view2, tau)?;
    // Embeddings 0..B are view 1, B..2B are view 2.
    let all: Vec<&[f64]> = view1.iter().chain(view2.iter()).copied().collect();
    let partner = |i: usize| if i < b { i + b } else { i - b };
    let mut total = 0.0;
    for anchor in 0..2 * b {
        let pos = partner(anchor);
        let pos_sim = cosine_sim(all[anchor], all[pos], tau)?;
        let mut denom = 0.0;
        for other in 0..2 * b {
            if other == anchor || (other == pos && !include_positive) {
                continue;
            }
            denom += cosine_sim(all[anchor], all[other], tau)?.exp();
        }
        total += denom.ln() - pos_sim;
    }
    Ok(total)
}

/// Same loss built on the tape so it can be differentiated.
///
/// `view1[i]` and `view2[i]` must be `[1, dim]` nodes holding the two
/// augmented embeddings of the same user. Exponentials are shifted by the
/// largest possible score `1/tau` before summation, so every intermediate
/// stays finite for any temperature down to the point where the shifted
/// terms underflow (tau of roughly 0.005 for cosine scores).
pub fn contrastive_loss(
    tape: &mut Tape,
    view1: &[NodeId],
    view2: &[NodeId],
    tau: f64,
    include_positive: bool,
) -> Result<NodeId> {
    let b = view1.len();
    if b < 2 || view2.len() != b {
        return Err(Error::Contract(format!(
            "contrastive loss needs two equal views of >= 2 embeddings, got {b} and {}",
            view2.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Contract(format!("temperature must be positive, got {tau}")));
    }
    let shift = 1.0 / tau;

    let z1 = tape.concat_rows(view1)?;
    let z2 = tape.concat_rows(view2)?;
    let n1 = tape.l2_normalize_rows(z1)?;
    let n2 = tape.l2_normalize_rows(z2)?;

    // Scaled similarity blocks: within view 1, within view 2, and across.
    let n1t = tape.transpose(n1)?;
    let n2t = tape.transpose(n2)?;
    let s11 = tape.matmul(n1, n1t)?;
    let s11 = tape.scale(s11, 1.0 / tau);
    let s22 = tape.matmul(n2, n2t)?;
    let s22 = tape.scale(s22, 1.0 / tau);
    let s12 = tape.matmul(n1, n2t)?;
    let s12 = tape.scale(s12, 1.0 / tau);
    let s21 = tape.transpose(s12)?;

    let off_diag = {
        let mut m = vec![1.0; b * b];
        for i in 0..b {
            m[i * b + i] = 0.0;
        }
        tape.input(Tensor::matrix(b, b, m)?)
    };
    let identity = {
        let mut m = vec![0.0; b * b];
        for i in 0..b {
            m[i * b + i] = 1.0;
        }
        tape.input(Tensor::matrix(b, b, m)?)
    };
    let ones_col = tape.input(Tensor::matrix(b, 1, vec![1.0; b])?);

    // Row sums of exp(score - shift) over the allowed denominator entries.
    let masked_exp_row_sums = |tape: &mut Tape,
                                   scores: NodeId,
                                   drop_diagonal: bool|
     -> Result<NodeId> {
        let shifted = tape.add_scalar(scores, -shift);
        let e = tape.exp(shifted);
        let masked =
            if drop_diagonal { tape.mul(e, off_diag)? } else { e };
        tape.matmul(masked, ones_col)
    };

    let within1 = masked_exp_row_sums(tape, s11, true)?;
    let across1 = masked_exp_row_sums(tape, s12, !include_positive)?;
    let within2 = masked_exp_row_sums(tape, s22, true)?;
    let across2 = masked_exp_row_sums(tape, s21, !include_positive)?;

    let denom1 = tape.add(within1, across1)?;
    let denom2 = tape.add(within2, across2)?;
    let log_denom1 = tape.log(denom1);
    let log_denom1 = tape.add_scalar(log_denom1, shift);
    let log_denom2 = tape.log(denom2);
    let log_denom2 = tape.add_scalar(log_denom2, shift);
    let log_sum1 = tape.sum(log_denom1);
    let log_sum2 = tape.sum(log_denom2);
    let log_total = tape.add(log_sum1, log_sum2)?;

    // Each anchor subtracts its positive score; the two views share the
    // diagonal of the cross block.
    let diag = tape.mul(s12, identity)?;
    let diag_sum = tape.sum(diag);
    let neg_pos = tape.scale(diag_sum, -2.0);

    tape.add(log_total, neg_pos)
}
