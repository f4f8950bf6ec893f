//! Composition of a frozen fact-checking encoder with a unification
//! encoder.
//!
//! The unification encoder reads `[CLS] C [SEP] q [SEP]`. Its final hidden
//! vectors over the query span replace the query words in the fact
//! checker's input, each with the fact checker's position and query-segment
//! embeddings added; every other position keeps the fact checker's own
//! embedding of the same tokens. The fact checker's parameters never
//! receive gradients; its input gradient on the query span is passed back
//! into the unification encoder.

use crate::model::{
    embed, embed_backward, encode, encode_backward, log_loss, logits, logits_backward, sigmoid, Dropout,
    Packed,
};
use crate::params::EncoderParams;
use crate::scalar::Scalar;
use crate::vocab::{TokenSeq, QUERY_SEGMENT};
use crate::NeuralError;

pub fn check_pair<T>(fu: &EncoderParams<T>, uu: &EncoderParams<T>) -> Result<(), NeuralError> {
    let (a, b) = (&fu.config, &uu.config);
    if a.d_model != b.d_model {
        return Err(NeuralError::Wiring(format!(
            "fact checker width {} differs from unifier width {}",
            a.d_model, b.d_model
        )));
    }
    if a.vocab_size != b.vocab_size {
        return Err(NeuralError::Wiring("the two encoders use different vocabularies".into()));
    }
    Ok(())
}

/// Layer-0 input of the fact checker for a packed batch, given the
/// unifier's final hidden states over the same batch.
pub fn splice<T: Scalar>(fu: &EncoderParams<T>, batch: &Packed, uu_hidden: &[T]) -> Result<Vec<T>, NeuralError> {
    let d = fu.config.d_model;
    if uu_hidden.len() != batch.rows() * d {
        return Err(NeuralError::Wiring(format!(
            "unifier states have {} values, expected {} rows of {d}",
            uu_hidden.len(),
            batch.rows()
        )));
    }
    let (mut x, _) = embed(fu, batch, None)?;
    let pos = fu.slice(&fu.layout.position_emb);
    let seg = &fu.slice(&fu.layout.segment_emb)[QUERY_SEGMENT as usize * d..(QUERY_SEGMENT as usize + 1) * d];
    for (s, &start) in batch.starts.iter().enumerate() {
        let (a, b) = batch.query_spans[s];
        for q in a..b {
            let r = start + q;
            for j in 0..d {
                x[r * d + j] = uu_hidden[r * d + j] + pos[q * d + j] + seg[j];
            }
        }
    }
    Ok(x)
}

fn query_rows_only<T: Scalar>(batch: &Packed, d: usize, dx: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); dx.len()];
    for (s, &start) in batch.starts.iter().enumerate() {
        let (a, b) = batch.query_spans[s];
        let rows = (start + a) * d..(start + b) * d;
        out[rows.clone()].copy_from_slice(&dx[rows]);
    }
    out
}

pub fn predict_probs<T: Scalar>(
    fu: &EncoderParams<T>,
    uu: &EncoderParams<T>,
    seqs: &[&TokenSeq],
) -> Result<Vec<T>, NeuralError> {
    check_pair(fu, uu)?;
    let batch = Packed::new(seqs);
    let (x, _) = embed(uu, &batch, None)?;
    let uu_acts = encode(uu, &batch, x, None)?;
    let spliced = splice(fu, &batch, &uu_acts.hidden)?;
    let fu_acts = encode(fu, &batch, spliced, None)?;
    Ok(logits(fu, &batch, &fu_acts.hidden).into_iter().map(sigmoid).collect())
}

/// Loss of one batch through the composed model; only the unifier's
/// gradients are accumulated. The fact checker runs without dropout.
pub fn loss_and_grads<T: Scalar>(
    fu: &EncoderParams<T>,
    uu: &EncoderParams<T>,
    seqs: &[&TokenSeq],
    labels: &[bool],
    mut dropout: Option<&mut Dropout>,
    uu_grads: &mut [T],
) -> Result<T, NeuralError> {
    check_pair(fu, uu)?;
    let batch = Packed::new(seqs);
    let (x, emb) = embed(uu, &batch, dropout.as_deref_mut())?;
    let uu_acts = encode(uu, &batch, x, dropout)?;
    let spliced = splice(fu, &batch, &uu_acts.hidden)?;
    let fu_acts = encode(fu, &batch, spliced, None)?;
    let z = logits(fu, &batch, &fu_acts.hidden);
    let (loss, dz) = log_loss(&z, labels);
    let dh = logits_backward(fu, &batch, &fu_acts.hidden, &dz, None);
    let dx = encode_backward(fu, &batch, &fu_acts, dh, None);
    let duu = query_rows_only(&batch, fu.config.d_model, &dx);
    let dx_uu = encode_backward(uu, &batch, &uu_acts, duu, Some(uu_grads));
    embed_backward(uu, &batch, &emb, dx_uu, uu_grads);
    Ok(loss)
}
