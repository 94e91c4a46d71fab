//! Symmetric visual/audio co-attention block.
//!
//! Each modality runs a self-attention sub-block followed by a cross-attention
//! sub-block whose keys and values come from the other modality. A sub-block
//! computes `FFN(Norm(MultiHead(q, kv, kv)) + q)`: the norm is applied to the
//! attention output before the residual add, and the FFN carries no residual.
//! With `standard_block` the conventional post-norm ordering is used instead:
//! `x = Norm(q + MultiHead(q, kv, kv)); Norm'(x + FFN(x))`.

use crate::error::{dim_err, Error, Result};
use crate::layers::{FeedForward, Init, Linear, Norm};
use crate::tensor::{Element, ParamId, Tape, Var};

#[derive(Clone, Debug)]
pub struct HeadProjection {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

#[derive(Clone, Debug)]
pub struct HeadParams {
    pub heads: Vec<HeadProjection>,
    pub w_o: ParamId,
    pub d_head: usize,
}

impl HeadParams {
    pub fn new<T: Element>(init: &mut Init<'_, T>, name: &str, d_model: usize, n_heads: usize) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::Config(format!("{n_heads} heads do not divide d_model {d_model}")));
        }
        let d_head = d_model / n_heads;
        let heads = (0..n_heads)
            .map(|h| {
                Ok(HeadProjection {
                    w_q: init.xavier(&format!("{name}.head{h}.w_q"), d_model, d_head)?,
                    w_k: init.xavier(&format!("{name}.head{h}.w_k"), d_model, d_head)?,
                    w_v: init.xavier(&format!("{name}.head{h}.w_v"), d_model, d_head)?,
                })
            })
            .collect::<Result<_>>()?;
        let w_o = init.xavier(&format!("{name}.w_o"), n_heads * d_head, d_model)?;
        Ok(HeadParams { heads, w_o, d_head })
    }
}

/// Multi-head scaled dot-product attention. Also returns each head's
/// `t_q × t_kv` attention weights.
pub fn multi_head_attention_with_weights<T: Element>(
    tape: &mut Tape<'_, T>,
    q: Var,
    k: Var,
    v: Var,
    hp: &HeadParams,
) -> Result<(Var, Vec<Var>)> {
    let (tq, _) = tape.value(q).dims2()?;
    let (tk, _) = tape.value(k).dims2()?;
    let (tv, _) = tape.value(v).dims2()?;
    if tk != tv {
        return Err(dim_err!("attention keys ({tk}) and values ({tv}) differ in count"));
    }
    if tq == 0 || tk == 0 {
        return Err(dim_err!("attention over empty token set"));
    }
    let scale = T::one() / T::from_usize(hp.d_head).sqrt();
    let mut outputs = Vec::with_capacity(hp.heads.len());
    let mut weights = Vec::with_capacity(hp.heads.len());
    for head in &hp.heads {
        let (wq, wk, wv) = (tape.param(head.w_q), tape.param(head.w_k), tape.param(head.w_v));
        let qh = tape.matmul(q, wq)?;
        let kh = tape.matmul(k, wk)?;
        let vh = tape.matmul(v, wv)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale)?;
        let attn = tape.softmax(scores, 1)?;
        outputs.push(tape.matmul(attn, vh)?);
        weights.push(attn);
    }
    let concat = tape.concat_cols(&outputs)?;
    let wo = tape.param(hp.w_o);
    Ok((tape.matmul(concat, wo)?, weights))
}

pub fn multi_head_attention<T: Element>(tape: &mut Tape<'_, T>, q: Var, k: Var, v: Var, hp: &HeadParams) -> Result<Var> {
    multi_head_attention_with_weights(tape, q, k, v, hp).map(|(out, _)| out)
}

/// Attention + Norm + FFN. Serves as a self- or cross-attention sub-block
/// depending on what is passed as keys/values.
#[derive(Clone, Debug)]
pub struct SubBlockParams {
    pub attn: HeadParams,
    pub norm: Norm,
    pub ffn: FeedForward,
    /// Second norm, present only for the conventional block ordering.
    pub post_norm: Option<Norm>,
}

impl SubBlockParams {
    pub fn new<T: Element>(
        init: &mut Init<'_, T>,
        name: &str,
        d_model: usize,
        n_heads: usize,
        standard_block: bool,
    ) -> Result<Self> {
        Ok(SubBlockParams {
            attn: HeadParams::new(init, &format!("{name}.attn"), d_model, n_heads)?,
            norm: Norm::new(init, &format!("{name}.norm"), d_model)?,
            ffn: FeedForward::new(init, &format!("{name}.ffn"), d_model)?,
            post_norm: if standard_block {
                Some(Norm::new(init, &format!("{name}.post_norm"), d_model)?)
            } else {
                None
            },
        })
    }
}

fn sub_block<T: Element>(tape: &mut Tape<'_, T>, query: Var, kv: Var, p: &SubBlockParams) -> Result<Var> {
    let a = multi_head_attention(tape, query, kv, kv, &p.attn)?;
    match &p.post_norm {
        None => {
            let n = p.norm.forward(tape, a)?;
            let r = tape.add(n, query)?;
            p.ffn.forward(tape, r)
        }
        Some(post) => {
            let r = tape.add(query, a)?;
            let x = p.norm.forward(tape, r)?;
            let f = p.ffn.forward(tape, x)?;
            let r2 = tape.add(x, f)?;
            post.forward(tape, r2)
        }
    }
}

/// `FC(Norm(MultiHead(z, z, z)) + z)`.
pub fn self_attention_subblock<T: Element>(tape: &mut Tape<'_, T>, z: Var, p: &SubBlockParams) -> Result<Var> {
    sub_block(tape, z, z, p)
}

/// `FC(Norm(MultiHead(q, kv, kv)) + q)` with query and key/value from
/// different modalities.
pub fn cross_attention_subblock<T: Element>(
    tape: &mut Tape<'_, T>,
    query: Var,
    key_value: Var,
    p: &SubBlockParams,
) -> Result<Var> {
    sub_block(tape, query, key_value, p)
}

/// One stage of the co-attention block: per-modality self-attention, then
/// either cross-attention (SA-CA) or a second self-attention (SA-SA).
#[derive(Clone, Debug)]
pub struct CoAttentionLayer {
    pub visual_self: SubBlockParams,
    pub audio_self: SubBlockParams,
    pub visual_second: SubBlockParams,
    pub audio_second: SubBlockParams,
}

#[derive(Clone, Debug)]
pub struct CoAttentionParams {
    pub layers: Vec<CoAttentionLayer>,
    /// `2·d_model → d_model` joint projection.
    pub fusion: Linear,
    /// Second stage attends across modalities when true.
    pub cross: bool,
}

impl CoAttentionParams {
    pub fn new<T: Element>(
        init: &mut Init<'_, T>,
        d_model: usize,
        n_heads: usize,
        depth: usize,
        cross: bool,
        standard_block: bool,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("co-attention depth must be at least 1".into()));
        }
        let second = if cross { "cross" } else { "self2" };
        let layers = (0..depth)
            .map(|l| {
                let sb = |init: &mut Init<'_, T>, name: String| {
                    SubBlockParams::new(init, &name, d_model, n_heads, standard_block)
                };
                Ok(CoAttentionLayer {
                    visual_self: sb(init, format!("coattn{l}.visual.self"))?,
                    audio_self: sb(init, format!("coattn{l}.audio.self"))?,
                    visual_second: sb(init, format!("coattn{l}.visual.{second}"))?,
                    audio_second: sb(init, format!("coattn{l}.audio.{second}"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(CoAttentionParams {
            layers,
            fusion: Linear::new(init, "fusion", 2 * d_model, d_model, true)?,
            cross,
        })
    }
}

/// Run all co-attention stages. Returns the final visual and audio token
/// sequences `(F_v, F_a)`.
pub fn co_attention_block<T: Element>(
    tape: &mut Tape<'_, T>,
    z_visual: Var,
    z_audio: Var,
    params: &CoAttentionParams,
) -> Result<(Var, Var)> {
    let (mut v, mut a) = (z_visual, z_audio);
    for layer in &params.layers {
        let iv = self_attention_subblock(tape, v, &layer.visual_self)?;
        let ia = self_attention_subblock(tape, a, &layer.audio_self)?;
        if params.cross {
            v = cross_attention_subblock(tape, iv, ia, &layer.visual_second)?;
            a = cross_attention_subblock(tape, ia, iv, &layer.audio_second)?;
        } else {
            v = self_attention_subblock(tape, iv, &layer.visual_second)?;
            a = self_attention_subblock(tape, ia, &layer.audio_second)?;
        }
    }
    Ok((v, a))
}

/// Mean-pool each modality, concatenate, project and rectify: `1 × d_model`.
pub fn fuse_modalities<T: Element>(tape: &mut Tape<'_, T>, f_visual: Var, f_audio: Var, fusion: &Linear) -> Result<Var> {
    let pv = tape.mean_rows(f_visual)?;
    let pa = tape.mean_rows(f_audio)?;
    let joint = tape.concat_cols(&[pv, pa])?;
    let y = fusion.forward(tape, joint)?;
    tape.relu(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamStore, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn heads(d: usize, h: usize) -> (ParamStore<f64>, HeadParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let hp = HeadParams::new(&mut Init { store: &mut store, rng: &mut rng }, "mha", d, h).unwrap();
        (store, hp)
    }

    #[test]
    fn head_count_must_divide_width() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = HeadParams::new(&mut Init { store: &mut store, rng: &mut rng }, "x", 10, 4);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn single_key_ignores_query() {
        let (store, hp) = heads(8, 2);
        let mut tape = Tape::with_params(&store);
        let kv = tape.constant(Tensor::from_fn(&[1, 8], |i| i as f64 * 0.1 - 0.3));
        let q1 = tape.constant(Tensor::from_fn(&[3, 8], |i| (i as f64).sin()));
        let q2 = tape.constant(Tensor::from_fn(&[3, 8], |i| (i as f64 * 1.7).cos() * 4.0));
        let (o1, w1) = multi_head_attention_with_weights(&mut tape, q1, kv, kv, &hp).unwrap();
        let o2 = multi_head_attention(&mut tape, q2, kv, kv, &hp).unwrap();
        assert!(tape.value(w1[0]).data().iter().all(|&w| w == 1.0));
        let diff = tape.value(o1).max_abs_diff(tape.value(o2)).unwrap();
        assert!(diff < 1e-12);
    }

    #[test]
    fn zero_query_projection_averages_values() {
        let (mut store, hp) = heads(4, 1);
        store.assign("mha.head0.w_q", Tensor::zeros(&[4, 4])).unwrap();
        let mut tape = Tape::with_params(&store);
        let q = tape.constant(Tensor::from_fn(&[2, 4], |i| i as f64));
        let kv = tape.constant(Tensor::from_fn(&[3, 4], |i| ((i * 7) % 5) as f64));
        let out = multi_head_attention(&mut tape, q, kv, kv, &hp).unwrap();
        let wv = tape.param(hp.heads[0].w_v);
        let vh = tape.matmul(kv, wv).unwrap();
        let mean = tape.mean_rows(vh).unwrap();
        let wo = tape.param(hp.w_o);
        let want = tape.matmul(mean, wo).unwrap();
        for r in 0..2 {
            for (a, b) in tape.value(out).row(r).iter().zip(tape.value(want).row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zeroed_attention_branch_reduces_to_ffn() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = SubBlockParams::new(&mut Init { store: &mut store, rng: &mut rng }, "sb", 8, 2, false).unwrap();
        store.assign("sb.attn.w_o", Tensor::zeros(&[8, 8])).unwrap();
        let mut tape = Tape::with_params(&store);
        let z = tape.constant(Tensor::from_fn(&[3, 8], |i| (i as f64 * 0.37).sin()));
        let i = self_attention_subblock(&mut tape, z, &p).unwrap();
        let f = p.ffn.forward(&mut tape, z).unwrap();
        assert_eq!(tape.shape(i), &[3, 8]);
        assert_eq!(tape.value(i), tape.value(f));
    }

    #[test]
    fn fusion_of_zero_inputs_is_relu_bias() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fusion = Linear::new(&mut Init { store: &mut store, rng: &mut rng }, "fusion", 8, 4, true).unwrap();
        store
            .assign("fusion.bias", Tensor::new(vec![4], vec![0.5, -1.0, 2.0, 0.0]).unwrap())
            .unwrap();
        let mut tape = Tape::with_params(&store);
        let fv = tape.constant(Tensor::zeros(&[5, 4]));
        let fa = tape.constant(Tensor::zeros(&[2, 4]));
        let f = fuse_modalities(&mut tape, fv, fa, &fusion).unwrap();
        assert_eq!(tape.value(f).data(), &[0.5, 0.0, 2.0, 0.0]);
    }
}
