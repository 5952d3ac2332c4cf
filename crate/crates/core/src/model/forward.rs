//! Forward and backward passes of the encoder.
//!
//! Every forward function that participates in training returns a cache of
//! the activations its backward counterpart needs. Backward functions
//! accumulate parameter gradients into a model-shaped gradient buffer
//! (see [`SiTModel::zeros_like`]) and return the gradient of their input.

use alloc::vec::Vec;

use super::mpp::MppPlan;
use super::params::{Block, SiTModel};
use crate::error::{bail, Result};
use crate::nn::{
    dropout, dropout_backward, gelu, gelu_backward, layernorm_backward_into, layernorm_forward, linear_backward_into,
    linear_forward, DropoutMask, LayerNormCache,
};
use crate::nn::{softmax_backward_in_place, softmax_in_place};
use crate::patching::PatchSequence;
use crate::rng::RngState;
use crate::tensor::{matmul_nn_acc, matmul_nt, matmul_tn_acc, Tensor};
use crate::Scalar;

/// Confound input for the deconfounding embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Confound<T> {
    None,
    /// Raw value, normalized with the running statistics.
    Raw(f64),
    /// Value already normalized with batch statistics.
    Normalized(T),
}

/// Row-stochastic attention matrices `A[layer][head]`, each `(N+1)×(N+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    pub layers: Vec<Vec<Tensor<f64>>>,
}

impl AttentionStack {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn head_count(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }

    pub fn seq_len(&self) -> usize {
        self.layers.first().and_then(|l| l.first()).map_or(0, Tensor::rows)
    }
}

#[derive(Debug, Clone)]
pub struct EmbedCache<T> {
    input: Tensor<T>,
    plan: Option<MppPlan>,
    confound: Option<T>,
    drop: Option<DropoutMask<T>>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    ln1: LayerNormCache<T>,
    h1: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    probs: Vec<Tensor<T>>,
    drops: Vec<Option<DropoutMask<T>>>,
    concat: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct FfnCache<T> {
    ln2: LayerNormCache<T>,
    h2: Tensor<T>,
    pre: Tensor<T>,
    hidden: Tensor<T>,
    drop: Option<DropoutMask<T>>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    pub attention: AttentionCache<T>,
    pub ffn: FfnCache<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub embed: EmbedCache<T>,
    pub blocks: Vec<BlockCache<T>>,
    pub final_ln: LayerNormCache<T>,
    pub normed: Tensor<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn attention(&self) -> AttentionStack {
        AttentionStack {
            layers: self.blocks.iter().map(|b| b.attention.probs.iter().map(Tensor::cast).collect()).collect(),
        }
    }
}

fn take_head<T: Scalar>(m: &Tensor<T>, h: usize, dh: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(&[m.rows(), dh]);
    for r in 0..m.rows() {
        out.row_mut(r).copy_from_slice(&m.row(r)[h * dh..(h + 1) * dh]);
    }
    out
}

fn put_head<T: Scalar>(dst: &mut Tensor<T>, src: &Tensor<T>, h: usize, dh: usize) {
    for r in 0..src.rows() {
        dst.row_mut(r)[h * dh..(h + 1) * dh].copy_from_slice(src.row(r));
    }
}

fn resolve_confound<T: Scalar>(model: &SiTModel<T>, confound: &Confound<T>) -> Result<Option<T>> {
    let Some(dc) = &model.deconfounder else {
        return Ok(None);
    };
    match *confound {
        Confound::None => Ok(None),
        Confound::Raw(v) => dc.normalize(v).map(Some),
        Confound::Normalized(z) => Ok(Some(z)),
    }
}

/// `fc(z)` for an already normalized confound `z`: the D-vector added to
/// every patch token.
pub fn deconfound_embed<T: Scalar>(model: &SiTModel<T>, z: T) -> Result<Vec<T>> {
    let Some(dc) = &model.deconfounder else {
        bail!(State, "model has no deconfounder");
    };
    let bias = dc.fc.bias.as_ref().expect("deconfounder has a bias");
    Ok((0..model.config.dim).map(|k| dc.fc.weight.get(k, 0) * z + bias.data()[k]).collect())
}

/// `X⁽⁰⁾ = [X₀; dropout(embed(rows) [corrupted] + confound)] + E_pos`.
pub fn embed_forward<T: Scalar>(
    model: &SiTModel<T>,
    seq: &Tensor<T>,
    confound: &Confound<T>,
    plan: Option<MppPlan>,
    rng: &mut RngState,
    training: bool,
) -> Result<(Tensor<T>, EmbedCache<T>)> {
    let cfg = &model.config;
    if seq.rows() != cfg.num_patches || seq.cols() != cfg.patch_dim() {
        bail!(Shape, "sequence is {}×{}, model expects {}×{}", seq.rows(), seq.cols(), cfg.num_patches, cfg.patch_dim());
    }
    let mut e = linear_forward(seq, &model.embed)?;
    if let Some(p) = &plan {
        let Some(mpp) = &model.mpp else {
            bail!(State, "masked patch prediction needs a model with an MPP head");
        };
        e = p.apply(&e, &mpp.mask_token)?;
    }
    let z = resolve_confound(model, confound)?;
    if let Some(z) = z {
        let c = deconfound_embed(model, z)?;
        for r in 0..e.rows() {
            crate::tensor::axpy(T::one(), &c, e.row_mut(r));
        }
    }
    let (e, drop) = dropout(&e, cfg.dropout_embed, rng, training)?;
    let d = cfg.dim;
    let mut x = Tensor::zeros(&[cfg.seq_len(), d]);
    x.row_mut(0).copy_from_slice(model.token.data());
    x.data_mut()[d..].copy_from_slice(e.data());
    x.add_assign(&model.pos)?;
    Ok((x, EmbedCache { input: seq.clone(), plan, confound: z, drop }))
}

pub fn embed_backward<T: Scalar>(model: &SiTModel<T>, cache: &EmbedCache<T>, dx: &Tensor<T>, grads: &mut SiTModel<T>) -> Result<()> {
    let d = model.config.dim;
    grads.pos.add_assign(dx)?;
    crate::tensor::axpy(T::one(), dx.row(0), grads.token.data_mut());
    let de = dx.slice_rows(1, dx.rows());
    let mut de = dropout_backward(cache.drop.as_ref(), &de)?;
    if let Some(z) = cache.confound {
        let g = grads.deconfounder.as_mut().expect("gradient buffer mirrors the model");
        for r in 0..de.rows() {
            let row = de.row(r);
            let bias = g.fc.bias.as_mut().expect("deconfounder has a bias");
            crate::tensor::axpy(T::one(), row, bias.data_mut());
            for k in 0..d {
                let w = g.fc.weight.get(k, 0);
                g.fc.weight.set(k, 0, w + row[k] * z);
            }
        }
    }
    if let Some(p) = &cache.plan {
        let g = grads.mpp.as_mut().expect("gradient buffer mirrors the model");
        de = p.backward(&de, &mut g.mask_token)?;
    }
    linear_backward_into(&cache.input, &model.embed, &de, &mut grads.embed, false)?;
    Ok(())
}

/// `Z = W_out · concat_h(softmax(Q_h K_hᵀ/√D_h) V_h) + X` with pre-norm.
pub fn mhsa_forward<T: Scalar>(
    block: &Block<T>,
    x: &Tensor<T>,
    heads: usize,
    attn_dropout: f64,
    eps: f64,
    rng: &mut RngState,
    training: bool,
) -> Result<(Tensor<T>, AttentionCache<T>)> {
    let (s, d) = (x.rows(), x.cols());
    if d % heads != 0 {
        bail!(Shape, "width {} not divisible by {} heads", d, heads);
    }
    let dh = d / heads;
    let (h1, ln1) = layernorm_forward(x, &block.ln1.gain, &block.ln1.shift, T::of(eps))?;
    let q = linear_forward(&h1, &block.wq)?;
    let k = linear_forward(&h1, &block.wk)?;
    let v = linear_forward(&h1, &block.wv)?;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut concat = Tensor::zeros(&[s, d]);
    let mut probs = Vec::with_capacity(heads);
    let mut drops = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (take_head(&q, h, dh), take_head(&k, h, dh), take_head(&v, h, dh));
        let mut a = Tensor::zeros(&[s, s]);
        matmul_nt(qh.data(), kh.data(), s, dh, s, a.data_mut());
        for r in 0..s {
            let row = a.row_mut(r);
            row.iter_mut().for_each(|x| *x *= scale);
            softmax_in_place(row);
        }
        let (a_used, drop) = dropout(&a, attn_dropout, rng, training)?;
        let mut oh = Tensor::zeros(&[s, dh]);
        matmul_nn_acc(a_used.data(), vh.data(), s, s, dh, oh.data_mut());
        put_head(&mut concat, &oh, h, dh);
        probs.push(a);
        drops.push(drop);
    }
    let mut z = linear_forward(&concat, &block.wo)?;
    z.add_assign(x)?;
    Ok((z, AttentionCache { ln1, h1, q, k, v, probs, drops, concat }))
}

pub fn mhsa_backward<T: Scalar>(
    block: &Block<T>,
    cache: &AttentionCache<T>,
    dz: &Tensor<T>,
    grads: &mut Block<T>,
) -> Result<Tensor<T>> {
    let (s, d) = (dz.rows(), dz.cols());
    let heads = cache.probs.len();
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let dconcat = linear_backward_into(&cache.concat, &block.wo, dz, &mut grads.wo, true)?.expect("dx");
    let mut dq = Tensor::zeros(&[s, d]);
    let mut dk = Tensor::zeros(&[s, d]);
    let mut dv = Tensor::zeros(&[s, d]);
    for h in 0..heads {
        let (qh, kh, vh) = (take_head(&cache.q, h, dh), take_head(&cache.k, h, dh), take_head(&cache.v, h, dh));
        let doh = take_head(&dconcat, h, dh);
        let a = &cache.probs[h];
        let a_used = match &cache.drops[h] {
            None => a.clone(),
            Some(DropoutMask(m)) => {
                let mut t = a.clone();
                t.data_mut().iter_mut().zip(m).for_each(|(x, &k)| *x *= k);
                t
            }
        };
        // dA' = dO·Vᵀ, dV = A'ᵀ·dO
        let mut da = Tensor::zeros(&[s, s]);
        matmul_nt(doh.data(), vh.data(), s, dh, s, da.data_mut());
        let mut dvh = Tensor::zeros(&[s, dh]);
        matmul_tn_acc(a_used.data(), doh.data(), s, s, dh, dvh.data_mut());
        let mut ds = dropout_backward(cache.drops[h].as_ref(), &da)?;
        for r in 0..s {
            softmax_backward_in_place(a.row(r), ds.row_mut(r));
            ds.row_mut(r).iter_mut().for_each(|x| *x *= scale);
        }
        // dQ = dS·K, dK = dSᵀ·Q
        let mut dqh = Tensor::zeros(&[s, dh]);
        matmul_nn_acc(ds.data(), kh.data(), s, s, dh, dqh.data_mut());
        let mut dkh = Tensor::zeros(&[s, dh]);
        matmul_tn_acc(ds.data(), qh.data(), s, s, dh, dkh.data_mut());
        put_head(&mut dq, &dqh, h, dh);
        put_head(&mut dk, &dkh, h, dh);
        put_head(&mut dv, &dvh, h, dh);
    }
    let mut dh1 = linear_backward_into(&cache.h1, &block.wq, &dq, &mut grads.wq, true)?.expect("dx");
    dh1.add_assign(&linear_backward_into(&cache.h1, &block.wk, &dk, &mut grads.wk, true)?.expect("dx"))?;
    dh1.add_assign(&linear_backward_into(&cache.h1, &block.wv, &dv, &mut grads.wv, true)?.expect("dx"))?;
    let mut dx = layernorm_backward_into(&cache.ln1, &block.ln1.gain, &dh1, &mut grads.ln1)?;
    dx.add_assign(dz)?;
    Ok(dx)
}

/// `X_next = ffn2(dropout(gelu(ffn1(ln2(Z))))) + Z`
pub fn ffn_forward<T: Scalar>(
    block: &Block<T>,
    z: &Tensor<T>,
    ffn_dropout: f64,
    eps: f64,
    rng: &mut RngState,
    training: bool,
) -> Result<(Tensor<T>, FfnCache<T>)> {
    let (h2, ln2) = layernorm_forward(z, &block.ln2.gain, &block.ln2.shift, T::of(eps))?;
    let pre = linear_forward(&h2, &block.ffn1)?;
    let (hidden, drop) = dropout(&gelu(&pre), ffn_dropout, rng, training)?;
    let mut out = linear_forward(&hidden, &block.ffn2)?;
    out.add_assign(z)?;
    Ok((out, FfnCache { ln2, h2, pre, hidden, drop }))
}

pub fn ffn_backward<T: Scalar>(block: &Block<T>, cache: &FfnCache<T>, dout: &Tensor<T>, grads: &mut Block<T>) -> Result<Tensor<T>> {
    let dhidden = linear_backward_into(&cache.hidden, &block.ffn2, dout, &mut grads.ffn2, true)?.expect("dx");
    let dgelu = dropout_backward(cache.drop.as_ref(), &dhidden)?;
    let dpre = gelu_backward(&cache.pre, &dgelu)?;
    let dh2 = linear_backward_into(&cache.h2, &block.ffn1, &dpre, &mut grads.ffn1, true)?.expect("dx");
    let mut dz = layernorm_backward_into(&cache.ln2, &block.ln2.gain, &dh2, &mut grads.ln2)?;
    dz.add_assign(dout)?;
    Ok(dz)
}

/// Blocks plus the final layer norm.
pub(crate) fn encode<T: Scalar>(
    model: &SiTModel<T>,
    x0: Tensor<T>,
    rng: &mut RngState,
    training: bool,
) -> Result<(Tensor<T>, Vec<BlockCache<T>>, LayerNormCache<T>)> {
    let cfg = &model.config;
    let mut x = x0;
    let mut caches = Vec::with_capacity(model.blocks.len());
    for block in &model.blocks {
        let (z, attention) = mhsa_forward(block, &x, cfg.heads, cfg.dropout_attn, cfg.layer_norm_eps, rng, training)?;
        let (next, ffn) = ffn_forward(block, &z, cfg.dropout_ffn, cfg.layer_norm_eps, rng, training)?;
        caches.push(BlockCache { attention, ffn });
        x = next;
    }
    let (normed, final_ln) =
        layernorm_forward(&x, &model.final_ln.gain, &model.final_ln.shift, T::of(cfg.layer_norm_eps))?;
    Ok((normed, caches, final_ln))
}

pub(crate) fn encode_backward<T: Scalar>(
    model: &SiTModel<T>,
    blocks: &[BlockCache<T>],
    final_ln: &LayerNormCache<T>,
    dnormed: &Tensor<T>,
    grads: &mut SiTModel<T>,
) -> Result<Tensor<T>> {
    let mut dx = layernorm_backward_into(final_ln, &model.final_ln.gain, dnormed, &mut grads.final_ln)?;
    for (l, cache) in blocks.iter().enumerate().rev() {
        let dz = ffn_backward(&model.blocks[l], &cache.ffn, &dx, &mut grads.blocks[l])?;
        dx = mhsa_backward(&model.blocks[l], &cache.attention, &dz, &mut grads.blocks[l])?;
    }
    Ok(dx)
}

/// Prediction from the token row and the cache for [`backward`].
pub fn forward_with_cache<T: Scalar>(
    model: &SiTModel<T>,
    seq: &Tensor<T>,
    confound: &Confound<T>,
    rng: &mut RngState,
    training: bool,
) -> Result<(Vec<T>, ForwardCache<T>)> {
    let (x0, embed) = embed_forward(model, seq, confound, None, rng, training)?;
    let (normed, blocks, final_ln) = encode(model, x0, rng, training)?;
    let pred = linear_forward(&normed.slice_rows(0, 1), &model.head)?.into_data();
    Ok((pred, ForwardCache { embed, blocks, final_ln, normed }))
}

/// Full forward pass: the head output (one value for regression, `k`
/// logits for classification) and every layer's attention.
pub fn forward<T: Scalar>(
    model: &SiTModel<T>,
    seq: &PatchSequence,
    confound: &Confound<T>,
    rng: &mut RngState,
    training: bool,
) -> Result<(Vec<T>, AttentionStack)> {
    let (pred, cache) = forward_with_cache(model, &seq.to_tensor(), confound, rng, training)?;
    Ok((pred, cache.attention()))
}

/// Accumulate `∂loss/∂θ` into `grads` given `∂loss/∂prediction`.
pub fn backward<T: Scalar>(model: &SiTModel<T>, cache: &ForwardCache<T>, dpred: &[T], grads: &mut SiTModel<T>) -> Result<()> {
    let k = model.config.head.outputs();
    if dpred.len() != k {
        bail!(Shape, "prediction gradient has {} entries, head has {}", dpred.len(), k);
    }
    let d = model.config.dim;
    let token = cache.normed.slice_rows(0, 1);
    let dy = Tensor::matrix(1, k, dpred.to_vec())?;
    let dtoken = linear_backward_into(&token, &model.head, &dy, &mut grads.head, true)?.expect("dx");
    let mut dnormed = Tensor::zeros(&[cache.normed.rows(), d]);
    dnormed.row_mut(0).copy_from_slice(dtoken.data());
    let dx0 = encode_backward(model, &cache.blocks, &cache.final_ln, &dnormed, grads)?;
    embed_backward(model, &cache.embed, &dx0, grads)
}

/// Embedded input sequence `X⁽⁰⁾` alone (no encoder pass).
pub fn embed_sequence<T: Scalar>(
    model: &SiTModel<T>,
    seq: &PatchSequence,
    confound: &Confound<T>,
    rng: &mut RngState,
    training: bool,
) -> Result<Tensor<T>> {
    embed_forward(model, &seq.to_tensor(), confound, None, rng, training).map(|(x, _)| x)
}
