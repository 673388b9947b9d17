//! Parameters and the forward pass of the causal token model.
//!
//! Each timestep contributes three tokens in the configured order. Linear
//! layers carry no bias (elementwise ops only mix with scalars, so row
//! broadcasting never arises); normalization offsets come from the layer
//! norms. The RTG head reads the first token of each timestep group, the
//! action head the second, which under (s, R, a) order makes the RTG a
//! function of the state and the action a function of state plus RTG.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, TokenOrder};
use crate::num::{Tape, Tensor, TensorRef};
use crate::seeding::rng_for;

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub qkv: Tensor,
    pub attn_proj: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub mlp_fc: Tensor,
    pub mlp_proj: Tensor,
}

#[derive(Debug, Clone)]
pub struct Params {
    pub state_proj: Tensor,
    pub rtg_proj: Tensor,
    pub action_proj: Tensor,
    pub time_embed: Tensor,
    pub layers: Vec<LayerParams>,
    pub lnf_gamma: Tensor,
    pub lnf_beta: Tensor,
    pub head_rtg: Tensor,
    pub head_action: Tensor,
}

const INIT_STD: f32 = 0.02;

impl Params {
    /// Fresh parameters, deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let mut rng = rng_for(seed, "model-init", &[]);
        let mut w = |dims: &[usize]| Tensor::randn(dims, INIT_STD, &mut rng).requires_grad(true);
        let ones = |n: usize| {
            Tensor::from_values(&[n], vec![1.0; n])
                .expect("gamma shape")
                .requires_grad(true)
        };
        let zeros_vec = |n: usize| Tensor::zeros(&[n]).requires_grad(true);

        let state_proj = w(&[config.state_dim, d]);
        let rtg_proj = w(&[1, d]);
        let action_proj = w(&[1, d]);
        let time_embed = w(&[config.max_timestep, d]);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerParams {
                ln1_gamma: ones(d),
                ln1_beta: zeros_vec(d),
                qkv: w(&[d, 3 * d]),
                attn_proj: w(&[d, d]),
                ln2_gamma: ones(d),
                ln2_beta: zeros_vec(d),
                mlp_fc: w(&[d, 4 * d]),
                mlp_proj: w(&[4 * d, d]),
            });
        }
        Ok(Params {
            state_proj,
            rtg_proj,
            action_proj,
            time_embed,
            layers,
            lnf_gamma: ones(d),
            lnf_beta: zeros_vec(d),
            head_rtg: w(&[d, 1]),
            head_action: w(&[d, 1]),
        })
    }

    /// Canonical (name, tensor) listing; the checkpoint and optimizer
    /// orders both come from here.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("state_proj".into(), &self.state_proj),
            ("rtg_proj".into(), &self.rtg_proj),
            ("action_proj".into(), &self.action_proj),
            ("time_embed".into(), &self.time_embed),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.ln1_gamma"), &layer.ln1_gamma));
            out.push((format!("layer{l}.ln1_beta"), &layer.ln1_beta));
            out.push((format!("layer{l}.qkv"), &layer.qkv));
            out.push((format!("layer{l}.attn_proj"), &layer.attn_proj));
            out.push((format!("layer{l}.ln2_gamma"), &layer.ln2_gamma));
            out.push((format!("layer{l}.ln2_beta"), &layer.ln2_beta));
            out.push((format!("layer{l}.mlp_fc"), &layer.mlp_fc));
            out.push((format!("layer{l}.mlp_proj"), &layer.mlp_proj));
        }
        out.push(("lnf_gamma".into(), &self.lnf_gamma));
        out.push(("lnf_beta".into(), &self.lnf_beta));
        out.push(("head_rtg".into(), &self.head_rtg));
        out.push(("head_action".into(), &self.head_action));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("state_proj".into(), &mut self.state_proj),
            ("rtg_proj".into(), &mut self.rtg_proj),
            ("action_proj".into(), &mut self.action_proj),
            ("time_embed".into(), &mut self.time_embed),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{l}.ln1_gamma"), &mut layer.ln1_gamma));
            out.push((format!("layer{l}.ln1_beta"), &mut layer.ln1_beta));
            out.push((format!("layer{l}.qkv"), &mut layer.qkv));
            out.push((format!("layer{l}.attn_proj"), &mut layer.attn_proj));
            out.push((format!("layer{l}.ln2_gamma"), &mut layer.ln2_gamma));
            out.push((format!("layer{l}.ln2_beta"), &mut layer.ln2_beta));
            out.push((format!("layer{l}.mlp_fc"), &mut layer.mlp_fc));
            out.push((format!("layer{l}.mlp_proj"), &mut layer.mlp_proj));
        }
        out.push(("lnf_gamma".into(), &mut self.lnf_gamma));
        out.push(("lnf_beta".into(), &mut self.lnf_beta));
        out.push(("head_rtg".into(), &mut self.head_rtg));
        out.push(("head_action".into(), &mut self.head_action));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// A flat batch of context windows. Padding, when present, must sit at the
/// tail of a window (`pad_mask` true for real positions).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub batch: usize,
    /// Timesteps in this window; at most `config.context_steps`.
    pub steps: usize,
    /// `batch * steps * state_dim`, row-major.
    pub states: Vec<f32>,
    /// `batch * steps`, in normalized RTG units.
    pub rtgs: Vec<f32>,
    /// `batch * steps`, normalized to [0,1] by the action bound.
    pub actions: Vec<f32>,
    /// `batch * steps`, absolute episode timestep of each position.
    pub timesteps: Vec<usize>,
    /// `batch * steps`, true where the position holds real data.
    pub pad_mask: Vec<bool>,
}

impl TokenBatch {
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let n = self.batch * self.steps;
        if self.batch == 0 || self.steps == 0 || self.steps > config.context_steps {
            return Err(Error::Shape {
                op: "token_batch",
                lhs: vec![self.batch, self.steps],
                rhs: vec![config.context_steps],
            });
        }
        if self.states.len() != n * config.state_dim
            || self.rtgs.len() != n
            || self.actions.len() != n
            || self.timesteps.len() != n
            || self.pad_mask.len() != n
        {
            return Err(Error::Shape {
                op: "token_batch",
                lhs: vec![self.batch, self.steps, config.state_dim],
                rhs: vec![
                    self.states.len(),
                    self.rtgs.len(),
                    self.actions.len(),
                    self.timesteps.len(),
                ],
            });
        }
        if let Some(&t) = self.timesteps.iter().find(|&&t| t >= config.max_timestep) {
            return Err(Error::Bounds {
                op: "token_batch timesteps",
                index: t,
                bound: config.max_timestep,
            });
        }
        if !self.states.iter().all(|v| v.is_finite())
            || !self.rtgs.iter().all(|v| v.is_finite())
            || !self.actions.iter().all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("token batch inputs".into()));
        }
        Ok(())
    }

    /// 0/1 mask as a `[batch, steps, 1]` constant for loss masking.
    pub fn mask_values(&self) -> Vec<f32> {
        self.pad_mask
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn real_count(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }
}

/// Prediction tensors still attached to the tape.
#[derive(Debug, Clone, Copy)]
pub struct ModelOutput {
    /// `[batch, steps, 1]`, normalized RTG units, linear head.
    pub rtg_pred: TensorRef,
    /// `[batch, steps, 1]`, squashed to (0,1) by `(tanh + 1) / 2`.
    pub action_pred: TensorRef,
}

/// Run the network over a batch. `dropout_rng` enables dropout at the
/// configured rate; pass `None` for inference and gradient checks.
pub fn forward(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &mut Params,
    batch: &TokenBatch,
    order: TokenOrder,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ModelOutput> {
    batch.validate(config)?;
    let b = batch.batch;
    let k = batch.steps;
    let d = config.embed_dim;
    let h = config.n_heads;
    let dh = config.head_dim();
    let s = 3 * k;

    // Leaf insertion rebinds every parameter to this tape.
    let state_proj = tape.insert(&mut params.state_proj);
    let rtg_proj = tape.insert(&mut params.rtg_proj);
    let action_proj = tape.insert(&mut params.action_proj);
    let time_embed = tape.insert(&mut params.time_embed);
    let layer_refs: Vec<[TensorRef; 8]> = params
        .layers
        .iter_mut()
        .map(|l| {
            [
                tape.insert(&mut l.ln1_gamma),
                tape.insert(&mut l.ln1_beta),
                tape.insert(&mut l.qkv),
                tape.insert(&mut l.attn_proj),
                tape.insert(&mut l.ln2_gamma),
                tape.insert(&mut l.ln2_beta),
                tape.insert(&mut l.mlp_fc),
                tape.insert(&mut l.mlp_proj),
            ]
        })
        .collect();
    let lnf_gamma = tape.insert(&mut params.lnf_gamma);
    let lnf_beta = tape.insert(&mut params.lnf_beta);
    let head_rtg = tape.insert(&mut params.head_rtg);
    let head_action = tape.insert(&mut params.head_action);

    // Token embeddings, each [b, k, d], sharing one timestep embedding.
    let states = tape.constant(&[b, k, config.state_dim], batch.states.clone())?;
    let rtgs = tape.constant(&[b, k, 1], batch.rtgs.clone())?;
    let actions = tape.constant(&[b, k, 1], batch.actions.clone())?;
    let time = tape.embed_lookup(time_embed, &batch.timesteps, &[b, k])?;

    let s_tok = tape.matmul(states, state_proj)?;
    let s_tok = tape.add(s_tok, time)?;
    let r_tok = tape.matmul(rtgs, rtg_proj)?;
    let r_tok = tape.add(r_tok, time)?;
    let a_tok = tape.matmul(actions, action_proj)?;
    let a_tok = tape.add(a_tok, time)?;

    // Interleave per timestep: [b, k, 3, d] then flatten to [b, 3k, d].
    let s3 = tape.reshape(s_tok, &[b, k, 1, d])?;
    let r3 = tape.reshape(r_tok, &[b, k, 1, d])?;
    let a3 = tape.reshape(a_tok, &[b, k, 1, d])?;
    let grouped = match order {
        TokenOrder::Sra => tape.concat(&[s3, r3, a3], 2)?,
        TokenOrder::Rsa => tape.concat(&[r3, s3, a3], 2)?,
    };
    let mut x = tape.reshape(grouped, &[b, s, d])?;
    ensure_finite(tape, x, "embedding")?;

    for (l, refs) in layer_refs.iter().enumerate() {
        let [ln1_g, ln1_b, qkv_w, attn_w, ln2_g, ln2_b, fc_w, proj_w] = *refs;

        // Attention sublayer, pre-norm residual.
        let normed = tape.layernorm_lastdim(x, ln1_g, ln1_b, 1e-5)?;
        let qkv = tape.matmul(normed, qkv_w)?;
        let qkv = tape.reshape(qkv, &[b, s, 3, h, dh])?;
        let split = |tape: &mut Tape, idx: usize| -> Result<TensorRef> {
            let part = tape.slice(qkv, 2, idx, 1)?;
            let part = tape.reshape(part, &[b, s, h, dh])?;
            tape.transpose(part, 1, 2) // [b, h, s, dh]
        };
        let q = split(tape, 0)?;
        let key = split(tape, 1)?;
        let v = split(tape, 2)?;
        let kt = tape.transpose(key, 2, 3)?;
        let scores = tape.bmm(q, kt)?;
        let scores = tape.mul_scalar(scores, 1.0 / (dh as f32).sqrt());
        let masked = tape.causal_mask(scores)?;
        let probs = tape.softmax_lastdim(masked)?;
        let ctx = tape.bmm(probs, v)?;
        let ctx = tape.transpose(ctx, 1, 2)?;
        let ctx = tape.reshape(ctx, &[b, s, d])?;
        let attn_out = tape.matmul(ctx, attn_w)?;
        let attn_out = maybe_dropout(tape, attn_out, config.dropout, &mut dropout_rng)?;
        x = tape.add(x, attn_out)?;

        // Feed-forward sublayer.
        let normed = tape.layernorm_lastdim(x, ln2_g, ln2_b, 1e-5)?;
        let hidden = tape.matmul(normed, fc_w)?;
        let hidden = tape.gelu(hidden);
        let mlp_out = tape.matmul(hidden, proj_w)?;
        let mlp_out = maybe_dropout(tape, mlp_out, config.dropout, &mut dropout_rng)?;
        x = tape.add(x, mlp_out)?;
        ensure_finite(tape, x, &format!("layer {l}"))?;
    }

    let x = tape.layernorm_lastdim(x, lnf_gamma, lnf_beta, 1e-5)?;

    // Per-timestep token groups back apart; heads read fixed group slots.
    let grouped = tape.reshape(x, &[b, k, 3, d])?;
    let first = tape.slice(grouped, 2, 0, 1)?;
    let first = tape.reshape(first, &[b, k, d])?;
    let second = tape.slice(grouped, 2, 1, 1)?;
    let second = tape.reshape(second, &[b, k, d])?;

    let rtg_pred = tape.matmul(first, head_rtg)?;
    let action_raw = tape.matmul(second, head_action)?;
    let action_squashed = tape.tanh(action_raw);
    let action_squashed = tape.add_scalar(action_squashed, 1.0);
    let action_pred = tape.mul_scalar(action_squashed, 0.5);
    ensure_finite(tape, rtg_pred, "rtg head")?;
    ensure_finite(tape, action_pred, "action head")?;

    Ok(ModelOutput {
        rtg_pred,
        action_pred,
    })
}

fn maybe_dropout(
    tape: &mut Tape,
    x: TensorRef,
    p: f32,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<TensorRef> {
    let Some(rng) = rng.as_deref_mut() else {
        return Ok(x);
    };
    if p <= 0.0 {
        return Ok(x);
    }
    use rand::Rng;
    let dims = tape.dims(x).to_vec();
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    let mask: Vec<f32> = (0..tape.values(x).len())
        .map(|_| if rng.random::<f32>() < keep { scale } else { 0.0 })
        .collect();
    let m = tape.constant(&dims, mask)?;
    tape.mul(x, m)
}

fn ensure_finite(tape: &Tape, x: TensorRef, stage: &str) -> Result<()> {
    if tape.values(x).iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{stage} produced a non-finite activation")))
    }
}
