//! Next-token training with hand-written backpropagation and Adam.

use super::checkpoint::ToyLmCheckpoint;
use super::config::{Layout, ToyLmConfig, BOS, VOCAB_SIZE};
use super::model::Model;
use super::ops::{
    gelu, gelu_grad, layernorm_row, layernorm_row_backward, linear_row, linear_row_backward,
    log_softmax_at, softmax_in_place,
};
use super::ToyLmError;
use crate::rng::SplitMix64;

/// Appended to every training example so the model learns where lines end.
pub const EOS_BYTE: u8 = b'\n';

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Steps(usize),
    Epochs(usize),
}

#[derive(Debug, Clone)]
pub struct TrainSpec {
    pub corpus: Vec<Vec<u8>>,
    pub lr: f64,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub seed: u64,
}

impl TrainSpec {
    /// Few-shot task-embedding recipe: lr 3.3e-3, batch 1, 5 epochs.
    pub fn few_shot(corpus: Vec<Vec<u8>>, seed: u64) -> Self {
        Self {
            corpus,
            lr: 3.3e-3,
            batch_size: 1,
            schedule: Schedule::Epochs(5),
            seed,
        }
    }

    fn validate(&self) -> Result<(), ToyLmError> {
        if self.corpus.is_empty() {
            return Err(ToyLmError::EmptyCorpus);
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(ToyLmError::InvalidTrainSpec(format!("learning rate {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(ToyLmError::InvalidTrainSpec("batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        match self.schedule {
            Schedule::Steps(s) => s,
            Schedule::Epochs(e) => e * self.corpus.len().div_ceil(self.batch_size),
        }
    }
}

/// Training example → (inputs, targets): `BOS b1..bn` predicts `b1..bn EOS`,
/// cut to the context window.
pub fn make_example(bytes: &[u8], max_context: usize) -> (Vec<u16>, Vec<u16>) {
    let mut inputs = Vec::with_capacity(bytes.len() + 1);
    inputs.push(BOS);
    inputs.extend(bytes.iter().map(|&b| b as u16));
    let mut targets: Vec<u16> = bytes.iter().map(|&b| b as u16).collect();
    targets.push(EOS_BYTE as u16);
    inputs.truncate(max_context);
    targets.truncate(max_context);
    (inputs, targets)
}

struct LayerCache {
    x_in: Vec<f64>,
    ln1: Vec<f64>,
    ln1_stats: Vec<(f64, f64)>,
    qkv: Vec<f64>,
    att: Vec<f64>,
    atty: Vec<f64>,
    x_mid: Vec<f64>,
    ln2: Vec<f64>,
    ln2_stats: Vec<(f64, f64)>,
    fc_pre: Vec<f64>,
    fc_act: Vec<f64>,
}

fn split2(g: &mut [f64], a: usize, a_len: usize, b: usize, b_len: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a + a_len <= b);
    let (lo, hi) = g.split_at_mut(b);
    (&mut lo[a..a + a_len], &mut hi[..b_len])
}

/// Sum of token losses of one sequence, accumulating `scale * d(loss)/dθ` into `grad`.
fn sequence_backprop(
    model: &Model,
    inputs: &[u16],
    targets: &[u16],
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let cfg: &ToyLmConfig = &model.cfg;
    let lay: &Layout = &model.layout;
    let (d, f, nh, hs, v) = (cfg.d_model, cfg.ffn_dim, cfg.n_heads, cfg.head_dim(), VOCAB_SIZE);
    let t_len = inputs.len();
    let w = |off: usize, len: usize| model.slice(off, len);
    let att_scale = 1.0 / (hs as f64).sqrt();

    // Forward.
    let mut x = vec![0.0; t_len * d];
    for (t, &tok) in inputs.iter().enumerate() {
        let e = w(lay.wte + tok as usize * d, d);
        let p = w(lay.wpe + t * d, d);
        for i in 0..d {
            x[t * d + i] = e[i] + p[i];
        }
    }
    let mut caches = Vec::with_capacity(cfg.n_layers);
    for b in &lay.blocks {
        let x_in = x.clone();
        let mut ln1 = vec![0.0; t_len * d];
        let mut ln1_stats = Vec::with_capacity(t_len);
        let mut qkv = vec![0.0; t_len * 3 * d];
        for t in 0..t_len {
            ln1_stats.push(layernorm_row(
                &x_in[t * d..(t + 1) * d],
                w(b.ln1_g, d),
                w(b.ln1_b, d),
                &mut ln1[t * d..(t + 1) * d],
            ));
            linear_row(
                &ln1[t * d..(t + 1) * d],
                w(b.qkv_w, d * 3 * d),
                Some(w(b.qkv_b, 3 * d)),
                &mut qkv[t * 3 * d..(t + 1) * 3 * d],
            );
        }
        let mut att = vec![0.0; nh * t_len * t_len];
        let mut atty = vec![0.0; t_len * d];
        for h in 0..nh {
            for t in 0..t_len {
                let q = &qkv[t * 3 * d + h * hs..t * 3 * d + (h + 1) * hs];
                let row = &mut att[(h * t_len + t) * t_len..(h * t_len + t) * t_len + t + 1];
                for (u, s) in row.iter_mut().enumerate() {
                    let k = &qkv[u * 3 * d + d + h * hs..u * 3 * d + d + (h + 1) * hs];
                    *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * att_scale;
                }
                softmax_in_place(row);
                let out = &mut atty[t * d + h * hs..t * d + (h + 1) * hs];
                for (u, &p) in row.iter().enumerate() {
                    let vv = &qkv[u * 3 * d + 2 * d + h * hs..u * 3 * d + 2 * d + (h + 1) * hs];
                    for (o, &val) in out.iter_mut().zip(vv) {
                        *o += p * val;
                    }
                }
            }
        }
        let mut x_mid = x_in.clone();
        let mut proj = vec![0.0; d];
        for t in 0..t_len {
            linear_row(&atty[t * d..(t + 1) * d], w(b.proj_w, d * d), Some(w(b.proj_b, d)), &mut proj);
            for i in 0..d {
                x_mid[t * d + i] += proj[i];
            }
        }
        let mut ln2 = vec![0.0; t_len * d];
        let mut ln2_stats = Vec::with_capacity(t_len);
        let mut fc_pre = vec![0.0; t_len * f];
        let mut fc_act = vec![0.0; t_len * f];
        let mut x_out = x_mid.clone();
        let mut mlp = vec![0.0; d];
        for t in 0..t_len {
            ln2_stats.push(layernorm_row(
                &x_mid[t * d..(t + 1) * d],
                w(b.ln2_g, d),
                w(b.ln2_b, d),
                &mut ln2[t * d..(t + 1) * d],
            ));
            linear_row(&ln2[t * d..(t + 1) * d], w(b.fc_w, d * f), Some(w(b.fc_b, f)), &mut fc_pre[t * f..(t + 1) * f]);
            for j in 0..f {
                fc_act[t * f + j] = gelu(fc_pre[t * f + j]);
            }
            linear_row(&fc_act[t * f..(t + 1) * f], w(b.out_w, f * d), Some(w(b.out_b, d)), &mut mlp);
            for i in 0..d {
                x_out[t * d + i] += mlp[i];
            }
        }
        x = x_out;
        caches.push(LayerCache {
            x_in,
            ln1,
            ln1_stats,
            qkv,
            att,
            atty,
            x_mid,
            ln2,
            ln2_stats,
            fc_pre,
            fc_act,
        });
    }
    let mut lnf = vec![0.0; t_len * d];
    let mut lnf_stats = Vec::with_capacity(t_len);
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; t_len * v];
    for t in 0..t_len {
        lnf_stats.push(layernorm_row(
            &x[t * d..(t + 1) * d],
            w(lay.lnf_g, d),
            w(lay.lnf_b, d),
            &mut lnf[t * d..(t + 1) * d],
        ));
        let row = &mut dlogits[t * v..(t + 1) * v];
        linear_row(&lnf[t * d..(t + 1) * d], w(lay.head_w, d * v), None, row);
        let target = targets[t] as usize;
        loss -= log_softmax_at(row, target);
        softmax_in_place(row);
        row[target] -= 1.0;
        row.iter_mut().for_each(|g| *g *= scale);
    }

    // Backward.
    let mut dx = vec![0.0; t_len * d];
    {
        let mut dlnf = vec![0.0; t_len * d];
        let dhead = &mut grad[lay.head_w..lay.head_w + d * v];
        for t in 0..t_len {
            linear_row_backward(
                &lnf[t * d..(t + 1) * d],
                w(lay.head_w, d * v),
                &dlogits[t * v..(t + 1) * v],
                &mut dlnf[t * d..(t + 1) * d],
                dhead,
                None,
            );
        }
        let (dg, db) = split2(grad, lay.lnf_g, d, lay.lnf_b, d);
        for t in 0..t_len {
            let (mean, rstd) = lnf_stats[t];
            layernorm_row_backward(
                &x[t * d..(t + 1) * d],
                mean,
                rstd,
                w(lay.lnf_g, d),
                &dlnf[t * d..(t + 1) * d],
                &mut dx[t * d..(t + 1) * d],
                dg,
                db,
            );
        }
    }
    for (b, c) in lay.blocks.iter().zip(&caches).rev() {
        // MLP branch: x_out = x_mid + proj(gelu(fc(ln2(x_mid)))).
        let mut dfc = vec![0.0; t_len * f];
        {
            let (dw, db) = split2(grad, b.out_w, f * d, b.out_b, d);
            for t in 0..t_len {
                linear_row_backward(
                    &c.fc_act[t * f..(t + 1) * f],
                    w(b.out_w, f * d),
                    &dx[t * d..(t + 1) * d],
                    &mut dfc[t * f..(t + 1) * f],
                    dw,
                    Some(db),
                );
            }
        }
        for (g, &pre) in dfc.iter_mut().zip(&c.fc_pre) {
            *g *= gelu_grad(pre);
        }
        let mut dln2 = vec![0.0; t_len * d];
        {
            let (dw, db) = split2(grad, b.fc_w, d * f, b.fc_b, f);
            for t in 0..t_len {
                linear_row_backward(
                    &c.ln2[t * d..(t + 1) * d],
                    w(b.fc_w, d * f),
                    &dfc[t * f..(t + 1) * f],
                    &mut dln2[t * d..(t + 1) * d],
                    dw,
                    Some(db),
                );
            }
        }
        {
            let (dg, db) = split2(grad, b.ln2_g, d, b.ln2_b, d);
            for t in 0..t_len {
                let (mean, rstd) = c.ln2_stats[t];
                layernorm_row_backward(
                    &c.x_mid[t * d..(t + 1) * d],
                    mean,
                    rstd,
                    w(b.ln2_g, d),
                    &dln2[t * d..(t + 1) * d],
                    &mut dx[t * d..(t + 1) * d],
                    dg,
                    db,
                );
            }
        }
        // Attention branch: x_mid = x_in + proj(attn(qkv(ln1(x_in)))).
        let mut datty = vec![0.0; t_len * d];
        {
            let (dw, db) = split2(grad, b.proj_w, d * d, b.proj_b, d);
            for t in 0..t_len {
                linear_row_backward(
                    &c.atty[t * d..(t + 1) * d],
                    w(b.proj_w, d * d),
                    &dx[t * d..(t + 1) * d],
                    &mut datty[t * d..(t + 1) * d],
                    dw,
                    Some(db),
                );
            }
        }
        let mut dqkv = vec![0.0; t_len * 3 * d];
        let mut dp = vec![0.0; t_len];
        for h in 0..nh {
            for t in 0..t_len {
                let row = &c.att[(h * t_len + t) * t_len..(h * t_len + t) * t_len + t + 1];
                let dout = &datty[t * d + h * hs..t * d + (h + 1) * hs];
                let mut dot = 0.0;
                for (u, &p) in row.iter().enumerate() {
                    let vo = u * 3 * d + 2 * d + h * hs;
                    let vv = &c.qkv[vo..vo + hs];
                    dp[u] = dout.iter().zip(vv).map(|(a, b)| a * b).sum::<f64>();
                    dot += p * dp[u];
                    for i in 0..hs {
                        dqkv[vo + i] += p * dout[i];
                    }
                }
                let qo = t * 3 * d + h * hs;
                for (u, &p) in row.iter().enumerate() {
                    let ds = p * (dp[u] - dot) * att_scale;
                    let ko = u * 3 * d + d + h * hs;
                    for i in 0..hs {
                        dqkv[qo + i] += ds * c.qkv[ko + i];
                        dqkv[ko + i] += ds * c.qkv[qo + i];
                    }
                }
            }
        }
        let mut dln1 = vec![0.0; t_len * d];
        {
            let (dw, db) = split2(grad, b.qkv_w, d * 3 * d, b.qkv_b, 3 * d);
            for t in 0..t_len {
                linear_row_backward(
                    &c.ln1[t * d..(t + 1) * d],
                    w(b.qkv_w, d * 3 * d),
                    &dqkv[t * 3 * d..(t + 1) * 3 * d],
                    &mut dln1[t * d..(t + 1) * d],
                    dw,
                    Some(db),
                );
            }
        }
        {
            let (dg, db) = split2(grad, b.ln1_g, d, b.ln1_b, d);
            for t in 0..t_len {
                let (mean, rstd) = c.ln1_stats[t];
                layernorm_row_backward(
                    &c.x_in[t * d..(t + 1) * d],
                    mean,
                    rstd,
                    w(b.ln1_g, d),
                    &dln1[t * d..(t + 1) * d],
                    &mut dx[t * d..(t + 1) * d],
                    dg,
                    db,
                );
            }
        }
    }
    for (t, &tok) in inputs.iter().enumerate() {
        let e = lay.wte + tok as usize * d;
        let p = lay.wpe + t * d;
        for i in 0..d {
            grad[e + i] += dx[t * d + i];
            grad[p + i] += dx[t * d + i];
        }
    }
    loss
}

/// Mean next-token cross-entropy of `batch` and its gradient w.r.t. every parameter.
pub fn loss_and_grad(model: &Model, batch: &[(Vec<u16>, Vec<u16>)]) -> (f64, Vec<f64>) {
    let count: usize = batch.iter().map(|(i, _)| i.len()).sum();
    let scale = 1.0 / count as f64;
    let mut grad = vec![0.0; model.w.len()];
    let mut total = 0.0;
    for (inputs, targets) in batch {
        total += sequence_backprop(model, inputs, targets, scale, &mut grad);
    }
    (total * scale, grad)
}

/// Mean next-token cross-entropy without gradients (uses the inference path).
pub fn batch_loss(model: &Model, batch: &[(Vec<u16>, Vec<u16>)]) -> Result<f64, ToyLmError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (inputs, targets) in batch {
        let out = model.forward(inputs, &[])?;
        for (row, &tgt) in out.logits_f64.iter().zip(targets) {
            total -= log_softmax_at(row, tgt as usize);
        }
        count += inputs.len();
    }
    Ok(total / count as f64)
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Result of [`train`]: the new checkpoint and the loss at every step.
#[derive(Debug, Clone)]
pub struct Trained {
    pub checkpoint: ToyLmCheckpoint,
    pub losses: Vec<f64>,
}

/// Trains a copy of `ckpt`. Batches are drawn epoch by epoch from a seeded
/// shuffle; Adam state starts fresh.
pub fn train(ckpt: &ToyLmCheckpoint, spec: &TrainSpec) -> Result<Trained, ToyLmError> {
    spec.validate()?;
    let cfg = ckpt.config.clone();
    let examples: Vec<(Vec<u16>, Vec<u16>)> = spec
        .corpus
        .iter()
        .map(|e| make_example(e, cfg.max_context))
        .collect();
    let mut model = Model::new(ckpt);
    let n_params = model.w.len();
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut rng = SplitMix64::new(spec.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let total_steps = spec.total_steps();
    let mut losses = Vec::with_capacity(total_steps);
    for step in 1..=total_steps {
        let mut batch = Vec::with_capacity(spec.batch_size);
        while batch.len() < spec.batch_size {
            if cursor == order.len() {
                // New epoch. Under an epoch schedule a batch never spans two epochs.
                if !batch.is_empty() && matches!(spec.schedule, Schedule::Epochs(_)) {
                    break;
                }
                order = (0..examples.len()).collect();
                rng.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(examples[order[cursor]].clone());
            cursor += 1;
        }
        let (loss, grad) = loss_and_grad(&model, &batch);
        if !loss.is_finite() {
            return Err(ToyLmError::NonFiniteLoss { step, loss });
        }
        losses.push(loss);
        let bc1 = 1.0 - BETA1.powi(step as i32);
        let bc2 = 1.0 - BETA2.powi(step as i32);
        for i in 0..n_params {
            let g = grad[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            model.w[i] -= spec.lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    let params: Vec<f32> = model.w.iter().map(|&p| p as f32).collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(ToyLmError::NonFiniteLoss {
            step: total_steps,
            loss: f64::NAN,
        });
    }
    Ok(Trained {
        checkpoint: ToyLmCheckpoint {
            config: cfg,
            params,
            step: ckpt.step + total_steps as u64,
        },
        losses,
    })
}
