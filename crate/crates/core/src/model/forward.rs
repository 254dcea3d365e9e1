use super::{init_model, AttentionParams, ModelConfig, ModelError, ModelParams, TemporalParams};
use crate::ndcore::{Mode, NdError, Rng, RunningStats, Tape, Tensor, Var};
use crate::ssm::{mamba_block_forward, ScanKind};

/// Result of one taped forward pass.
pub struct Forward {
    /// `[B × n_classes]`
    pub logits: Var,
    /// Updated batch-norm statistics; `Some` only in train mode.
    pub running: Option<Vec<RunningStats>>,
}

fn dims3(tape: &Tape, x: Var) -> Result<(usize, usize, usize), NdError> {
    match *tape.shape(x) {
        [b, l, d] => Ok((b, l, d)),
        ref s => Err(NdError::Dimension(format!("expected a rank-3 tensor, got {s:?}"))),
    }
}

/// `x[B×L×din] · w[din×dout] + bias[dout]`.
fn affine3(tape: &mut Tape, x: Var, w: Var, bias: Var) -> Result<Var, NdError> {
    let (b, l, din) = dims3(tape, x)?;
    let dout = tape.shape(w)[1];
    let flat = tape.reshape(x, &[b * l, din])?;
    let y = tape.matmul(flat, w)?;
    let y = tape.add(y, bias)?;
    tape.reshape(y, &[b, l, dout])
}

/// Splits `[B×L×H·dh]` into `[B·H × L × dh]`.
fn split_heads(tape: &mut Tape, x: Var, heads: usize) -> Result<Var, NdError> {
    let (b, l, d) = dims3(tape, x)?;
    let x = tape.reshape(x, &[b, l, heads, d / heads])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[b * heads, l, d / heads])
}

/// Multi-head scaled dot-product self-attention with a residual connection.
///
/// Returns the output `[B×L×d]` and the attention weights `[B·heads×L×L]`.
pub fn attention_layer(
    tape: &mut Tape,
    h: Var,
    params: &AttentionParams<Var>,
    heads: usize,
) -> Result<(Var, Var), ModelError> {
    let (b, l, d) = dims3(tape, h)?;
    if heads == 0 || d % heads != 0 {
        return Err(ModelError::Config(format!("{heads} attention heads do not divide width {d}")));
    }
    let dh = d / heads;
    let q = affine3(tape, h, params.wq, params.bq)?;
    let k = affine3(tape, h, params.wk, params.bk)?;
    let v = affine3(tape, h, params.wv, params.bv)?;
    let q = split_heads(tape, q, heads)?;
    let k = split_heads(tape, k, heads)?;
    let v = split_heads(tape, v, heads)?;

    let kt = tape.permute(k, &[0, 2, 1])?;
    let scores = tape.bmm(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let weights = tape.softmax(scores)?;
    let ctx = tape.bmm(weights, v)?;

    let ctx = tape.reshape(ctx, &[b, heads, l, dh])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[b, l, d])?;
    let out = affine3(tape, ctx, params.wo, params.bo)?;
    Ok((tape.add(h, out)?, weights))
}

/// Taped forward of `x[B × in_channels × window_len]`.
///
/// Each conv stage is conv (same padding) → batch norm → SiLU → max-pool;
/// temporal blocks are residual; attention, when enabled, follows the last
/// temporal block. The sequence is mean-pooled before fc1 → SiLU → dropout
/// → fc2. `rng` drives dropout and is untouched in eval mode.
pub fn forward(
    tape: &mut Tape,
    x: Var,
    params: &ModelParams<Var>,
    running: &[RunningStats],
    config: &ModelConfig,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Forward, ModelError> {
    let (_, c, l) = dims3(tape, x)?;
    if c != config.in_channels || l != config.window_len {
        return Err(NdError::Dimension(format!(
            "model expects [B×{}×{}], got {:?}",
            config.in_channels,
            config.window_len,
            tape.shape(x)
        ))
        .into());
    }
    if params.conv.len() != config.conv_stack.len() || running.len() != config.conv_stack.len() {
        return Err(ModelError::Config(format!(
            "{} conv stages configured, parameters have {} and statistics {}",
            config.conv_stack.len(),
            params.conv.len(),
            running.len()
        )));
    }

    let mut h = x;
    let mut updated = Vec::new();
    for ((stage, p), stats) in config.conv_stack.iter().zip(&params.conv).zip(running) {
        let left = (stage.kernel - 1) / 2;
        h = tape.conv1d(h, p.weight, p.bias, left, stage.kernel - 1 - left)?;
        let (normed, new_stats) = tape.batchnorm1d(h, p.gamma, p.beta, stats, mode)?;
        updated.extend(new_stats);
        h = tape.silu(normed);
        h = tape.maxpool1d(h, stage.pool)?;
    }

    let mut h = tape.permute(h, &[0, 2, 1])?;
    let scan = match mode {
        Mode::Train => ScanKind::Sequential,
        Mode::Eval => config.eval_scan,
    };
    for block in &params.temporal {
        let delta = match block {
            TemporalParams::Mamba(p) => mamba_block_forward(tape, h, p, &config.mamba, mode, scan)?,
            TemporalParams::Dense(p) => {
                let hidden = affine3(tape, h, p.w1, p.b1)?;
                let hidden = tape.silu(hidden);
                affine3(tape, hidden, p.w2, p.b2)?
            }
        };
        h = tape.add(h, delta)?;
    }

    if config.attention.enabled {
        let p = params
            .attention
            .as_ref()
            .ok_or_else(|| ModelError::Config("attention enabled but no attention parameters".into()))?;
        h = attention_layer(tape, h, p, config.attention.heads)?.0;
    }

    let pooled = tape.mean_axis(h, 1)?;
    let hidden = tape.matmul(pooled, params.fc1.weight)?;
    let hidden = tape.add(hidden, params.fc1.bias)?;
    let hidden = tape.silu(hidden);
    let hidden = tape.dropout(hidden, config.dropout_p, mode, rng)?;
    let logits = tape.matmul(hidden, params.fc2.weight)?;
    let logits = tape.add(logits, params.fc2.bias)?;
    Ok(Forward {
        logits,
        running: (mode == Mode::Train).then_some(updated),
    })
}

/// Configuration, trainable parameters and batch-norm statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub running: Vec<RunningStats>,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self, ModelError> {
        let (params, running) = init_model(&config, rng)?;
        Ok(Self {
            config,
            params,
            running,
        })
    }

    /// Eval-mode logits `[B × n_classes]`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let p = self.params.map(&mut |_, t| tape.constant(t.clone()));
        let out = forward(
            &mut tape,
            xv,
            &p,
            &self.running,
            &self.config,
            Mode::Eval,
            &mut Rng::new(0),
        )?;
        Ok(tape.value(out.logits).clone())
    }

    /// Eval-mode softmax probability of class 1 per sample.
    pub fn positive_scores(&self, x: &Tensor) -> Result<Vec<f64>, ModelError> {
        let logits = self.logits(x)?;
        let k = self.config.n_classes;
        Ok(logits
            .data()
            .chunks(k)
            .map(|row| {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                (row[1] - m).exp() / z
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, AttentionConfig};
    use crate::ndcore::{finite_diff_grad, max_rel_error};

    fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.normal())
    }

    #[test]
    fn default_config_gives_finite_logits() {
        let mut rng = Rng::new(0);
        let model = Model::new(ModelConfig::default(), &mut rng).unwrap();
        let x = randn(&[4, 18, 2048], &mut rng);
        let y = model.logits(&x).unwrap();
        assert_eq!(y.shape(), &[4, 2]);
        assert!(y.all_finite());
    }

    #[test]
    fn eval_is_bitwise_deterministic() {
        let model = Model::new(ModelConfig::default(), &mut Rng::new(1)).unwrap();
        let x = Tensor::zeros(&[1, 18, 2048]);
        let a = model.logits(&x).unwrap();
        let b = model.logits(&x).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let model = Model::new(ModelConfig::reduced(), &mut Rng::new(1)).unwrap();
        let err = model.logits(&Tensor::zeros(&[1, 17, 64])).unwrap_err();
        assert!(matches!(err, ModelError::Nd(NdError::Dimension(_))), "{err}");
    }

    #[test]
    fn batch_permutation_permutes_logits() {
        let mut rng = Rng::new(2);
        let mut config = ModelConfig::reduced();
        config.attention.enabled = true;
        let model = Model::new(config, &mut rng).unwrap();
        let x = randn(&[3, 18, 64], &mut rng);
        let y = model.logits(&x).unwrap();
        let sample = 18 * 64;
        let order = [2, 0, 1];
        let xp: Vec<f64> = order.iter().flat_map(|&i| x.data()[i * sample..(i + 1) * sample].to_vec()).collect();
        let yp = model.logits(&Tensor::new(x.shape(), xp).unwrap()).unwrap();
        for (row, &i) in order.iter().enumerate() {
            for k in 0..2 {
                assert!((yp.data()[row * 2 + k] - y.data()[i * 2 + k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn disabled_attention_ignores_its_parameters() {
        let mut rng = Rng::new(3);
        let config = ModelConfig::reduced();
        let model = Model::new(config.clone(), &mut rng).unwrap();
        let mut with_attn = config.clone();
        with_attn.attention.enabled = true;
        let (extra, _) = init_model(&with_attn, &mut rng).unwrap();
        let mut other = model.clone();
        other.params.attention = extra.attention;
        let x = randn(&[2, 18, 64], &mut rng);
        assert_eq!(model.logits(&x).unwrap(), other.logits(&x).unwrap());
    }

    /// Width-4, two-head attention parameters.
    fn attention_params(rng: &mut Rng) -> AttentionParams {
        let config = ModelConfig {
            attention: AttentionConfig { enabled: true, heads: 2 },
            ..ModelConfig::reduced()
        };
        init_model(&config, rng).unwrap().0.attention.unwrap()
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let mut rng = Rng::new(4);
        let p = attention_params(&mut rng);
        let mut tape = Tape::new();
        let h = tape.constant(randn(&[2, 9, 4], &mut rng));
        let pv = p.map("", &mut |_, t| tape.constant(t.clone()));
        let (_, w) = attention_layer(&mut tape, h, &pv, 2).unwrap();
        assert_eq!(tape.shape(w), &[4, 9, 9]);
        for row in tape.value(w).data().chunks(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_token_attention_is_value_path() {
        let mut rng = Rng::new(5);
        let p = attention_params(&mut rng);
        let hv = randn(&[1, 1, 4], &mut rng);
        let mut tape = Tape::new();
        let h = tape.constant(hv.clone());
        let pv = p.map("", &mut |_, t| tape.constant(t.clone()));
        let (out, w) = attention_layer(&mut tape, h, &pv, 2).unwrap();
        assert!(tape.value(w).data().iter().all(|&v| v == 1.0));
        let flat = hv.reshape(&[1, 4]).unwrap();
        let add = |a: &Tensor, b: &Tensor| a.zip_map(&b.reshape(a.shape()).unwrap(), |x, y| x + y).unwrap();
        let v = add(&flat.matmul(&p.wv).unwrap(), &p.bv);
        let o = add(&v.matmul(&p.wo).unwrap(), &p.bo);
        let expected = add(&flat, &o);
        for (a, b) in tape.value(out).data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn indivisible_heads_are_a_config_error() {
        let mut rng = Rng::new(6);
        let p = attention_params(&mut rng);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::zeros(&[1, 2, 4]));
        let pv = p.map("", &mut |_, t| tape.constant(t.clone()));
        assert!(matches!(attention_layer(&mut tape, h, &pv, 3), Err(ModelError::Config(_))));
    }

    #[test]
    fn attention_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = Rng::new(seed);
            let p = attention_params(&mut rng);
            let hv = randn(&[1, 4, 4], &mut rng);
            let proj = randn(&[1, 4, 4], &mut rng);
            let loss = |h: &Tensor, p: &AttentionParams| {
                let mut tape = Tape::new();
                let hvar = tape.param(h.clone());
                let pv = p.map("", &mut |_, t| tape.param(t.clone()));
                let (out, _) = attention_layer(&mut tape, hvar, &pv, 2).unwrap();
                let c = tape.constant(proj.clone());
                let weighted = tape.mul(out, c).unwrap();
                let root = tape.sum(weighted);
                (tape, hvar, pv, root)
            };
            let (tape, hvar, pv, root) = loss(&hv, &p);
            let grads = tape.backward(root).unwrap();
            let numeric = finite_diff_grad(
                |t| {
                    let (tp, _, _, r) = loss(t, &p);
                    tp.value(r).item().unwrap()
                },
                &hv,
                1e-5,
            );
            assert!(max_rel_error(grads.get(hvar).unwrap(), &numeric) < 1e-4);
            let numeric = finite_diff_grad(
                |t| {
                    let mut q = p.clone();
                    q.wq = t.clone();
                    let (tp, _, _, r) = loss(&hv, &q);
                    tp.value(r).item().unwrap()
                },
                &p.wq,
                1e-5,
            );
            assert!(max_rel_error(grads.get(pv.wq).unwrap(), &numeric) < 1e-4);
        }
    }
}
