use serde::{Deserialize, Serialize};

use super::{init_mamba, selective_scan_par, selective_scan_taped, MambaConfig, MambaParams, ScanInputs, SsmError};
use crate::ndcore::{Mode, NdError, Rng, Tape, Tensor, Var};

/// Which scan implementation evaluates the recurrence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanKind {
    #[default]
    Sequential,
    Parallel,
}

fn linear3(tape: &mut Tape, x: Var, w: Var) -> Result<Var, NdError> {
    let (b, l, din) = match *tape.shape(x) {
        [b, l, d] => (b, l, d),
        ref s => return Err(NdError::Dimension(format!("expected [B×L×d], got {s:?}"))),
    };
    let dout = tape.shape(w)[1];
    let flat = tape.reshape(x, &[b * l, din])?;
    let y = tape.matmul(flat, w)?;
    tape.reshape(y, &[b, l, dout])
}

/// One Mamba block on `x[B×L×d_model]`, returning the same shape.
///
/// in_proj → split (u, z) → causal depthwise conv (pad `d_conv − 1`) → SiLU
/// → x_proj → (Δ = softplus(dt_proj(·)), B, C) → selective scan → ⊙ SiLU(z)
/// → out_proj.
///
/// Train mode always uses the taped sequential scan. In eval mode `scan`
/// picks the implementation; the parallel scan is not differentiable and
/// its output enters the tape as a constant.
pub fn mamba_block_forward(
    tape: &mut Tape,
    x: Var,
    params: &MambaParams<Var>,
    config: &MambaConfig,
    mode: Mode,
    scan: ScanKind,
) -> Result<Var, SsmError> {
    let (b, l, dm) = match *tape.shape(x) {
        [b, l, d] => (b, l, d),
        ref s => return Err(NdError::Dimension(format!("mamba block expects [B×L×d_model], got {s:?}")).into()),
    };
    if dm != config.d_model {
        return Err(NdError::Dimension(format!(
            "mamba block expects feature dim {}, got {dm}",
            config.d_model
        ))
        .into());
    }
    let (di, n, r) = (config.d_inner(), config.d_state, config.dt_rank());

    let uz = linear3(tape, x, params.in_proj)?;
    let u = tape.narrow(uz, 2, 0, di)?;
    let z = tape.narrow(uz, 2, di, di)?;

    let u_cm = tape.permute(u, &[0, 2, 1])?;
    let u_conv = tape.depthwise_conv1d(u_cm, params.conv_w, params.conv_b, config.d_conv - 1)?;
    let u_conv = tape.permute(u_conv, &[0, 2, 1])?;
    let u_act = tape.silu(u_conv);

    let proj = linear3(tape, u_act, params.x_proj)?;
    let dt_pre = tape.narrow(proj, 2, 0, r)?;
    let b_t = tape.narrow(proj, 2, r, n)?;
    let c_t = tape.narrow(proj, 2, r + n, n)?;

    let dt = linear3(tape, dt_pre, params.dt_proj_w)?;
    let dt = tape.reshape(dt, &[b * l, di])?;
    let dt = tape.add(dt, params.dt_proj_b)?;
    let dt = tape.reshape(dt, &[b, l, di])?;
    let delta = tape.softplus(dt);

    let sp = tape.softplus(params.a_log);
    let a = tape.neg(sp);

    let y = match (mode, scan) {
        (Mode::Eval, ScanKind::Parallel) => {
            let inputs = ScanInputs {
                u: tape.value(u_act).clone(),
                delta: tape.value(delta).clone(),
                b: tape.value(b_t).clone(),
                c: tape.value(c_t).clone(),
                a: tape.value(a).clone(),
                d: tape.value(params.d).clone(),
            };
            let y = selective_scan_par(&inputs)?;
            tape.constant(y)
        }
        _ => selective_scan_taped(tape, u_act, delta, b_t, c_t, a, params.d)?,
    };

    let gate = tape.silu(z);
    let gated = tape.mul(y, gate)?;
    Ok(linear3(tape, gated, params.out_proj)?)
}

/// A standalone block holding its own parameters, for inference on plain
/// tensors.
#[derive(Clone, Debug)]
pub struct MambaBlock {
    pub config: MambaConfig,
    pub params: MambaParams,
}

impl MambaBlock {
    pub fn new(config: MambaConfig, rng: &mut Rng) -> Result<Self, SsmError> {
        let params = init_mamba(&config, rng)?;
        Ok(Self { config, params })
    }

    /// Eval-mode forward of `x[B×L×d_model]`.
    pub fn forward(&self, x: &Tensor, scan: ScanKind) -> Result<Tensor, SsmError> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let p = self.params.map("", &mut |_, t| tape.constant(t.clone()));
        let y = mamba_block_forward(&mut tape, xv, &p, &self.config, Mode::Eval, scan)?;
        Ok(tape.value(y).clone())
    }
}
