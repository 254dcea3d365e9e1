use super::{MambaConfig, SsmError};
use crate::ndcore::{softplus_inv, Rng, Tensor};

param_struct! {
    /// Learnable tensors of one Mamba block. Projection weights are stored
    /// `[in, out]` so a row batch multiplies on the left.
    pub struct MambaParams {
        /// `[d_model, 2·d_inner]`, producing the scan input `u` and gate `z`
        in_proj => "in_proj.weight",
        /// `[d_inner, d_conv]` depthwise kernels
        conv_w => "conv.weight",
        conv_b => "conv.bias",
        /// `[d_inner, dt_rank + 2·d_state]` producing Δ-precursor, B, C
        x_proj => "x_proj.weight",
        /// `[dt_rank, d_inner]`
        dt_proj_w => "dt_proj.weight",
        dt_proj_b => "dt_proj.bias",
        /// `[d_inner, d_state]`, with `A = −softplus(A_log)`
        a_log => "A_log",
        /// `[d_inner]` skip coefficients
        d => "D",
        /// `[d_inner, d_model]`
        out_proj => "out_proj.weight",
    }
}

/// Step size the Δ projection produces at initialisation: the bias is
/// `softplus⁻¹(DT_BIAS_TARGET)`, a small negative number.
pub const DT_BIAS_TARGET: f64 = 0.001;
/// Scale of the Δ projection weights.
pub const DT_WEIGHT_SCALE: f64 = 0.01;

fn normal(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| std * rng.normal())
}

/// Draws a fresh parameter set.
///
/// - `A_log[d,n] = ln(n+1)`, so `A[d,n] = −ln(n+2) < 0`.
/// - B and C columns of `x_proj` are zero-mean normal with variance
///   `1/√d_state`; the Δ-precursor columns are He-normal.
/// - Δ projection: weights `N(0,1)·0.01`, bias `softplus⁻¹(0.001)`.
/// - depthwise kernels He-normal (fan-in `d_conv`), biases zero.
/// - in/out projections He-normal, `D = 1`.
pub fn init_mamba(config: &MambaConfig, rng: &mut Rng) -> Result<MambaParams, SsmError> {
    config.validate()?;
    let (dm, di, n, k, r) = (
        config.d_model,
        config.d_inner(),
        config.d_state,
        config.d_conv,
        config.dt_rank(),
    );

    let in_proj = normal(&[dm, 2 * di], (2.0 / dm as f64).sqrt(), rng);
    let conv_w = normal(&[di, k], (2.0 / k as f64).sqrt(), rng);
    let conv_b = Tensor::zeros(&[di]);

    let dt_std = (2.0 / di as f64).sqrt();
    let bc_std = (n as f64).powf(-0.25);
    let cols = r + 2 * n;
    let mut x_proj = Vec::with_capacity(di * cols);
    for _ in 0..di {
        for col in 0..cols {
            let std = if col < r { dt_std } else { bc_std };
            x_proj.push(std * rng.normal());
        }
    }
    let x_proj = Tensor::new(&[di, cols], x_proj)?;

    let dt_proj_w = normal(&[r, di], DT_WEIGHT_SCALE, rng);
    let dt_proj_b = Tensor::full(&[di], softplus_inv(DT_BIAS_TARGET));
    let a_log = Tensor::from_fn(&[di, n], |i| ((i % n) as f64 + 1.0).ln());
    let d = Tensor::ones(&[di]);
    let out_proj = normal(&[di, dm], (2.0 / di as f64).sqrt(), rng);

    Ok(MambaParams {
        in_proj,
        conv_w,
        conv_b,
        x_proj,
        dt_proj_w,
        dt_proj_b,
        a_log,
        d,
        out_proj,
    })
}

impl MambaParams {
    /// Continuous-time state matrix `A = −softplus(A_log)`.
    pub fn a(&self) -> Tensor {
        self.a_log.map(|v| -crate::ndcore::softplus(v))
    }
}
