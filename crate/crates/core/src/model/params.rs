use super::{ModelConfig, ModelError, TemporalKind};
use crate::ndcore::{Rng, RunningStats, Tensor};
use crate::params::join;
use crate::ssm::{init_mamba, MambaParams};

param_struct! {
    /// Dense layer, weight stored `[in, out]`.
    pub struct Linear {
        weight => "weight",
        bias => "bias",
    }
}

param_struct! {
    pub struct ConvParams {
        /// `[out, in, kernel]`
        weight => "weight",
        bias => "bias",
        gamma => "bn.gamma",
        beta => "bn.beta",
    }
}

param_struct! {
    /// Query/key/value/output projections of multi-head self-attention.
    pub struct AttentionParams {
        wq => "q.weight",
        bq => "q.bias",
        wk => "k.weight",
        bk => "k.bias",
        wv => "v.weight",
        bv => "v.bias",
        wo => "o.weight",
        bo => "o.bias",
    }
}

param_struct! {
    /// Timing-baseline block: `d → 2·d_inner → d` per timestep.
    pub struct DenseParams {
        w1 => "fc1.weight",
        b1 => "fc1.bias",
        w2 => "fc2.weight",
        b2 => "fc2.bias",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TemporalParams<T = Tensor> {
    Mamba(MambaParams<T>),
    Dense(DenseParams<T>),
}

impl<T> TemporalParams<T> {
    fn prefix(&self, i: usize) -> String {
        match self {
            TemporalParams::Mamba(_) => format!("mamba.{i}"),
            TemporalParams::Dense(_) => format!("dense.{i}"),
        }
    }
}

/// Every trainable tensor of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub conv: Vec<ConvParams<T>>,
    pub temporal: Vec<TemporalParams<T>>,
    pub attention: Option<AttentionParams<T>>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&str, &T) -> U) -> ModelParams<U> {
        ModelParams {
            conv: self
                .conv
                .iter()
                .enumerate()
                .map(|(i, c)| c.map(&format!("conv.{i}"), f))
                .collect(),
            temporal: self
                .temporal
                .iter()
                .enumerate()
                .map(|(i, t)| match t {
                    TemporalParams::Mamba(p) => TemporalParams::Mamba(p.map(&t.prefix(i), f)),
                    TemporalParams::Dense(p) => TemporalParams::Dense(p.map(&t.prefix(i), f)),
                })
                .collect(),
            attention: self.attention.as_ref().map(|a| a.map("attention", f)),
            fc1: self.fc1.map("fc1", f),
            fc2: self.fc2.map("fc2", f),
        }
    }

    /// Visits `(name, tensor)` in a fixed order.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        for (i, c) in self.conv.iter().enumerate() {
            c.visit(&format!("conv.{i}"), f);
        }
        for (i, t) in self.temporal.iter().enumerate() {
            let prefix = t.prefix(i);
            match t {
                TemporalParams::Mamba(p) => p.visit(&prefix, f),
                TemporalParams::Dense(p) => p.visit(&prefix, f),
            }
        }
        if let Some(a) = &self.attention {
            a.visit("attention", f);
        }
        self.fc1.visit("fc1", f);
        self.fc2.visit("fc2", f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut T)) {
        for (i, c) in self.conv.iter_mut().enumerate() {
            c.visit_mut(&format!("conv.{i}"), f);
        }
        for (i, t) in self.temporal.iter_mut().enumerate() {
            let prefix = t.prefix(i);
            match t {
                TemporalParams::Mamba(p) => p.visit_mut(&prefix, f),
                TemporalParams::Dense(p) => p.visit_mut(&prefix, f),
            }
        }
        if let Some(a) = &mut self.attention {
            a.visit_mut("attention", f);
        }
        self.fc1.visit_mut("fc1", f);
        self.fc2.visit_mut("fc2", f);
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |n, _| out.push(n));
        out
    }
}

/// Total number of trainable scalars.
pub fn count_params(params: &ModelParams) -> usize {
    let mut total = 0;
    params.visit(&mut |_, t| total += t.len());
    total
}

pub(crate) fn he_normal(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| std * rng.normal())
}

/// Symmetric bound of Glorot-uniform initialisation.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn glorot_linear(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Linear {
    let limit = glorot_limit(fan_in, fan_out);
    Linear {
        weight: Tensor::from_fn(&[fan_in, fan_out], |_| rng.uniform_range(-limit, limit)),
        bias: Tensor::zeros(&[fan_out]),
    }
}

/// Layer-wise initialisation.
///
/// Convolutions are He/Kaiming normal with zero bias; batch norm starts at
/// `γ = 1, β = 0`; dense and attention projections are Glorot uniform with
/// zero bias; Mamba layers use [`init_mamba`].
pub fn init_model(config: &ModelConfig, rng: &mut Rng) -> Result<(ModelParams, Vec<RunningStats>), ModelError> {
    config.validate()?;
    let mut conv = Vec::with_capacity(config.conv_stack.len());
    let mut running = Vec::with_capacity(config.conv_stack.len());
    let mut cin = config.in_channels;
    for stage in &config.conv_stack {
        let cout = stage.out_channels;
        conv.push(ConvParams {
            weight: he_normal(&[cout, cin, stage.kernel], cin * stage.kernel, rng),
            bias: Tensor::zeros(&[cout]),
            gamma: Tensor::ones(&[cout]),
            beta: Tensor::zeros(&[cout]),
        });
        running.push(RunningStats::new(cout));
        cin = cout;
    }

    let d = config.d_model;
    let wide = 2 * config.mamba.d_inner();
    let temporal = (0..config.n_mamba_layers)
        .map(|_| -> Result<_, ModelError> {
            Ok(match config.temporal {
                TemporalKind::Mamba => TemporalParams::Mamba(init_mamba(&config.mamba, rng)?),
                TemporalKind::Dense => {
                    let l1 = glorot_linear(d, wide, rng);
                    let l2 = glorot_linear(wide, d, rng);
                    TemporalParams::Dense(DenseParams {
                        w1: l1.weight,
                        b1: l1.bias,
                        w2: l2.weight,
                        b2: l2.bias,
                    })
                }
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let attention = config.attention.enabled.then(|| {
        let [q, k, v, o] = [(); 4].map(|_| glorot_linear(d, d, rng));
        AttentionParams {
            wq: q.weight,
            bq: q.bias,
            wk: k.weight,
            bk: k.bias,
            wv: v.weight,
            bv: v.bias,
            wo: o.weight,
            bo: o.bias,
        }
    });

    let fc1 = glorot_linear(d, config.fc_hidden, rng);
    let fc2 = glorot_linear(config.fc_hidden, config.n_classes, rng);
    Ok((
        ModelParams {
            conv,
            temporal,
            attention,
            fc1,
            fc2,
        },
        running,
    ))
}

/// Names under which batch-norm running statistics are stored.
pub(crate) fn running_names(i: usize) -> (String, String) {
    (
        join(&format!("conv.{i}"), "bn.running_mean"),
        join(&format!("conv.{i}"), "bn.running_var"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentionConfig;

    #[test]
    fn init_audit() {
        let config = ModelConfig {
            attention: AttentionConfig { enabled: true, heads: 2 },
            ..ModelConfig::default()
        };
        let (p, running) = init_model(&config, &mut Rng::new(3)).unwrap();
        for c in &p.conv {
            assert!(c.bias.data().iter().all(|&v| v == 0.0));
            assert!(c.gamma.data().iter().all(|&v| v == 1.0));
            assert!(c.beta.data().iter().all(|&v| v == 0.0));
        }
        for r in &running {
            assert!(r.mean.data().iter().all(|&v| v == 0.0));
        }
        for l in [&p.fc1, &p.fc2] {
            let (fi, fo) = (l.weight.shape()[0], l.weight.shape()[1]);
            assert!(l.weight.max_abs() <= glorot_limit(fi, fo));
            assert!(l.bias.data().iter().all(|&v| v == 0.0));
        }
        let a = p.attention.as_ref().unwrap();
        assert!(a.wq.max_abs() <= glorot_limit(16, 16));
    }

    #[test]
    fn conv_weights_follow_he_scale() {
        let config = ModelConfig::default();
        let (p, _) = init_model(&config, &mut Rng::new(9)).unwrap();
        let w = &p.conv[0].weight;
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let target = 2.0 / (18.0 * 7.0);
        assert!((var - target).abs() / target < 0.1, "{var} vs {target}");
    }

    #[test]
    fn param_counts() {
        let mut config = ModelConfig::default();
        let (p, _) = init_model(&config, &mut Rng::new(0)).unwrap();
        assert_eq!(p.fc2.weight.len() + p.fc2.bias.len(), 32 * 2 + 2);
        let fc1_w = p.fc1.weight.len();

        config.fc_hidden = 64;
        let (p2, _) = init_model(&config, &mut Rng::new(0)).unwrap();
        assert_eq!(p2.fc1.weight.len(), 2 * fc1_w);

        // conv 32·18·7+32+64 = 4128, conv 16·32·5+16+32 = 2608,
        // mamba 16·64 + 32·4+32 + 32·33 + 32+32 + 32·16 + 32 + 32·16 = 3360,
        // fc1 16·32+32 = 544, fc2 66
        assert_eq!(count_params(&p), 4128 + 2608 + 3360 + 544 + 66);
        assert_eq!(count_params(&p), 10706);
    }

    #[test]
    fn names_are_unique_and_ordered() {
        let mut config = ModelConfig::reduced();
        config.n_mamba_layers = 2;
        config.attention.enabled = true;
        let (p, _) = init_model(&config, &mut Rng::new(0)).unwrap();
        let names = p.names();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(names[0], "conv.0.weight");
        assert!(names.contains(&"mamba.1.A_log".to_string()));
        assert_eq!(names.last().unwrap(), "fc2.bias");
    }
}
