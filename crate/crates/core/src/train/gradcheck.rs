//! Finite-difference checks of every differentiable operation and of the
//! whole network, packaged for the CLI and the acceptance suite.

use crate::model::{forward, init_model, ModelConfig, ModelError, ModelParams};
use crate::ndcore::{finite_diff_grad, finite_diff_grad_piecewise, max_rel_error, GradCheck, Mode, Rng, RunningStats, Tape, Tensor, Var};
use crate::ssm::selective_scan_taped;

/// Tolerance on the maximum elementwise relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

/// Contracts the output with a fixed random tensor so every output element
/// carries a distinct weight, then compares input gradients with the oracle.
fn check_op(name: &str, seed: u64, inputs: Vec<Tensor>, build: &Build) -> Vec<GradCheck> {
    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = build(&mut tape, &vars);
        let mut rng = Rng::new(seed).derive(0x9e37);
        let weights = Tensor::from_fn(tape.shape(out), |_| rng.normal());
        let w = tape.constant(weights);
        let prod = tape.mul(out, w).expect("same shape");
        let root = tape.sum(prod);
        (tape, vars, root)
    };
    let (tape, vars, root) = eval(&inputs);
    let grads = tape.backward(root).expect("scalar root");
    inputs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let numeric = finite_diff_grad(
                |t| {
                    let mut xs = inputs.clone();
                    xs[i] = t.clone();
                    let (tp, _, r) = eval(&xs);
                    tp.value(r).data()[0]
                },
                x,
                STEP,
            );
            let analytic = grads.get_or_zeros(vars[i], x);
            GradCheck {
                name: format!("{name}[{i}]"),
                seed,
                elements: x.len(),
                max_rel_error: max_rel_error(&analytic, &numeric),
                tolerance: GRAD_TOLERANCE,
            }
        })
        .collect()
}

/// Gradient checks for every taped operation at one seed.
pub fn op_suite(seed: u64) -> Vec<GradCheck> {
    let mut rng = Rng::new(seed);
    let mut randn = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.normal());
    let positive = |t: Tensor| t.map(|v| 0.05 + v.abs());
    let mut out = Vec::new();
    let mut run = |name: &str, inputs: Vec<Tensor>, build: &Build| out.extend(check_op(name, seed, inputs, build));

    run("exp", vec![randn(&[3, 4])], &|t, v| t.exp(v[0]));
    run("softplus", vec![randn(&[3, 4])], &|t, v| t.softplus(v[0]));
    run("silu", vec![randn(&[3, 4])], &|t, v| t.silu(v[0]));
    run("sigmoid", vec![randn(&[3, 4])], &|t, v| t.sigmoid(v[0]));
    run("neg", vec![randn(&[5])], &|t, v| t.neg(v[0]));
    run("scale", vec![randn(&[5])], &|t, v| t.scale(v[0], -1.7));
    run("add", vec![randn(&[3, 4]), randn(&[3, 4])], &|t, v| t.add(v[0], v[1]).unwrap());
    run("sub", vec![randn(&[3, 4]), randn(&[3, 4])], &|t, v| t.sub(v[0], v[1]).unwrap());
    run("mul", vec![randn(&[3, 4]), randn(&[3, 4])], &|t, v| t.mul(v[0], v[1]).unwrap());
    run("mul_scalar", vec![randn(&[3, 4]), randn(&[1])], &|t, v| t.mul(v[0], v[1]).unwrap());
    run("add_row", vec![randn(&[3, 4]), randn(&[4])], &|t, v| t.add(v[0], v[1]).unwrap());
    run("mul_channel", vec![randn(&[2, 3, 5]), randn(&[3])], &|t, v| t.mul(v[0], v[1]).unwrap());
    run("matmul", vec![randn(&[3, 4]), randn(&[4, 2])], &|t, v| t.matmul(v[0], v[1]).unwrap());
    run("bmm", vec![randn(&[2, 3, 4]), randn(&[2, 4, 5])], &|t, v| t.bmm(v[0], v[1]).unwrap());
    run("reshape", vec![randn(&[2, 6])], &|t, v| t.reshape(v[0], &[3, 4]).unwrap());
    run("permute", vec![randn(&[2, 3, 4])], &|t, v| t.permute(v[0], &[2, 0, 1]).unwrap());
    run("narrow", vec![randn(&[2, 5, 3])], &|t, v| t.narrow(v[0], 1, 1, 3).unwrap());
    run("sum", vec![randn(&[2, 3])], &|t, v| t.sum(v[0]));
    run("mean_axis", vec![randn(&[2, 5, 3])], &|t, v| t.mean_axis(v[0], 1).unwrap());
    run(
        "conv1d",
        vec![randn(&[2, 3, 7]), randn(&[4, 3, 3]), randn(&[4])],
        &|t, v| t.conv1d(v[0], v[1], v[2], 1, 1).unwrap(),
    );
    run(
        "depthwise_conv1d",
        vec![randn(&[2, 3, 6]), randn(&[3, 4]), randn(&[3])],
        &|t, v| t.depthwise_conv1d(v[0], v[1], v[2], 3).unwrap(),
    );
    run("maxpool1d", vec![randn(&[2, 3, 8])], &|t, v| t.maxpool1d(v[0], 2).unwrap());
    let stats = RunningStats {
        mean: randn(&[3]),
        var: positive(randn(&[3])),
    };
    run(
        "batchnorm1d_train",
        vec![randn(&[2, 3, 5]), randn(&[3]), randn(&[3])],
        &|t, v| t.batchnorm1d(v[0], v[1], v[2], &RunningStats::new(3), Mode::Train).unwrap().0,
    );
    run(
        "batchnorm1d_eval",
        vec![randn(&[2, 3, 5]), randn(&[3]), randn(&[3])],
        &move |t, v| t.batchnorm1d(v[0], v[1], v[2], &stats, Mode::Eval).unwrap().0,
    );
    run("dropout", vec![randn(&[4, 6])], &move |t, v| {
        t.dropout(v[0], 0.5, Mode::Train, &mut Rng::new(seed)).unwrap()
    });
    run("softmax", vec![randn(&[3, 5])], &|t, v| t.softmax(v[0]).unwrap());
    run("softmax_cross_entropy", vec![randn(&[4, 3])], &|t, v| {
        t.softmax_cross_entropy(v[0], &[0, 2, 1, 2]).unwrap()
    });

    let (b, l, d, n) = (2, 6, 3, 2);
    let a = randn(&[d, n]).map(|v| -(0.2 + v.abs()));
    let delta = positive(randn(&[b, l, d]));
    run(
        "selective_scan",
        vec![randn(&[b, l, d]), delta, randn(&[b, l, n]), randn(&[b, l, n]), a, randn(&[d])],
        &|t, v| selective_scan_taped(t, v[0], v[1], v[2], v[3], v[4], v[5]).unwrap(),
    );
    out
}

fn model_loss(
    params: &ModelParams,
    running: &[RunningStats],
    config: &ModelConfig,
    x: &Tensor,
    labels: &[usize],
    seed: u64,
) -> Result<(Tape, ModelParams<Var>, Var), ModelError> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let pv = params.map(&mut |_, t| tape.param(t.clone()));
    // a fresh generator per evaluation keeps the dropout mask fixed
    let mut rng = Rng::new(seed).derive(0xd80);
    let out = forward(&mut tape, xv, &pv, running, config, Mode::Train, &mut rng)?;
    let loss = tape.softmax_cross_entropy(out.logits, labels)?;
    Ok((tape, pv, loss))
}

/// End-to-end check of the training loss gradient with respect to every
/// parameter tensor, in train mode (batch statistics, dropout active).
pub fn model_suite(config: &ModelConfig, seed: u64) -> Result<Vec<GradCheck>, ModelError> {
    let mut rng = Rng::new(seed);
    let (params, running) = init_model(config, &mut rng)?;
    let batch = 2;
    let x = Tensor::from_fn(&[batch, config.in_channels, config.window_len], |_| rng.normal());
    let labels: Vec<usize> = (0..batch).map(|i| i % config.n_classes).collect();

    let (tape, pv, root) = model_loss(&params, &running, config, &x, &labels, seed)?;
    let grads = tape.backward(root)?;
    let mut analytic = Vec::new();
    pv.visit(&mut |name, v| analytic.push((name, grads.get_or_zeros(*v, tape.value(*v)))));

    let mut current = Vec::new();
    params.visit(&mut |_, t| current.push(t.clone()));

    let mut out = Vec::new();
    for (index, ((name, analytic), value)) in analytic.into_iter().zip(current).enumerate() {
        // max-pool makes the loss piecewise smooth
        let numeric = finite_diff_grad_piecewise(
            |t| {
                let mut p = params.clone();
                let mut i = 0;
                p.visit_mut(&mut |_, slot| {
                    if i == index {
                        *slot = t.clone();
                    }
                    i += 1;
                });
                let (tp, _, r) = model_loss(&p, &running, config, &x, &labels, seed).expect("same config");
                tp.value(r).data()[0]
            },
            &value,
            STEP,
        );
        out.push(GradCheck {
            name: format!("model.{name}"),
            seed,
            elements: value.len(),
            max_rel_error: max_rel_error(&analytic, &numeric),
            tolerance: GRAD_TOLERANCE,
        });
    }
    Ok(out)
}
