use super::Tensor;

/// Central-difference gradient of a scalar function.
///
/// Element `i` is `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h`. Kept independent of
/// the tape so it can serve as the oracle for reverse-mode results.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let base = x.data().to_vec();
    let mut grad = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        let plus = f(&Tensor::new(x.shape(), probe.clone()).expect("shape"));
        probe[i] = base[i] - h;
        let minus = f(&Tensor::new(x.shape(), probe.clone()).expect("shape"));
        probe[i] = base[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    Tensor::new(x.shape(), grad).expect("shape")
}

/// Central differences for piecewise-smooth functions (max-pool, ReLU-like
/// kinks).
///
/// Each element is estimated at `h` and `h/4`. On a smooth stretch the two
/// agree to `O(h²)`; if they differ by more than `1e-4` relative, a kink lies
/// inside the probe interval and the step shrinks by 10× (down to `1e-9`)
/// until the estimates agree.
pub fn finite_diff_grad_piecewise(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let base = x.data().to_vec();
    let mut probe = base.clone();
    let mut central = |i: usize, step: f64, probe: &mut Vec<f64>| {
        probe[i] = base[i] + step;
        let plus = f(&Tensor::new(x.shape(), probe.clone()).expect("shape"));
        probe[i] = base[i] - step;
        let minus = f(&Tensor::new(x.shape(), probe.clone()).expect("shape"));
        probe[i] = base[i];
        (plus - minus) / (2.0 * step)
    };
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut step = h;
        let estimate = loop {
            let coarse = central(i, step, &mut probe);
            let fine = central(i, step / 4.0, &mut probe);
            let scale = coarse.abs().max(fine.abs()).max(GRAD_FLOOR);
            if (coarse - fine).abs() <= 1e-4 * scale || step < 1e-9 {
                break coarse;
            }
            step /= 10.0;
        };
        grad.push(estimate);
    }
    Tensor::new(x.shape(), grad).expect("shape")
}

/// Entries smaller than this in both gradients are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Largest elementwise relative error between two gradients.
///
/// Relative error is `|a − n| / max(|a|, |n|)`. Where both entries are
/// below [`GRAD_FLOOR`] the plain absolute difference is used instead, so
/// near-zero gradients cannot dominate through cancellation noise.
pub fn max_rel_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| {
            let scale = a.abs().max(n.abs());
            if scale > GRAD_FLOOR {
                (a - n).abs() / scale
            } else {
                (a - n).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Outcome of comparing one gradient against its finite-difference oracle.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct GradCheck {
    pub name: String,
    pub seed: u64,
    pub elements: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_oracle_steps_off_a_kink() {
        // |x| just beside its kink: a 1e-5 probe straddles 0 and reads ~0.
        let x = Tensor::new(&[1], vec![2e-6]).unwrap();
        let f = |t: &Tensor| t.data()[0].abs();
        assert!(finite_diff_grad(f, &x, 1e-5).data()[0] < 0.5);
        assert!((finite_diff_grad_piecewise(f, &x, 1e-5).data()[0] - 1.0).abs() < 1e-9);
        let smooth = Tensor::new(&[2], vec![0.3, -1.2]).unwrap();
        let g = finite_diff_grad_piecewise(|t| t.data().iter().map(|v| v.sin()).sum(), &smooth, 1e-5);
        assert!((g.data()[0] - 0.3f64.cos()).abs() < 1e-9);
    }

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::from_fn(&[2, 3], |i| i as f64 * 0.7 - 1.0);
        let g = finite_diff_grad(|t| t.sum(), &x, 1e-5);
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::new(&[1], vec![3.0]).unwrap();
        let g = finite_diff_grad(|t| t.data()[0] * t.data()[0], &x, 1e-5);
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn tiny_entries_use_absolute_scale() {
        let a = Tensor::new(&[2], vec![1e-9, 1.0]).unwrap();
        let n = Tensor::new(&[2], vec![-1e-9, 1.0]).unwrap();
        assert!(max_rel_error(&a, &n) < 1e-8);
    }
}
