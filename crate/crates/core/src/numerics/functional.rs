//! Pure forward primitives on plain slices. The tape in `graph` reuses these
//! for its forward values, so the two paths can never drift apart.

use super::Scalar;
use crate::error::{Error, Result};

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn check_finite<T: Scalar>(xs: &[T], what: &str) -> Result<()> {
    if let Some(i) = xs.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "{what}: non-finite input at index {i}"
        )));
    }
    Ok(())
}

/// Softmax of one vector, shifted by its maximum.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    check_finite(logits, "softmax")?;
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Row-wise softmax over a row-major `rows x cols` matrix.
pub fn softmax_rows<T: Scalar>(logits: &[T], cols: usize) -> Result<Vec<T>> {
    if cols == 0 || logits.len() % cols != 0 {
        return Err(Error::shape(format!(
            "softmax_rows: {} values do not fold into rows of {cols}",
            logits.len()
        )));
    }
    check_finite(logits, "softmax")?;
    let mut out = logits.to_vec();
    for row in out.chunks_mut(cols) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Log-softmax of one vector.
pub fn log_softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    check_finite(logits, "log_softmax")?;
    let lse = log_sum_exp(logits);
    Ok(logits.iter().map(|&v| v - lse).collect())
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `gain * (x - mean) / sqrt(var + eps) + bias` over the whole slice, with the
/// biased (population) variance.
pub fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], eps: T) -> Result<Vec<T>> {
    if gain.len() != x.len() || bias.len() != x.len() {
        return Err(Error::shape(format!(
            "layer_norm: x has {} values, gain {}, bias {}",
            x.len(),
            gain.len(),
            bias.len()
        )));
    }
    if !(eps > T::zero()) {
        return Err(Error::Numeric("layer_norm: epsilon must be positive".into()));
    }
    check_finite(x, "layer_norm")?;
    let mut out = vec![T::zero(); x.len()];
    layer_norm_row(x, gain, bias, eps, &mut out);
    Ok(out)
}

/// Writes the normalized row into `out` and returns `1/sqrt(var + eps)`.
pub(crate) fn layer_norm_row<T: Scalar>(x: &[T], gain: &[T], bias: &[T], eps: T, out: &mut [T]) -> T {
    let n = T::of(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let rstd = T::one() / (var + eps).sqrt();
    for i in 0..x.len() {
        out[i] = gain[i] * (x[i] - mean) * rstd + bias[i];
    }
    rstd
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu<T: Scalar>(x: T) -> T {
    let v = x.as_f64();
    T::of(0.5 * v * (1.0 + libm::erf(v * INV_SQRT_2)))
}

/// d/dx of [`gelu`]: `Phi(x) + x * phi(x)`.
pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let v = x.as_f64();
    let cdf = 0.5 * (1.0 + libm::erf(v * INV_SQRT_2));
    let pdf = INV_SQRT_2PI * (-0.5 * v * v).exp();
    T::of(cdf + v * pdf)
}

/// Mean negative log-likelihood over the positions whose target is `Some`.
///
/// `logits` is `positions x classes`, row-major.
pub fn cross_entropy<T: Scalar>(logits: &[T], classes: usize, targets: &[Option<usize>]) -> Result<T> {
    if classes == 0 || logits.len() != targets.len() * classes {
        return Err(Error::shape(format!(
            "cross_entropy: {} logits for {} positions of {classes} classes",
            logits.len(),
            targets.len()
        )));
    }
    check_finite(logits, "cross_entropy")?;
    let mut total = T::zero();
    let mut count = 0usize;
    for (row, target) in logits.chunks(classes).zip(targets) {
        let Some(t) = *target else { continue };
        if t >= classes {
            return Err(Error::Index(format!(
                "cross_entropy: target {t} outside [0, {classes})"
            )));
        }
        total += log_sum_exp(row) - row[t];
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok(total / T::of(count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0f64, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);

        let p = softmax(&[0.0f64, 3f64.ln()]).unwrap();
        assert!(close(p[0], 0.25, 1e-12) && close(p[1], 0.75, 1e-12));

        let p = softmax(&[1000.0f32, 1000.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(matches!(softmax(&[0.0f64, f64::NAN]), Err(Error::Numeric(_))));
    }

    #[test]
    fn layer_norm_examples() {
        let y = layer_norm(&[1.0f64, 3.0], &[1.0, 1.0], &[0.0, 0.0], 1e-12).unwrap();
        assert!(close(y[0], -1.0, 1e-9) && close(y[1], 1.0, 1e-9));

        let y = layer_norm(&[4.0f64, -2.5], &[0.0, 0.0], &[7.0, 7.0], 1e-5).unwrap();
        assert_eq!(y, vec![7.0, 7.0]);

        assert!(matches!(
            layer_norm(&[1.0f64, 2.0], &[1.0], &[0.0, 0.0], 1e-5),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn layer_norm_matches_two_pass_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let gain: Vec<f64> = (0..8).map(|_| rng.random_range(0.5..1.5)).collect();
        let bias: Vec<f64> = (0..8).map(|_| rng.random_range(-0.5..0.5)).collect();
        let eps = 1e-5;

        // two-pass oracle
        let mean = x.iter().sum::<f64>() / 8.0;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        let expect: Vec<f64> = (0..8)
            .map(|i| gain[i] * (x[i] - mean) / (var + eps).sqrt() + bias[i])
            .collect();

        let got = layer_norm(&x, &gain, &bias, eps).unwrap();
        for (g, e) in got.iter().zip(&expect) {
            assert!(close(*g, *e, 1e-6));
        }
    }

    /// erf by its Maclaurin series, summed until terms vanish. Independent
    /// of libm.
    fn erf_series(x: f64) -> f64 {
        let mut sum = 0.0;
        let mut term = x;
        let mut n = 0u32;
        while term.abs() > 1e-18 || n < 5 {
            sum += term / (2 * n + 1) as f64;
            n += 1;
            term *= -x * x / n as f64;
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!(close(gelu(10.0f64), 10.0, 1e-6));
        let oracle = 0.5 * (1.0 + erf_series(1.0 / 2f64.sqrt()));
        assert!(close(gelu(1.0f64), oracle, 1e-14));
        // 1 * Phi(1) to 15 digits
        assert!(close(gelu(1.0f64), 0.841_344_746_068_542_9, 1e-14));
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!(close(gelu_grad(x), fd, 1e-8), "x={x}");
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let v = 7;
        let logits = vec![0.0f64; v];
        let l = cross_entropy(&logits, v, &[Some(3)]).unwrap();
        assert!(close(l, (v as f64).ln(), 1e-12));

        let mut logits = vec![0.0f64; 4];
        logits[2] = 1e4;
        assert!(cross_entropy(&logits, 4, &[Some(2)]).unwrap() < 1e-3);

        let logits = vec![0.3f64, -1.2, 2.0, 0.1, 0.5, -0.4];
        let both = cross_entropy(&logits, 3, &[Some(1), None]).unwrap();
        let single = cross_entropy(&logits[..3], 3, &[Some(1)]).unwrap();
        assert_eq!(both, single);
    }

    #[test]
    fn cross_entropy_errors() {
        assert!(matches!(
            cross_entropy(&[0.0f64; 4], 2, &[None, None]),
            Err(Error::EmptyLoss)
        ));
        assert!(matches!(
            cross_entropy(&[0.0f64; 2], 2, &[Some(2)]),
            Err(Error::Index(_))
        ));
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(
            cols in 1usize..12,
            values in prop::collection::vec(-80.0f32..80.0, 1..96),
        ) {
            let rows = values.len() / cols;
            prop_assume!(rows > 0);
            let data = &values[..rows * cols];
            let p = softmax_rows(data, cols).unwrap();
            for row in p.chunks(cols) {
                let s: f64 = row.iter().map(|v| *v as f64).sum();
                prop_assert!((s - 1.0).abs() <= 1e-6);
                prop_assert!(row.iter().all(|v| *v >= 0.0));
            }
        }

        #[test]
        fn forward_primitives_are_pure(values in prop::collection::vec(-10.0f64..10.0, 2..16)) {
            let n = values.len();
            let ones = vec![1.0; n];
            let zeros = vec![0.0; n];
            prop_assert_eq!(softmax(&values).unwrap(), softmax(&values).unwrap());
            prop_assert_eq!(
                layer_norm(&values, &ones, &zeros, 1e-5).unwrap(),
                layer_norm(&values, &ones, &zeros, 1e-5).unwrap()
            );
        }
    }
}
