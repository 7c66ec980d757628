//! Scalar and vector primitives for layer-local contrastive training.
//!
//! Everything here is a pure function. The batched gradient routine is the
//! only place the chain rule is spelled out; it stops at a single dense layer
//! and never propagates into the layer's inputs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Norms below this are treated as a dead output with neutral goodness.
pub const NORM_EPS: f64 = 1e-12;

const GELU_COEF: f64 = 0.044715;
// sqrt(2 / pi)
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Multiplier on `g_pos - g_neg` inside the softplus layer loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LossScale(f64);

impl LossScale {
    pub fn new(theta: f64) -> Result<Self> {
        if theta.is_finite() && theta > 0.0 {
            Ok(Self(theta))
        } else {
            Err(Error::invalid(format!(
                "loss scale must be positive and finite, got {theta}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for LossScale {
    fn default() -> Self {
        Self(1.0)
    }
}

impl TryFrom<f64> for LossScale {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LossScale> for f64 {
    fn from(s: LossScale) -> f64 {
        s.0
    }
}

/// `exp` by Cody-Waite reduction and a degree-12 Taylor polynomial.
///
/// Within 5e-16 relative of `f64::exp` on [-708, 709]; arguments outside are
/// clamped, so results saturate instead of overflowing. Unlike the libm call it
/// inlines, which lets the element-wise GELU loops vectorize.
#[inline(always)]
fn exp_poly(x: f64) -> f64 {
    const SHIFTER: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let x = x.max(-708.0).min(709.0);
    let shifted = x * std::f64::consts::LOG2_E + SHIFTER;
    let k = shifted - SHIFTER;
    let r = x - k * LN2_HI - k * LN2_LO;
    let mut p = 1.0 / 479_001_600.0;
    for c in [
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    // The low bits of `shifted` hold k; move them into the exponent field.
    p * f64::from_bits(shifted.to_bits().wrapping_add(1023) << 52)
}

// tanh through a single exp; saturates cleanly to +-1.
#[inline(always)]
fn fast_tanh(u: f64) -> f64 {
    1.0 - 2.0 / (exp_poly(2.0 * u) + 1.0)
}

/// GELU, tanh approximation.
#[inline(always)]
pub fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    0.5 * x * (1.0 + fast_tanh(u))
}

#[inline]
pub fn gelu_derivative(x: f64) -> f64 {
    gelu_and_derivative(x).1
}

/// GELU and its derivative from a single `tanh` evaluation.
#[inline(always)]
pub(crate) fn gelu_and_derivative(x: f64) -> (f64, f64) {
    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    let t = fast_tanh(u);
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * x * x);
    (
        0.5 * x * (1.0 + t),
        0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du,
    )
}

#[inline(always)]
fn gelu_pass(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = gelu(*v));
}

#[inline(always)]
fn gelu_derivative_pass(values: &mut [f64], deriv: &mut [f64]) {
    for (v, d) in values.iter_mut().zip(deriv.iter_mut()) {
        let (a, da) = gelu_and_derivative(*v);
        *v = a;
        *d = da;
    }
}

// Same arithmetic compiled for wider vector units; no fused multiply-adds are
// introduced, so every path returns identical bits.
#[cfg(target_arch = "x86_64")]
mod wide {
    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn gelu_pass_avx512(values: &mut [f64]) {
        super::gelu_pass(values)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn gelu_pass_avx2(values: &mut [f64]) {
        super::gelu_pass(values)
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn gelu_derivative_pass_avx512(values: &mut [f64], deriv: &mut [f64]) {
        super::gelu_derivative_pass(values, deriv)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn gelu_derivative_pass_avx2(values: &mut [f64], deriv: &mut [f64]) {
        super::gelu_derivative_pass(values, deriv)
    }
}

/// Applies GELU to every element in place.
pub fn gelu_in_place(values: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { wide::gelu_pass_avx512(values) };
        }
        if is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            return unsafe { wide::gelu_pass_avx2(values) };
        }
    }
    gelu_pass(values)
}

/// Applies GELU in place and writes the derivative at the original values to `deriv`.
pub fn gelu_with_derivative_in_place(values: &mut [f64], deriv: &mut [f64]) {
    assert_eq!(
        values.len(),
        deriv.len(),
        "gelu_with_derivative_in_place length"
    );
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { wide::gelu_derivative_pass_avx512(values, deriv) };
        }
        if is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            return unsafe { wide::gelu_derivative_pass_avx2(values, deriv) };
        }
    }
    gelu_derivative_pass(values, deriv)
}

/// Cosine of the angle between `a` and `b`; 0 when either norm is below [`NORM_EPS`].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim("cosine_similarity", a.len(), b.len())?;
    Ok(cosine_unchecked(a.iter().copied(), b.iter().copied()))
}

pub(crate) fn cosine_unchecked(
    a: impl Iterator<Item = f64> + Clone,
    b: impl Iterator<Item = f64> + Clone,
) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < NORM_EPS || nb < NORM_EPS {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// `log(1 + exp(-theta * delta))`, evaluated without overflow.
#[inline]
pub fn layer_loss(delta: f64, scale: LossScale) -> f64 {
    softplus(-scale.get() * delta)
}

#[inline]
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Pre-activation `inputs · Wᵀ + b` for a row-major batch.
pub(crate) fn affine(
    inputs: ArrayView2<f64>,
    weights: ArrayView2<f64>,
    bias: ArrayView1<f64>,
) -> Array2<f64> {
    let mut z = inputs.dot(&weights.t());
    if !z.is_standard_layout() {
        z = z.as_standard_layout().into_owned();
    }
    z += &bias;
    z
}

/// Per-row cosine similarity of a batch of outputs with `zeta`.
pub(crate) fn row_goodness(outputs: ArrayView2<f64>, zeta: ArrayView1<f64>) -> Array1<f64> {
    outputs
        .rows()
        .into_iter()
        .map(|row| cosine_unchecked(row.iter().copied(), zeta.iter().copied()))
        .collect()
}

/// Loss, goodness statistics and parameter gradients for one dense GELU layer.
#[derive(Debug, Clone)]
pub struct LayerLossGradient {
    pub loss: f64,
    pub mean_g_pos: f64,
    pub mean_g_neg: f64,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerLossGradient {
    pub fn mean_delta(&self) -> f64 {
        self.mean_g_pos - self.mean_g_neg
    }
}

/// Mean contrastive layer loss over paired positive/negative rows and its exact
/// gradient with respect to this layer's weights and bias.
///
/// Row `j` of `positive` and row `j` of `negative` form one pair with
/// `delta_j = cos(y_pos_j, zeta) - cos(y_neg_j, zeta)`.
pub fn layer_loss_gradient(
    weights: ArrayView2<f64>,
    bias: ArrayView1<f64>,
    zeta: ArrayView1<f64>,
    positive: ArrayView2<f64>,
    negative: ArrayView2<f64>,
    scale: LossScale,
) -> Result<LayerLossGradient> {
    let (out_dim, in_dim) = weights.dim();
    check_dim("layer_loss_gradient bias", out_dim, bias.len())?;
    check_dim("layer_loss_gradient zeta", out_dim, zeta.len())?;
    check_dim(
        "layer_loss_gradient positive width",
        in_dim,
        positive.ncols(),
    )?;
    check_dim(
        "layer_loss_gradient negative width",
        in_dim,
        negative.ncols(),
    )?;
    check_dim(
        "layer_loss_gradient pair count",
        positive.nrows(),
        negative.nrows(),
    )?;
    let n = positive.nrows();
    if n == 0 {
        return Err(Error::invalid(
            "layer_loss_gradient needs at least one pair",
        ));
    }

    let zeta_norm = zeta.dot(&zeta).sqrt();
    let theta = scale.get();

    let zeta = zeta.to_vec();
    let (dz_pos, g_pos) = cosine_backprop_prep(positive, weights, bias, &zeta, zeta_norm);
    let (dz_neg, g_neg) = cosine_backprop_prep(negative, weights, bias, &zeta, zeta_norm);

    let mut loss = 0.0;
    // dL/dg_pos per row; dL/dg_neg is its negation.
    let mut coef = Array1::<f64>::zeros(n);
    for j in 0..n {
        let s = theta * (g_pos[j] - g_neg[j]);
        loss += softplus(-s);
        coef[j] = -theta * sigmoid(-s) / n as f64;
    }
    loss /= n as f64;

    let dz_pos = scale_rows(dz_pos, coef.view(), 1.0);
    let dz_neg = scale_rows(dz_neg, coef.view(), -1.0);

    let grad_w = dz_pos.t().dot(&positive) + dz_neg.t().dot(&negative);
    let grad_b = dz_pos.sum_axis(Axis(0)) + dz_neg.sum_axis(Axis(0));

    Ok(LayerLossGradient {
        loss,
        mean_g_pos: g_pos.mean().unwrap_or(0.0),
        mean_g_neg: g_neg.mean().unwrap_or(0.0),
        weights: grad_w,
        bias: grad_b,
    })
}

/// Forward a batch and return (d cos / d pre-activation, cos) per row.
fn cosine_backprop_prep(
    inputs: ArrayView2<f64>,
    weights: ArrayView2<f64>,
    bias: ArrayView1<f64>,
    zeta: &[f64],
    zeta_norm: f64,
) -> (Array2<f64>, Array1<f64>) {
    let mut z = affine(inputs, weights, bias);
    let width = zeta.len();
    let mut g = Array1::<f64>::zeros(z.nrows());
    let mut dact = vec![0.0; width];
    let flat = z.as_slice_mut().expect("fresh gemm output is contiguous");
    for (row, gj) in flat.chunks_exact_mut(width).zip(g.iter_mut()) {
        gelu_with_derivative_in_place(row, &mut dact);
        let (mut sq, mut dot) = (0.0, 0.0);
        for (&a, &zv) in row.iter().zip(zeta) {
            sq += a * a;
            dot += a * zv;
        }
        let norm = sq.sqrt();
        if norm < NORM_EPS || zeta_norm < NORM_EPS {
            row.fill(0.0);
            continue;
        }
        let inv_yz = 1.0 / (norm * zeta_norm);
        let cos = dot * inv_yz;
        *gj = cos;
        // d cos / d y = zeta / (|y||zeta|) - cos * y / |y|^2, then through GELU
        let k = cos / sq;
        for ((v, &d), &zv) in row.iter_mut().zip(&dact).zip(zeta) {
            *v = (zv * inv_yz - k * *v) * d;
        }
    }
    (z, g)
}

fn scale_rows(mut m: Array2<f64>, coef: ArrayView1<f64>, sign: f64) -> Array2<f64> {
    let width = m.ncols();
    let flat = m.as_slice_mut().expect("contiguous");
    for (row, &c) in flat.chunks_exact_mut(width).zip(coef.iter()) {
        let c = sign * c;
        row.iter_mut().for_each(|v| *v *= c);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-6);
        // 0.5 * (1 + tanh(sqrt(2/pi) * 1.044715)), 40-digit reference
        assert_relative_eq!(gelu(1.0), 0.841_191_990_608_276_7, epsilon = 1e-15);
        assert_relative_eq!(gelu(-1.0), -0.158_808_009_391_723_3, epsilon = 1e-15);
    }

    #[test]
    fn exp_poly_tracks_libm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100_000 {
            let x: f64 = rng.gen_range(-708.0..709.0);
            let (a, b) = (exp_poly(x), x.exp());
            assert!(((a - b) / b).abs() < 5e-16, "exp({x}): {a} vs {b}");
        }
        for x in [0.0, 1.0, -1.0, 1e-300, -1e-300] {
            assert!((exp_poly(x) - x.exp()).abs() <= 2.0 * f64::EPSILON * x.exp());
        }
        assert_eq!(exp_poly(1e6), exp_poly(709.0));
        assert!(exp_poly(-1e6) > 0.0);
    }

    #[test]
    fn batch_gelu_matches_scalar_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<f64> = (0..1003).map(|_| rng.gen_range(-12.0..12.0)).collect();
        let mut batch = xs.clone();
        gelu_in_place(&mut batch);
        let mut with_d = xs.clone();
        let mut d = vec![0.0; xs.len()];
        gelu_with_derivative_in_place(&mut with_d, &mut d);
        for (i, &x) in xs.iter().enumerate() {
            assert_eq!(batch[i].to_bits(), gelu(x).to_bits());
            assert_eq!(with_d[i].to_bits(), gelu(x).to_bits());
            assert_eq!(d[i].to_bits(), gelu_derivative(x).to_bits());
        }
        let mut nan = [f64::NAN];
        gelu_in_place(&mut nan);
        assert!(nan[0].is_nan());
    }

    #[test]
    fn gelu_derivative_limits() {
        assert_eq!(gelu_derivative(0.0), 0.5);
        assert!((gelu_derivative(10.0) - 1.0).abs() < 1e-9);
        assert!(gelu_derivative(-10.0).abs() < 1e-9);
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..1000 {
            let x: f64 = rng.gen_range(-10.0..10.0);
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            let an = gelu_derivative(x);
            let rel = (fd - an).abs() / an.abs().max(1e-3);
            assert!(rel < 1e-6, "x={x} analytic={an} fd={fd}");
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(
            cosine_similarity(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(),
            1.0
        );
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_relative_eq!(
            cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn loss_examples() {
        let one = LossScale::default();
        assert_relative_eq!(
            layer_loss(0.0, one),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert!(layer_loss(1e6, one) < 1e-300);
        assert_relative_eq!(layer_loss(-50.0, one), 50.0, epsilon = 1e-12);
        assert!(layer_loss(-1000.0, one).is_finite());
        assert!(LossScale::new(0.0).is_err());
        assert!(LossScale::new(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric_scale_invariant_and_bounded(
            a in prop::collection::vec(-5.0f64..5.0, 4),
            b in prop::collection::vec(-5.0f64..5.0, 4),
            alpha in 0.01f64..100.0,
        ) {
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((-1.0..=1.0).contains(&ab));
            let scaled: Vec<f64> = a.iter().map(|v| v * alpha).collect();
            let s = cosine_similarity(&scaled, &b).unwrap();
            prop_assert!((s - ab).abs() < 1e-12);
        }

        #[test]
        fn loss_strictly_decreasing(d1 in -30.0f64..30.0, d2 in -30.0f64..30.0) {
            prop_assume!(d1 != d2);
            let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(layer_loss(lo, LossScale::default()) > layer_loss(hi, LossScale::default()));
        }
    }

    /// Scalar-loop reference for the mean pair loss; shares no code with the batched path.
    fn reference_loss(
        w: &Array2<f64>,
        b: &Array1<f64>,
        zeta: &Array1<f64>,
        pos: &Array2<f64>,
        neg: &Array2<f64>,
        theta: f64,
    ) -> f64 {
        let good = |x: ndarray::ArrayView1<f64>| {
            let out: Vec<f64> = (0..w.nrows())
                .map(|r| {
                    let mut acc = b[r];
                    for c in 0..w.ncols() {
                        acc += w[[r, c]] * x[c];
                    }
                    let u = (2.0 / std::f64::consts::PI).sqrt() * (acc + 0.044715 * acc.powi(3));
                    0.5 * acc * (1.0 + u.tanh())
                })
                .collect();
            let dot: f64 = out.iter().zip(zeta.iter()).map(|(a, z)| a * z).sum();
            let ny: f64 = out.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nz: f64 = zeta.iter().map(|a| a * a).sum::<f64>().sqrt();
            dot / (ny * nz)
        };
        let mut total = 0.0;
        for j in 0..pos.nrows() {
            let delta = good(pos.row(j)) - good(neg.row(j));
            total += (1.0 + (-theta * delta).exp()).ln();
        }
        total / pos.nrows() as f64
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    fn max_rel_error_vs_fd(
        w: &Array2<f64>,
        b: &Array1<f64>,
        zeta: &Array1<f64>,
        pos: &Array2<f64>,
        neg: &Array2<f64>,
        theta: f64,
    ) -> f64 {
        let grad = layer_loss_gradient(
            w.view(),
            b.view(),
            zeta.view(),
            pos.view(),
            neg.view(),
            LossScale::new(theta).unwrap(),
        )
        .unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let rel = |an: f64, fd: f64| (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
        for idx in 0..w.len() {
            let (r, c) = (idx / w.ncols(), idx % w.ncols());
            let mut wp = w.clone();
            wp[[r, c]] += h;
            let mut wm = w.clone();
            wm[[r, c]] -= h;
            let fd = (reference_loss(&wp, b, zeta, pos, neg, theta)
                - reference_loss(&wm, b, zeta, pos, neg, theta))
                / (2.0 * h);
            worst = worst.max(rel(grad.weights[[r, c]], fd));
        }
        for r in 0..b.len() {
            let mut bp = b.clone();
            bp[r] += h;
            let mut bm = b.clone();
            bm[r] -= h;
            let fd = (reference_loss(w, &bp, zeta, pos, neg, theta)
                - reference_loss(w, &bm, zeta, pos, neg, theta))
                / (2.0 * h);
            worst = worst.max(rel(grad.bias[r], fd));
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences_small_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_matrix(&mut rng, 4, 3);
        let b = Array1::from_shape_fn(4, |_| rng.gen_range(-0.5..0.5));
        let zeta = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
        let pos = random_matrix(&mut rng, 5, 3);
        let neg = random_matrix(&mut rng, 5, 3);
        let err = max_rel_error_vs_fd(&w, &b, &zeta, &pos, &neg, 1.0);
        assert!(err < 1e-4, "max rel error {err}");
    }

    #[test]
    fn gradient_on_flipped_pair_matches_oracle() {
        let w = array![[0.3, -0.2, 0.5], [0.1, 0.4, -0.6]];
        let b = array![0.05, -0.1];
        let zeta = array![0.6, -0.8];
        let pos = array![[0.2, 0.7, 1.0]];
        let neg = array![[0.2, 0.7, 0.0]];
        let err = max_rel_error_vs_fd(&w, &b, &zeta, &pos, &neg, 1.0);
        assert!(err < 1e-4, "max rel error {err}");
        let err = max_rel_error_vs_fd(&w, &b, &zeta, &pos, &neg, 3.5);
        assert!(err < 1e-4, "max rel error {err}");
    }

    #[test]
    fn saturated_loss_has_vanishing_gradient() {
        // Positive outputs align with zeta, negative outputs oppose it; large theta saturates.
        let w = array![[2.0, 0.0], [0.0, 2.0]];
        let b = array![0.0, 0.0];
        let zeta = array![1.0, 1.0];
        let pos = array![[3.0, 3.0], [2.0, 2.0]];
        let neg = array![[-3.0, 3.0], [3.0, -3.0]];
        let g = layer_loss_gradient(
            w.view(),
            b.view(),
            zeta.view(),
            pos.view(),
            neg.view(),
            LossScale::new(200.0).unwrap(),
        )
        .unwrap();
        let norm = g
            .weights
            .iter()
            .chain(g.bias.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(norm < 1e-12, "gradient norm {norm}");
        assert!(g.mean_delta() > 0.2);
    }

    #[test]
    fn gradient_rejects_mismatched_batches() {
        let w = Array2::<f64>::zeros((2, 3));
        let b = Array1::<f64>::zeros(2);
        let zeta = Array1::<f64>::ones(2);
        let pos = Array2::<f64>::zeros((4, 3));
        let neg = Array2::<f64>::zeros((3, 3));
        let r = layer_loss_gradient(
            w.view(),
            b.view(),
            zeta.view(),
            pos.view(),
            neg.view(),
            LossScale::default(),
        );
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
        let neg = Array2::<f64>::zeros((4, 2));
        let r = layer_loss_gradient(
            w.view(),
            b.view(),
            zeta.view(),
            pos.view(),
            neg.view(),
            LossScale::default(),
        );
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }
}
