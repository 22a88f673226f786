//! Network building blocks composed from tape primitives.

use std::f64::consts::PI;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Var, ZERO_INDEX};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// sqrt(2/pi) and the cubic coefficient of the tanh GELU approximation.
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
pub const GELU_CUBIC: f64 = 0.044_715;

/// Dropout masks are drawn from a ChaCha stream selected by a per-call
/// counter, so a run is reproducible from its seed.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    seed: u64,
    counter: u64,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            seed,
            counter: 0,
        }
    }
}

/// Forward-pass mode.
#[derive(Debug, Clone)]
pub enum Mode {
    Eval,
    Train(Dropout),
}

impl Mode {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    /// Inverted dropout; identity in eval mode or at rate 0.
    pub fn dropout<'t>(&mut self, x: Var<'t>) -> Var<'t> {
        let Mode::Train(d) = self else { return x };
        if d.rate <= 0.0 {
            return x;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
        rng.set_stream(d.counter);
        d.counter += 1;
        let keep = 1.0 - d.rate;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        x * x.tape().constant(mask, &x.shape())
    }
}

fn dims(x: &Var<'_>) -> String {
    format!("{:?}", x.shape())
}

/// `x W + b` over the last dimension of `x`.
pub fn linear<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let ws = w.shape();
    if ws.len() != 2 || ws[0] != x.cols() || b.len() != ws[1] {
        return Err(Error::shape(format!(
            "linear: x {} W {:?} b {}",
            dims(&x),
            ws,
            dims(&b)
        )));
    }
    let mut out_shape = x.shape();
    *out_shape.last_mut().unwrap() = ws[1];
    Ok(x.matmul(w).add_row(b).reshape(&out_shape))
}

/// Row-wise normalization over the last dimension followed by a per-column affine map.
pub fn layer_norm<'t>(x: Var<'t>, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
    let c = x.cols();
    if c == 0 || gamma.len() != c || beta.len() != c {
        return Err(Error::shape(format!(
            "layer_norm: x {} gamma {} beta {}",
            dims(&x),
            dims(&gamma),
            dims(&beta)
        )));
    }
    let shape = x.shape();
    let x2 = x.reshape(&[x.rows(), c]);
    let centred = x2.add_col(-x2.mean_cols());
    let var = centred.square().mean_cols();
    let inv = var.offset(eps).sqrt().recip();
    let y = centred.mul_col(inv).mul_row(gamma).add_row(beta);
    Ok(y.reshape(&shape))
}

/// Split the last dimension into halves `A | B` and return `A * sigmoid(B)`.
pub fn glu(x: Var<'_>) -> Result<Var<'_>> {
    let c = x.cols();
    if !c.is_multiple_of(2) {
        return Err(Error::shape(format!("glu: odd last dimension {c}")));
    }
    let k = c / 2;
    Ok(x.slice_cols(0, k) * x.slice_cols(k, c).sigmoid())
}

/// Elementwise self product.
pub fn simple_gate(x: Var<'_>) -> Var<'_> {
    x * x
}

/// Tanh approximation of GELU.
pub fn gelu(x: Var<'_>) -> Var<'_> {
    debug_assert!((GELU_SQRT_2_OVER_PI - (2.0 / PI).sqrt()).abs() < 1e-15);
    let inner = (x + (x * x * x).scale(GELU_CUBIC)).scale(GELU_SQRT_2_OVER_PI);
    (x * inner.tanh().offset(1.0)).scale(0.5)
}

/// Depthwise-separable 1-d convolution with zero "same" padding.
///
/// `x: [C, L]`, `k_dw: [C, k]` (odd `k`), `k_pw: [C_out, C]`, `b: [C_out]`;
/// returns `[C_out, L]`. The depthwise stage is a cross-correlation.
pub fn dsconv1d<'t>(x: Var<'t>, k_dw: Var<'t>, k_pw: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let xs = x.shape();
    let ks = k_dw.shape();
    let ps = k_pw.shape();
    if xs.len() != 2 || ks.len() != 2 || ps.len() != 2 {
        return Err(Error::shape("dsconv1d expects 2-d x, k_dw and k_pw"));
    }
    let (c, l) = (xs[0], xs[1]);
    let k = ks[1];
    if ks[0] != c || k.is_multiple_of(2) || ps[1] != c || b.len() != ps[0] {
        return Err(Error::shape(format!(
            "dsconv1d: x {xs:?} k_dw {ks:?} k_pw {ps:?} b {:?}",
            b.shape()
        )));
    }
    let pad = k / 2;
    let cols: Rc<[usize]> = (0..c)
        .flat_map(|ch| {
            (0..l).flat_map(move |pos| {
                (0..k).map(move |u| {
                    let src = pos as isize + u as isize - pad as isize;
                    if src < 0 || src >= l as isize {
                        ZERO_INDEX
                    } else {
                        ch * l + src as usize
                    }
                })
            })
        })
        .collect();
    let patches = x.gather(cols, &[c * l, k]);
    let kernel_idx: Rc<[usize]> = (0..c)
        .flat_map(|ch| (0..l).flat_map(move |_| (0..k).map(move |u| ch * k + u)))
        .collect();
    let kernels = k_dw.gather(kernel_idx, &[c * l, k]);
    let depthwise = (patches * kernels).sum_cols().reshape(&[c, l]);
    let mixed = k_pw.matmul(depthwise);
    let out_c = ps[0];
    Ok(mixed.add_col(b.reshape(&[out_c, 1])))
}

/// Standard 1-d convolution on a `[L, C_in]` sequence, "same" zero padding.
/// `w: [k * C_in, C_out]` ordered by tap then input channel.
pub fn conv1d<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>, k: usize) -> Result<Var<'t>> {
    let (l, c_in) = (x.rows(), x.cols());
    let ws = w.shape();
    if k.is_multiple_of(2) || ws.len() != 2 || ws[0] != k * c_in || b.len() != ws[1] {
        return Err(Error::shape(format!(
            "conv1d: x {} w {ws:?} b {} k {k}",
            dims(&x),
            dims(&b)
        )));
    }
    let pad = k / 2;
    let idx: Rc<[usize]> = (0..l)
        .flat_map(|pos| {
            (0..k).flat_map(move |u| {
                let src = pos as isize + u as isize - pad as isize;
                (0..c_in).map(move |ch| {
                    if src < 0 || src >= l as isize {
                        ZERO_INDEX
                    } else {
                        src as usize * c_in + ch
                    }
                })
            })
        })
        .collect();
    let patches = x.gather(idx, &[l, k * c_in]);
    Ok(patches.matmul(w).add_row(b))
}

/// Max over non-overlapping pairs of rows; an odd trailing row is dropped.
pub fn max_pool_rows2(x: Var<'_>) -> Result<Var<'_>> {
    let (l, c) = (x.rows(), x.cols());
    if l < 2 {
        return Err(Error::shape(format!("max_pool_rows2 on {l} rows")));
    }
    let half = l / 2;
    let idx: Rc<[usize]> = x.with_value(|v| {
        (0..half)
            .flat_map(|i| {
                (0..c).map(move |ch| {
                    let (a, b) = ((2 * i) * c + ch, (2 * i + 1) * c + ch);
                    if v[b] > v[a] {
                        b
                    } else {
                        a
                    }
                })
            })
            .collect()
    });
    Ok(x.gather(idx, &[half, c]))
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn stab_softmax(x: Var<'_>) -> Var<'_> {
    let (r, c) = (x.rows(), x.cols());
    let shape = x.shape();
    let x2 = x.reshape(&[r, c]);
    let maxima: Vec<f64> = x2.with_value(|v| {
        v.chunks(c)
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    });
    // softmax is shift invariant, so the subtracted maxima carry no gradient
    let m = x.tape().constant(maxima, &[r, 1]);
    let e = x2.add_col(-m).exp();
    e.mul_col(e.sum_cols().recip()).reshape(&shape)
}

/// Scaled dot-product attention. Returns the output and the weights.
pub fn attention<'t>(q: Var<'t>, k: Var<'t>, v: Var<'t>, mode: &mut Mode) -> Result<(Var<'t>, Var<'t>)> {
    let d = q.cols();
    if k.cols() != d || k.rows() != v.rows() || q.shape().len() != 2 || k.shape().len() != 2 {
        return Err(Error::shape(format!(
            "attention: Q {} K {} V {}",
            dims(&q),
            dims(&k),
            dims(&v)
        )));
    }
    let scores = q.matmul(k.transpose()).scale(1.0 / (d as f64).sqrt());
    let weights = stab_softmax(scores);
    let dropped = mode.dropout(weights);
    Ok((dropped.matmul(v), weights))
}

/// Parameters of one position-wise feed-forward block.
#[derive(Debug, Clone, Copy)]
pub struct FfnParams<'t> {
    pub ln_gamma: Var<'t>,
    pub ln_beta: Var<'t>,
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
}

/// `x + W2 GELU(W1 LN(x) + b1) + b2`.
pub fn ffn_block<'t>(x: Var<'t>, p: &FfnParams<'t>, mode: &mut Mode) -> Result<Var<'t>> {
    let h = linear(layer_norm(x, p.ln_gamma, p.ln_beta, LAYER_NORM_EPS)?, p.w1, p.b1)?;
    let y = linear(gelu(h), p.w2, p.b2)?;
    Ok(x + mode.dropout(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tape;
    use rand::Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    #[test]
    fn linear_trivial_cases() {
        let t = Tape::new();
        let x = t.constant(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = t.constant(vec![0.5, -1.0, 2.0], &[3]);
        let y = linear(x, t.zeros(&[2, 3]), b).unwrap();
        assert_eq!(y.value(), vec![0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        let eye = t.constant(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]);
        assert_eq!(linear(x, eye, t.zeros(&[2])).unwrap().value(), x.value());
        assert!(matches!(linear(x, t.zeros(&[3, 3]), b), Err(Error::Shape(_))));
    }

    #[test]
    fn linear_full_width() {
        let t = Tape::new();
        let y = linear(t.zeros(&[8, 2]), t.zeros(&[2, 384]), t.zeros(&[384])).unwrap();
        assert_eq!(y.shape(), vec![8, 384]);
    }

    #[test]
    fn layer_norm_cases() {
        let t = Tape::new();
        let beta = t.constant(vec![0.3, -0.7, 1.1], &[3]);
        let gamma = t.constant(vec![2.0, 2.0, 2.0], &[3]);
        let y = layer_norm(t.constant(vec![5.0; 3], &[1, 3]), gamma, beta, LAYER_NORM_EPS).unwrap();
        assert_eq!(y.value(), beta.value());

        let one = t.constant(vec![1.0, 1.0], &[2]);
        let zero = t.zeros(&[2]);
        let y = layer_norm(t.constant(vec![1.0, 3.0], &[1, 2]), one, zero, LAYER_NORM_EPS).unwrap();
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        let v = y.value();
        assert!((v[0] + s).abs() < 1e-15 && (v[1] - s).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = t.constant(rand_vec(&mut rng, 40, 5.0), &[4, 10]);
        let g = t.constant(vec![1.0; 10], &[10]);
        let b = t.constant(rand_vec(&mut rng, 10, 1.0), &[10]);
        let bmean = b.value().iter().sum::<f64>() / 10.0;
        let y = layer_norm(x, g, b, LAYER_NORM_EPS).unwrap().value();
        for row in y.chunks(10) {
            assert!((row.iter().sum::<f64>() / 10.0 - bmean).abs() < 1e-6);
        }
    }

    #[test]
    fn glu_cases() {
        let t = Tape::new();
        let x = t.constant(vec![2.0, -4.0, 0.0, 0.0], &[1, 4]);
        assert_eq!(glu(x).unwrap().value(), vec![1.0, -2.0]);
        let x = t.constant(vec![0.0, 0.0, 3.0, -1.0], &[1, 4]);
        assert_eq!(glu(x).unwrap().value(), vec![0.0, 0.0]);
        assert!(matches!(glu(t.zeros(&[2, 3])), Err(Error::Shape(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let raw = rand_vec(&mut rng, 24, 3.0);
        let y = glu(t.constant(raw.clone(), &[3, 8])).unwrap().value();
        for r in 0..3 {
            for j in 0..4 {
                let a = raw[r * 8 + j];
                let b = raw[r * 8 + 4 + j];
                let want = a / (1.0 + (-b).exp());
                assert!((y[r * 4 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn simple_gate_and_gelu_values() {
        let t = Tape::new();
        assert_eq!(simple_gate(t.constant(vec![2.0, -3.0, 0.0], &[3])).value(), vec![4.0, 9.0, 0.0]);
        assert_eq!(gelu(t.constant(vec![0.0], &[1])).item(), 0.0);
        let x = t.input(vec![3.0], &[1]);
        let g = t.grad(simple_gate(x), &[x], false).unwrap()[0].item();
        let h = 1e-5;
        let fd = ((3.0f64 + h).powi(2) - (3.0f64 - h).powi(2)) / (2.0 * h);
        assert!((g - 6.0).abs() < 1e-12 && (fd - 6.0).abs() < 1e-6);
    }

    #[allow(clippy::too_many_arguments)]
    fn dsconv_oracle(x: &[f64], c: usize, l: usize, kdw: &[f64], k: usize, kpw: &[f64], co: usize, b: &[f64]) -> Vec<f64> {
        let pad = (k / 2) as isize;
        let mut y = vec![0.0; c * l];
        for ch in 0..c {
            for pos in 0..l {
                let mut s = 0.0;
                for u in 0..k {
                    let src = pos as isize + u as isize - pad;
                    if src >= 0 && (src as usize) < l {
                        s += kdw[ch * k + u] * x[ch * l + src as usize];
                    }
                }
                y[ch * l + pos] = s;
            }
        }
        let mut out = vec![0.0; co * l];
        for o in 0..co {
            for pos in 0..l {
                let mut s = b[o];
                for ch in 0..c {
                    s += kpw[o * c + ch] * y[ch * l + pos];
                }
                out[o * l + pos] = s;
            }
        }
        out
    }

    #[test]
    fn dsconv_identity_constant_and_oracle() {
        let t = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xv = rand_vec(&mut rng, 3 * 7, 2.0);
        let x = t.constant(xv.clone(), &[3, 7]);
        let delta = t.constant([0.0, 1.0, 0.0].repeat(3), &[3, 3]);
        let eye = t.constant(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]);
        assert_eq!(dsconv1d(x, delta, eye, t.zeros(&[3])).unwrap().value(), xv);

        let xc = t.constant(vec![2.0; 9], &[1, 9]);
        let kd = t.constant(vec![0.5, 1.5, -0.25], &[1, 3]);
        let one = t.constant(vec![1.0], &[1, 1]);
        let y = dsconv1d(xc, kd, one, t.zeros(&[1])).unwrap().value();
        for v in &y[1..8] {
            assert!((v - 2.0 * 1.75).abs() < 1e-15);
        }

        let (c, l, k, co) = (4, 11, 5, 3);
        let xv = rand_vec(&mut rng, c * l, 1.0);
        let kdw = rand_vec(&mut rng, c * k, 1.0);
        let kpw = rand_vec(&mut rng, co * c, 1.0);
        let bv = rand_vec(&mut rng, co, 1.0);
        let y = dsconv1d(
            t.constant(xv.clone(), &[c, l]),
            t.constant(kdw.clone(), &[c, k]),
            t.constant(kpw.clone(), &[co, c]),
            t.constant(bv.clone(), &[co]),
        )
        .unwrap()
        .value();
        let want = dsconv_oracle(&xv, c, l, &kdw, k, &kpw, co, &bv);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(dsconv1d(t.zeros(&[2, 5]), t.zeros(&[2, 2]), t.zeros(&[1, 2]), t.zeros(&[1])).is_err());
    }

    #[test]
    fn conv1d_matches_loops() {
        let t = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (l, ci, co, k) = (9, 3, 2, 3);
        let xv = rand_vec(&mut rng, l * ci, 1.0);
        let wv = rand_vec(&mut rng, k * ci * co, 1.0);
        let bv = rand_vec(&mut rng, co, 1.0);
        let y = conv1d(t.constant(xv.clone(), &[l, ci]), t.constant(wv.clone(), &[k * ci, co]), t.constant(bv.clone(), &[co]), k)
            .unwrap()
            .value();
        for pos in 0..l {
            for o in 0..co {
                let mut s = bv[o];
                for u in 0..k {
                    let src = pos as isize + u as isize - 1;
                    if src < 0 || src >= l as isize {
                        continue;
                    }
                    for ch in 0..ci {
                        s += xv[src as usize * ci + ch] * wv[(u * ci + ch) * co + o];
                    }
                }
                assert!((y[pos * co + o] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn max_pool_picks_pair_maxima() {
        let t = Tape::new();
        let x = t.constant(vec![1.0, 5.0, 3.0, 2.0, -1.0, 0.0, 9.0, 9.0, 4.0, 4.0], &[5, 2]);
        assert_eq!(max_pool_rows2(x).unwrap().value(), vec![3.0, 5.0, 9.0, 9.0]);
    }

    #[test]
    fn softmax_properties() {
        let t = Tape::new();
        let u = stab_softmax(t.constant(vec![0.7; 5], &[1, 5])).value();
        assert!(u.iter().all(|v| (v - 0.2).abs() < 1e-15));
        let big = stab_softmax(t.constant(vec![1e4, 0.0], &[1, 2])).value();
        assert!(big.iter().all(|v| v.is_finite()));
        assert!(big[0] >= 1.0 - 1e-300);
        let neg = stab_softmax(t.constant(vec![-1e4, 1e4, 0.0], &[1, 3])).value();
        assert!(neg.iter().all(|v| v.is_finite()));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw = rand_vec(&mut rng, 4 * 6, 10.0);
        let a = stab_softmax(t.constant(raw.clone(), &[4, 6])).value();
        let shifted: Vec<f64> = raw.iter().enumerate().map(|(i, v)| v + (i / 6) as f64 * 37.5 - 50.0).collect();
        let b = stab_softmax(t.constant(shifted, &[4, 6])).value();
        for (row_a, row_b) in a.chunks(6).zip(b.chunks(6)) {
            assert!((row_a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in row_a.iter().zip(row_b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_single_key_and_saturation() {
        let t = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = t.constant(rand_vec(&mut rng, 3 * 4, 1.0), &[3, 4]);
        let k = t.constant(rand_vec(&mut rng, 4, 1.0), &[1, 4]);
        let vv = rand_vec(&mut rng, 5, 1.0);
        let v = t.constant(vv.clone(), &[1, 5]);
        let (o, _) = attention(q, k, v, &mut Mode::Eval).unwrap();
        for row in o.value().chunks(5) {
            for (a, b) in row.iter().zip(&vv) {
                assert!((a - b).abs() < 1e-15);
            }
        }

        // orthonormal keys, query = 50 * key 2
        let mut keys = vec![0.0; 16];
        for i in 0..4 {
            keys[i * 4 + i] = 1.0;
        }
        let vals = rand_vec(&mut rng, 4 * 3, 1.0);
        let q = t.constant(vec![0.0, 0.0, 50.0, 0.0], &[1, 4]);
        let (o, w) = attention(q, t.constant(keys, &[4, 4]), t.constant(vals.clone(), &[4, 3]), &mut Mode::Eval).unwrap();
        assert!(w.value()[2] > 1.0 - 1e-9);
        for (a, b) in o.value().iter().zip(&vals[6..9]) {
            assert!((a - b).abs() < 1e-9);
        }

        let (o, _) = attention(t.zeros(&[1, 384]), t.zeros(&[8, 384]), t.zeros(&[8, 384]), &mut Mode::Eval).unwrap();
        assert_eq!(o.shape(), vec![1, 384]);
    }

    #[test]
    fn ffn_zero_weights_is_residual_plus_bias() {
        let t = Tape::new();
        let x = t.constant(vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0], &[2, 3]);
        let b2 = t.constant(vec![0.1, 0.2, 0.3], &[3]);
        let p = FfnParams {
            ln_gamma: t.constant(vec![1.0; 3], &[3]),
            ln_beta: t.zeros(&[3]),
            w1: t.zeros(&[3, 6]),
            b1: t.zeros(&[6]),
            w2: t.zeros(&[6, 3]),
            b2,
        };
        let y = ffn_block(x, &p, &mut Mode::Eval).unwrap().value();
        let want = [1.1, -1.8, 0.8, 3.1, 0.2, 1.3];
        for (a, b) in y.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ffn_matches_composed_oracle() {
        let t = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (m, d, h) = (2, 4, 6);
        let xv = rand_vec(&mut rng, m * d, 1.0);
        let g = rand_vec(&mut rng, d, 1.0);
        let be = rand_vec(&mut rng, d, 1.0);
        let w1 = rand_vec(&mut rng, d * h, 1.0);
        let b1 = rand_vec(&mut rng, h, 1.0);
        let w2 = rand_vec(&mut rng, h * d, 1.0);
        let b2 = rand_vec(&mut rng, d, 1.0);
        let c = |v: &Vec<f64>, s: &[usize]| t.constant(v.clone(), s);
        let p = FfnParams {
            ln_gamma: c(&g, &[d]),
            ln_beta: c(&be, &[d]),
            w1: c(&w1, &[d, h]),
            b1: c(&b1, &[h]),
            w2: c(&w2, &[h, d]),
            b2: c(&b2, &[d]),
        };
        let y = ffn_block(c(&xv, &[m, d]), &p, &mut Mode::Eval).unwrap().value();
        let gelu_s = |z: f64| 0.5 * z * (1.0 + ((2.0 / PI).sqrt() * (z + 0.044715 * z * z * z)).tanh());
        for r in 0..m {
            let row = &xv[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d as f64;
            let ln: Vec<f64> = (0..d).map(|j| (row[j] - mu) / (var + 1e-5).sqrt() * g[j] + be[j]).collect();
            let hid: Vec<f64> = (0..h).map(|q| gelu_s(b1[q] + (0..d).map(|j| ln[j] * w1[j * h + q]).sum::<f64>())).collect();
            for j in 0..d {
                let want = row[j] + b2[j] + (0..h).map(|q| hid[q] * w2[q * d + j]).sum::<f64>();
                assert!((y[r * d + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_is_reproducible_and_eval_identity() {
        let t = Tape::new();
        let x = t.constant(vec![1.0; 200], &[200]);
        assert_eq!(Mode::Eval.dropout(x).value(), x.value());
        let a = Mode::Train(Dropout::new(0.5, 9)).dropout(x).value();
        let b = Mode::Train(Dropout::new(0.5, 9)).dropout(x).value();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| *v == 0.0 || *v == 2.0));
        assert!(a.contains(&0.0));
        let mut m = Mode::Train(Dropout::new(0.5, 9));
        let first = m.dropout(x).value();
        let second = m.dropout(x).value();
        assert_ne!(first, second);
    }
}
