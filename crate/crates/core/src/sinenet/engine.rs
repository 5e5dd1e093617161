//! Batched jet propagation through the MLP and its reverse pass.
//!
//! A batch of `n` points at jet order `o` is laid out as an `(n * c) x width`
//! row-major matrix, where each point owns `c` consecutive rows: one value
//! row, `d` gradient rows and `d(d+1)/2` packed Hessian rows (upper
//! triangle, row by row). Linear layers act on every row with one GEMM; the
//! bias only touches value rows. Elementwise activations mix the rows of one
//! point:
//!
//! ```text
//! v' = s(v)      g' = s'(v) g      H' = s'(v) H + s''(v) g g^T
//! ```

use super::{Activation, SineNetwork};
use crate::field::{Jet, JetOrder};

/// Packed upper-triangle index pairs for the Hessian rows.
pub(crate) fn hess_pairs(dim: usize) -> &'static [(usize, usize)] {
    match dim {
        2 => &[(0, 0), (0, 1), (1, 1)],
        3 => &[(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)],
        _ => &[],
    }
}

pub(crate) fn channels(dim: usize, order: JetOrder) -> usize {
    match order {
        JetOrder::Value => 1,
        JetOrder::Gradient => 1 + dim,
        JetOrder::Hessian => 1 + dim + hess_pairs(dim).len(),
    }
}

/// Beyond this magnitude the three-part reduction loses accuracy.
const REDUCTION_LIMIT: f64 = 1e5;

/// `(sin x, cos x)` via a three-part Cody-Waite reduction by pi/2 and the
/// fdlibm minimax kernels on [-pi/4, pi/4]. About 1 ulp; libm beyond
/// `REDUCTION_LIMIT`.
#[inline]
pub(crate) fn sin_cos(x: f64) -> (f64, f64) {
    const PIO2_1: f64 = 1.570_796_326_734_125_614_17e0;
    const PIO2_2: f64 = 6.077_100_506_303_965_976_60e-11;
    const PIO2_3: f64 = 2.022_266_248_711_166_455_80e-21;
    const S: [f64; 6] = [
        -1.666_666_666_666_663_243_48e-1,
        8.333_333_333_322_489_461_24e-3,
        -1.984_126_982_985_794_931_34e-4,
        2.755_731_370_707_006_767_89e-6,
        -2.505_076_025_340_686_341_95e-8,
        1.589_690_995_211_550_102_21e-10,
    ];
    const C: [f64; 6] = [
        4.166_666_666_666_660_190_37e-2,
        -1.388_888_888_887_410_957_49e-3,
        2.480_158_728_947_672_941_78e-5,
        -2.755_731_435_139_066_330_35e-7,
        2.087_572_321_298_174_827_90e-9,
        -1.135_964_755_778_819_482_65e-11,
    ];
    if !(x.abs() < REDUCTION_LIMIT) {
        return x.sin_cos();
    }
    let k = (x * std::f64::consts::FRAC_2_PI).round();
    let r = ((x - k * PIO2_1) - k * PIO2_2) - k * PIO2_3;
    let z = r * r;
    let sin = r + r * z * (S[0] + z * (S[1] + z * (S[2] + z * (S[3] + z * (S[4] + z * S[5])))));
    let hz = 0.5 * z;
    let w = 1.0 - hz;
    let tail = z * z * (C[0] + z * (C[1] + z * (C[2] + z * (C[3] + z * (C[4] + z * C[5])))));
    let cos = w + (((1.0 - w) - hz) + tail);
    match (k as i64) & 3 {
        0 => (sin, cos),
        1 => (cos, -sin),
        2 => (-sin, -cos),
        _ => (-cos, sin),
    }
}

/// Derivatives `s, s', s'', s'''` of the activation at `z`.
#[inline]
pub(crate) fn activation_derivs(act: Activation, z: f64) -> [f64; 4] {
    match act {
        Activation::Sine { omega0: w } => {
            let (s, c) = sin_cos(w * z);
            [s, w * c, -w * w * s, -w * w * w * c]
        }
        Activation::Softplus { beta } => {
            let t = beta * z;
            let value = (t.max(0.0) + (-t.abs()).exp().ln_1p()) / beta;
            let sig = if t >= 0.0 {
                1.0 / (1.0 + (-t).exp())
            } else {
                let e = t.exp();
                e / (1.0 + e)
            };
            let s2 = beta * sig * (1.0 - sig);
            [value, sig, s2, beta * s2 * (1.0 - 2.0 * sig)]
        }
    }
}

/// `C = A * B^T` with A `m x k`, B `n x k`, C `m x n`, all row-major.
pub(crate) fn gemm_abt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    // SAFETY: slice lengths checked above; strides describe row-major storage.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `C = A * B` with A `m x k`, B `k x n`.
pub(crate) fn gemm_ab(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `C += A^T * B` with A `k x m`, B `k x n`.
pub(crate) fn gemm_atb_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            1.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Everything the reverse pass needs from one forward pass.
pub(crate) struct Tape {
    pub n: usize,
    pub c: usize,
    pub order: JetOrder,
    /// Input matrix of every linear layer.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activations of every hidden layer.
    pub pre: Vec<Vec<f64>>,
    /// First three activation derivatives at the value row of every hidden
    /// unit, `n * width * 3` per layer.
    pub derivs: Vec<Vec<f64>>,
    /// Output rows, `n * c` values.
    pub out: Vec<f64>,
}

impl Tape {
    pub fn jet(&self, dim: usize, p: usize) -> Jet {
        let rows = &self.out[p * self.c..(p + 1) * self.c];
        let mut j = Jet::constant(dim, rows[0]);
        if self.order >= JetOrder::Gradient {
            j.grad[..dim].copy_from_slice(&rows[1..1 + dim]);
        }
        if self.order == JetOrder::Hessian {
            for (k, &(a, b)) in hess_pairs(dim).iter().enumerate() {
                let h = rows[1 + dim + k];
                j.hess[a][b] = h;
                j.hess[b][a] = h;
            }
        }
        j
    }

    pub fn jets(&self, dim: usize) -> Vec<Jet> {
        (0..self.n).map(|p| self.jet(dim, p)).collect()
    }
}

fn input_rows(dim: usize, c: usize, xs: &[f64]) -> Vec<f64> {
    let n = xs.len() / dim;
    if c == 1 {
        return xs.to_vec();
    }
    let mut a = vec![0.0; n * c * dim];
    for (p, x) in xs.chunks_exact(dim).enumerate() {
        let base = p * c * dim;
        a[base..base + dim].copy_from_slice(x);
        for i in 0..dim {
            a[base + (1 + i) * dim + i] = 1.0;
        }
    }
    a
}

pub(crate) fn forward(net: &SineNetwork, xs: &[f64], order: JetOrder, keep: bool) -> Tape {
    let dim = net.arch.input_dim;
    let n = xs.len() / dim;
    let c = channels(dim, order);
    let m = n * c;
    let pairs = hess_pairs(dim);
    let act = net.arch.activation;
    let last = net.layers.len() - 1;

    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut pre = Vec::with_capacity(last);
    let mut derivs = Vec::with_capacity(if keep { last } else { 0 });
    let mut a = input_rows(dim, c, xs);
    let mut out = Vec::new();
    for (l, shape) in net.layers.iter().enumerate() {
        let (w, b) = net.layer_params(l);
        let mut z = vec![0.0; m * shape.fan_out];
        gemm_abt(m, shape.fan_in, shape.fan_out, &a, w, &mut z, 0.0);
        for p in 0..n {
            let row = &mut z[p * c * shape.fan_out..][..shape.fan_out];
            row.iter_mut().zip(b).for_each(|(zi, bi)| *zi += bi);
        }
        if l == last {
            out = z;
            if keep {
                inputs.push(a);
            }
            break;
        }
        let width = shape.fan_out;
        let mut next = vec![0.0; m * width];
        let mut dl = if keep { vec![0.0; n * width * 3] } else { Vec::new() };
        for p in 0..n {
            let zb = &z[p * c * width..(p + 1) * c * width];
            let ab = &mut next[p * c * width..(p + 1) * c * width];
            for u in 0..width {
                let [s0, s1, s2, s3] = activation_derivs(act, zb[u]);
                if keep {
                    dl[(p * width + u) * 3..][..3].copy_from_slice(&[s1, s2, s3]);
                }
                ab[u] = s0;
                if c == 1 {
                    continue;
                }
                for i in 0..dim {
                    ab[(1 + i) * width + u] = s1 * zb[(1 + i) * width + u];
                }
                if order == JetOrder::Hessian {
                    for (k, &(i, j)) in pairs.iter().enumerate() {
                        let r = (1 + dim + k) * width + u;
                        ab[r] = s1 * zb[r] + s2 * zb[(1 + i) * width + u] * zb[(1 + j) * width + u];
                    }
                }
            }
        }
        if keep {
            inputs.push(a);
            pre.push(z);
            derivs.push(dl);
        }
        a = next;
    }
    Tape {
        n,
        c,
        order,
        inputs,
        pre,
        derivs,
        out,
    }
}

/// Accumulates into `grad` (flat parameter layout) the gradient of
/// `sum_rows out_adjoint[r] * tape.out[r]`.
pub(crate) fn backward(net: &SineNetwork, tape: &Tape, out_adjoint: &[f64], grad: &mut [f64]) {
    let dim = net.arch.input_dim;
    let (n, c) = (tape.n, tape.c);
    let m = n * c;
    let pairs = hess_pairs(dim);
    debug_assert_eq!(out_adjoint.len(), m);

    let mut zbar = out_adjoint.to_vec();
    for l in (0..net.layers.len()).rev() {
        let shape = net.layers[l];
        let (w, _) = net.layer_params(l);
        let a = &tape.inputs[l];
        {
            let gw = &mut grad[shape.w_off..shape.w_off + shape.fan_out * shape.fan_in];
            gemm_atb_acc(shape.fan_out, m, shape.fan_in, &zbar, a, gw);
        }
        {
            let gb = &mut grad[shape.b_off..shape.b_off + shape.fan_out];
            for p in 0..n {
                let row = &zbar[p * c * shape.fan_out..][..shape.fan_out];
                gb.iter_mut().zip(row).for_each(|(g, z)| *g += z);
            }
        }
        if l == 0 {
            break;
        }
        let width = shape.fan_in;
        let mut abar = vec![0.0; m * width];
        gemm_ab(m, shape.fan_out, width, &zbar, w, &mut abar, 0.0);

        let z = &tape.pre[l - 1];
        let ds = &tape.derivs[l - 1];
        let mut zb_next = vec![0.0; m * width];
        for p in 0..n {
            let zp = &z[p * c * width..(p + 1) * c * width];
            let ap = &abar[p * c * width..(p + 1) * c * width];
            let out = &mut zb_next[p * c * width..(p + 1) * c * width];
            for u in 0..width {
                let d = &ds[(p * width + u) * 3..][..3];
                let (s1, s2, s3) = (d[0], d[1], d[2]);
                let mut zv = ap[u] * s1;
                if c > 1 {
                    for i in 0..dim {
                        let r = (1 + i) * width + u;
                        zv += ap[r] * s2 * zp[r];
                        out[r] = ap[r] * s1;
                    }
                    if tape.order == JetOrder::Hessian {
                        for (k, &(i, j)) in pairs.iter().enumerate() {
                            let r = (1 + dim + k) * width + u;
                            let (ri, rj) = ((1 + i) * width + u, (1 + j) * width + u);
                            let hbar = ap[r];
                            zv += hbar * (s2 * zp[r] + s3 * zp[ri] * zp[rj]);
                            out[r] = hbar * s1;
                            out[ri] += hbar * s2 * zp[rj];
                            out[rj] += hbar * s2 * zp[ri];
                        }
                    }
                }
                out[u] = zv;
            }
        }
        zbar = zb_next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sin_cos_matches_libm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut xs: Vec<f64> = (0..200_000).map(|_| rng.random_range(-300.0..300.0)).collect();
        xs.extend((0..20_000).map(|_| rng.random_range(-2e5..2e5)));
        xs.extend([0.0, -0.0, 1e-300, std::f64::consts::FRAC_PI_2, std::f64::consts::PI, 1e5 - 1e-9, 1e5]);
        for k in -400..400 {
            xs.push(k as f64 * std::f64::consts::FRAC_PI_4);
        }
        for x in xs {
            let (s, c) = sin_cos(x);
            let (s0, c0) = x.sin_cos();
            assert!((s - s0).abs() <= 4.5e-16, "sin({x}): {s} vs {s0}");
            assert!((c - c0).abs() <= 4.5e-16, "cos({x}): {c} vs {c0}");
        }
        assert!(sin_cos(f64::NAN).0.is_nan());
        assert!(sin_cos(f64::INFINITY).1.is_nan());
    }
}
