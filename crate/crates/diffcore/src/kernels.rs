//! Forward and adjoint kernels for the fixed op set, on raw row-major slices.

use crate::scalar::Scalar;

/// Periodic 3×3 im2col for one `(C, H, W)` image into a `(C·9, H·W)` matrix.
pub fn im2col_periodic<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    debug_assert_eq!(col.len(), c * 9 * hw);
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * hw;
                for y in 0..h {
                    let sy = (y + h + ky - 1) % h;
                    let src = &plane[sy * w..(sy + 1) * w];
                    let dst = &mut col[row + y * w..row + (y + 1) * w];
                    shift_row(src, dst, kx);
                }
            }
        }
    }
}

/// `dst[x] = src[(x + kx - 1) mod w]`
#[inline]
fn shift_row<T: Copy>(src: &[T], dst: &mut [T], kx: usize) {
    let w = src.len();
    match kx {
        0 => {
            dst[0] = src[w - 1];
            dst[1..].copy_from_slice(&src[..w - 1]);
        }
        1 => dst.copy_from_slice(src),
        _ => {
            dst[..w - 1].copy_from_slice(&src[1..]);
            dst[w - 1] = src[0];
        }
    }
}

/// Adjoint of [`im2col_periodic`]: scatters `col` back onto `dx` (accumulating).
pub fn col2im_periodic<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * hw;
                for y in 0..h {
                    let sy = (y + h + ky - 1) % h;
                    let src = &col[row + y * w..row + (y + 1) * w];
                    let dst = &mut plane[sy * w..(sy + 1) * w];
                    unshift_row_add(src, dst, kx);
                }
            }
        }
    }
}

/// Adjoint of `shift_row`: `dst[(x + kx - 1) mod w] += src[x]`.
#[inline]
fn unshift_row_add<T: Scalar>(src: &[T], dst: &mut [T], kx: usize) {
    let w = src.len();
    let add = |d: &mut [T], s: &[T]| {
        for (a, &b) in d.iter_mut().zip(s) {
            *a = *a + b;
        }
    };
    match kx {
        0 => {
            dst[w - 1] = dst[w - 1] + src[0];
            add(&mut dst[..w - 1], &src[1..]);
        }
        1 => add(dst, src),
        _ => {
            add(&mut dst[1..], &src[..w - 1]);
            dst[0] = dst[0] + src[w - 1];
        }
    }
}

pub struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
}

pub fn conv3x3_forward<T: Scalar>(x: &[T], weight: &[T], bias: Option<&[T]>, d: &ConvDims, out: &mut [T]) {
    let hw = d.h * d.w;
    let mut col = vec![T::zero(); d.cin * 9 * hw];
    for b in 0..d.batch {
        let xb = &x[b * d.cin * hw..(b + 1) * d.cin * hw];
        im2col_periodic(xb, d.cin, d.h, d.w, &mut col);
        let ob = &mut out[b * d.cout * hw..(b + 1) * d.cout * hw];
        fill_bias(ob, bias, d.cout, hw);
        T::gemm(false, false, d.cout, hw, d.cin * 9, weight, &col, bias_beta(bias), ob);
    }
}

/// Accumulates input, weight and bias gradients of a periodic 3×3 conv.
pub fn conv3x3_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    gout: &[T],
    d: &ConvDims,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let hw = d.h * d.w;
    let k = d.cin * 9;
    let mut col = vec![T::zero(); k * hw];
    for b in 0..d.batch {
        let gb = &gout[b * d.cout * hw..(b + 1) * d.cout * hw];
        if let Some(dw) = dw.as_deref_mut() {
            let xb = &x[b * d.cin * hw..(b + 1) * d.cin * hw];
            im2col_periodic(xb, d.cin, d.h, d.w, &mut col);
            // dW (cout × k) += gout (cout × hw) · colᵀ (hw × k)
            T::gemm(false, true, d.cout, k, hw, gb, &col, T::one(), dw);
        }
        if let Some(db) = db.as_deref_mut() {
            accumulate_bias_grad(gb, d.cout, hw, db);
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dcol (k × hw) = Wᵀ (k × cout) · gout (cout × hw)
            T::gemm(true, false, k, hw, d.cout, weight, gb, T::zero(), &mut col);
            let dxb = &mut dx[b * d.cin * hw..(b + 1) * d.cin * hw];
            col2im_periodic(&col, d.cin, d.h, d.w, dxb);
        }
    }
}

pub fn pointwise_forward<T: Scalar>(x: &[T], weight: &[T], bias: Option<&[T]>, d: &ConvDims, out: &mut [T]) {
    let hw = d.h * d.w;
    for b in 0..d.batch {
        let xb = &x[b * d.cin * hw..(b + 1) * d.cin * hw];
        let ob = &mut out[b * d.cout * hw..(b + 1) * d.cout * hw];
        fill_bias(ob, bias, d.cout, hw);
        T::gemm(false, false, d.cout, hw, d.cin, weight, xb, bias_beta(bias), ob);
    }
}

pub fn pointwise_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    gout: &[T],
    d: &ConvDims,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let hw = d.h * d.w;
    for b in 0..d.batch {
        let gb = &gout[b * d.cout * hw..(b + 1) * d.cout * hw];
        if let Some(dw) = dw.as_deref_mut() {
            let xb = &x[b * d.cin * hw..(b + 1) * d.cin * hw];
            T::gemm(false, true, d.cout, d.cin, hw, gb, xb, T::one(), dw);
        }
        if let Some(db) = db.as_deref_mut() {
            accumulate_bias_grad(gb, d.cout, hw, db);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxb = &mut dx[b * d.cin * hw..(b + 1) * d.cin * hw];
            T::gemm(true, false, d.cin, hw, d.cout, weight, gb, T::one(), dxb);
        }
    }
}

fn fill_bias<T: Scalar>(out: &mut [T], bias: Option<&[T]>, cout: usize, hw: usize) {
    if let Some(bias) = bias {
        for co in 0..cout {
            out[co * hw..(co + 1) * hw].fill(bias[co]);
        }
    }
}

fn bias_beta<T: Scalar>(bias: Option<&[T]>) -> T {
    if bias.is_some() {
        T::one()
    } else {
        T::zero()
    }
}

fn accumulate_bias_grad<T: Scalar>(gb: &[T], cout: usize, hw: usize, db: &mut [T]) {
    for co in 0..cout {
        let s: T = gb[co * hw..(co + 1) * hw].iter().copied().sum();
        db[co] = db[co] + s;
    }
}

pub fn avgpool2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, out: &mut [T]) {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    for p in 0..planes {
        let xp = &x[p * h * w..(p + 1) * h * w];
        let op = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            for xo in 0..wo {
                let i = 2 * y * w + 2 * xo;
                op[y * wo + xo] = (xp[i] + xp[i + 1] + xp[i + w] + xp[i + w + 1]) * quarter;
            }
        }
    }
}

pub fn avgpool2_backward<T: Scalar>(gout: &[T], planes: usize, h: usize, w: usize, dx: &mut [T]) {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    for p in 0..planes {
        let gp = &gout[p * ho * wo..(p + 1) * ho * wo];
        let dp = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..ho {
            for xo in 0..wo {
                let g = gp[y * wo + xo] * quarter;
                let i = 2 * y * w + 2 * xo;
                for j in [i, i + 1, i + w, i + w + 1] {
                    dp[j] = dp[j] + g;
                }
            }
        }
    }
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, factor: usize, out: &mut [T]) {
    let (ho, wo) = (h * factor, w * factor);
    for p in 0..planes {
        let xp = &x[p * h * w..(p + 1) * h * w];
        let op = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            let src = &xp[(y / factor) * w..(y / factor + 1) * w];
            let dst = &mut op[y * wo..(y + 1) * wo];
            for (xo, d) in dst.iter_mut().enumerate() {
                *d = src[xo / factor];
            }
        }
    }
}

pub fn upsample_backward<T: Scalar>(gout: &[T], planes: usize, h: usize, w: usize, factor: usize, dx: &mut [T]) {
    let (ho, wo) = (h * factor, w * factor);
    for p in 0..planes {
        let gp = &gout[p * ho * wo..(p + 1) * ho * wo];
        let dp = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..ho {
            let src = &gp[y * wo..(y + 1) * wo];
            let dst = &mut dp[(y / factor) * w..(y / factor + 1) * w];
            for (xo, &g) in src.iter().enumerate() {
                dst[xo / factor] = dst[xo / factor] + g;
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let three = T::lit(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + three * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}
