//! Convolution kernels over `[T, F, C]` row-major tensors.
//!
//! All variants reduce to three GEMM-backed primitives:
//!
//! * gather (im2col + GEMM): convolution forward, transposed-conv input grad
//! * scatter (GEMM + col2im): convolution input grad, transposed-conv forward
//! * weight grad (im2col^T GEMM): both directions
//!
//! The transposed convolution is literally the adjoint of the convolution
//! with the same stride and padding rules, so `<conv(x,w), y> == <x, convt(y,w)>`
//! holds to rounding error by construction.
//!
//! Padding is zero "same" padding in ceil mode: length `L` with stride `s`
//! maps to `ceil(L/s)`, extra padding goes to the trailing edge.

use super::{Elem, Tensor};

/// Output spatial dims of a strided same-padded 2D convolution.
pub fn conv2d_output_dims(t: usize, f: usize, st: usize, sf: usize) -> (usize, usize) {
    (t.div_ceil(st), f.div_ceil(sf))
}

/// Output length of a strided same-padded 1D convolution.
pub fn conv1d_output_len(t: usize, s: usize) -> usize {
    t.div_ceil(s)
}

fn pad_begin(len: usize, k: usize, s: usize) -> isize {
    let out = len.div_ceil(s);
    let total = ((out - 1) * s + k) as isize - len as isize;
    total.max(0) / 2
}

/// Fills the im2col matrix: rows are output positions, columns are
/// `(dt, df, cin)` taps. Writes every position (zeros for out-of-range taps)
/// so the scratch buffer needs no pre-clearing.
fn im2col_into<T: Elem>(
    col: &mut [T],
    x: &[T],
    (t_in, f_in, cin): (usize, usize, usize),
    (kt, kf): (usize, usize),
    (st, sf): (usize, usize),
    (t_out, f_out): (usize, usize),
) {
    let k = kt * kf * cin;
    debug_assert_eq!(col.len(), t_out * f_out * k);
    let pt = pad_begin(t_in, kt, st);
    let pf = pad_begin(f_in, kf, sf);
    for to in 0..t_out {
        for fo in 0..f_out {
            let row = (to * f_out + fo) * k;
            for dt in 0..kt {
                let ti = (to * st) as isize - pt + dt as isize;
                for df in 0..kf {
                    let dst = row + (dt * kf + df) * cin;
                    let fi = (fo * sf) as isize - pf + df as isize;
                    if ti < 0 || ti >= t_in as isize || fi < 0 || fi >= f_in as isize {
                        col[dst..dst + cin].fill(T::ZERO);
                    } else {
                        let src = ((ti as usize * f_in) + fi as usize) * cin;
                        col[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
                    }
                }
            }
        }
    }
}

/// Scatters a col matrix back onto the input grid (transpose of [`im2col`]).
fn col2im<T: Elem>(
    col: &[T],
    (t_in, f_in, cin): (usize, usize, usize),
    (kt, kf): (usize, usize),
    (st, sf): (usize, usize),
    (t_out, f_out): (usize, usize),
) -> Vec<T> {
    let k = kt * kf * cin;
    let mut x = vec![T::ZERO; t_in * f_in * cin];
    let pt = pad_begin(t_in, kt, st);
    let pf = pad_begin(f_in, kf, sf);
    for to in 0..t_out {
        for fo in 0..f_out {
            let row = (to * f_out + fo) * k;
            for dt in 0..kt {
                let ti = (to * st) as isize - pt + dt as isize;
                if ti < 0 || ti >= t_in as isize {
                    continue;
                }
                for df in 0..kf {
                    let fi = (fo * sf) as isize - pf + df as isize;
                    if fi < 0 || fi >= f_in as isize {
                        continue;
                    }
                    let dst = ((ti as usize * f_in) + fi as usize) * cin;
                    let src = row + (dt * kf + df) * cin;
                    for c in 0..cin {
                        x[dst + c] += col[src + c];
                    }
                }
            }
        }
    }
    x
}

fn check_conv_shapes<T: Elem>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) {
    assert_eq!(x.rank(), 3, "conv input must be [T, F, C], got {:?}", x.shape());
    assert_eq!(w.rank(), 4, "conv kernel must be [kt, kf, Cin, Cout], got {:?}", w.shape());
    assert_eq!(
        x.shape()[2],
        w.shape()[2],
        "conv channel mismatch: input {:?} vs kernel {:?}",
        x.shape(),
        w.shape()
    );
    if let Some(b) = b {
        assert_eq!(
            b.len(),
            w.shape()[3],
            "bias length {} does not match output channels {}",
            b.len(),
            w.shape()[3]
        );
    }
}

/// `y[t', f', co] = sum x[..] * w[dt, df, ci, co] + b[co]` with same padding.
pub(crate) fn conv2d_forward<T: Elem>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    (st, sf): (usize, usize),
) -> Tensor<T> {
    check_conv_shapes(x, w, b);
    let (t_in, f_in, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kt, kf, cout) = (w.shape()[0], w.shape()[1], w.shape()[3]);
    let (t_out, f_out) = conv2d_output_dims(t_in, f_in, st, sf);
    let k = kt * kf * cin;
    let m = t_out * f_out;

    let mut y = vec![T::ZERO; m * cout];
    T::with_scratch(m * k, |col| {
        im2col_into(col, x.data(), (t_in, f_in, cin), (kt, kf), (st, sf), (t_out, f_out));
        T::gemm(
            m, k, cout,
            T::ONE,
            col, k as isize, 1,
            w.data(), cout as isize, 1,
            T::ZERO,
            &mut y, cout as isize, 1,
        );
    });
    if let Some(b) = b {
        for row in y.chunks_mut(cout) {
            for (v, bias) in row.iter_mut().zip(b.data()) {
                *v += *bias;
            }
        }
    }
    Tensor::new(&[t_out, f_out, cout], y)
}

/// Gradient of a convolution w.r.t. its input: scatter `gy` back through `w`.
pub(crate) fn conv2d_input_grad<T: Elem>(
    gy: &Tensor<T>,
    w: &Tensor<T>,
    (st, sf): (usize, usize),
    (t_in, f_in): (usize, usize),
) -> Tensor<T> {
    let (kt, kf, cin, cout) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (t_out, f_out) = (gy.shape()[0], gy.shape()[1]);
    debug_assert_eq!(gy.shape()[2], cout);
    let k = kt * kf * cin;
    let m = t_out * f_out;

    // col_g[m, k] = gy[m, cout] . w^T[cout, k]
    let gx = T::with_scratch(m * k, |col_g| {
        T::gemm(
            m, cout, k,
            T::ONE,
            gy.data(), cout as isize, 1,
            w.data(), 1, cout as isize,
            T::ZERO,
            col_g, k as isize, 1,
        );
        col2im(col_g, (t_in, f_in, cin), (kt, kf), (st, sf), (t_out, f_out))
    });
    Tensor::new(&[t_in, f_in, cin], gx)
}

/// Accumulates kernel and bias gradients: `dw += im2col(x)^T . gy`, `db += sum gy`.
pub(crate) fn conv2d_param_grads<T: Elem>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    (st, sf): (usize, usize),
    (kt, kf): (usize, usize),
    dw: &mut [T],
    db: Option<&mut [T]>,
) {
    let (t_in, f_in, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (t_out, f_out, cout) = (gy.shape()[0], gy.shape()[1], gy.shape()[2]);
    let k = kt * kf * cin;
    let m = t_out * f_out;
    debug_assert_eq!(dw.len(), k * cout);

    T::with_scratch(m * k, |col| {
        im2col_into(col, x.data(), (t_in, f_in, cin), (kt, kf), (st, sf), (t_out, f_out));
        // dw[k, cout] += col^T[k, m] . gy[m, cout]
        T::gemm(
            k, m, cout,
            T::ONE,
            col, 1, k as isize,
            gy.data(), cout as isize, 1,
            T::ONE,
            dw, cout as isize, 1,
        );
    });
    if let Some(db) = db {
        debug_assert_eq!(db.len(), cout);
        for row in gy.data().chunks(cout) {
            for (d, g) in db.iter_mut().zip(row) {
                *d += *g;
            }
        }
    }
}

/// Transposed convolution: the adjoint of [`conv2d_forward`] with the same
/// stride. Kernel layout is `[kt, kf, Cout, Cin]`; input `[T, F, Cin]` maps
/// to `[T*st, F*sf, Cout]`.
pub(crate) fn convt2d_forward<T: Elem>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    (st, sf): (usize, usize),
) -> Tensor<T> {
    assert_eq!(x.rank(), 3, "convt input must be [T, F, C], got {:?}", x.shape());
    assert_eq!(w.rank(), 4, "convt kernel must be [kt, kf, Cout, Cin], got {:?}", w.shape());
    assert_eq!(
        x.shape()[2],
        w.shape()[3],
        "convt channel mismatch: input {:?} vs kernel {:?}",
        x.shape(),
        w.shape()
    );
    let (t, f, _cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let cout = w.shape()[2];
    if let Some(b) = b {
        assert_eq!(b.len(), cout, "bias length {} vs output channels {}", b.len(), cout);
    }
    // Viewed as the underlying convolution, w is [kt, kf, Cin=cout, Cout=cin]
    // mapping the (t*st, f*sf) grid down to (t, f); we run its input grad.
    let mut y = conv2d_input_grad(x, w, (st, sf), (t * st, f * sf));
    if let Some(b) = b {
        let data = y.data_mut();
        for row in data.chunks_mut(cout) {
            for (v, bias) in row.iter_mut().zip(b.data()) {
                *v += *bias;
            }
        }
    }
    y
}

/// Gradient of [`convt2d_forward`] w.r.t. its input.
pub(crate) fn convt2d_input_grad<T: Elem>(
    gy: &Tensor<T>,
    w: &Tensor<T>,
    (st, sf): (usize, usize),
) -> Tensor<T> {
    conv2d_forward(gy, w, None, (st, sf))
}

/// Accumulates transposed-conv kernel/bias gradients.
pub(crate) fn convt2d_param_grads<T: Elem>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    (st, sf): (usize, usize),
    (kt, kf): (usize, usize),
    dw: &mut [T],
    db: Option<&mut [T]>,
) {
    // The underlying convolution runs gy -> x, so the roles swap.
    conv2d_param_grads(gy, x, (st, sf), (kt, kf), dw, None);
    if let Some(db) = db {
        let cout = gy.shape()[2];
        debug_assert_eq!(db.len(), cout);
        for row in gy.data().chunks(cout) {
            for (d, g) in db.iter_mut().zip(row) {
                *d += *g;
            }
        }
    }
}
