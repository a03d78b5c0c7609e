use super::tape::{Op, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) struct Wanted {
    pub input: bool,
    pub weight: bool,
    pub bias: bool,
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }

    fn out_len(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `[lo, hi)` whose tap `kx` lands inside the image.
    fn valid_ox(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).div_ceil(self.stride).min(self.ow);
        let hi = (self.w + self.pad).saturating_sub(kx).div_ceil(self.stride).min(self.ow);
        (lo, hi.max(lo))
    }
}

/// Output extent of a convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (stride > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

fn geometry(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<(usize, usize, Geometry)> {
    let [n, c, h, w] = input[..] else {
        return Err(Error::shape(format!("conv2d input must be NCHW, got {input:?}")));
    };
    let [o, i, kh, kw] = weight[..] else {
        return Err(Error::shape(format!("conv2d weight must be OIKK, got {weight:?}")));
    };
    if i != c {
        return Err(Error::shape(format!(
            "conv2d: input has {c} channels but weight expects {i}"
        )));
    }
    if kh != kw {
        return Err(Error::shape(format!("conv2d: non-square kernel {kh}x{kw}")));
    }
    let (Some(oh), Some(ow)) = (conv_out_dim(h, kh, stride, pad), conv_out_dim(w, kw, stride, pad)) else {
        return Err(Error::shape(format!(
            "conv2d: kernel {kh} with pad {pad}, stride {stride} does not fit {h}x{w}"
        )));
    };
    Ok((
        n,
        o,
        Geometry {
            c,
            h,
            w,
            k: kh,
            stride,
            pad,
            oh,
            ow,
        },
    ))
}

/// Unfolds one `C x H x W` image into a `(C*K*K) x (OH*OW)` patch matrix.
fn im2col<T: Scalar>(x: &[T], g: Geometry, cols: &mut [T]) {
    let l = g.out_len();
    for ch in 0..g.c {
        let plane = &x[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ch * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * l..(row + 1) * l];
                let (lo, hi) = g.valid_ox(kx);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    let start = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        out_row[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (slot, v) in out_row[lo..hi].iter_mut().zip(src[start..].iter().step_by(g.stride)) {
                            *slot = *v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im<T: Scalar>(cols: &[T], g: Geometry, dx: &mut [T]) {
    let l = g.out_len();
    for ch in 0..g.c {
        let plane = &mut dx[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ch * g.k + ky) * g.k + kx;
                let src = &cols[row * l..(row + 1) * l];
                let (lo, hi) = g.valid_ox(kx);
                if lo >= hi {
                    continue;
                }
                let start = lo * g.stride + kx - g.pad;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let from = &src[oy * g.ow + lo..oy * g.ow + hi];
                    for (d, v) in dst[start..].iter_mut().step_by(g.stride).zip(from) {
                        *d += *v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, o, g) = geometry(input.shape(), weight.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(Error::shape(format!(
                "conv2d: bias shape {:?} for {o} output channels",
                b.shape()
            )));
        }
    }
    let (p, l) = (g.patch_len(), g.out_len());
    let in_size = g.c * g.h * g.w;
    let mut out = vec![T::zero(); n * o * l];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); p * l] };
    for b in 0..n {
        let x = &input.data()[b * in_size..(b + 1) * in_size];
        let y = &mut out[b * o * l..(b + 1) * o * l];
        if let Some(bias) = bias {
            for (row, &bv) in y.chunks_mut(l).zip(bias.data()) {
                row.fill(bv);
            }
        }
        let patches: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(x, g, &mut cols);
            &cols
        };
        T::gemm(
            o,
            p,
            l,
            T::one(),
            weight.data(),
            (p as isize, 1),
            patches,
            (l as isize, 1),
            T::one(),
            y,
            (l as isize, 1),
        );
    }
    Tensor::new(vec![n, o, g.oh, g.ow], out)
}

pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
    gout: &[T],
    wanted: Wanted,
) -> ConvGrads<T> {
    let (n, o, g) = geometry(input.shape(), weight.shape(), stride, pad).expect("validated in forward");
    let (p, l) = (g.patch_len(), g.out_len());
    let in_size = g.c * g.h * g.w;

    let mut dx = wanted.input.then(|| vec![T::zero(); input.numel()]);
    let mut dw = wanted.weight.then(|| vec![T::zero(); weight.numel()]);
    let mut db = wanted.bias.then(|| vec![T::zero(); o]);
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { p * l }];
    let mut dcols = vec![T::zero(); if g.is_pointwise() || dx.is_none() { 0 } else { p * l }];

    for b in 0..n {
        let gy = &gout[b * o * l..(b + 1) * o * l];
        if let Some(db) = db.as_mut() {
            for (acc, row) in db.iter_mut().zip(gy.chunks(l)) {
                *acc += row.iter().copied().sum::<T>();
            }
        }
        let x = &input.data()[b * in_size..(b + 1) * in_size];
        if let Some(dw) = dw.as_mut() {
            let patches: &[T] = if g.is_pointwise() {
                x
            } else {
                im2col(x, g, &mut cols);
                &cols
            };
            // dW (O x P) += dY (O x L) * patches^T (L x P)
            T::gemm(
                o,
                l,
                p,
                T::one(),
                gy,
                (l as isize, 1),
                patches,
                (1, l as isize),
                T::one(),
                dw,
                (p as isize, 1),
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_size..(b + 1) * in_size];
            // dPatches (P x L) = W^T (P x O) * dY (O x L)
            if g.is_pointwise() {
                T::gemm(
                    p,
                    o,
                    l,
                    T::one(),
                    weight.data(),
                    (1, p as isize),
                    gy,
                    (l as isize, 1),
                    T::one(),
                    dxb,
                    (l as isize, 1),
                );
            } else {
                T::gemm(
                    p,
                    o,
                    l,
                    T::one(),
                    weight.data(),
                    (1, p as isize),
                    gy,
                    (l as isize, 1),
                    T::zero(),
                    &mut dcols,
                    (l as isize, 1),
                );
                col2im(&dcols, g, dxb);
            }
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

impl<T: Scalar> Tape<T> {
    /// 2-D cross-correlation of an NCHW input with an OIKK weight.
    ///
    /// Zero padding of `pad` pixels on every side; output extent is
    /// `(in + 2 * pad - K) / stride + 1`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let out = conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut parents = vec![input, weight];
        parents.extend(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            &parents,
        ))
    }
}
