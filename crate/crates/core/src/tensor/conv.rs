//! Stride-1 "same" convolution (1x1 and 3x3) with analytic adjoints.
//!
//! Every output element is accumulated in `f64` in a fixed order and rounded
//! once, so results are bit-identical across runs and thread counts.

use rayon::prelude::*;

use super::{Axis, Result, Scalar, Shape, Tensor, TensorError};

/// Kernel geometry. Only the two stride-1, size-preserving configurations
/// exist: 1x1 without padding and 3x3 with one pixel of zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kernel: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const POINTWISE: ConvSpec = ConvSpec {
        kernel: 1,
        padding: 0,
    };
    pub const SAME3: ConvSpec = ConvSpec {
        kernel: 3,
        padding: 1,
    };

    pub fn for_kernel(kernel: usize) -> Result<Self> {
        let spec = ConvSpec {
            kernel,
            padding: kernel / 2,
        };
        spec.check("ConvSpec::for_kernel")?;
        Ok(spec)
    }

    fn check(&self, op: &'static str) -> Result<()> {
        if *self == Self::POINTWISE || *self == Self::SAME3 {
            Ok(())
        } else {
            Err(TensorError::UnsupportedKernel {
                op,
                kernel: self.kernel,
                padding: self.padding,
            })
        }
    }

    fn taps(&self) -> usize {
        self.kernel * self.kernel
    }
}

/// Gradients of a convolution with respect to its three operands.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

// Output rows computed together in the accumulation kernel.
const ROWS: usize = 4;
// Output columns per accumulation tile.
const TILE: usize = 256;

fn check_operands<T: Scalar>(
    op: &'static str,
    input: Shape,
    weight: &Tensor<T>,
    spec: ConvSpec,
) -> Result<()> {
    spec.check(op)?;
    let ws = weight.shape();
    if ws.h != spec.kernel {
        return Err(TensorError::DimMismatch {
            op,
            axis: Axis::Height,
            expected: spec.kernel,
            found: ws.h,
        });
    }
    if ws.w != spec.kernel {
        return Err(TensorError::DimMismatch {
            op,
            axis: Axis::Width,
            expected: spec.kernel,
            found: ws.w,
        });
    }
    if input.c != ws.c {
        return Err(TensorError::DimMismatch {
            op,
            axis: Axis::Channel,
            expected: ws.c,
            found: input.c,
        });
    }
    Ok(())
}

/// `out[n,o,y,x] = bias[o] + sum_{i,r,s} in[n,i,y+r-p,x+s-p] * w[o,i,r,s]`,
/// with zeros outside the input.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let op = "conv2d_forward";
    check_operands(op, input.shape(), weight, spec)?;
    let c_out = weight.shape().n;
    if bias.len() != c_out {
        return Err(TensorError::DimMismatch {
            op,
            axis: Axis::Channel,
            expected: c_out,
            found: bias.len(),
        });
    }
    let bias: Vec<f64> = bias.iter().map(|b| b.to_f64()).collect();
    Ok(correlate(input, weight.data(), c_out, &bias, spec))
}

/// Core correlation: `weight` is `(c_out, c_in * k * k)` row-major.
fn correlate<T: Scalar>(
    input: &Tensor<T>,
    weight: &[T],
    c_out: usize,
    bias: &[f64],
    spec: ConvSpec,
) -> Tensor<T> {
    let s = input.shape();
    let hw = s.plane();
    let inner = s.c * spec.taps();
    let mut out = vec![T::ZERO; s.n * c_out * hw];

    out.par_chunks_mut(c_out * hw)
        .enumerate()
        .for_each(|(n, out_n)| {
            let item = &input.data()[n * s.item()..(n + 1) * s.item()];
            let owned;
            let col: &[T] = if spec.kernel == 1 {
                item
            } else {
                owned = im2col(item, s, spec);
                &owned
            };
            out_n
                .par_chunks_mut(ROWS * hw)
                .enumerate()
                .for_each(|(blk, out_blk)| {
                    let r0 = blk * ROWS;
                    let rows = out_blk.len() / hw;
                    let a = &weight[r0 * inner..(r0 + rows) * inner];
                    accumulate_rows(
                        a,
                        rows,
                        inner,
                        col,
                        hw,
                        &bias[r0..r0 + rows],
                        |r, p0, acc| {
                            for (dst, &v) in out_blk[r * hw + p0..].iter_mut().zip(acc) {
                                *dst = T::from_f64(v);
                            }
                        },
                    );
                });
        });
    Tensor::from_parts_unchecked(Shape::new(s.n, c_out, s.h, s.w), out)
}

/// Unfolds one batch item into a `(c * k * k, h * w)` patch matrix.
fn im2col<T: Scalar>(item: &[T], s: Shape, spec: ConvSpec) -> Vec<T> {
    let (h, w, k, p) = (s.h, s.w, spec.kernel, spec.padding as isize);
    let hw = h * w;
    let mut col = vec![T::ZERO; s.c * k * k * hw];
    for c in 0..s.c {
        let plane = &item[c * hw..(c + 1) * hw];
        for r in 0..k {
            for t in 0..k {
                let row = &mut col[((c * k + r) * k + t) * hw..][..hw];
                let dy = r as isize - p;
                let dx = t as isize - p;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize) as usize;
                    if x_lo < x_hi {
                        let s_lo = (x_lo as isize + dx) as usize;
                        dst[x_lo..x_hi].copy_from_slice(&src[s_lo..s_lo + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }
    col
}

/// `acc[r][p] = init[r] + sum_j a[r, j] * b[j, p]` for up to [`ROWS`] rows,
/// handed to `emit(row, first_column, values)` one tile at a time.
///
/// The sum over `j` runs in ascending order for every element.
fn accumulate_rows<T: Scalar>(
    a: &[T],
    rows: usize,
    inner: usize,
    b: &[T],
    cols: usize,
    init: &[f64],
    mut emit: impl FnMut(usize, usize, &[f64]),
) {
    debug_assert!((1..=ROWS).contains(&rows));
    let a_rows: Vec<&[T]> = a.chunks_exact(inner).take(rows).collect();
    let mut packed = Vec::new();
    pack_rows(&a_rows, &mut packed);
    let mut acc = vec![0.0f64; ROWS * TILE];
    let mut p0 = 0;
    while p0 < cols {
        let len = (cols - p0).min(TILE);
        for r in 0..ROWS {
            acc[r * TILE..r * TILE + len].fill(if r < rows { init[r] } else { 0.0 });
        }
        // Reduction blocks keep the streamed rows of `b` cache resident.
        for (jb, chunk) in packed.chunks(REDUCTION_BLOCK).enumerate() {
            multiply_add(
                chunk,
                &b[jb * REDUCTION_BLOCK * cols + p0..],
                cols,
                len,
                &mut acc,
                TILE,
            );
        }
        for r in 0..rows {
            emit(r, p0, &acc[r * TILE..r * TILE + len]);
        }
        p0 += len;
    }
}

/// `packed[j][r] = rows[r][j]`, zero for `r >= rows.len()`.
fn pack_rows<T: Scalar>(rows: &[&[T]], packed: &mut Vec<[f64; ROWS]>) {
    let len = rows[0].len();
    packed.clear();
    packed.resize(len, [0.0; ROWS]);
    for (r, src) in rows.iter().enumerate() {
        for (w, &v) in packed.iter_mut().zip(&src[..len]) {
            w[r] = v.to_f64();
        }
    }
}

/// Columns per register-resident micro-tile.
const COLS: usize = 8;

const REDUCTION_BLOCK: usize = 128;

/// `acc[r * lda + c] += sum_j packed[j][r] * b[j * ldb + c]` for
/// `c < len`, adding the terms in ascending `j` onto the running value.
fn multiply_add<T: Scalar>(
    packed: &[[f64; ROWS]],
    b: &[T],
    ldb: usize,
    len: usize,
    acc: &mut [f64],
    lda: usize,
) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { multiply_add_avx2(packed, b, ldb, len, acc, lda) };
    }
    multiply_add_body(packed, b, ldb, len, acc, lda)
}

/// Same arithmetic as [`multiply_add_body`]; only instruction selection
/// differs.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn multiply_add_avx2<T: Scalar>(
    packed: &[[f64; ROWS]],
    b: &[T],
    ldb: usize,
    len: usize,
    acc: &mut [f64],
    lda: usize,
) {
    multiply_add_body(packed, b, ldb, len, acc, lda)
}

#[inline(always)]
fn multiply_add_body<T: Scalar>(
    packed: &[[f64; ROWS]],
    b: &[T],
    ldb: usize,
    len: usize,
    acc: &mut [f64],
    lda: usize,
) {
    let mut c = 0;
    while c + COLS <= len {
        let mut regs = [[0.0f64; COLS]; ROWS];
        for (r, reg) in regs.iter_mut().enumerate() {
            reg.copy_from_slice(&acc[r * lda + c..r * lda + c + COLS]);
        }
        for (j, w) in packed.iter().enumerate() {
            let src = &b[j * ldb + c..][..COLS];
            let x: [f64; COLS] = std::array::from_fn(|l| src[l].to_f64());
            for r in 0..ROWS {
                for l in 0..COLS {
                    regs[r][l] += w[r] * x[l];
                }
            }
        }
        for (r, reg) in regs.iter().enumerate() {
            acc[r * lda + c..r * lda + c + COLS].copy_from_slice(reg);
        }
        c += COLS;
    }
    for c in c..len {
        let mut sums: [f64; ROWS] = std::array::from_fn(|r| acc[r * lda + c]);
        for (j, w) in packed.iter().enumerate() {
            let x = b[j * ldb + c].to_f64();
            for r in 0..ROWS {
                sums[r] += w[r] * x;
            }
        }
        for r in 0..ROWS {
            acc[r * lda + c] = sums[r];
        }
    }
}

/// Adjoints of [`conv2d_forward`].
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: ConvSpec,
) -> Result<ConvGrads<T>> {
    let op = "conv2d_backward";
    let s = input.shape();
    check_operands(op, s, weight, spec)?;
    let ws = weight.shape();
    let (c_out, c_in, k) = (ws.n, ws.c, spec.kernel);
    Shape::new(s.n, c_out, s.h, s.w).expect_eq(&grad_out.shape(), op)?;

    // Input adjoint: correlation of grad_out with the spatially flipped,
    // channel-transposed kernel. Valid because padding == (k - 1) / 2.
    let taps = spec.taps();
    let mut flipped = vec![T::ZERO; weight.len()];
    for o in 0..c_out {
        for i in 0..c_in {
            for t in 0..taps {
                flipped[(i * c_out + o) * taps + (taps - 1 - t)] =
                    weight.data()[(o * c_in + i) * taps + t];
            }
        }
    }
    let grad_input = correlate(grad_out, &flipped, c_in, &vec![0.0; c_in], spec);

    let grad_weight = weight_adjoint(grad_out, input, c_out, spec);

    let grad_bias = (0..c_out)
        .map(|o| {
            let mut acc = 0.0f64;
            for n in 0..s.n {
                acc += sum_f64(grad_out.plane(n, o));
            }
            T::from_f64(acc)
        })
        .collect();
    debug_assert_eq!(grad_input.shape(), s);

    Ok(ConvGrads {
        input: grad_input,
        weight: Tensor::from_parts_unchecked(Shape::new(c_out, c_in, k, k), grad_weight),
        bias: grad_bias,
    })
}

/// `gw[o, j] = sum_n sum_p g[n, o, p] * col_n[j, p]`, each element summed
/// sequentially over `(n, p)` in ascending order.
///
/// Computed as `gw^T`: patch rows are the register-blocked rows and the
/// small pixel-major gradient `g_n^T` is the streamed operand.
fn weight_adjoint<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    c_out: usize,
    spec: ConvSpec,
) -> Vec<T> {
    let s = input.shape();
    let hw = s.plane();
    let inner = s.c * spec.taps();
    let cols: Vec<Vec<T>> = if spec.kernel == 1 {
        Vec::new()
    } else {
        (0..s.n)
            .into_par_iter()
            .map(|n| im2col(&input.data()[n * s.item()..(n + 1) * s.item()], s, spec))
            .collect()
    };
    let col_of = |n: usize| -> &[T] {
        if spec.kernel == 1 {
            &input.data()[n * s.item()..(n + 1) * s.item()]
        } else {
            &cols[n]
        }
    };
    // Columns padded with zeros to whole micro-tiles.
    let ld = c_out.div_ceil(COLS) * COLS;
    let grad_t: Vec<Vec<T>> = (0..s.n)
        .map(|n| {
            let mut t = vec![T::ZERO; hw * ld];
            for o in 0..c_out {
                for (p, &v) in grad_out.plane(n, o).iter().enumerate() {
                    t[p * ld + o] = v;
                }
            }
            t
        })
        .collect();

    let mut gw_t = vec![0.0f64; inner * ld];
    gw_t.par_chunks_mut(ROWS * ld)
        .enumerate()
        .for_each(|(blk, out)| {
            let j0 = blk * ROWS;
            let rows = out.len() / ld;
            let mut acc = vec![0.0f64; ROWS * ld];
            let mut packed = Vec::with_capacity(hw);
            for (n, g_t) in grad_t.iter().enumerate() {
                let col = col_of(n);
                let col_rows: Vec<&[T]> = (0..rows)
                    .map(|r| &col[(j0 + r) * hw..(j0 + r + 1) * hw])
                    .collect();
                pack_rows(&col_rows, &mut packed);
                multiply_add(&packed, g_t, ld, ld, &mut acc, ld);
            }
            out.copy_from_slice(&acc[..rows * ld]);
        });
    let mut gw = vec![T::ZERO; c_out * inner];
    for (j, row) in gw_t.chunks_exact(ld).enumerate() {
        for (o, &v) in row[..c_out].iter().enumerate() {
            gw[o * inner + j] = T::from_f64(v);
        }
    }
    gw
}

const LANES: usize = 8;

fn sum_f64<T: Scalar>(v: &[T]) -> f64 {
    let mut lanes = [0.0f64; LANES];
    let chunks = v.chunks_exact(LANES);
    let rem = chunks.remainder();
    for c in chunks {
        for l in 0..LANES {
            lanes[l] += c[l].to_f64();
        }
    }
    let tail: f64 = rem.iter().map(|x| x.to_f64()).sum();
    lanes.iter().sum::<f64>() + tail
}
