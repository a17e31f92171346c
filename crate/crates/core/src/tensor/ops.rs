use super::{Result, Scalar, Shape, Tensor, TensorError};

/// `x` for `x > 0`, `alpha * (e^x - 1)` otherwise.
pub fn elu_forward<T: Scalar>(x: &Tensor<T>, alpha: T) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { alpha * v.exp_m1() })
}

/// Upstream gradient times `1` (for `x > 0`) or `alpha * e^x`.
pub fn elu_backward<T: Scalar>(grad_out: &Tensor<T>, x: &Tensor<T>, alpha: T) -> Result<Tensor<T>> {
    x.shape().expect_eq(&grad_out.shape(), "elu_backward")?;
    let data = grad_out
        .data()
        .iter()
        .zip(x.data())
        .map(|(&g, &v)| if v > T::ZERO { g } else { g * alpha * v.exp() })
        .collect();
    Ok(Tensor::from_parts_unchecked(x.shape(), data))
}

fn check_shuffle_factor(op: &'static str, m: usize) -> Result<()> {
    if m == 0 {
        return Err(TensorError::InvalidArgument {
            op,
            msg: "upscale factor must be at least 1".into(),
        });
    }
    Ok(())
}

/// Sub-pixel rearrangement `(n, c*m*m, h, w) -> (n, c, h*m, w*m)`:
/// `out[n,o,y,x] = in[n, o*m*m + (y%m)*m + x%m, y/m, x/m]`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    let op = "pixel_shuffle";
    check_shuffle_factor(op, m)?;
    let s = x.shape();
    let mm = m * m;
    if !s.c.is_multiple_of(mm) {
        return Err(TensorError::ChannelDivisibility {
            op,
            channels: s.c,
            factor: mm,
        });
    }
    let out_shape = Shape::new(s.n, s.c / mm, s.h * m, s.w * m);
    let mut data = Vec::with_capacity(s.numel());
    for n in 0..s.n {
        for o in 0..out_shape.c {
            for y in 0..out_shape.h {
                let (sy, dy) = (y / m, y % m);
                for xo in 0..out_shape.w {
                    let (sx, dx) = (xo / m, xo % m);
                    data.push(x.at(n, o * mm + dy * m + dx, sy, sx));
                }
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(out_shape, data))
}

/// Exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(y: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    let op = "pixel_unshuffle";
    check_shuffle_factor(op, m)?;
    let s = y.shape();
    if !s.h.is_multiple_of(m) || !s.w.is_multiple_of(m) {
        return Err(TensorError::SpatialDivisibility {
            op,
            h: s.h,
            w: s.w,
            factor: m,
        });
    }
    let mm = m * m;
    let out_shape = Shape::new(s.n, s.c * mm, s.h / m, s.w / m);
    let mut data = Vec::with_capacity(s.numel());
    for n in 0..s.n {
        for c in 0..out_shape.c {
            let (o, sub) = (c / mm, c % mm);
            let (dy, dx) = (sub / m, sub % m);
            for yy in 0..out_shape.h {
                for xx in 0..out_shape.w {
                    data.push(y.at(n, o, yy * m + dy, xx * m + dx));
                }
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(out_shape, data))
}

pub fn pixel_shuffle_backward<T: Scalar>(grad_out: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    pixel_unshuffle(grad_out, m)
}

pub fn pixel_unshuffle_backward<T: Scalar>(grad_out: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    pixel_shuffle(grad_out, m)
}

/// Concatenation along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let op = "concat_channels";
    let (sa, sb) = (a.shape(), b.shape());
    Shape::new(sa.n, 1, sa.h, sa.w).expect_eq(&Shape::new(sb.n, 1, sb.h, sb.w), op)?;
    let out_shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data()[n * sa.item()..(n + 1) * sa.item()]);
        data.extend_from_slice(&b.data()[n * sb.item()..(n + 1) * sb.item()]);
    }
    Ok(Tensor::from_parts_unchecked(out_shape, data))
}

/// Splits off the first `c_first` channels.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, c_first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = x.shape();
    if c_first == 0 || c_first >= s.c {
        return Err(TensorError::InvalidArgument {
            op: "split_channels",
            msg: format!("split point {c_first} outside 1..{}", s.c),
        });
    }
    let sa = Shape::new(s.n, c_first, s.h, s.w);
    let sb = Shape::new(s.n, s.c - c_first, s.h, s.w);
    let mut a = Vec::with_capacity(sa.numel());
    let mut b = Vec::with_capacity(sb.numel());
    for n in 0..s.n {
        let item = &x.data()[n * s.item()..(n + 1) * s.item()];
        let (left, right) = item.split_at(sa.item());
        a.extend_from_slice(left);
        b.extend_from_slice(right);
    }
    Ok((
        Tensor::from_parts_unchecked(sa, a),
        Tensor::from_parts_unchecked(sb, b),
    ))
}

/// Routes the upstream gradient back to the two concatenated operands.
pub fn concat_channels_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    c_first: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    split_channels(grad_out, c_first)
}

pub fn split_channels_backward<T: Scalar>(
    grad_a: &Tensor<T>,
    grad_b: &Tensor<T>,
) -> Result<Tensor<T>> {
    concat_channels(grad_a, grad_b)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.shape().expect_eq(&b.shape(), "add")?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Ok(Tensor::from_parts_unchecked(a.shape(), data))
}

pub fn add_backward<T: Scalar>(grad_out: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (grad_out.clone(), grad_out.clone())
}

/// One of the eight symmetries of the square applied to every plane:
/// `t % 4` quarter turns counter-clockwise, preceded by a horizontal flip
/// when `t >= 4`.
pub fn dihedral<T: Scalar>(x: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
    check_dihedral(t)?;
    let flipped;
    let src = if t >= 4 {
        flipped = flip_horizontal(x);
        &flipped
    } else {
        x
    };
    Ok(rotate_ccw(src, t % 4))
}

/// Undoes [`dihedral`] with the same `t`.
pub fn dihedral_inverse<T: Scalar>(y: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
    check_dihedral(t)?;
    let r = rotate_ccw(y, (4 - t % 4) % 4);
    Ok(if t >= 4 { flip_horizontal(&r) } else { r })
}

fn check_dihedral(t: usize) -> Result<()> {
    if t >= 8 {
        return Err(TensorError::InvalidArgument {
            op: "dihedral",
            msg: format!("transform index {t} outside 0..8"),
        });
    }
    Ok(())
}

fn flip_horizontal<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let mut data = x.data().to_vec();
    for row in data.chunks_exact_mut(s.w) {
        row.reverse();
    }
    Tensor::from_parts_unchecked(s, data)
}

fn rotate_ccw<T: Scalar>(x: &Tensor<T>, quarter_turns: usize) -> Tensor<T> {
    let s = x.shape();
    let (h, w) = (s.h, s.w);
    let out_shape = match quarter_turns {
        1 | 3 => Shape::new(s.n, s.c, w, h),
        _ => s,
    };
    if quarter_turns == 0 {
        return x.clone();
    }
    let mut data = Vec::with_capacity(s.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = x.plane(n, c);
            for y in 0..out_shape.h {
                for xo in 0..out_shape.w {
                    let (sy, sx) = match quarter_turns {
                        1 => (xo, w - 1 - y),
                        2 => (h - 1 - y, w - 1 - xo),
                        _ => (h - 1 - xo, y),
                    };
                    data.push(plane[sy * w + sx]);
                }
            }
        }
    }
    Tensor::from_parts_unchecked(out_shape, data)
}
