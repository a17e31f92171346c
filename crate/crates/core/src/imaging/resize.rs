use super::ImageF32;

const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5`.
fn keys(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((KEYS_A + 2.0) * x - (KEYS_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((KEYS_A * x - 5.0 * KEYS_A) * x + 8.0 * KEYS_A) * x - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Source taps `(index, weight)` for every output position along one axis.
///
/// Output `i` samples the input at `(i + 0.5) * in / out - 0.5`. When
/// shrinking, the kernel is stretched by `in / out` so it also low-passes.
/// Out-of-range taps are clamped to the edge; weights are normalized to sum
/// to one.
fn contributions(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = in_len as f64 / out_len as f64;
    let stretch = ratio.max(1.0);
    let support = 2.0 * stretch;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * ratio - 0.5;
            let lo = (center - support).floor() as i64;
            let hi = (center + support).ceil() as i64;
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity((hi - lo + 1) as usize);
            let mut total = 0.0;
            for j in lo..=hi {
                let w = keys((center - j as f64) / stretch);
                if w == 0.0 {
                    continue;
                }
                let idx = j.clamp(0, in_len as i64 - 1) as usize;
                total += w;
                match taps.iter_mut().find(|(k, _)| *k == idx) {
                    Some(t) => t.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Separable bicubic resampling to `out_w x out_h`, clamped to `[0, 1]`.
///
/// Panics if either output dimension is zero.
pub fn bicubic_resize(img: &ImageF32, out_w: usize, out_h: usize) -> ImageF32 {
    assert!(
        out_w >= 1 && out_h >= 1,
        "output dimensions must be at least 1"
    );
    let (in_w, in_h) = (img.width, img.height);
    let cols = contributions(in_w, out_w);
    let rows = contributions(in_h, out_h);

    // Horizontal pass into an f64 buffer of in_h x out_w.
    let mut tmp = vec![0.0f64; in_h * out_w * 3];
    for y in 0..in_h {
        let src = &img.data[y * in_w * 3..(y + 1) * in_w * 3];
        let dst = &mut tmp[y * out_w * 3..(y + 1) * out_w * 3];
        for (x, taps) in cols.iter().enumerate() {
            let mut acc = [0.0f64; 3];
            for &(j, w) in taps {
                for c in 0..3 {
                    acc[c] += w * src[j * 3 + c] as f64;
                }
            }
            dst[x * 3..x * 3 + 3].copy_from_slice(&acc);
        }
    }

    let mut data = vec![0.0f32; out_h * out_w * 3];
    for (y, taps) in rows.iter().enumerate() {
        let dst = &mut data[y * out_w * 3..(y + 1) * out_w * 3];
        for (i, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for &(j, w) in taps {
                acc += w * tmp[j * out_w * 3 + i];
            }
            *d = acc.clamp(0.0, 1.0) as f32;
        }
    }
    ImageF32 {
        width: out_w,
        height: out_h,
        data,
    }
}
