//! Gather index tables for padding, cropping, window partitioning and the
//! shifted-to-aligned band mapping on channel-last `[H, W, C]` tensors.

use std::sync::Arc;

/// Symmetric reflection (edge pixel not repeated) of `i` into `0..n`.
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// `[h, w, c]` to `[ph, pw, c]` with reflect padding at the bottom and right.
pub fn pad_index(h: usize, w: usize, c: usize, ph: usize, pw: usize) -> Arc<Vec<i64>> {
    let mut idx = Vec::with_capacity(ph * pw * c);
    for r in 0..ph {
        let sr = reflect(r as isize, h);
        for col in 0..pw {
            let sc = reflect(col as isize, w);
            let base = ((sr * w + sc) * c) as i64;
            idx.extend((0..c as i64).map(|k| base + k));
        }
    }
    Arc::new(idx)
}

/// Top-left `[h, w, c]` crop of a `[ph, pw, c]` tensor.
pub fn crop_index(pw: usize, c: usize, h: usize, w: usize) -> Arc<Vec<i64>> {
    let mut idx = Vec::with_capacity(h * w * c);
    for r in 0..h {
        for col in 0..w {
            let base = ((r * pw + col) * c) as i64;
            idx.extend((0..c as i64).map(|k| base + k));
        }
    }
    Arc::new(idx)
}

/// `[h, w, c]` to `[(h/win)*(w/win), win*win, c]`, windows in row-major
/// order and tokens row-major inside each window.
pub fn window_partition_index(h: usize, w: usize, c: usize, win: usize) -> Arc<Vec<i64>> {
    let mut idx = Vec::with_capacity(h * w * c);
    for wy in 0..h / win {
        for wx in 0..w / win {
            for ty in 0..win {
                for tx in 0..win {
                    let (r, col) = (wy * win + ty, wx * win + tx);
                    let base = ((r * w + col) * c) as i64;
                    idx.extend((0..c as i64).map(|k| base + k));
                }
            }
        }
    }
    Arc::new(idx)
}

/// Inverse of [`window_partition_index`].
pub fn window_merge_index(h: usize, w: usize, c: usize, win: usize) -> Arc<Vec<i64>> {
    let part = window_partition_index(h, w, c, win);
    let mut inv = vec![0i64; part.len()];
    for (i, &src) in part.iter().enumerate() {
        inv[src as usize] = i as i64;
    }
    Arc::new(inv)
}

/// Shifted `[h, w + step (l - 1), l]` to aligned `[h, w, l]`.
pub fn unshift_index(h: usize, w: usize, l: usize, step: usize) -> Arc<Vec<i64>> {
    let fw = w + step * (l - 1);
    let mut idx = Vec::with_capacity(h * w * l);
    for r in 0..h {
        for col in 0..w {
            for b in 0..l {
                idx.push(((r * fw + col + step * b) * l + b) as i64);
            }
        }
    }
    Arc::new(idx)
}

/// Neighbour at `(dy, dx)` with replicate border, for each pixel.
pub fn neighbour_index(h: usize, w: usize, c: usize, dy: isize, dx: isize) -> Arc<Vec<i64>> {
    let mut idx = Vec::with_capacity(h * w * c);
    for r in 0..h {
        let sr = (r as isize + dy).clamp(0, h as isize - 1) as usize;
        for col in 0..w {
            let sc = (col as isize + dx).clamp(0, w as isize - 1) as usize;
            let base = ((sr * w + sc) * c) as i64;
            idx.extend((0..c as i64).map(|k| base + k));
        }
    }
    Arc::new(idx)
}
