//! Token index maps for window partitioning, cyclic shifts and padding.
//!
//! A token map `m` of length `n_out` says output token `i` reads input token
//! `m[i]` (or zero for [`REMAP_ZERO`]). Maps compose, so pad → roll →
//! partition runs as a single gather on the tape.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var, REMAP_ZERO};

/// `[H,W]` tokens → `[nW, M·M]` window-major order.
pub fn window_partition_map(h: usize, w: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
        return Err(Error::shape(format!("{h}x{w} is not divisible into {m}x{m} windows")));
    }
    let mut map = Vec::with_capacity(h * w);
    for wy in 0..h / m {
        for wx in 0..w / m {
            for i in 0..m {
                for j in 0..m {
                    map.push((wy * m + i) * w + wx * m + j);
                }
            }
        }
    }
    Ok(map)
}

/// Inverse of [`window_partition_map`].
pub fn window_reverse_map(h: usize, w: usize, m: usize) -> Result<Vec<usize>> {
    let fwd = window_partition_map(h, w, m)?;
    let mut inv = vec![0; fwd.len()];
    for (i, &src) in fwd.iter().enumerate() {
        inv[src] = i;
    }
    Ok(inv)
}

/// Cyclic shift: output token `(y, x)` reads `((y + dy) mod H, (x + dx) mod W)`.
fn roll_map(h: usize, w: usize, dy: isize, dx: isize) -> Vec<usize> {
    let mut map = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let sy = (y as isize + dy).rem_euclid(h as isize) as usize;
            let sx = (x as isize + dx).rem_euclid(w as isize) as usize;
            map.push(sy * w + sx);
        }
    }
    map
}

/// Zero-pad `[h,w]` tokens at the bottom/right to `[hp,wp]`.
fn pad_map(h: usize, w: usize, hp: usize, wp: usize) -> Vec<usize> {
    let mut map = Vec::with_capacity(hp * wp);
    for y in 0..hp {
        for x in 0..wp {
            map.push(if y < h && x < w { y * w + x } else { REMAP_ZERO });
        }
    }
    map
}

fn crop_map(hp: usize, wp: usize, h: usize, w: usize) -> Vec<usize> {
    debug_assert!(h <= hp && w <= wp);
    (0..h).flat_map(|y| (0..w).map(move |x| y * wp + x)).collect()
}

/// Apply `first`, then `second`.
fn compose(first: &[usize], second: &[usize]) -> Vec<usize> {
    second.iter().map(|&i| if i == REMAP_ZERO { REMAP_ZERO } else { first[i] }).collect()
}

/// Token map → element map for tokens carrying `dim` channels.
pub fn expand_token_map(map: &[usize], dim: usize) -> Vec<usize> {
    map.iter()
        .flat_map(|&t| (0..dim).map(move |c| if t == REMAP_ZERO { REMAP_ZERO } else { t * dim + c }))
        .collect()
}

/// Attention mask for shifted windows, one flag per `(window, query, key)`;
/// `true` blocks keys that came from a different region before the shift.
pub fn shifted_window_mask(hp: usize, wp: usize, m: usize, shift: usize) -> Result<Vec<bool>> {
    let part = window_partition_map(hp, wp, m)?;
    let n = m * m;
    let region = |v: usize, len: usize| -> usize {
        if shift == 0 || v < len - m {
            0
        } else if v < len - shift {
            1
        } else {
            2
        }
    };
    let labels: Vec<usize> = (0..hp * wp).map(|t| region(t / wp, hp) * 3 + region(t % wp, wp)).collect();
    let mut mask = Vec::with_capacity(part.len() * n);
    for win in part.chunks(n) {
        for &q in win {
            for &k in win {
                mask.push(labels[q] != labels[k]);
            }
        }
    }
    Ok(mask)
}

/// Everything needed to route a `[H,W,dim]` map through windowed attention
/// and back: padding to multiples of `M`, optional cyclic shift, the
/// partition, and the shifted-window mask.
#[derive(Debug, Clone)]
pub struct WindowPlan {
    pub height: usize,
    pub width: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    pub window: usize,
    /// Shift actually applied; zero when the padded map fits in one window.
    pub shift: usize,
    pub to_windows: Vec<usize>,
    pub from_windows: Vec<usize>,
    pub mask: Option<Vec<bool>>,
}

impl WindowPlan {
    pub fn new(height: usize, width: usize, window: usize, shift: usize) -> Result<Self> {
        if window == 0 || shift >= window {
            return Err(Error::config(format!("window {window} with shift {shift} is invalid")));
        }
        let hp = height.div_ceil(window) * window;
        let wp = width.div_ceil(window) * window;
        let shift = if hp.min(wp) <= window { 0 } else { shift };
        let s = shift as isize;
        let to_windows = compose(
            &compose(&pad_map(height, width, hp, wp), &roll_map(hp, wp, s, s)),
            &window_partition_map(hp, wp, window)?,
        );
        let from_windows = compose(
            &compose(&window_reverse_map(hp, wp, window)?, &roll_map(hp, wp, -s, -s)),
            &crop_map(hp, wp, height, width),
        );
        let mask = (shift > 0).then(|| shifted_window_mask(hp, wp, window, shift)).transpose()?;
        Ok(WindowPlan {
            height,
            width,
            padded_height: hp,
            padded_width: wp,
            window,
            shift,
            to_windows,
            from_windows,
            mask,
        })
    }

    pub fn num_windows(&self) -> usize {
        (self.padded_height / self.window) * (self.padded_width / self.window)
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }
}

/// `[H,W,dim]` → `[nW, M·M, dim]`.
pub fn window_partition<'t, T: Scalar>(x: Var<'t, T>, m: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("window_partition expects [H,W,dim], got {s:?}")));
    }
    let map = window_partition_map(s[0], s[1], m)?;
    let nw = (s[0] / m) * (s[1] / m);
    x.remap(Rc::from(expand_token_map(&map, s[2])), vec![nw, m * m, s[2]])
}

/// `[nW, M·M, dim]` → `[H,W,dim]`.
pub fn window_reverse<'t, T: Scalar>(x: Var<'t, T>, h: usize, w: usize, m: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 3 || s[1] != m * m || s[0] * s[1] != h * w {
        return Err(Error::shape(format!("window_reverse: {s:?} does not tile {h}x{w} with M={m}")));
    }
    let map = window_reverse_map(h, w, m)?;
    x.remap(Rc::from(expand_token_map(&map, s[2])), vec![h, w, s[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use proptest::prelude::*;

    #[test]
    fn partition_4x4_into_four_windows() {
        let tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..16).map(f64::from).collect();
        let x = tape.constant(vec![4, 4, 1], data.clone()).unwrap();
        let win = window_partition(x, 2).unwrap();
        assert_eq!(win.shape(), vec![4, 4, 1]);
        assert_eq!(&win.value()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(window_reverse(win, 4, 4, 2).unwrap().value(), data);
    }

    #[test]
    fn single_window_is_flattened_input() {
        let tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..18).map(f64::from).collect();
        let x = tape.constant(vec![3, 3, 2], data.clone()).unwrap();
        let win = window_partition(x, 3).unwrap();
        assert_eq!(win.shape(), vec![1, 9, 2]);
        assert_eq!(win.value(), data);
    }

    #[test]
    fn indivisible_extent_is_shape_error() {
        assert!(matches!(window_partition_map(5, 4, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn mask_matches_reference_layout() {
        // 4x4 map, window 2, shift 1: the last window mixes all four regions
        let mask = shifted_window_mask(4, 4, 2, 1).unwrap();
        let n = 4;
        assert!(mask[..n * n].iter().all(|&b| !b));
        let last = &mask[3 * n * n..];
        for q in 0..n {
            for k in 0..n {
                assert_eq!(last[q * n + k], q != k);
            }
        }
        let second = &mask[n * n..2 * n * n];
        let expect = [false, true, false, true, true, false, true, false];
        assert_eq!(&second[..8], &expect);
    }

    #[test]
    fn shift_then_unshift_is_identity() {
        for (h, w) in [(8, 8), (6, 10), (5, 7)] {
            let plan = WindowPlan::new(h, w, 4, 2).unwrap();
            let back = compose(&plan.to_windows, &plan.from_windows);
            assert_eq!(back, (0..h * w).collect::<Vec<_>>(), "{h}x{w}");
        }
    }

    #[test]
    fn padding_reads_zero() {
        let plan = WindowPlan::new(3, 3, 2, 0).unwrap();
        assert_eq!((plan.padded_height, plan.padded_width), (4, 4));
        assert_eq!(plan.to_windows.iter().filter(|&&t| t == REMAP_ZERO).count(), 7);
    }

    proptest! {
        #[test]
        fn partition_roundtrip_bit_exact(data in proptest::collection::vec(-1e3f64..1e3, 8 * 8 * 3)) {
            let tape = Tape::<f64>::new();
            let x = tape.constant(vec![8, 8, 3], data.clone()).unwrap();
            let back = window_reverse(window_partition(x, 4).unwrap(), 8, 8, 4).unwrap();
            prop_assert_eq!(back.value(), data);
        }
    }
}
