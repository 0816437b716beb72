//! Random masked augmentation over 2x2 patches and the standard flip/rotate
//! augmentations for grid inputs laid out row-major as `h x w x c`.

use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

pub const PATCH_SIZE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl GridShape {
    pub fn new(h: usize, w: usize, c: usize) -> Result<Self> {
        if h == 0 || w == 0 || c == 0 || !h.is_multiple_of(PATCH_SIZE) || !w.is_multiple_of(PATCH_SIZE) {
            return Err(Error::Validation(format!(
                "grid {h}x{w}x{c} is not divisible into {PATCH_SIZE}x{PATCH_SIZE} patches"
            )));
        }
        Ok(Self { h, w, c })
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch_count(&self) -> usize {
        (self.h / PATCH_SIZE) * (self.w / PATCH_SIZE)
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.w + col) * self.c + ch
    }

    /// Flat indices of every value in patch `p` (patches numbered row-major).
    pub fn patch_indices(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        let per_row = self.w / PATCH_SIZE;
        let (pr, pc) = (p / per_row, p % per_row);
        (0..PATCH_SIZE).flat_map(move |dr| {
            (0..PATCH_SIZE).flat_map(move |dc| {
                (0..self.c).map(move |ch| self.index(pr * PATCH_SIZE + dr, pc * PATCH_SIZE + dc, ch))
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmaConfig {
    pub mask_ratio: f64,
}

impl RmaConfig {
    pub fn new(mask_ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mask_ratio) {
            return Err(Error::Validation(format!("mask ratio {mask_ratio} outside [0, 1]")));
        }
        Ok(Self { mask_ratio })
    }

    pub fn masked_count(&self, shape: &GridShape) -> usize {
        (self.mask_ratio * shape.patch_count() as f64).round() as usize
    }
}

impl Default for RmaConfig {
    fn default() -> Self {
        Self { mask_ratio: 0.25 }
    }
}

/// Result of one masked augmentation: the image and the zeroed patch ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Masked<S> {
    pub image: Vec<S>,
    pub masked_patches: Vec<usize>,
}

/// Zeroes `round(mask_ratio * P)` distinct patches drawn uniformly without
/// replacement; every other value is copied unchanged.
pub fn rma<S: Scalar>(x: &[S], shape: &GridShape, cfg: &RmaConfig, rng: &mut Rng) -> Result<Masked<S>> {
    check_dim("grid image", shape.len(), x.len())?;
    let m = cfg.masked_count(shape);
    let mut masked_patches = rng.sample_indices(shape.patch_count(), m);
    masked_patches.sort_unstable();
    let mut image = x.to_vec();
    for &p in &masked_patches {
        for i in shape.patch_indices(p) {
            image[i] = S::zero();
        }
    }
    Ok(Masked { image, masked_patches })
}

/// Non-grid analogue: zero one uniformly chosen coordinate with probability `ratio`.
pub fn coordinate_dropout<S: Scalar>(x: &[S], ratio: f64, rng: &mut Rng) -> Vec<S> {
    let mut out = x.to_vec();
    if !out.is_empty() && rng.bernoulli(ratio) {
        let k = rng.below(out.len());
        out[k] = S::zero();
    }
    out
}

pub fn flip_horizontal<S: Scalar>(x: &[S], shape: &GridShape) -> Result<Vec<S>> {
    check_dim("grid image", shape.len(), x.len())?;
    let mut out = vec![S::zero(); x.len()];
    for r in 0..shape.h {
        for col in 0..shape.w {
            for ch in 0..shape.c {
                out[shape.index(r, shape.w - 1 - col, ch)] = x[shape.index(r, col, ch)];
            }
        }
    }
    Ok(out)
}

/// Rotates clockwise by `quarter_turns * 90` degrees. Non-square grids only
/// accept even turn counts.
pub fn rotate<S: Scalar>(x: &[S], shape: &GridShape, quarter_turns: usize) -> Result<Vec<S>> {
    check_dim("grid image", shape.len(), x.len())?;
    let turns = quarter_turns % 4;
    if turns % 2 == 1 && shape.h != shape.w {
        return Err(Error::Validation("odd quarter turns need a square grid".into()));
    }
    let mut out = x.to_vec();
    for _ in 0..turns {
        let prev = out.clone();
        for r in 0..shape.h {
            for col in 0..shape.w {
                for ch in 0..shape.c {
                    // (r, col) -> (col, n - 1 - r)
                    out[shape.index(col, shape.h - 1 - r, ch)] = prev[shape.index(r, col, ch)];
                }
            }
        }
    }
    Ok(out)
}

/// Horizontal flip with probability 0.5, then a uniformly chosen right-angle
/// rotation (half turns only on non-square grids).
pub fn standard_aug<S: Scalar>(x: &[S], shape: &GridShape, rng: &mut Rng) -> Result<Vec<S>> {
    let mut out = if rng.bernoulli(0.5) {
        flip_horizontal(x, shape)?
    } else {
        x.to_vec()
    };
    let turns = if shape.h == shape.w {
        rng.below(4)
    } else {
        2 * rng.below(2)
    };
    if turns > 0 {
        out = rotate(&out, shape, turns)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn ramp(shape: &GridShape) -> Vec<f64> {
        (0..shape.len())
            .map(|i| (i as f64 + 1.0) / shape.len() as f64)
            .collect()
    }

    #[test]
    fn zero_ratio_is_identity_and_full_ratio_blanks() {
        let shape = GridShape::new(8, 8, 1).unwrap();
        let x = ramp(&shape);
        let mut rng = Rng::new(0, Stream::Rma);
        assert_eq!(
            rma(&x, &shape, &RmaConfig::new(0.0).unwrap(), &mut rng).unwrap().image,
            x
        );
        let full = rma(&x, &shape, &RmaConfig::new(1.0).unwrap(), &mut rng).unwrap();
        assert!(full.image.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quarter_ratio_zeroes_four_of_sixteen_blocks() {
        let shape = GridShape::new(8, 8, 1).unwrap();
        let x = ramp(&shape); // strictly positive
        let mut rng = Rng::new(5, Stream::Rma);
        let out = rma(&x, &shape, &RmaConfig::default(), &mut rng).unwrap();
        assert_eq!(shape.patch_count(), 16);
        // count all-zero 2x2 blocks by scanning the image directly
        let mut zero_blocks = Vec::new();
        for pr in 0..4 {
            for pc in 0..4 {
                let cells = [(0, 0), (0, 1), (1, 0), (1, 1)];
                if cells
                    .iter()
                    .all(|&(dr, dc)| out.image[(2 * pr + dr) * 8 + 2 * pc + dc] == 0.0)
                {
                    zero_blocks.push(pr * 4 + pc);
                }
            }
        }
        assert_eq!(zero_blocks, out.masked_patches);
        assert_eq!(zero_blocks.len(), 4);
    }

    #[test]
    fn same_stream_gives_same_mask() {
        let shape = GridShape::new(8, 8, 3).unwrap();
        let x = ramp(&shape);
        let a = rma(&x, &shape, &RmaConfig::default(), &mut Rng::new(9, Stream::Rma)).unwrap();
        let b = rma(&x, &shape, &RmaConfig::default(), &mut Rng::new(9, Stream::Rma)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_errors() {
        assert!(GridShape::new(7, 8, 1).is_err());
        let shape = GridShape::new(4, 4, 1).unwrap();
        let mut rng = Rng::new(0, Stream::Rma);
        assert!(rma(&[0.0f64; 15], &shape, &RmaConfig::default(), &mut rng).is_err());
        assert!(RmaConfig::new(1.5).is_err());
    }

    #[test]
    fn flips_and_rotations() {
        let shape = GridShape::new(4, 4, 2).unwrap();
        let x = ramp(&shape);
        assert_eq!(
            flip_horizontal(&flip_horizontal(&x, &shape).unwrap(), &shape).unwrap(),
            x
        );
        assert_eq!(rotate(&x, &shape, 0).unwrap(), x);
        assert_eq!(rotate(&x, &shape, 4).unwrap(), x);
        let r1 = rotate(&x, &shape, 1).unwrap();
        assert_ne!(r1, x);
        assert_eq!(rotate(&r1, &shape, 3).unwrap(), x);
        // top-left goes to top-right under a clockwise turn
        assert_eq!(r1[shape.index(0, 3, 0)], x[shape.index(0, 0, 0)]);
    }

    #[test]
    fn augmentation_preserves_pixel_sum() {
        let shape = GridShape::new(8, 8, 1).unwrap();
        let mut rng = Rng::new(2, Stream::Augment);
        for _ in 0..100 {
            let x: Vec<f64> = (0..shape.len()).map(|_| rng.uniform()).collect();
            let y = standard_aug(&x, &shape, &mut rng).unwrap();
            let mut xs = x.clone();
            let mut ys = y.clone();
            xs.sort_by(f64::total_cmp);
            ys.sort_by(f64::total_cmp);
            assert_eq!(xs, ys);
            assert!((x.iter().sum::<f64>() - y.iter().sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn coordinate_dropout_zeroes_at_most_one() {
        let mut rng = Rng::new(1, Stream::Rma);
        let x = [1.0f64, 2.0];
        assert_eq!(coordinate_dropout(&x, 0.0, &mut rng), x.to_vec());
        let y = coordinate_dropout(&x, 1.0, &mut rng);
        assert_eq!(y.iter().filter(|&&v| v == 0.0).count(), 1);
    }
}
