//! Flattening orders of an H×W grid.
//!
//! Continuous (serpentine) paths reverse direction on alternate rows or
//! columns so that consecutive sequence elements are always grid neighbours.
//! Directions `0..4` are the four forward families, `4..8` their reversals:
//!
//! | id | family                                        |
//! |----|-----------------------------------------------|
//! | 0  | row serpentine from the top-left corner       |
//! | 1  | row serpentine from the top-right corner      |
//! | 2  | column serpentine from the top-left corner    |
//! | 3  | column serpentine from the bottom-left corner |
//!
//! Sweep paths are the raster counterparts (no alternate-line reversal) and
//! exist for ablations; they jump at every line boundary.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::tensor::kernels::{invert_permutation, permute_columns};
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub const NUM_DIRECTIONS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PathKind {
    Serpentine,
    Sweep,
}

/// An invertible flattening order. `perm[i]` is the row-major flat index of
/// the `i`-th visited cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanPath {
    direction: usize,
    kind: PathKind,
    height: usize,
    width: usize,
    perm: Arc<[usize]>,
    inv_perm: Arc<[usize]>,
}

/// Serpentine traversal for directions `0..8`.
pub fn build_path(direction: usize, height: usize, width: usize) -> Result<ScanPath> {
    ScanPath::build(PathKind::Serpentine, direction, height, width)
}

/// Raster traversal for directions `0..8` (ablation baseline).
pub fn build_sweep_path(direction: usize, height: usize, width: usize) -> Result<ScanPath> {
    ScanPath::build(PathKind::Sweep, direction, height, width)
}

impl ScanPath {
    pub fn build(kind: PathKind, direction: usize, height: usize, width: usize) -> Result<Self> {
        if direction >= NUM_DIRECTIONS {
            return Err(Error::Config(format!(
                "scan direction must be in 0..{NUM_DIRECTIONS}, got {direction}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::Config(format!("scan grid must be non-empty, got {height}×{width}")));
        }
        let snake = kind == PathKind::Serpentine;
        let mut perm = Vec::with_capacity(height * width);
        match direction % 4 {
            0 | 1 => {
                let start_right = direction % 4 == 1;
                for r in 0..height {
                    let right_to_left = start_right ^ (snake && r % 2 == 1);
                    for k in 0..width {
                        let c = if right_to_left { width - 1 - k } else { k };
                        perm.push(r * width + c);
                    }
                }
            }
            _ => {
                let start_bottom = direction % 4 == 3;
                for c in 0..width {
                    let upward = start_bottom ^ (snake && c % 2 == 1);
                    for k in 0..height {
                        let r = if upward { height - 1 - k } else { k };
                        perm.push(r * width + c);
                    }
                }
            }
        }
        if direction >= 4 {
            perm.reverse();
        }
        let inv = invert_permutation(&perm).expect("grid traversal visits every cell once");
        Ok(Self {
            direction,
            kind,
            height,
            width,
            perm: perm.into(),
            inv_perm: inv.into(),
        })
    }

    pub fn direction(&self) -> usize {
        self.direction
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn inv_perm(&self) -> &[usize] {
        &self.inv_perm
    }

    pub(crate) fn perm_arc(&self) -> Arc<[usize]> {
        Arc::clone(&self.perm)
    }

    pub(crate) fn inv_perm_arc(&self) -> Arc<[usize]> {
        Arc::clone(&self.inv_perm)
    }

    /// The opposite traversal of the same family.
    pub fn reversed(&self) -> Self {
        Self::build(self.kind, (self.direction + 4) % NUM_DIRECTIONS, self.height, self.width)
            .expect("valid path reverses to a valid path")
    }

    /// Whether every pair of consecutive cells is at Manhattan distance 1.
    pub fn is_continuous(&self) -> bool {
        self.perm.windows(2).all(|w| {
            let (r0, c0) = (w[0] / self.width, w[0] % self.width);
            let (r1, c1) = (w[1] / self.width, w[1] % self.width);
            r0.abs_diff(r1) + c0.abs_diff(c1) == 1
        })
    }

    fn check_len<T: Scalar>(&self, x: &Tensor<T>) -> Result<usize> {
        let (c, len) = x.dims2("apply_path")?;
        if len != self.len() {
            return Err(Error::shape("apply_path", x.shape(), &[c, self.len()]));
        }
        Ok(c)
    }

    /// Column `i` of the result is column `perm[i]` of `x: [c × H·W]`.
    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.check_len(x)?;
        Tensor::new(x.shape(), permute_columns(x.data(), &self.perm, c))
    }

    /// Undoes [`ScanPath::apply`].
    pub fn apply_inverse<T: Scalar>(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.check_len(y)?;
        Tensor::new(y.shape(), permute_columns(y.data(), &self.inv_perm, c))
    }
}

/// Paths keyed by `(kind, direction, H, W)`, built on first use.
#[derive(Debug, Default)]
pub struct PathCache {
    paths: Mutex<HashMap<(PathKind, usize, usize, usize), Arc<ScanPath>>>,
}

impl PathCache {
    pub fn get(&self, kind: PathKind, direction: usize, height: usize, width: usize) -> Result<Arc<ScanPath>> {
        let key = (kind, direction, height, width);
        let mut paths = self.paths.lock().expect("path cache lock poisoned");
        if let Some(p) = paths.get(&key) {
            return Ok(Arc::clone(p));
        }
        let p = Arc::new(ScanPath::build(kind, direction, height, width)?);
        paths.insert(key, Arc::clone(&p));
        Ok(p)
    }
}

impl Clone for PathCache {
    fn clone(&self) -> Self {
        Self::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_serpentine_2x2() {
        assert_eq!(build_path(0, 2, 2).unwrap().perm(), &[0, 1, 3, 2]);
        assert_eq!(build_path(4, 2, 2).unwrap().perm(), &[2, 3, 1, 0]);
    }

    #[test]
    fn column_serpentine_3x2_and_inverse() {
        let p = build_path(2, 3, 2).unwrap();
        assert_eq!(p.perm(), &[0, 2, 4, 5, 3, 1]);
        assert_eq!(p.inv_perm(), &[0, 5, 1, 4, 2, 3]);
    }

    #[test]
    fn remaining_families() {
        // 2×3 grid, flat = r*3 + c
        assert_eq!(build_path(1, 2, 3).unwrap().perm(), &[2, 1, 0, 3, 4, 5]);
        assert_eq!(build_path(3, 2, 3).unwrap().perm(), &[3, 0, 1, 4, 5, 2]);
    }

    #[test]
    fn apply_on_values() {
        let p = build_path(0, 2, 2).unwrap();
        let x = Tensor::<f32>::new(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(p.apply(&x).unwrap().data(), &[1.0, 2.0, 4.0, 3.0]);
        let back = build_path(4, 2, 2).unwrap().apply(&x).unwrap();
        assert_eq!(back.data(), &[3.0, 4.0, 2.0, 1.0]);
    }

    #[test]
    fn sweep_is_raster() {
        let s = build_sweep_path(0, 2, 2).unwrap();
        assert_eq!(s.perm(), &[0, 1, 2, 3]);
        assert!(!s.is_continuous());
        assert_eq!(build_sweep_path(4, 2, 2).unwrap().perm(), &[3, 2, 1, 0]);
    }

    #[test]
    fn sweep_differs_from_serpentine_only_on_odd_rows() {
        let (h, w) = (4, 5);
        let s = build_sweep_path(0, h, w).unwrap();
        let c = build_path(0, h, w).unwrap();
        for r in 0..h {
            let same = s.perm()[r * w..(r + 1) * w] == c.perm()[r * w..(r + 1) * w];
            assert_eq!(same, r % 2 == 0, "row {r}");
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(build_path(8, 2, 2), Err(Error::Config(_))));
        assert!(matches!(build_path(0, 0, 2), Err(Error::Config(_))));
        let p = build_path(0, 2, 2).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 5]);
        assert!(matches!(p.apply(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn single_row_and_column_grids() {
        for d in 0..8 {
            assert!(build_path(d, 1, 5).unwrap().is_continuous());
            assert!(build_path(d, 5, 1).unwrap().is_continuous());
        }
    }

    #[test]
    fn cache_reuses_paths() {
        let cache = PathCache::default();
        let a = cache.get(PathKind::Serpentine, 3, 4, 4).unwrap();
        let b = cache.get(PathKind::Serpentine, 3, 4, 4).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn serpentine_paths_are_continuous_bijections(h in 1usize..20, w in 1usize..20, d in 0usize..8) {
                let p = build_path(d, h, w).unwrap();
                let mut seen = vec![false; h * w];
                for &i in p.perm() {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
                prop_assert!(p.is_continuous());
                let x = Tensor::<f32>::from_fn(&[2, h * w], |i| i as f32);
                prop_assert_eq!(p.apply_inverse(&p.apply(&x).unwrap()).unwrap(), x.clone());
                prop_assert_eq!(p.apply(&p.apply_inverse(&x).unwrap()).unwrap(), x);
            }

            #[test]
            fn reversal_is_the_backward_traversal(h in 1usize..12, w in 1usize..12, d in 0usize..8) {
                let p = build_path(d, h, w).unwrap();
                let mut rev = p.perm().to_vec();
                rev.reverse();
                prop_assert_eq!(p.reversed().perm().to_vec(), rev);
            }

            #[test]
            fn sweeps_jump_on_multi_line_grids(h in 2usize..12, w in 2usize..12, d in 0usize..8) {
                prop_assert!(!build_sweep_path(d, h, w).unwrap().is_continuous());
            }
        }
    }
}
