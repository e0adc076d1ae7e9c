use std::collections::VecDeque;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Per-pixel boolean region, stored height x width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    bits: Array2<bool>,
}

impl BinaryMask {
    /// All-false mask.
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, false)
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            bits: Array2::from_elem((height, width), value),
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        Self {
            bits: Array2::from_shape_fn((height, width), |(y, x)| f(x, y)),
        }
    }

    pub fn from_bits(bits: Array2<bool>) -> Self {
        Self { bits }
    }

    pub fn bits(&self) -> &Array2<bool> {
        &self.bits
    }

    pub fn width(&self) -> usize {
        self.bits.dim().1
    }

    pub fn height(&self) -> usize {
        self.bits.dim().0
    }

    /// `(width, height)`
    pub fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[[y, x]]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[[y, x]] = value;
    }

    /// Number of true pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn inverted(&self) -> Self {
        Self {
            bits: self.bits.mapv(|b| !b),
        }
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a && b)
    }

    fn zip(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        let mut bits = self.bits.clone();
        bits.zip_mut_with(&other.bits, |a, &b| *a = f(*a, b));
        Ok(Self { bits })
    }

    /// Square (Chebyshev) dilation by `radius` pixels.
    pub fn dilated(&self, radius: usize) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = self.dims();
        let r = radius as isize;
        Self::from_fn(w, h, |x, y| {
            let (x, y) = (x as isize, y as isize);
            (y - r..=y + r).any(|yy| {
                (x - r..=x + r).any(|xx| {
                    xx >= 0
                        && yy >= 0
                        && (xx as usize) < w
                        && (yy as usize) < h
                        && self.bits[[yy as usize, xx as usize]]
                })
            })
        })
    }

    /// Sets every false pixel that is not 4-connected to the border.
    pub fn holes_filled(&self) -> Self {
        let (w, h) = self.dims();
        let mut outside = Array2::from_elem((h, w), false);
        let mut queue = VecDeque::new();
        for y in 0..h {
            for x in 0..w {
                if (x == 0 || y == 0 || x == w - 1 || y == h - 1) && !self.bits[[y, x]] {
                    outside[[y, x]] = true;
                    queue.push_back((x, y));
                }
            }
        }
        while let Some((x, y)) = queue.pop_front() {
            for (nx, ny) in neighbours4(x, y, w, h) {
                if !self.bits[[ny, nx]] && !outside[[ny, nx]] {
                    outside[[ny, nx]] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
        Self {
            bits: outside.mapv(|o| !o),
        }
    }

    /// 4-connected components of true pixels in raster-scan order of their
    /// first pixel. Each component is a list of `(x, y)`.
    pub fn components(&self) -> Vec<Vec<(usize, usize)>> {
        let (w, h) = self.dims();
        let mut seen = Array2::from_elem((h, w), false);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !self.bits[[y, x]] || seen[[y, x]] {
                    continue;
                }
                let mut comp = Vec::new();
                let mut queue = VecDeque::from([(x, y)]);
                seen[[y, x]] = true;
                while let Some((cx, cy)) = queue.pop_front() {
                    comp.push((cx, cy));
                    for (nx, ny) in neighbours4(cx, cy, w, h) {
                        if self.bits[[ny, nx]] && !seen[[ny, nx]] {
                            seen[[ny, nx]] = true;
                            queue.push_back((nx, ny));
                        }
                    }
                }
                out.push(comp);
            }
        }
        out
    }

    /// Keeps only the largest 4-connected component (first in raster order on ties).
    pub fn largest_component(&self) -> Self {
        let (w, h) = self.dims();
        let mut best: Option<Vec<(usize, usize)>> = None;
        for comp in self.components() {
            if best.as_ref().is_none_or(|b| comp.len() > b.len()) {
                best = Some(comp);
            }
        }
        let mut out = Self::new(w, h);
        for (x, y) in best.unwrap_or_default() {
            out.set(x, y, true);
        }
        out
    }
}

pub(crate) fn neighbours4(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let cand = [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)];
    cand.into_iter().filter(move |&(nx, ny)| nx < w && ny < h)
}
