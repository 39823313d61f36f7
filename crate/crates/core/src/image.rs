//! Row-major 2D planes used for images, masks, and depth maps.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Linear RGB in `[0, 1]`.
pub type RgbImage = Plane<[f64; 3]>;
pub type Mask = Plane<bool>;
pub type DepthMap = Plane<f64>;

impl<T: Clone> Plane<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Plane<T> {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// `None` when `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_dims<U>(&self, other: &Plane<U>) -> bool {
        self.dims() == other.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Plane<U> {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Clone> Plane<T> {
    /// Copies the `w × h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y).clone())
    }

    /// Writes `src` with its top-left corner at `(x0, y0)`.
    pub fn paste(&mut self, src: &Self, x0: usize, y0: usize) {
        for y in 0..src.height {
            for x in 0..src.width {
                self.set(x0 + x, y0 + y, src.get(x, y).clone());
            }
        }
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|m| **m).count()
    }

    /// Fraction of set pixels; 0 for an empty plane.
    pub fn ratio(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }

    /// Grows the mask by `r` pixels (Chebyshev distance).
    pub fn dilate(&self, r: usize) -> Self {
        let (w, h) = self.dims();
        Self::from_fn(w, h, |x, y| {
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
            (y0..=y1).any(|yy| (x0..=x1).any(|xx| *self.get(xx, yy)))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_paste_round_trip() {
        let img = Plane::from_fn(6, 4, |x, y| (x * 10 + y) as u32);
        let c = img.crop(2, 1, 3, 2);
        assert_eq!(*c.get(0, 0), 21);
        let mut blank = Plane::filled(6, 4, 0u32);
        blank.paste(&c, 2, 1);
        assert_eq!(*blank.get(4, 2), 42);
        assert_eq!(*blank.get(0, 0), 0);
    }

    #[test]
    fn mask_ratio_and_dilate() {
        let mut m = Mask::filled(5, 5, false);
        assert_eq!(m.ratio(), 0.0);
        m.set(2, 2, true);
        assert_eq!(m.count(), 1);
        let d = m.dilate(1);
        assert_eq!(d.count(), 9);
        assert!(!*d.get(0, 0));
        assert!(Mask::from_vec(2, 2, vec![true; 3]).is_none());
    }
}
