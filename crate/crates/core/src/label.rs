use crate::error::{Error, Result};

/// Per-pixel class ids, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    h: usize,
    w: usize,
    data: Vec<usize>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, data: Vec<usize>) -> Result<Self> {
        if h == 0 || w == 0 || data.len() != h * w {
            return Err(Error::shape(
                "label map",
                format!("{} labels for {h}x{w}", data.len()),
            ));
        }
        Ok(LabelMap { h, w, data })
    }

    pub fn filled(h: usize, w: usize, class: usize) -> Self {
        LabelMap {
            h,
            w,
            data: vec![class; h * w],
        }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> usize) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        LabelMap { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[usize] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize) -> usize {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, class: usize) {
        self.data[y * self.w + x] = class;
    }

    pub fn max_class(&self) -> usize {
        self.data.iter().copied().max().unwrap_or(0)
    }

    pub(crate) fn same_dims(&self, other: &LabelMap, op: &'static str) -> Result<()> {
        if self.h != other.h || self.w != other.w {
            return Err(Error::shape(
                op,
                format!("{}x{} vs {}x{}", self.h, self.w, other.h, other.w),
            ));
        }
        Ok(())
    }
}
