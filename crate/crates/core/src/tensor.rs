//! Dense rank-4 `f64` tensors in row-major NCHW layout.
//!
//! The on-disk format is an ASCII magic line `FAPN-TNSR 1`, a second line
//! `f64 n c h w`, then `n*c*h*w` little-endian IEEE-754 doubles.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &str = "FAPN-TNSR 1";

/// Extents of a rank-4 tensor. All four are at least 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::shape(
                "dims",
                format!("all dims must be >= 1, got ({n}, {c}, {h}, {w})"),
            ));
        }
        Ok(Dims { n, c, h, w })
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Dims,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from raw data. Rejects length mismatches and
    /// non-finite values.
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::shape(
                "tensor",
                format!("{} values for dims {dims}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_shape(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let [n, c, h, w] = shape;
        Tensor::new(Dims::new(n, c, h, w)?, data)
    }

    /// Internal constructor for kernel outputs whose length is known to match.
    pub(crate) fn from_parts(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        Tensor { dims, data }
    }

    pub fn zeros(dims: Dims) -> Self {
        Tensor::full(dims, 0.0)
    }

    pub fn full(dims: Dims, value: f64) -> Self {
        Tensor {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for c in 0..dims.c {
                for h in 0..dims.h {
                    for w in 0..dims.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { dims, data }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            dims: Dims {
                n: 1,
                c: 1,
                h: 1,
                w: 1,
            },
            data: vec![value],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.dims.index(n, c, h, w)]
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor with dims {}",
                self.dims
            )));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Compensated (Neumaier) sum.
    pub fn sum(&self) -> f64 {
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for &v in &self.data {
            let t = s + v;
            c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
            s = t;
        }
        s + c
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch {
                op: "max_abs_diff",
                left: self.dims,
                right: other.dims,
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Copy with a different shape over the same element count.
    pub fn reshape(&self, dims: Dims) -> Result<Tensor> {
        if dims.len() != self.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.dims,
                right: dims,
            });
        }
        Ok(Tensor {
            dims,
            data: self.data.clone(),
        })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.dims;
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "f64 {} {} {} {}", d.n, d.c, d.h, d.w)?;
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)
    }

    pub fn read_from<R: Read>(input: R) -> Result<Tensor> {
        let mut reader = BufReader::new(input);
        let mut magic = String::new();
        read_header_line(&mut reader, &mut magic)?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic line {magic:?}")));
        }
        let mut header = String::new();
        read_header_line(&mut reader, &mut header)?;
        let mut fields = header.split(' ');
        if fields.next() != Some("f64") {
            return Err(Error::Format(format!("bad dtype line {header:?}")));
        }
        let extents: Vec<usize> = fields
            .map(|f| {
                f.parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad extent {f:?} in {header:?}")))
            })
            .collect::<Result<_>>()?;
        let [n, c, h, w] = <[usize; 4]>::try_from(extents)
            .map_err(|_| Error::Format(format!("expected 4 extents in {header:?}")))?;
        let dims = Dims::new(n, c, h, w)?;
        let mut bytes = vec![0u8; dims.len() * 8];
        reader
            .read_exact(&mut bytes)
            .map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
        let mut rest = [0u8; 1];
        if reader.read(&mut rest).map_err(|e| Error::Format(e.to_string()))? != 0 {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::new(dims, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Tensor::read_from(file)
    }
}

fn read_header_line<R: BufRead>(reader: &mut R, line: &mut String) -> Result<()> {
    reader
        .read_line(line)
        .map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
    if !line.ends_with('\n') {
        return Err(Error::Format("header line not newline-terminated".into()));
    }
    line.pop();
    Ok(())
}
