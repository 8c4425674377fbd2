//! Trained-head files: `"FSH1"`, u32 version, u8 element width (4 or 8), the
//! head configuration, then every parameter array in [`HeadParams`] order.
//! Everything is little-endian.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::config::HeadConfig;
use super::params::{DenseLayer, HeadParams};
use crate::error::{Error, Result};
use crate::real::Real;

pub const HEAD_MAGIC: [u8; 4] = *b"FSH1";
pub const HEAD_VERSION: u32 = 1;

/// A deserialized head of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyHead {
    F32(HeadParams<f32>),
    F64(HeadParams<f64>),
}

impl AnyHead {
    pub fn config(&self) -> &HeadConfig {
        match self {
            AnyHead::F32(p) => p.config(),
            AnyHead::F64(p) => p.config(),
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

impl<T: Real> HeadParams<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(64 + self.trainable_count() * T::WIDTH as usize);
        out.extend_from_slice(&HEAD_MAGIC);
        out.extend_from_slice(&HEAD_VERSION.to_le_bytes());
        out.push(T::WIDTH);
        for v in [c.input_side, c.input_channels, c.conv_filters, c.conv_kernel] {
            put_u32(&mut out, v);
        }
        put_u32(&mut out, c.hidden_sizes.len());
        for &h in &c.hidden_sizes {
            put_u32(&mut out, h);
        }
        put_u32(&mut out, c.n_classes);
        for v in [c.l2_lambda, c.bn_epsilon, c.bn_momentum] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut arrays: Vec<&[T]> = vec![
            self.conv_weights.as_slice().unwrap(),
            self.conv_bias.as_slice().unwrap(),
            self.bn_gamma.as_slice().unwrap(),
            self.bn_beta.as_slice().unwrap(),
            self.bn_running_mean.as_slice().unwrap(),
            self.bn_running_var.as_slice().unwrap(),
        ];
        for l in &self.dense {
            arrays.push(l.weights.as_slice().unwrap());
            arrays.push(l.bias.as_slice().unwrap());
        }
        for a in arrays {
            for &v in a {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let (width, config) = read_header(&mut r)?;
        if width != T::WIDTH {
            return Err(Error::Malformed(format!(
                "head stores {width}-byte reals, expected {}",
                T::WIDTH
            )));
        }
        read_body(&mut r, config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

impl AnyHead {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let (width, config) = read_header(&mut r)?;
        match width {
            4 => Ok(AnyHead::F32(read_body(&mut r, config)?)),
            8 => Ok(AnyHead::F64(read_body(&mut r, config)?)),
            w => Err(Error::Malformed(format!("unknown element width {w}"))),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!("head file ends at offset {}", self.bytes.len())));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn reals<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        let w = T::WIDTH as usize;
        let raw = self.take(n.checked_mul(w).ok_or_else(|| Error::Malformed("size overflow".into()))?)?;
        Ok(raw.chunks_exact(w).map(T::read_le).collect())
    }
}

fn read_header(r: &mut Cursor<'_>) -> Result<(u8, HeadConfig)> {
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != HEAD_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != HEAD_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let width = r.take(1)?[0];
    let input_side = r.u32()?;
    let input_channels = r.u32()?;
    let conv_filters = r.u32()?;
    let conv_kernel = r.u32()?;
    let n_hidden = r.u32()?;
    if n_hidden > 1024 {
        return Err(Error::Malformed(format!("{n_hidden} hidden layers")));
    }
    let hidden_sizes = (0..n_hidden).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let config = HeadConfig {
        input_side,
        input_channels,
        conv_filters,
        conv_kernel,
        hidden_sizes,
        n_classes: r.u32()?,
        l2_lambda: r.f64()?,
        bn_epsilon: r.f64()?,
        bn_momentum: r.f64()?,
    };
    config
        .validate()
        .map_err(|e| Error::Malformed(format!("stored configuration is invalid: {e}")))?;
    Ok((width, config))
}

fn read_body<T: Real>(r: &mut Cursor<'_>, config: HeadConfig) -> Result<HeadParams<T>> {
    let f = config.conv_filters;
    let fan_in = config.conv_fan_in();
    let conv_weights = Array2::from_shape_vec((fan_in, f), r.reals(fan_in * f)?).unwrap();
    let mut vec1 = |n: usize| -> Result<Array1<T>> { Ok(Array1::from(r.reals::<T>(n)?)) };
    let conv_bias = vec1(f)?;
    let bn_gamma = vec1(f)?;
    let bn_beta = vec1(f)?;
    let bn_running_mean = vec1(f)?;
    let bn_running_var = vec1(f)?;
    if bn_running_var.iter().any(|&v| !(v > T::zero())) {
        return Err(Error::Malformed("running variance must be positive".into()));
    }
    let mut dense = Vec::new();
    for (n_in, n_out) in config.dense_shapes() {
        let weights = Array2::from_shape_vec((n_in, n_out), r.reals(n_in * n_out)?).unwrap();
        let bias = Array1::from(r.reals::<T>(n_out)?);
        dense.push(DenseLayer { weights, bias });
    }
    if r.pos != r.bytes.len() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes in head file",
            r.bytes.len() - r.pos
        )));
    }
    Ok(HeadParams {
        config,
        conv_weights,
        conv_bias,
        bn_gamma,
        bn_beta,
        bn_running_mean,
        bn_running_var,
        dense,
        generation: 0,
    })
}
