//! Latent sequences, per-frame timestep vectors, and the latent container
//! file format.
//!
//! Container layout (all little-endian):
//!
//! | bytes | field                         |
//! |-------|-------------------------------|
//! | 4     | magic `DLSQ`                  |
//! | 4     | version `u32` (= 1)           |
//! | 8     | frame count `F` as `u64`      |
//! | 8     | latent width `D` as `u64`     |
//! | 8·F·D | `f64` payload, frame-major    |

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{bail, ensure, Result};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TimestepVector(Vec<usize>);

impl TimestepVector {
    pub fn new(values: Vec<usize>) -> Self {
        Self(values)
    }

    pub fn uniform(len: usize, t: usize) -> Self {
        Self(vec![t; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [usize] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn max(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn check_range(&self, steps: usize) -> Result<()> {
        if let Some((f, t)) = self.0.iter().enumerate().find(|(_, t)| **t > steps) {
            bail!(Range, "timestep {t} at frame {f} outside [0, {steps}]");
        }
        Ok(())
    }

    pub fn slice(&self, start: usize, end: usize) -> TimestepVector {
        Self(self.0[start..end].to_vec())
    }
}

impl From<Vec<usize>> for TimestepVector {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// `F×D` latent frames with a parallel per-frame timestep vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSequence {
    latents: Matrix,
    timesteps: TimestepVector,
}

impl LatentSequence {
    pub fn new(latents: Matrix, timesteps: TimestepVector) -> Result<Self> {
        ensure!(
            latents.rows() == timesteps.len(),
            Dimension,
            "{} frames but {} timesteps",
            latents.rows(),
            timesteps.len()
        );
        ensure!(latents.is_finite(), NonFinite, "latent sequence has non-finite entries");
        Ok(Self { latents, timesteps })
    }

    /// All frames at `t = 0`.
    pub fn clean(latents: Matrix) -> Result<Self> {
        let f = latents.rows();
        Self::new(latents, TimestepVector::uniform(f, 0))
    }

    pub fn frames(&self) -> usize {
        self.latents.rows()
    }

    pub fn dim(&self) -> usize {
        self.latents.cols()
    }

    pub fn latents(&self) -> &Matrix {
        &self.latents
    }

    pub fn latents_mut(&mut self) -> &mut Matrix {
        &mut self.latents
    }

    pub fn timesteps(&self) -> &TimestepVector {
        &self.timesteps
    }

    pub fn timesteps_mut(&mut self) -> &mut TimestepVector {
        &mut self.timesteps
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        self.latents.row(f)
    }

    pub fn into_parts(self) -> (Matrix, TimestepVector) {
        (self.latents, self.timesteps)
    }

    /// Frames `start..end` as an owned sequence.
    pub fn window(&self, start: usize, end: usize) -> LatentSequence {
        Self {
            latents: self.latents.slice_rows(start, end),
            timesteps: self.timesteps.slice(start, end),
        }
    }

    pub fn write_container<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(LATENT_MAGIC)?;
        w.write_all(&LATENT_VERSION.to_le_bytes())?;
        w.write_all(&(self.frames() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        for v in self.latents.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a container; the result is clean (`t = 0` for every frame).
    pub fn read_container<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        ensure!(&magic == LATENT_MAGIC, Format, "bad latent container magic {magic:?}");
        let version = read_u32(&mut r)?;
        ensure!(version == LATENT_VERSION, Format, "unsupported latent container version {version}");
        let frames = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        ensure!(
            frames.checked_mul(dim).is_some_and(|n| n <= 1 << 32),
            Format,
            "implausible container shape {frames}x{dim}"
        );
        let mut data = Vec::with_capacity(frames * dim);
        for _ in 0..frames * dim {
            data.push(read_f64(&mut r)?);
        }
        let mut trailing = [0u8; 1];
        ensure!(
            r.read(&mut trailing)? == 0,
            Format,
            "trailing bytes after latent payload"
        );
        Self::clean(Matrix::from_vec(frames, dim, data)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::with_capacity(24 + 8 * self.latents.data().len());
        self.write_container(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_container(bytes.as_slice())
    }
}

const LATENT_MAGIC: &[u8; 4] = b"DLSQ";
const LATENT_VERSION: u32 = 1;

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_layout_is_exact() {
        let seq = LatentSequence::clean(Matrix::from_rows(&[vec![1.0, -2.5]]).unwrap()).unwrap();
        let mut buf = Vec::new();
        seq.write_container(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"DLSQ");
        assert_eq!(&buf[4..8], &[1, 0, 0, 0]);
        assert_eq!(&buf[8..16], &1u64.to_le_bytes());
        assert_eq!(&buf[16..24], &2u64.to_le_bytes());
        assert_eq!(&buf[24..32], &1.0f64.to_le_bytes());
        assert_eq!(&buf[32..40], &(-2.5f64).to_le_bytes());
        assert_eq!(buf.len(), 40);
        assert_eq!(LatentSequence::read_container(buf.as_slice()).unwrap(), seq);
    }

    #[test]
    fn container_rejects_corruption() {
        let seq = LatentSequence::clean(Matrix::zeros(2, 3)).unwrap();
        let mut buf = Vec::new();
        seq.write_container(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(LatentSequence::read_container(bad.as_slice()).is_err());
        assert!(LatentSequence::read_container(&buf[..buf.len() - 1]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(LatentSequence::read_container(long.as_slice()).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(LatentSequence::new(Matrix::zeros(3, 2), TimestepVector::uniform(2, 0)).is_err());
    }
}
