//! Flat little-endian binary snapshot of a teacher/student pair.
//!
//! ```text
//! magic   8 bytes  "IFSSLMT1"
//! per network (student, then teacher):
//!   activation u8 (0 tanh, 1 relu, 2 linear)
//!   layers     u32
//!   per layer: n_in u32, n_out u32, weights f64 x n_out*n_in (row-major), bias f64 x n_out
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::meanteacher::TeacherStudentPair;
use crate::netcore::{Activation, DenseLayer, Matrix, NetworkParams};

const MAGIC: &[u8; 8] = b"IFSSLMT1";

fn format_err(message: impl Into<String>) -> Error {
    Error::Format {
        line: 0,
        message: message.into(),
    }
}

fn push_network(out: &mut Vec<u8>, net: &NetworkParams) {
    out.push(match net.activation {
        Activation::Tanh => 0,
        Activation::Relu => 1,
        Activation::Linear => 2,
    });
    out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for layer in &net.layers {
        out.extend_from_slice(&(layer.n_in() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.n_out() as u32).to_le_bytes());
        for v in layer.weight.as_slice().iter().chain(&layer.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode_pair(pair: &TeacherStudentPair) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    push_network(&mut out, &pair.student);
    push_network(&mut out, &pair.teacher);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format_err("snapshot truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| format_err("size overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn network(&mut self) -> Result<NetworkParams> {
        let activation = match self.take(1)?[0] {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            2 => Activation::Linear,
            other => return Err(format_err(format!("unknown activation tag {other}"))),
        };
        let count = self.u32()?;
        let mut layers = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let n_in = self.u32()?;
            let n_out = self.u32()?;
            let weights = self.f64s(n_in * n_out)?;
            let bias = self.f64s(n_out)?;
            layers.push(DenseLayer {
                weight: Matrix::from_vec(n_out, n_in, weights)?,
                bias,
            });
        }
        NetworkParams::from_layers(layers, activation).map_err(|e| format_err(e.to_string()))
    }
}

pub fn decode_pair(bytes: &[u8]) -> Result<TeacherStudentPair> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(format_err("not a model snapshot (bad magic)"));
    }
    let student = r.network()?;
    let teacher = r.network()?;
    if r.pos != bytes.len() {
        return Err(format_err("trailing bytes after snapshot"));
    }
    if !student.same_shape(&teacher) {
        return Err(format_err("teacher and student shapes differ"));
    }
    Ok(TeacherStudentPair { student, teacher })
}

pub fn save_snapshot(pair: &TeacherStudentPair, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pair(pair)).map_err(|e| Error::io(path, e))
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<TeacherStudentPair> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pair(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn pair() -> TeacherStudentPair {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s = NetworkParams::init(3, &[5, 4], 3, Activation::Tanh, &mut rng).unwrap();
        let mut t = NetworkParams::init(3, &[5, 4], 3, Activation::Tanh, &mut rng).unwrap();
        t.layers[0].bias[2] = f64::MIN_POSITIVE;
        TeacherStudentPair {
            student: s,
            teacher: t,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = pair();
        let back = decode_pair(&encode_pair(&p)).unwrap();
        assert_eq!(back, p);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_snapshot(&p, &path).unwrap();
        assert_eq!(load_snapshot(&path).unwrap(), p);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let bytes = encode_pair(&pair());
        assert!(matches!(decode_pair(&bytes[..20]), Err(Error::Format { .. })));
        assert!(matches!(decode_pair(b"NOTMAGIC"), Err(Error::Format { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_pair(&extra), Err(Error::Format { .. })));
    }
}
