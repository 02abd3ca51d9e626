//! Binary checkpoints: `AHL1` magic, an architecture descriptor, the
//! parameter count, then every parameter as a little-endian f64.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ScorerNet, SequencePredictorNet};

pub const MAGIC: &[u8; 4] = b"AHL1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    Scorer { input: u32, hidden: u32 },
    SequencePredictor { width: u32, hidden: u32, fc: u32 },
}

impl Architecture {
    pub fn param_count(&self) -> usize {
        match *self {
            Architecture::Scorer { input, hidden } => ScorerNet::param_count(input as usize, hidden as usize),
            Architecture::SequencePredictor { width, hidden, fc } => {
                SequencePredictorNet::param_count(width as usize, hidden as usize, fc as usize)
            }
        }
    }
}

impl ScorerNet {
    pub fn architecture(&self) -> Architecture {
        Architecture::Scorer {
            input: self.input_dim() as u32,
            hidden: self.hidden() as u32,
        }
    }

    pub fn write_to(&self, w: impl Write) -> Result<()> {
        write_checkpoint(w, self.architecture(), self.params())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        match read_checkpoint(r)? {
            (Architecture::Scorer { input, hidden }, params) => {
                ScorerNet::from_params(input as usize, hidden as usize, params)
            }
            (other, _) => Err(Error::Checkpoint(format!("expected a scorer, found {other:?}"))),
        }
    }
}

impl SequencePredictorNet {
    pub fn architecture(&self) -> Architecture {
        Architecture::SequencePredictor {
            width: self.width() as u32,
            hidden: self.hidden() as u32,
            fc: self.fc() as u32,
        }
    }

    pub fn write_to(&self, w: impl Write) -> Result<()> {
        write_checkpoint(w, self.architecture(), self.params())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        match read_checkpoint(r)? {
            (Architecture::SequencePredictor { width, hidden, fc }, params) => {
                SequencePredictorNet::from_params(width as usize, hidden as usize, fc as usize, params)
            }
            (other, _) => Err(Error::Checkpoint(format!("expected a sequence predictor, found {other:?}"))),
        }
    }
}

pub fn write_checkpoint(mut w: impl Write, arch: Architecture, params: &[f64]) -> Result<()> {
    if params.len() != arch.param_count() {
        return Err(Error::Shape {
            expected: arch.param_count(),
            got: params.len(),
        });
    }
    w.write_all(MAGIC)?;
    match arch {
        Architecture::Scorer { input, hidden } => {
            w.write_all(&[0])?;
            w.write_all(&input.to_le_bytes())?;
            w.write_all(&hidden.to_le_bytes())?;
        }
        Architecture::SequencePredictor { width, hidden, fc } => {
            w.write_all(&[1])?;
            w.write_all(&width.to_le_bytes())?;
            w.write_all(&hidden.to_le_bytes())?;
            w.write_all(&fc.to_le_bytes())?;
        }
    }
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(Architecture, Vec<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let arch = match kind[0] {
        0 => Architecture::Scorer {
            input: read_u32(&mut r)?,
            hidden: read_u32(&mut r)?,
        },
        1 => Architecture::SequencePredictor {
            width: read_u32(&mut r)?,
            hidden: read_u32(&mut r)?,
            fc: read_u32(&mut r)?,
        },
        k => return Err(Error::Checkpoint(format!("unknown architecture tag {k}"))),
    };
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len != arch.param_count() {
        return Err(Error::Checkpoint(format!(
            "{arch:?} needs {} parameters, header says {len}",
            arch.param_count()
        )));
    }
    let mut params = Vec::with_capacity(len);
    let mut b = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut b)?;
        params.push(f64::from_le_bytes(b));
    }
    Ok((arch, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scorer_round_trip() {
        let net = ScorerNet::init(16, 64, 9);
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], MAGIC);
        let back = ScorerNet::read_from(buf.as_slice()).unwrap();
        assert!(net.params().iter().zip(back.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(net, back);
    }

    #[test]
    fn predictor_round_trip() {
        let net = SequencePredictorNet::init(7, 2);
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        assert_eq!(SequencePredictorNet::read_from(buf.as_slice()).unwrap(), net);
        assert!(ScorerNet::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn corrupt_headers_rejected() {
        let net = ScorerNet::init(2, 3, 0);
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(ScorerNet::read_from(bad.as_slice()), Err(Error::Checkpoint(_))));
        let truncated = &buf[..buf.len() - 3];
        assert!(ScorerNet::read_from(truncated).is_err());
        let mut wrong_len = buf.clone();
        wrong_len[13] = 99;
        assert!(ScorerNet::read_from(wrong_len.as_slice()).is_err());
    }
}
