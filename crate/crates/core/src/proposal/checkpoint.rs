//! Binary checkpoints: `VSMP`, format version, conv count, then for every
//! convolution its shape `(out, in, kh, kw)` followed by the weights and the
//! biases as little-endian `f32`. All integers are little-endian `u32`.

use std::path::Path;

use super::layers::KERNEL;
use super::net::{ProposalConfig, ProposalNet};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VSMP";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn to_bytes(net: &ProposalNet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * net.parameter_count());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, net.convs().count());
    for conv in net.convs() {
        for v in [conv.out_channels, conv.in_channels, KERNEL, KERNEL] {
            put_u32(&mut out, v);
        }
        for &w in conv.weight.iter().chain(&conv.bias) {
            out.extend_from_slice(&(w as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect())
    }
}

/// Parses a checkpoint written for a network of shape `config`.
pub fn from_bytes(bytes: &[u8], config: ProposalConfig) -> Result<ProposalNet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a proposal checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}, expected {VERSION}")));
    }
    let mut net = ProposalNet::zeros(config)?;
    let count = r.u32()? as usize;
    if count != config.conv_count() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {count} convolutions, configuration expects {}",
            config.conv_count()
        )));
    }
    for (i, conv) in net.convs_mut().enumerate() {
        let shape = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|v| v as usize);
        if shape != [conv.out_channels, conv.in_channels, KERNEL, KERNEL] {
            return Err(Error::Checkpoint(format!(
                "convolution {i} has shape {shape:?}, configuration expects {:?}",
                [conv.out_channels, conv.in_channels, KERNEL, KERNEL]
            )));
        }
        conv.weight = r.f32s(conv.weight.len())?;
        conv.bias = r.f32s(conv.bias.len())?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after the last layer".into()));
    }
    Ok(net)
}

pub fn save(net: &ProposalNet, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(net))?;
    Ok(())
}

/// Loads a checkpoint; a missing file is reported as [`Error::MissingCheckpoint`].
pub fn load(path: &Path, config: ProposalConfig) -> Result<ProposalNet> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingCheckpoint { path: path.to_path_buf() })
        }
        Err(e) => return Err(e.into()),
    };
    from_bytes(&bytes, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, stream_rng};

    fn small() -> ProposalConfig {
        ProposalConfig { bins: 6, hidden: 3, low_convs: 1, mid_convs: 0, high_convs: 1, head_convs: 2 }
    }

    #[test]
    fn round_trip_keeps_f32_precision() {
        let net = ProposalNet::init(small(), &mut stream_rng(1, stream::INIT, 0)).unwrap();
        let back = from_bytes(&to_bytes(&net), small()).unwrap();
        for (a, b) in net.convs().zip(back.convs()) {
            for (x, y) in a.weight.iter().zip(&b.weight) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
        assert_eq!(to_bytes(&back), to_bytes(&net));
    }

    #[test]
    fn header_layout() {
        let net = ProposalNet::zeros(small()).unwrap();
        let bytes = to_bytes(&net);
        assert_eq!(&bytes[..4], b"VSMP");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        assert_eq!(bytes.len(), 12 + 5 * 16 + 4 * net.parameter_count());
    }

    #[test]
    fn rejects_bad_version_and_shapes() {
        let net = ProposalNet::zeros(small()).unwrap();
        let mut bytes = to_bytes(&net);
        bytes[4] = 2;
        assert!(matches!(from_bytes(&bytes, small()), Err(Error::Checkpoint(m)) if m.contains("version")));
        let bytes = to_bytes(&net);
        assert!(from_bytes(&bytes, ProposalConfig { hidden: 4, ..small() }).is_err());
        assert!(from_bytes(&bytes[..bytes.len() - 1], small()).is_err());
        assert!(from_bytes(b"NOPE", small()).is_err());
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = load(&dir.path().join("absent.vsmp"), small()).unwrap_err();
        assert!(matches!(err, Error::MissingCheckpoint { .. }));
    }
}
