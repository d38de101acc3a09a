//! `FAMC` model files: magic, version, length-prefixed config text, then
//! every parameter as name, rank, dims and little-endian f64 values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::ByteReader;
use crate::tensor::{Parameter, Tensor};

const MAGIC: &[u8; 4] = b"FAMC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub params: Vec<(String, Tensor)>,
}

pub fn encode(config: &str, params: &[&Parameter]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic: expected FAMC".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("checkpoint version={version} unsupported")));
    }
    let len = r.u32()? as usize;
    let config = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format("config blob is not UTF-8".into()))?;
    let mut params = Vec::new();
    while r.remaining() > 0 {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("{name}: rank={rank} unsupported")));
        }
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.filter(|&n| n.saturating_mul(8) <= r.remaining()).ok_or_else(|| {
            Error::Format(format!("{name}: dims {dims:?} exceed the remaining {} bytes", r.remaining()))
        })?;
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params.push((name, Tensor::from_vec(&dims, data)?));
    }
    Ok(Checkpoint { config, params })
}

pub fn save(path: impl AsRef<Path>, config: &str, params: &[&Parameter]) -> Result<()> {
    fs::write(path, encode(config, params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode(&fs::read(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Vec<Parameter> {
        vec![
            Parameter::new("a.weight", Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-300, f64::MAX]).unwrap()),
            Parameter::new("a.bias", Tensor::from_vec(&[2], vec![0.25, -0.0]).unwrap()),
        ]
    }

    #[test]
    fn round_trip_is_exact() {
        let ps = params();
        let refs: Vec<&Parameter> = ps.iter().collect();
        let bytes = encode("seed = 1\n", &refs);
        let ck = decode(&bytes).unwrap();
        assert_eq!(ck.config, "seed = 1\n");
        assert_eq!(ck.params.len(), 2);
        for ((name, t), p) in ck.params.iter().zip(&ps) {
            assert_eq!(name, &p.name);
            assert_eq!(t.shape(), p.value.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t), bits(&p.value));
        }
    }

    #[test]
    fn layout_is_fixed() {
        let p = Parameter::new("w", Tensor::from_vec(&[1], vec![1.0]).unwrap());
        let bytes = encode("k", &[&p]);
        let mut expected = b"FAMC".to_vec();
        for v in [1u32, 1] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.push(b'k');
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.push(b'w');
        for v in [1u32, 1] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let ps = params();
        let bytes = encode("x", &ps.iter().collect::<Vec<_>>());
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(matches!(decode(&bad), Err(Error::Format(_))));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(decode(&bad).unwrap_err().to_string().contains("version=9"));
    }
}
