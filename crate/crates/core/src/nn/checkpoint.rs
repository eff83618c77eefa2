//! Binary parameter files.
//!
//! ```text
//! magic      b"RD2N"
//! format     u32 LE
//! spec_len   u32 LE, followed by the NetworkSpec as JSON
//! version    u64 LE
//! byte_len   u64 LE, followed by the parameters as f64 LE
//! ```

use super::{NetworkParams, NetworkSpec, NnError};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"RD2N";

pub fn serialize_params(params: &NetworkParams) -> Vec<u8> {
    let spec = serde_json::to_vec(&params.spec).expect("spec is plain data");
    let mut out = Vec::with_capacity(28 + spec.len() + params.data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    out.extend_from_slice(&params.version.to_le_bytes());
    out.extend_from_slice(&((params.data.len() * 8) as u64).to_le_bytes());
    for v in &params.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NnError> {
        if self.buf.len() - self.pos < n {
            return Err(NnError::Format(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parse one network and return it with the number of bytes consumed. When
/// `expected` is given the stored spec must match it exactly.
pub fn deserialize_params(
    bytes: &[u8],
    expected: Option<&NetworkSpec>,
) -> Result<(NetworkParams, usize), NnError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(NnError::Format("bad magic".into()));
    }
    let format = r.u32("format")?;
    if format != FORMAT_VERSION {
        return Err(NnError::Format(format!(
            "unsupported format {format} (expected {FORMAT_VERSION})"
        )));
    }
    let spec_len = r.u32("spec length")? as usize;
    let spec: NetworkSpec = serde_json::from_slice(r.take(spec_len, "spec")?)
        .map_err(|e| NnError::Format(format!("spec: {e}")))?;
    spec.validate()?;
    if let Some(want) = expected {
        if *want != spec {
            return Err(NnError::SpecMismatch(format!(
                "file holds {:?} {:?} {}x{}, expected {:?} {:?} {}x{}",
                spec.role,
                spec.cell,
                spec.hidden,
                spec.recurrent_hidden,
                want.role,
                want.cell,
                want.hidden,
                want.recurrent_hidden
            )));
        }
    }
    let version = r.u64("version")?;
    let byte_len = r.u64("payload length")? as usize;
    let n = spec.param_count();
    if byte_len != n * 8 {
        return Err(NnError::Format(format!(
            "payload of {byte_len} bytes, spec needs {}",
            n * 8
        )));
    }
    let payload = r.take(byte_len, "payload")?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((NetworkParams { spec, data, version }, r.pos))
}
