//! Named-parameter checkpoints: an ASCII manifest (name, shape, byte
//! offset) followed by a little-endian 32-bit raw payload.

use super::tape::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};
use std::io::{Read, Write};

const MAGIC: &str = "BBCKPT1";

/// Writes all parameters (values stored as f32 regardless of the working
/// precision).
pub fn save_checkpoint<F: Real, W: Write>(params: &ParamStore<F>, w: &mut W) -> Result<()> {
    let mut manifest = format!("{MAGIC} {}\n", params.len());
    let mut offset = 0usize;
    for (name, t) in params.iter() {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("{name} {} {} {offset}\n", t.shape.len(), dims.join(" ")));
        offset += t.numel() * 4;
    }
    manifest.push_str("END\n");
    w.write_all(manifest.as_bytes())?;
    for (_, t) in params.iter() {
        for v in &t.data {
            w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint<F: Real, R: Read>(r: &mut R) -> Result<ParamStore<F>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let header_end = find_subslice(&bytes, b"END\n")
        .ok_or_else(|| Error::Parse { msg: "checkpoint manifest missing END".into(), offset: 0 })?;
    let manifest = std::str::from_utf8(&bytes[..header_end])
        .map_err(|e| Error::Parse { msg: format!("manifest not ASCII: {e}"), offset: 0 })?;
    let payload = &bytes[header_end + 4..];
    let mut lines = manifest.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Parse { msg: "empty checkpoint".into(), offset: 0 })?;
    let mut head = first.split_whitespace();
    if head.next() != Some(MAGIC) {
        return Err(Error::Parse { msg: format!("bad magic in {first:?}"), offset: 0 });
    }
    let count: usize = head
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse { msg: "bad parameter count".into(), offset: 0 })?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse { msg: "truncated manifest".into(), offset: 0 })?;
        let mut f = line.split_whitespace();
        let name = f
            .next()
            .ok_or_else(|| Error::Parse { msg: "missing name".into(), offset: 0 })?;
        let parse_usize = |s: Option<&str>| -> Result<usize> {
            s.and_then(|x| x.parse().ok())
                .ok_or_else(|| Error::Parse { msg: format!("bad manifest line {line:?}"), offset: 0 })
        };
        let ndim = parse_usize(f.next())?;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(parse_usize(f.next())?);
        }
        let offset = parse_usize(f.next())?;
        let numel: usize = shape.iter().product();
        if offset + numel * 4 > payload.len() {
            return Err(Error::Parse { msg: format!("payload truncated for {name}"), offset });
        }
        let data = (0..numel)
            .map(|i| {
                let b = &payload[offset + i * 4..offset + i * 4 + 4];
                F::from_f64(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            })
            .collect();
        store.add(name, Tensor::from_vec(&shape, data));
    }
    Ok(store)
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}
