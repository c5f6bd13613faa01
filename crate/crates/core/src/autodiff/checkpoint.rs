use serde::{Deserialize, Serialize};

use super::{GradError, ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"CKGP";
const VERSION: u32 = 1;

/// One named tensor in a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

fn records(store: &ParamStore) -> Vec<CheckpointRecord> {
    store
        .ids()
        .map(|id| CheckpointRecord {
            name: store.name(id).to_string(),
            shape: store.get(id).shape().to_vec(),
            values: store.get(id).data().to_vec(),
        })
        .collect()
}

fn from_records(recs: Vec<CheckpointRecord>) -> Result<ParamStore, GradError> {
    let mut store = ParamStore::new();
    for r in recs {
        let t = Tensor::new(r.shape, r.values)?;
        store.add(r.name, t);
    }
    Ok(store)
}

pub fn save_json(store: &ParamStore) -> String {
    serde_json::to_string(&records(store)).expect("records serialize")
}

pub fn load_json(text: &str) -> Result<ParamStore, GradError> {
    let recs: Vec<CheckpointRecord> =
        serde_json::from_str(text).map_err(|e| GradError::Checkpoint(e.to_string()))?;
    from_records(recs)
}

/// Flat little-endian layout: magic, version, record count, then per record
/// name length, name bytes, rank, dims and raw f64 values.
pub fn save_binary(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for r in records(store) {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for d in &r.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GradError> {
        if self.pos + n > self.buf.len() {
            return Err(GradError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, GradError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, GradError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_binary(buf: &[u8]) -> Result<ParamStore, GradError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(GradError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(GradError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u64()? as usize;
    let mut recs = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|e| GradError::Checkpoint(e.to_string()))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        recs.push(CheckpointRecord {
            name,
            shape,
            values,
        });
    }
    if r.pos != buf.len() {
        return Err(GradError::Checkpoint("trailing bytes".into()));
    }
    from_records(recs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample() -> ParamStore {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        s.add_uniform("w", &[3, 4], 1.0, &mut rng);
        s.add("b", Tensor::vector(vec![0.1, -1e-300, f64::MAX]));
        s
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let s = sample();
        let bytes = save_binary(&s);
        let back = load_binary(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(save_binary(&back), bytes);
        assert!(load_binary(&bytes[..bytes.len() - 1]).is_err());
        assert!(load_binary(b"XXXX").is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let s = sample();
        let text = save_json(&s);
        assert_eq!(load_json(&text).unwrap(), s);
        assert!(load_json("{").is_err());
    }
}
