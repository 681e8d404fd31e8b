use serde_json::json;

use super::{NeuroError, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"DKPARAMS";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Little-endian layout: magic, version u32, seed u64, count u32, then per
/// parameter `name_len u32, name, ndim u32, dims u64…`, then every tensor's
/// f64 payload in table order.
pub fn save_params(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * store.num_scalars());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&store.seed().to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        let shape = store.value(id).shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for id in store.ids() {
        for x in store.value(id).data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NeuroError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(NeuroError::Corrupt(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, NeuroError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, NeuroError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_params(bytes: &[u8]) -> Result<ParamStore, NeuroError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(NeuroError::Corrupt("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(NeuroError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let seed = r.u64("seed")?;
    let count = r.u32("parameter count")? as usize;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| NeuroError::Corrupt("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32("rank")? as usize;
        if ndim > 8 {
            return Err(NeuroError::Corrupt(format!("rank {ndim} of `{name}`")));
        }
        let shape = (0..ndim)
            .map(|_| r.u64("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        table.push((name, shape));
    }
    let mut store = ParamStore::new(seed);
    for (name, shape) in table {
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| NeuroError::Corrupt(format!("shape of `{name}` overflows")))?;
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| NeuroError::Corrupt("payload size".into()))?,
            "payload",
        )?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(&name, Tensor::from_vec(&shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(NeuroError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(store)
}

/// Human-readable export of the same content.
pub fn params_to_json(store: &ParamStore) -> serde_json::Value {
    let params: Vec<_> = store
        .ids()
        .map(|id| {
            json!({
                "name": store.name(id),
                "shape": store.value(id).shape(),
                "data": store.value(id).data(),
            })
        })
        .collect();
    json!({ "version": CHECKPOINT_VERSION, "seed": store.seed(), "params": params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuro::Init;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new(42);
        s.add("enc.w", &[3, 4], Init::Uniform { fan_in: 4 })
            .unwrap();
        s.add("enc.b", &[3], Init::Constant(-0.25)).unwrap();
        s.add("scalar", &[], Init::Constant(1.5)).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = sample();
        let bytes = save_params(&s);
        let back = load_params(&bytes).unwrap();
        assert_eq!(back.seed(), 42);
        for id in s.ids() {
            assert_eq!(back.name(id), s.name(id));
            let a: Vec<u64> = s.value(id).data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = back.value(id).data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert_eq!(save_params(&back), bytes);
    }

    #[test]
    fn truncated_and_versioned() {
        let bytes = save_params(&sample());
        for cut in [3, 20, bytes.len() - 1] {
            assert!(matches!(
                load_params(&bytes[..cut]),
                Err(NeuroError::Corrupt(_))
            ));
        }
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert_eq!(
            load_params(&v2).unwrap_err(),
            NeuroError::Version {
                found: 2,
                expected: 1
            }
        );
        let mut extra = bytes;
        extra.push(0);
        assert!(load_params(&extra).is_err());
    }

    #[test]
    fn json_export_lists_every_parameter() {
        let j = params_to_json(&sample());
        assert_eq!(j["params"].as_array().unwrap().len(), 3);
        assert_eq!(j["params"][1]["data"][0], -0.25);
    }
}
