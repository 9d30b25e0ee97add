use crate::error::{bail, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"FFM1";
const VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Named single-precision tensors in insertion order, names unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightSet {
    records: Vec<WeightRecord>,
}

impl WeightSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            bail!(Format, "duplicate weight name {name}");
        }
        if shape.iter().product::<usize>() != data.len() {
            bail!(Shape, "record {name}: {} values for shape {shape:?}", data.len());
        }
        if data.iter().any(|v| !v.is_finite()) {
            bail!(Data, "record {name} holds non-finite values");
        }
        self.records.push(WeightRecord { name, shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&WeightRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &WeightRecord> {
        self.records.iter()
    }
}

/// Layout: magic `FFM1`, version `u8`, record count `u32`, then per record
/// name length `u16`, UTF-8 name, dtype tag `u8` (0 = f32), rank `u8`,
/// dims `u32` each, payload byte length `u64`, payload.
pub fn save_model(weights: &WeightSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(weights.len() as u32).to_le_bytes());
    for rec in weights.iter() {
        let name_len = u16::try_from(rec.name.len())
            .map_err(|_| crate::Error::Format(format!("record name {} too long", rec.name)))?;
        let rank = u8::try_from(rec.shape.len())
            .map_err(|_| crate::Error::Format(format!("record {} has rank > 255", rec.name)))?;
        if rec.data.iter().any(|v| !v.is_finite()) {
            bail!(Data, "record {} holds non-finite values", rec.name);
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(rec.name.as_bytes());
        out.push(DTYPE_F32);
        out.push(rank);
        for &d in &rec.shape {
            let d = u32::try_from(d).map_err(|_| crate::Error::Format(format!("record {} dim too large", rec.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&((rec.data.len() * 4) as u64).to_le_bytes());
        for v in &rec.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            bail!(Length, "truncated while reading {what}");
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_model(bytes: &[u8]) -> Result<WeightSet> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MODEL_MAGIC {
        bail!(Format, "bad model magic");
    }
    let version = cur.u8("version")?;
    if version != VERSION {
        bail!(Format, "unsupported model version {version}");
    }
    let count = cur.u32("record count")?;
    let mut set = WeightSet::new();
    for i in 0..count {
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| crate::Error::Format(format!("record {i} name is not UTF-8")))?
            .to_string();
        let dtype = cur.u8("dtype")?;
        if dtype != DTYPE_F32 {
            bail!(Format, "record {name} has unsupported dtype tag {dtype}");
        }
        let rank = cur.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32(&name)? as usize);
        }
        let declared = cur.u64(&name)?;
        let expected = shape.iter().product::<usize>() as u64 * 4;
        if declared != expected {
            bail!(
                Length,
                "record {name} declares {declared} payload bytes, shape {shape:?} needs {expected}"
            );
        }
        let raw = cur.take(declared as usize, &name)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            bail!(Format, "record {name} holds non-finite values");
        }
        if set.get(&name).is_some() {
            bail!(Format, "duplicate weight name {name}");
        }
        set.insert(name, shape, data)?;
    }
    if cur.pos != bytes.len() {
        bail!(Length, "{} trailing bytes after the last record", bytes.len() - cur.pos);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    fn sample() -> WeightSet {
        let mut w = WeightSet::new();
        w.insert("a.weight", vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-7, -0.0])
            .unwrap();
        w.insert("b", vec![], vec![4.0]).unwrap();
        w
    }

    #[test]
    fn save_load_save_is_stable() {
        let w = sample();
        let bytes = save_model(&w).unwrap();
        let back = load_model(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(save_model(&back).unwrap(), bytes);
    }

    #[test]
    fn empty_set_is_header_only() {
        let bytes = save_model(&WeightSet::new()).unwrap();
        assert_eq!(bytes.len(), 9);
        assert!(load_model(&bytes).unwrap().is_empty());
    }

    #[test]
    fn duplicates_rejected() {
        let mut w = sample();
        assert!(matches!(w.insert("b", vec![1], vec![0.0]), Err(Error::Format(_))));
        // forge a file with the same record twice
        let mut bytes = save_model(&sample()).unwrap();
        let mut single = WeightSet::new();
        single.insert("b", vec![], vec![4.0]).unwrap();
        let rec = save_model(&single).unwrap()[9..].to_vec();
        bytes.extend_from_slice(&rec);
        bytes[5..9].copy_from_slice(&3u32.to_le_bytes());
        assert!(matches!(load_model(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn declared_size_mismatch_names_record() {
        let mut single = WeightSet::new();
        single.insert("layer.bias", vec![2], vec![1.0, 2.0]).unwrap();
        let mut bytes = save_model(&single).unwrap();
        // size field follows magic(4)+ver(1)+count(4)+len(2)+name(10)+dtype(1)+rank(1)+dim(4)
        let at = 4 + 1 + 4 + 2 + 10 + 1 + 1 + 4;
        bytes[at..at + 8].copy_from_slice(&12u64.to_le_bytes());
        match load_model(&bytes) {
            Err(Error::Length(msg)) => assert!(msg.contains("layer.bias")),
            other => panic!("expected length error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_non_finite() {
        let mut bytes = save_model(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(load_model(&bytes), Err(Error::Format(_))));

        let mut bytes = save_model(&sample()).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(load_model(&bytes), Err(Error::Format(_))));
        let mut w = WeightSet::new();
        assert!(w.insert("x", vec![1], vec![f32::INFINITY]).is_err());
    }
}
