use crate::error::{bail, Result};
use crate::gfsq::{codebook_size, CodeGrid, GfsqConfig};

pub const CODE_MAGIC: [u8; 4] = *b"FFC1";
const VERSION: u8 = 1;

/// Fixed-width header preceding each packed batch item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeStreamHeader {
    pub config: GfsqConfig,
    pub original_len: u32,
    pub frame_count: u32,
}

/// Header size in bytes for a given number of dimensions per group.
pub fn header_len(dims_per_group: usize) -> usize {
    4 + 1 + 1 + 2 + 1 + dims_per_group + 4 + 4
}

/// `ceil(log2(codebook_size))`.
pub fn bits_per_index(config: &GfsqConfig) -> u32 {
    let size = codebook_size(config);
    64 - (size - 1).leading_zeros()
}

/// Payload bits of a grid before byte padding: `B·G·L_d·bits`.
pub fn payload_bits(codes: &CodeGrid) -> u64 {
    codes.indices().len() as u64 * bits_per_index(codes.config()) as u64
}

struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    filled: u32,
}

impl BitWriter {
    fn new(bytes: Vec<u8>) -> Self {
        Self {
            bytes,
            acc: 0,
            filled: 0,
        }
    }

    fn write(&mut self, value: u32, bits: u32) {
        self.acc |= (value as u64) << self.filled;
        self.filled += bits;
        while self.filled >= 8 {
            self.bytes.push(self.acc as u8);
            self.acc >>= 8;
            self.filled -= 8;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.bytes.push(self.acc as u8);
        }
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    acc: u64,
    filled: u32,
}

impl BitReader<'_> {
    fn read(&mut self, bits: u32) -> u32 {
        while self.filled < bits {
            self.acc |= (self.bytes[self.pos] as u64) << self.filled;
            self.pos += 1;
            self.filled += 8;
        }
        let mask = if bits == 32 {
            u32::MAX as u64
        } else {
            (1u64 << bits) - 1
        };
        let v = (self.acc & mask) as u32;
        self.acc >>= bits;
        self.filled -= bits;
        v
    }
}

fn write_header(out: &mut Vec<u8>, config: &GfsqConfig, original_len: u32, frame_count: u32) -> Result<()> {
    let groups = u8::try_from(config.groups()).map_err(|_| crate::Error::Config("groups exceed 255".into()))?;
    let hop = u16::try_from(config.hop()).map_err(|_| crate::Error::Config("hop exceeds 65535".into()))?;
    let dims =
        u8::try_from(config.dims_per_group()).map_err(|_| crate::Error::Config("dims_per_group exceeds 255".into()))?;
    out.extend_from_slice(&CODE_MAGIC);
    out.push(VERSION);
    out.push(groups);
    out.extend_from_slice(&hop.to_le_bytes());
    out.push(dims);
    for &l in config.levels() {
        let l = u8::try_from(l).map_err(|_| crate::Error::Config(format!("level count {l} exceeds 255")))?;
        out.push(l);
    }
    out.extend_from_slice(&original_len.to_le_bytes());
    out.extend_from_slice(&frame_count.to_le_bytes());
    Ok(())
}

/// Serializes a code grid. Each batch item becomes one self-delimiting
/// stream (header + payload); items are concatenated in batch order.
///
/// Within a payload indices are written frame-major, group-minor, each in
/// exactly `bits_per_index` bits, LSB-first, with the last byte zero-padded.
pub fn pack_codes(codes: &CodeGrid, original_len: usize) -> Result<Vec<u8>> {
    let config = codes.config();
    let [batch, groups, frames] = codes.shape();
    let original = u32::try_from(original_len).map_err(|_| crate::Error::Domain("original_len exceeds u32".into()))?;
    if original_len.div_ceil(config.hop()) != frames {
        bail!(
            Shape,
            "{frames} frames do not match original length {original_len} at hop {}",
            config.hop()
        );
    }
    let bits = bits_per_index(config);
    let item_payload = (groups * frames * bits as usize).div_ceil(8);
    let mut out = Vec::with_capacity(batch * (header_len(config.dims_per_group()) + item_payload));
    for b in 0..batch {
        write_header(&mut out, config, original, frames as u32)?;
        let mut w = BitWriter::new(std::mem::take(&mut out));
        for l in 0..frames {
            for g in 0..groups {
                w.write(codes.at(b, g, l), bits);
            }
        }
        out = w.finish();
    }
    Ok(out)
}

fn read_header(bytes: &[u8]) -> Result<(CodeStreamHeader, usize)> {
    if bytes.len() < 9 {
        bail!(
            Length,
            "stream of {} bytes is shorter than the fixed header",
            bytes.len()
        );
    }
    if bytes[0..4] != CODE_MAGIC {
        bail!(Format, "bad magic {:?}", &bytes[0..4]);
    }
    if bytes[4] != VERSION {
        bail!(Format, "unsupported version {}", bytes[4]);
    }
    let groups = bytes[5] as usize;
    let hop = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let dims = bytes[8] as usize;
    let total = header_len(dims);
    if bytes.len() < total {
        bail!(Length, "header needs {total} bytes, {} available", bytes.len());
    }
    let levels: Vec<u32> = bytes[9..9 + dims].iter().map(|&l| l as u32).collect();
    let config =
        GfsqConfig::new(groups, levels, hop).map_err(|e| crate::Error::Format(format!("header config: {e}")))?;
    let p = 9 + dims;
    let original_len = u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap());
    let frame_count = u32::from_le_bytes(bytes[p + 4..p + 8].try_into().unwrap());
    if (original_len as usize).div_ceil(hop) != frame_count as usize {
        bail!(
            Format,
            "frame_count {frame_count} inconsistent with original_len {original_len} at hop {hop}"
        );
    }
    Ok((
        CodeStreamHeader {
            config,
            original_len,
            frame_count,
        },
        total,
    ))
}

/// Inverse of [`pack_codes`]. Returns the grid and the recorded original length.
pub fn unpack_codes(bytes: &[u8]) -> Result<(CodeGrid, usize)> {
    let mut pos = 0;
    let mut first: Option<CodeStreamHeader> = None;
    let mut indices = Vec::new();
    let mut batch = 0;
    while pos < bytes.len() || batch == 0 {
        let (header, hlen) = read_header(&bytes[pos..])?;
        if let Some(f) = &first {
            if *f != header {
                bail!(Format, "batch item {batch} header differs from item 0");
            }
        }
        pos += hlen;
        let groups = header.config.groups();
        let frames = header.frame_count as usize;
        let bits = bits_per_index(&header.config);
        let payload = (groups * frames * bits as usize).div_ceil(8);
        if bytes.len() - pos < payload {
            bail!(Length, "payload needs {payload} bytes, {} available", bytes.len() - pos);
        }
        let mut reader = BitReader {
            bytes: &bytes[pos..pos + payload],
            pos: 0,
            acc: 0,
            filled: 0,
        };
        let mut item = vec![0u32; groups * frames];
        for l in 0..frames {
            for g in 0..groups {
                item[g * frames + l] = reader.read(bits);
            }
        }
        let size = codebook_size(&header.config);
        if let Some(&bad) = item.iter().find(|&&k| k as u64 >= size) {
            bail!(Data, "unpacked index {bad} exceeds codebook size {size}");
        }
        indices.extend(item);
        pos += payload;
        batch += 1;
        first.get_or_insert(header);
    }
    let header = first.expect("at least one item is read");
    let grid = CodeGrid::new(
        [batch, header.config.groups(), header.frame_count as usize],
        indices,
        header.config,
    )?;
    Ok((grid, header.original_len as usize))
}
