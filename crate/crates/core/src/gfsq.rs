//! Grouped finite scalar quantization.
//!
//! Every latent scalar is bounded with `tanh`, scaled onto `l` odd levels and
//! rounded. A group of `dims_per_group` scalars is packed into one index by
//! mixed-radix encoding (dimension 0 least significant), so the codebook of
//! each group is the implicit grid of all level combinations.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::tensor::FrameTensor;

/// Largest codebook an index (`u32`) can address.
pub const MAX_CODEBOOK_SIZE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGfsqConfig", into = "RawGfsqConfig")]
pub struct GfsqConfig {
    groups: usize,
    levels: Vec<u32>,
    hop: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGfsqConfig {
    groups: usize,
    levels: Vec<u32>,
    hop: usize,
}

impl TryFrom<RawGfsqConfig> for GfsqConfig {
    type Error = crate::Error;

    fn try_from(raw: RawGfsqConfig) -> Result<Self> {
        GfsqConfig::new(raw.groups, raw.levels, raw.hop)
    }
}

impl From<GfsqConfig> for RawGfsqConfig {
    fn from(c: GfsqConfig) -> Self {
        RawGfsqConfig {
            groups: c.groups,
            levels: c.levels,
            hop: c.hop,
        }
    }
}

impl GfsqConfig {
    pub fn new(groups: usize, levels: Vec<u32>, hop: usize) -> Result<Self> {
        if groups == 0 {
            bail!(Config, "groups must be positive");
        }
        if hop == 0 {
            bail!(Config, "hop must be positive");
        }
        if levels.is_empty() {
            bail!(Config, "levels must not be empty");
        }
        for &l in &levels {
            check_levels(l)?;
        }
        let size = levels.iter().try_fold(1u64, |acc, &l| acc.checked_mul(l as u64));
        match size {
            Some(s) if s <= MAX_CODEBOOK_SIZE => {}
            _ => bail!(Config, "codebook size of levels {levels:?} exceeds 2^32"),
        }
        Ok(Self { groups, levels, hop })
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn dims_per_group(&self) -> usize {
        self.levels.len()
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    /// Channel count `G · dims_per_group` a latent must carry.
    pub fn latent_channels(&self) -> usize {
        self.groups * self.levels.len()
    }

    /// Same grouping and levels with a different hop.
    pub fn with_hop(&self, hop: usize) -> Result<Self> {
        Self::new(self.groups, self.levels.clone(), hop)
    }
}

fn check_levels(l: u32) -> Result<()> {
    if l < 3 || l.is_multiple_of(2) {
        bail!(Config, "level count {l} must be odd and at least 3");
    }
    Ok(())
}

/// Number of entries in each group's implicit codebook, `Π l_i`.
pub fn codebook_size(config: &GfsqConfig) -> u64 {
    config.levels.iter().map(|&l| l as u64).product()
}

/// Bounded rounding of one scalar onto `levels` points in `[-1, 1]`.
///
/// Returns the level index in `[0, levels)` and the grid value.
pub fn fsq_quantize_dim(value: f64, levels: u32) -> Result<(u32, f64)> {
    check_levels(levels)?;
    if !value.is_finite() {
        bail!(Domain, "cannot quantize non-finite value {value}");
    }
    Ok(quantize_unchecked(value, levels))
}

#[inline]
pub(crate) fn quantize_unchecked(value: f64, levels: u32) -> (u32, f64) {
    let half = ((levels - 1) / 2) as f64;
    // f64::round resolves ties away from zero.
    let q = (half * value.tanh()).round();
    ((q + half) as u32, q / half)
}

/// Grid value of a level index.
#[inline]
pub fn level_value(index: u32, levels: u32) -> f64 {
    let half = ((levels - 1) / 2) as f64;
    (index as f64 - half) / half
}

/// Integer codebook indices shaped `(B, G, L_d)` together with the quantizer
/// that interprets them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeGrid {
    shape: [usize; 3],
    indices: Vec<u32>,
    config: GfsqConfig,
}

impl CodeGrid {
    pub fn new(shape: [usize; 3], indices: Vec<u32>, config: GfsqConfig) -> Result<Self> {
        if shape[0] == 0 {
            bail!(Shape, "batch must be positive");
        }
        if shape[1] != config.groups {
            bail!(Shape, "grid has {} groups, config has {}", shape[1], config.groups);
        }
        if indices.len() != shape.iter().product::<usize>() {
            bail!(Shape, "{} indices do not fill shape {shape:?}", indices.len());
        }
        let size = codebook_size(&config);
        if let Some(pos) = indices.iter().position(|&k| k as u64 >= size) {
            bail!(
                Data,
                "index {} at position {pos} exceeds codebook size {size}",
                indices[pos]
            );
        }
        Ok(Self { shape, indices, config })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn config(&self) -> &GfsqConfig {
        &self.config
    }

    pub fn frames(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn at(&self, b: usize, g: usize, l: usize) -> u32 {
        self.indices[(b * self.shape[1] + g) * self.shape[2] + l]
    }

    /// All indices emitted by group `g`, over every batch item and frame.
    pub fn group_indices(&self, g: usize) -> impl Iterator<Item = u32> + '_ {
        let [batch, _, len] = self.shape;
        (0..batch).flat_map(move |b| (0..len).map(move |l| self.at(b, g, l)))
    }

    pub fn batch_item(&self, b: usize) -> CodeGrid {
        let n = self.shape[1] * self.shape[2];
        CodeGrid {
            shape: [1, self.shape[1], self.shape[2]],
            indices: self.indices[b * n..(b + 1) * n].to_vec(),
            config: self.config.clone(),
        }
    }
}

/// Quantizes a `(B, G·dims_per_group, L)` latent into a `(B, G, L)` code grid.
pub fn gfsq_encode(latent: &FrameTensor, config: &GfsqConfig) -> Result<CodeGrid> {
    let [batch, channels, len] = latent.shape();
    let dims = config.dims_per_group();
    if channels != config.latent_channels() {
        bail!(
            Shape,
            "latent has {channels} channels, config needs {} groups x {dims} dims",
            config.groups
        );
    }
    let mut indices = vec![0u32; batch * config.groups * len];
    for b in 0..batch {
        for g in 0..config.groups {
            let out = &mut indices[(b * config.groups + g) * len..][..len];
            let mut radix = 1u64;
            for (i, &levels) in config.levels.iter().enumerate() {
                let row = latent.row(b, g * dims + i);
                for (slot, &v) in out.iter_mut().zip(row) {
                    if !v.is_finite() {
                        bail!(Domain, "non-finite latent at ({b}, {}, ..)", g * dims + i);
                    }
                    let (d, _) = quantize_unchecked(v, levels);
                    *slot += (d as u64 * radix) as u32;
                }
                radix *= levels as u64;
            }
        }
    }
    CodeGrid::new([batch, config.groups, len], indices, config.clone())
}

/// Unpacks a code grid into grid values, groups concatenated along channels.
pub fn gfsq_decode(codes: &CodeGrid) -> Result<FrameTensor> {
    let [batch, groups, len] = codes.shape;
    let config = &codes.config;
    let dims = config.dims_per_group();
    if len == 0 {
        bail!(Shape, "cannot decode an empty code grid");
    }
    let size = codebook_size(config);
    let mut out = FrameTensor::zeros([batch, groups * dims, len]);
    for b in 0..batch {
        for g in 0..groups {
            for l in 0..len {
                let mut k = codes.at(b, g, l);
                if k as u64 >= size {
                    bail!(Data, "index {k} exceeds codebook size {size}");
                }
                for (i, &levels) in config.levels.iter().enumerate() {
                    let d = k % levels;
                    k /= levels;
                    *out.at_mut(b, g * dims + i, l) = level_value(d, levels);
                }
            }
        }
    }
    Ok(out)
}

/// Elementwise grid quantization `round(h·tanh(z))/h` without packing.
pub fn quantize_latent(latent: &FrameTensor, config: &GfsqConfig) -> Result<FrameTensor> {
    let [_, channels, _] = latent.shape();
    if channels != config.latent_channels() {
        bail!(
            Shape,
            "latent has {channels} channels, config needs {}",
            config.latent_channels()
        );
    }
    let dims = config.dims_per_group();
    let mut out = latent.clone();
    let [batch, _, _] = latent.shape();
    for b in 0..batch {
        for c in 0..channels {
            let levels = config.levels[c % dims];
            for v in out.row_mut(b, c) {
                if !v.is_finite() {
                    bail!(Domain, "non-finite latent in channel {c}");
                }
                *v = quantize_unchecked(*v, levels).1;
            }
        }
    }
    Ok(out)
}

/// Per-group fraction of the codebook observed in `codes`.
pub fn utilization(codes: &CodeGrid) -> Result<Vec<f64>> {
    Ok(histograms(codes)?
        .iter()
        .map(|h| h.iter().filter(|&&n| n > 0).count() as f64 / h.len() as f64)
        .collect())
}

/// Per-group index counts, one `Vec` of length `codebook_size` per group.
pub fn histograms(codes: &CodeGrid) -> Result<Vec<Vec<u64>>> {
    if codes.indices.is_empty() {
        bail!(Domain, "utilization of an empty code grid is undefined");
    }
    let size = codebook_size(&codes.config);
    if size > 1 << 26 {
        bail!(Domain, "codebook of {size} entries is too large to histogram");
    }
    Ok((0..codes.shape[1])
        .map(|g| {
            let mut hist = vec![0u64; size as usize];
            for k in codes.group_indices(g) {
                hist[k as usize] += 1;
            }
            hist
        })
        .collect())
}

/// Shannon entropy in bits of an index histogram.
pub fn entropy_bits(hist: &[u64]) -> f64 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    hist.iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let n = n as f64;
            // p·log2(1/p) rather than −p·log2(p) so a single used index gives +0.0
            n / total * (total / n).log2()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    fn cfg(groups: usize, levels: &[u32]) -> GfsqConfig {
        GfsqConfig::new(groups, levels.to_vec(), 1).unwrap()
    }

    #[test]
    fn quantize_dim_examples() {
        assert_eq!(fsq_quantize_dim(0.0, 5).unwrap(), (2, 0.0));
        assert_eq!(fsq_quantize_dim(10.0, 3).unwrap(), (2, 1.0));
        assert_eq!(fsq_quantize_dim(-10.0, 3).unwrap(), (0, -1.0));
    }

    #[test]
    fn quantize_dim_errors() {
        assert!(matches!(fsq_quantize_dim(f64::NAN, 3), Err(Error::Domain(_))));
        assert!(matches!(fsq_quantize_dim(f64::INFINITY, 3), Err(Error::Domain(_))));
        assert!(matches!(fsq_quantize_dim(0.1, 4), Err(Error::Config(_))));
        assert!(matches!(fsq_quantize_dim(0.1, 1), Err(Error::Config(_))));
    }

    #[test]
    fn ties_round_away_from_zero() {
        // h = 2: h·tanh(v) = 0.5 exactly when tanh(v) = 0.25.
        let v = 0.25f64.atanh();
        let scaled = 2.0 * v.tanh();
        if scaled == 0.5 {
            assert_eq!(fsq_quantize_dim(v, 5).unwrap(), (3, 0.5));
            assert_eq!(fsq_quantize_dim(-v, 5).unwrap(), (1, -0.5));
        }
    }

    #[test]
    fn codebook_sizes() {
        assert_eq!(codebook_size(&cfg(1, &[3])), 3);
        assert_eq!(codebook_size(&cfg(1, &[3, 5, 5])), 75);
        assert_eq!(codebook_size(&cfg(1, &[3, 3])), 9);
    }

    #[test]
    fn config_validation() {
        assert!(matches!(GfsqConfig::new(1, vec![4], 1), Err(Error::Config(_))));
        assert!(matches!(GfsqConfig::new(0, vec![3], 1), Err(Error::Config(_))));
        assert!(matches!(GfsqConfig::new(1, vec![3], 0), Err(Error::Config(_))));
        assert!(matches!(GfsqConfig::new(1, vec![], 1), Err(Error::Config(_))));
        assert!(matches!(GfsqConfig::new(1, vec![255; 5], 1), Err(Error::Config(_))));
    }

    #[test]
    fn config_json_shape() {
        let c = GfsqConfig::new(2, vec![3, 5], 4).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, r#"{"groups":2,"levels":[3,5],"hop":4}"#);
        assert_eq!(serde_json::from_str::<GfsqConfig>(&json).unwrap(), c);
        assert!(serde_json::from_str::<GfsqConfig>(r#"{"groups":2,"levels":[2],"hop":1}"#).is_err());
    }

    #[test]
    fn encode_packs_center_and_saturation() {
        let z = FrameTensor::new([1, 4, 1], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let codes = gfsq_encode(&z, &cfg(2, &[3, 3])).unwrap();
        assert_eq!(codes.indices(), &[4, 4]);

        let z = FrameTensor::new([1, 1, 1], vec![10.0]).unwrap();
        assert_eq!(gfsq_encode(&z, &cfg(1, &[3])).unwrap().indices(), &[2]);
    }

    #[test]
    fn encode_shape_law() {
        let z = FrameTensor::zeros([2, 4, 7]);
        let codes = gfsq_encode(&z, &cfg(2, &[3, 3])).unwrap();
        assert_eq!(codes.shape(), [2, 2, 7]);
        let bad = FrameTensor::zeros([2, 5, 7]);
        assert!(matches!(gfsq_encode(&bad, &cfg(2, &[3, 3])), Err(Error::Shape(_))));
    }

    #[test]
    fn dimension_zero_is_least_significant() {
        // dim0 -> level 2 (+1), dim1 -> level 0 (-1): k = 2 + 0*3
        let z = FrameTensor::new([1, 2, 1], vec![5.0, -5.0]).unwrap();
        assert_eq!(gfsq_encode(&z, &cfg(1, &[3, 3])).unwrap().indices(), &[2]);
        let z = FrameTensor::new([1, 2, 1], vec![-5.0, 5.0]).unwrap();
        assert_eq!(gfsq_encode(&z, &cfg(1, &[3, 3])).unwrap().indices(), &[6]);
    }

    #[test]
    fn decode_center_and_range_errors() {
        let c = cfg(1, &[3, 3]);
        let grid = CodeGrid::new([1, 1, 1], vec![4], c.clone()).unwrap();
        assert_eq!(gfsq_decode(&grid).unwrap().data(), &[0.0, 0.0]);
        assert!(matches!(CodeGrid::new([1, 1, 1], vec![9], c), Err(Error::Data(_))));
    }

    #[test]
    fn exhaustive_bijection_3_5_5() {
        let c = cfg(1, &[3, 5, 5]);
        let indices: Vec<u32> = (0..75).collect();
        let grid = CodeGrid::new([1, 1, 75], indices.clone(), c.clone()).unwrap();
        let back = gfsq_encode(&gfsq_decode(&grid).unwrap(), &c).unwrap();
        assert_eq!(back.indices(), &indices[..]);
    }

    #[test]
    fn utilization_counts_distinct() {
        let c = cfg(1, &[3, 3]);
        let full = CodeGrid::new([1, 1, 9], (0..9).collect(), c.clone()).unwrap();
        assert_eq!(utilization(&full).unwrap(), vec![1.0]);
        let part = CodeGrid::new([1, 1, 8], vec![0, 1, 2, 3, 4, 5, 5, 0], c.clone()).unwrap();
        assert!((utilization(&part).unwrap()[0] - 6.0 / 9.0).abs() < 1e-9);
        let empty = CodeGrid::new([1, 1, 0], vec![], c).unwrap();
        assert!(matches!(utilization(&empty), Err(Error::Domain(_))));
    }

    #[test]
    fn entropy_of_histograms() {
        assert_eq!(entropy_bits(&[5, 0, 0]), 0.0);
        assert!(entropy_bits(&[5, 0, 0]).is_sign_positive());
        assert!((entropy_bits(&[1, 1, 1, 1]) - 2.0).abs() < 1e-12);
        assert_eq!(entropy_bits(&[0, 0]), 0.0);
    }
}
