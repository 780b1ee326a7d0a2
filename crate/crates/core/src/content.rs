//! Media catalog: sequences, the bitrate ladder and synthetic segment payloads.
//!
//! Payloads are opaque pseudorandom bytes. They are never held in memory by
//! the catalog; a [`SegmentPayload`] is a (length, content key) pair that
//! materializes the same bytes every time it is asked to.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use bytes::Bytes;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const URL_TEMPLATE: &str = "/content/{seq}/{rep}/{index}";

/// Rank in the bitrate ladder, 1 = lowest rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RepresentationId(u8);

impl RepresentationId {
    /// Panics on rank 0; use [`RepresentationId::try_new`] for untrusted input.
    pub fn new(rank: u8) -> Self {
        Self::try_new(rank).expect("representation ranks start at 1")
    }

    pub fn try_new(rank: u8) -> Option<Self> {
        (rank >= 1).then_some(Self(rank))
    }

    pub fn rank(self) -> u8 {
        self.0
    }

    pub fn lower(self) -> Self {
        Self(self.0.saturating_sub(1).max(1))
    }

    pub fn higher(self, max: Self) -> Self {
        Self((self.0 + 1).min(max.0))
    }
}

impl fmt::Display for RepresentationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.0)
    }
}

impl std::str::FromStr for RepresentationId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix(['R', 'r']).unwrap_or(s);
        digits
            .parse::<u8>()
            .ok()
            .and_then(Self::try_new)
            .ok_or_else(|| format!("invalid representation `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("catalog needs at least one sequence")]
    NoSequences,
    #[error("sequence `{0}`: durations must be positive")]
    NonPositiveDuration(String),
    #[error("duplicate sequence id `{0}`")]
    DuplicateSequence(String),
    #[error("ladder needs at least two representations, got {0}")]
    LadderTooShort(usize),
    #[error("ladder ranks must be 1..=L without gaps")]
    LadderRanks,
    #[error("ladder bitrates must strictly increase with rank")]
    NonMonotoneLadder,
    #[error("stored rank {0} is not in the ladder")]
    UnknownStoredRank(u8),
    #[error("the highest rank must be stored at the origin")]
    HighestNotStored,
    #[error("size jitter must lie in [0, 1), got {0}")]
    Jitter(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContentError {
    #[error("unknown sequence `{0}`")]
    UnknownSequence(String),
    #[error("unknown representation {0}")]
    UnknownRepresentation(RepresentationId),
    #[error("segment index {index} out of range (sequence has {count})")]
    IndexOutOfRange { index: u32, count: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub id: String,
    pub duration_s: f64,
    pub segment_duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub rank: u8,
    pub bitrate_bps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogConfig {
    pub sequences: Vec<SequenceConfig>,
    pub ladder: Vec<LadderEntry>,
    pub stored_ranks: Vec<u8>,
    pub seed: u64,
    pub size_jitter: f64,
}

/// Fixture ladder, roughly 8x between lowest and highest rate. These are
/// placeholder rates, not measurements of any particular content.
pub fn fixture_ladder() -> Vec<LadderEntry> {
    [8_000_000, 13_500_000, 22_500_000, 38_000_000, 64_000_000]
        .into_iter()
        .enumerate()
        .map(|(i, bitrate_bps)| LadderEntry {
            rank: i as u8 + 1,
            bitrate_bps,
        })
        .collect()
}

impl CatalogConfig {
    /// Four 80 s sequences over the fixture ladder, highest rank stored.
    pub fn fixture(segment_duration_s: f64) -> Self {
        Self {
            sequences: (0..4)
                .map(|i| SequenceConfig {
                    id: format!("seq{i}"),
                    duration_s: 80.0,
                    segment_duration_s,
                })
                .collect(),
            ladder: fixture_ladder(),
            stored_ranks: vec![5],
            seed: 1,
            size_jitter: 0.05,
        }
    }
}

impl Default for CatalogConfig {
    fn default() -> Self {
        Self::fixture(2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BitrateLadder {
    bitrates: Vec<u64>,
    stored: BTreeSet<RepresentationId>,
}

impl BitrateLadder {
    pub fn new(entries: &[LadderEntry], stored: &[u8]) -> Result<Self, ConfigError> {
        if entries.len() < 2 {
            return Err(ConfigError::LadderTooShort(entries.len()));
        }
        let mut sorted = entries.to_vec();
        sorted.sort_by_key(|e| e.rank);
        if sorted
            .iter()
            .enumerate()
            .any(|(i, e)| e.rank as usize != i + 1)
        {
            return Err(ConfigError::LadderRanks);
        }
        if sorted
            .windows(2)
            .any(|w| w[1].bitrate_bps <= w[0].bitrate_bps)
        {
            return Err(ConfigError::NonMonotoneLadder);
        }
        let len = sorted.len();
        let mut set = BTreeSet::new();
        for &rank in stored {
            if rank == 0 || rank as usize > len {
                return Err(ConfigError::UnknownStoredRank(rank));
            }
            set.insert(RepresentationId(rank));
        }
        if !set.contains(&RepresentationId(len as u8)) {
            return Err(ConfigError::HighestNotStored);
        }
        Ok(Self {
            bitrates: sorted.iter().map(|e| e.bitrate_bps).collect(),
            stored: set,
        })
    }

    pub fn len(&self) -> usize {
        self.bitrates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bitrates.is_empty()
    }

    pub fn lowest(&self) -> RepresentationId {
        RepresentationId(1)
    }

    pub fn highest(&self) -> RepresentationId {
        RepresentationId(self.bitrates.len() as u8)
    }

    pub fn contains(&self, rep: RepresentationId) -> bool {
        (rep.0 as usize) <= self.bitrates.len()
    }

    pub fn bitrate(&self, rep: RepresentationId) -> Option<u64> {
        self.bitrates.get(rep.0 as usize - 1).copied()
    }

    pub fn is_stored(&self, rep: RepresentationId) -> bool {
        self.stored.contains(&rep)
    }

    pub fn stored(&self) -> impl Iterator<Item = RepresentationId> + '_ {
        self.stored.iter().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (RepresentationId, u64)> + '_ {
        self.bitrates
            .iter()
            .enumerate()
            .map(|(i, &b)| (RepresentationId(i as u8 + 1), b))
    }
}

/// Identity and shape of one media segment.
///
/// Equality, ordering and hashing use only `(sequence, rep, index)`; duration
/// and size are functions of those within a catalog.
#[derive(Debug, Clone)]
pub struct SegmentDescriptor {
    pub sequence: Arc<str>,
    pub rep: RepresentationId,
    pub index: u32,
    pub duration: f64,
    pub size: u64,
}

impl SegmentDescriptor {
    fn identity(&self) -> (&str, RepresentationId, u32) {
        (&self.sequence, self.rep, self.index)
    }

    pub fn path(&self) -> String {
        segment_path(&self.sequence, self.rep, self.index)
    }
}

impl PartialEq for SegmentDescriptor {
    fn eq(&self, other: &Self) -> bool {
        self.identity() == other.identity()
    }
}
impl Eq for SegmentDescriptor {}
impl Hash for SegmentDescriptor {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.identity().hash(state)
    }
}
impl PartialOrd for SegmentDescriptor {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for SegmentDescriptor {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.identity().cmp(&other.identity())
    }
}

impl fmt::Display for SegmentDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.sequence, self.rep, self.index)
    }
}

pub fn segment_path(sequence: &str, rep: RepresentationId, index: u32) -> String {
    format!("/content/{sequence}/{}/{index}", rep.rank())
}

/// Deterministic opaque segment body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SegmentPayload {
    len: u64,
    content: u64,
}

impl SegmentPayload {
    pub fn new(len: u64, content: u64) -> Self {
        Self { len, content }
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn content_key(&self) -> u64 {
        self.content
    }

    /// Generates the body bytes. Cost is linear in `len`.
    pub fn materialize(&self) -> Bytes {
        let mut buf = vec![0u8; self.len as usize];
        ChaCha8Rng::seed_from_u64(self.content).fill_bytes(&mut buf);
        Bytes::from(buf)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SegmentLookup {
    Stored(SegmentPayload),
    NotStored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRepresentation {
    pub rank: u8,
    pub bitrate_bps: u64,
}

/// JSON manifest for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub sequence: String,
    pub duration_s: f64,
    pub segment_duration_s: f64,
    pub segment_count: u32,
    pub representations: Vec<ManifestRepresentation>,
    pub url_template: String,
}

impl Manifest {
    pub fn bitrates(&self) -> Vec<u64> {
        let mut reps = self.representations.clone();
        reps.sort_by_key(|r| r.rank);
        reps.into_iter().map(|r| r.bitrate_bps).collect()
    }

    pub fn segment_duration(&self, index: u32) -> f64 {
        let start = index as f64 * self.segment_duration_s;
        (self.duration_s - start).min(self.segment_duration_s)
    }
}

#[derive(Debug, Clone)]
struct Sequence {
    id: Arc<str>,
    ordinal: u64,
    duration: f64,
    segment_duration: f64,
    segments: u32,
}

/// Immutable media catalog.
#[derive(Debug, Clone)]
pub struct Catalog {
    sequences: BTreeMap<String, Sequence>,
    ladder: BitrateLadder,
    seed: u64,
    jitter: f64,
}

pub fn build_catalog(config: &CatalogConfig) -> Result<Catalog, ConfigError> {
    Catalog::new(config)
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl Catalog {
    pub fn new(config: &CatalogConfig) -> Result<Self, ConfigError> {
        if config.sequences.is_empty() {
            return Err(ConfigError::NoSequences);
        }
        if !(0.0..1.0).contains(&config.size_jitter) {
            return Err(ConfigError::Jitter(config.size_jitter));
        }
        let ladder = BitrateLadder::new(&config.ladder, &config.stored_ranks)?;
        let mut sequences = BTreeMap::new();
        for (ordinal, s) in config.sequences.iter().enumerate() {
            if !(s.duration_s > 0.0 && s.segment_duration_s > 0.0) {
                return Err(ConfigError::NonPositiveDuration(s.id.clone()));
            }
            let segments = (s.duration_s / s.segment_duration_s - 1e-9).ceil() as u32;
            let seq = Sequence {
                id: Arc::from(s.id.as_str()),
                ordinal: ordinal as u64,
                duration: s.duration_s,
                segment_duration: s.segment_duration_s,
                segments,
            };
            if sequences.insert(s.id.clone(), seq).is_some() {
                return Err(ConfigError::DuplicateSequence(s.id.clone()));
            }
        }
        Ok(Self {
            sequences,
            ladder,
            seed: config.seed,
            jitter: config.size_jitter,
        })
    }

    pub fn ladder(&self) -> &BitrateLadder {
        &self.ladder
    }

    pub fn sequence_ids(&self) -> impl Iterator<Item = &str> {
        self.sequences.keys().map(String::as_str)
    }

    pub fn segment_count(&self, sequence: &str) -> Result<u32, ContentError> {
        Ok(self.sequence(sequence)?.segments)
    }

    fn sequence(&self, id: &str) -> Result<&Sequence, ContentError> {
        self.sequences
            .get(id)
            .ok_or_else(|| ContentError::UnknownSequence(id.to_string()))
    }

    fn key(&self, seq: &Sequence, rep: RepresentationId, index: u32) -> u64 {
        let mut h = mix(self.seed);
        for part in [seq.ordinal, rep.rank() as u64, index as u64] {
            h = mix(h ^ part);
        }
        h
    }

    /// Resolves an address to a full descriptor.
    pub fn descriptor(
        &self,
        sequence: &str,
        rep: RepresentationId,
        index: u32,
    ) -> Result<SegmentDescriptor, ContentError> {
        let seq = self.sequence(sequence)?;
        let bitrate = self
            .ladder
            .bitrate(rep)
            .ok_or(ContentError::UnknownRepresentation(rep))?;
        if index >= seq.segments {
            return Err(ContentError::IndexOutOfRange {
                index,
                count: seq.segments,
            });
        }
        let start = index as f64 * seq.segment_duration;
        let duration = (seq.duration - start).min(seq.segment_duration);
        let u = if self.jitter > 0.0 {
            ChaCha8Rng::seed_from_u64(self.key(seq, rep, index))
                .random_range(-self.jitter..=self.jitter)
        } else {
            0.0
        };
        let size = ((bitrate as f64 * duration / 8.0) * (1.0 + u))
            .round()
            .max(1.0) as u64;
        Ok(SegmentDescriptor {
            sequence: seq.id.clone(),
            rep,
            index,
            duration,
            size,
        })
    }

    /// Checks that `desc` was produced by this catalog.
    pub fn validate(&self, desc: &SegmentDescriptor) -> Result<(), ContentError> {
        self.descriptor(&desc.sequence, desc.rep, desc.index)
            .map(|_| ())
    }

    /// The bytes this segment has, whether stored or produced by transcoding.
    pub fn synthesize(&self, desc: &SegmentDescriptor) -> Result<SegmentPayload, ContentError> {
        let resolved = self.descriptor(&desc.sequence, desc.rep, desc.index)?;
        let seq = self.sequence(&desc.sequence)?;
        Ok(SegmentPayload::new(
            resolved.size,
            mix(self.key(seq, desc.rep, desc.index) ^ 0xC0FF_EE00),
        ))
    }

    pub fn get_segment(&self, desc: &SegmentDescriptor) -> Result<SegmentLookup, ContentError> {
        let payload = self.synthesize(desc)?;
        if self.ladder.is_stored(desc.rep) {
            Ok(SegmentLookup::Stored(payload))
        } else {
            Ok(SegmentLookup::NotStored)
        }
    }

    /// Advertises every ladder rank, stored or not.
    pub fn manifest_for(&self, sequence: &str) -> Result<Manifest, ContentError> {
        let seq = self.sequence(sequence)?;
        Ok(Manifest {
            sequence: seq.id.to_string(),
            duration_s: seq.duration,
            segment_duration_s: seq.segment_duration,
            segment_count: seq.segments,
            representations: self
                .ladder
                .iter()
                .map(|(rep, bitrate_bps)| ManifestRepresentation {
                    rank: rep.rank(),
                    bitrate_bps,
                })
                .collect(),
            url_template: URL_TEMPLATE.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_seq(duration: f64, seg: f64, stored: Vec<u8>, jitter: f64) -> CatalogConfig {
        CatalogConfig {
            sequences: vec![SequenceConfig {
                id: "A".into(),
                duration_s: duration,
                segment_duration_s: seg,
            }],
            ladder: fixture_ladder(),
            stored_ranks: stored,
            seed: 9,
            size_jitter: jitter,
        }
    }

    #[test]
    fn segment_counts() {
        let c = build_catalog(&one_seq(80.0, 4.0, vec![5], 0.05)).unwrap();
        assert_eq!(c.segment_count("A").unwrap(), 20);
        let c = build_catalog(&one_seq(80.0, 2.0, vec![5], 0.05)).unwrap();
        assert_eq!(c.segment_count("A").unwrap(), 40);
        let c = build_catalog(&one_seq(81.0, 4.0, vec![5], 0.05)).unwrap();
        assert_eq!(c.segment_count("A").unwrap(), 21);
        assert_eq!(
            c.descriptor("A", RepresentationId::new(1), 20)
                .unwrap()
                .duration,
            1.0
        );
    }

    #[test]
    fn highest_rank_size_matches_bitrate() {
        let c = build_catalog(&one_seq(80.0, 4.0, vec![5], 0.05)).unwrap();
        let d = c.descriptor("A", RepresentationId::new(5), 0).unwrap();
        let nominal = 64_000_000.0 * 4.0 / 8.0;
        assert_eq!(nominal, 32_000_000.0);
        assert!((d.size as f64 - nominal).abs() <= nominal * 0.05 + 1.0);
        let exact = build_catalog(&one_seq(80.0, 4.0, vec![5], 0.0)).unwrap();
        assert_eq!(
            exact
                .descriptor("A", RepresentationId::new(5), 0)
                .unwrap()
                .size,
            32_000_000
        );
    }

    #[test]
    fn stored_lookup_per_variant() {
        let t = build_catalog(&one_seq(80.0, 2.0, vec![5], 0.05)).unwrap();
        let r5 = t.descriptor("A", RepresentationId::new(5), 0).unwrap();
        match t.get_segment(&r5).unwrap() {
            SegmentLookup::Stored(p) => assert_eq!(p.len(), r5.size),
            other => panic!("{other:?}"),
        }
        let r2 = t.descriptor("A", RepresentationId::new(2), 0).unwrap();
        assert_eq!(t.get_segment(&r2).unwrap(), SegmentLookup::NotStored);

        let f = build_catalog(&one_seq(80.0, 2.0, vec![1, 5], 0.05)).unwrap();
        let r1 = f.descriptor("A", RepresentationId::new(1), 0).unwrap();
        assert!(matches!(
            f.get_segment(&r1).unwrap(),
            SegmentLookup::Stored(_)
        ));
    }

    #[test]
    fn not_found_is_distinct_from_not_stored() {
        let c = build_catalog(&one_seq(80.0, 2.0, vec![5], 0.05)).unwrap();
        assert_eq!(
            c.descriptor("A", RepresentationId::new(2), 40).unwrap_err(),
            ContentError::IndexOutOfRange {
                index: 40,
                count: 40
            }
        );
        assert!(matches!(
            c.descriptor("nope", RepresentationId::new(2), 0),
            Err(ContentError::UnknownSequence(_))
        ));
        assert!(matches!(
            c.descriptor("A", RepresentationId::new(6), 0),
            Err(ContentError::UnknownRepresentation(_))
        ));
    }

    #[test]
    fn manifest_advertises_whole_ladder() {
        let c = build_catalog(&one_seq(80.0, 2.0, vec![5], 0.05)).unwrap();
        let m = c.manifest_for("A").unwrap();
        let ranks: Vec<u8> = m.representations.iter().map(|r| r.rank).collect();
        assert_eq!(ranks, vec![1, 2, 3, 4, 5]);
        assert_eq!(m.segment_count, 40);
        assert_eq!(m.url_template, "/content/{seq}/{rep}/{index}");
        assert!(c.manifest_for("B").is_err());
    }

    #[test]
    fn config_errors() {
        let mut cfg = one_seq(80.0, 2.0, vec![5], 0.05);
        cfg.sequences.clear();
        assert_eq!(build_catalog(&cfg).unwrap_err(), ConfigError::NoSequences);

        let cfg = one_seq(0.0, 2.0, vec![5], 0.05);
        assert!(matches!(
            build_catalog(&cfg),
            Err(ConfigError::NonPositiveDuration(_))
        ));

        let mut cfg = one_seq(80.0, 2.0, vec![5], 0.05);
        cfg.ladder[2].bitrate_bps = cfg.ladder[1].bitrate_bps;
        assert_eq!(
            build_catalog(&cfg).unwrap_err(),
            ConfigError::NonMonotoneLadder
        );

        let cfg = one_seq(80.0, 2.0, vec![1], 0.05);
        assert_eq!(
            build_catalog(&cfg).unwrap_err(),
            ConfigError::HighestNotStored
        );

        let mut cfg = one_seq(80.0, 2.0, vec![5], 0.05);
        cfg.ladder.truncate(1);
        assert_eq!(
            build_catalog(&cfg).unwrap_err(),
            ConfigError::LadderTooShort(1)
        );
    }

    #[test]
    fn payload_bytes_are_deterministic() {
        let cfg = one_seq(8.0, 2.0, vec![5], 0.05);
        let a = build_catalog(&cfg).unwrap();
        let b = build_catalog(&cfg).unwrap();
        let d = a.descriptor("A", RepresentationId::new(3), 1).unwrap();
        let pa = a.synthesize(&d).unwrap();
        let pb = b.synthesize(&d).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(pa.materialize(), pb.materialize());
        assert_eq!(pa.materialize().len() as u64, d.size);
        let other = a.descriptor("A", RepresentationId::new(3), 2).unwrap();
        assert_ne!(
            pa.content_key(),
            a.synthesize(&other).unwrap().content_key()
        );
    }

    proptest! {
        #[test]
        fn sizes_within_jitter_and_monotone_without_it(
            seed in any::<u64>(),
            index in 0u32..40,
            jitter in 0.0f64..0.2,
        ) {
            let mut cfg = one_seq(80.0, 2.0, vec![5], jitter);
            cfg.seed = seed;
            let c = build_catalog(&cfg).unwrap();
            for (rep, bitrate) in c.ladder().iter() {
                let d = c.descriptor("A", rep, index).unwrap();
                let nominal = bitrate as f64 * 2.0 / 8.0;
                prop_assert!((d.size as f64 - nominal).abs() <= nominal * jitter + 1.0);
            }
            cfg.size_jitter = 0.0;
            let flat = build_catalog(&cfg).unwrap();
            let sizes: Vec<u64> = flat
                .ladder()
                .iter()
                .map(|(rep, _)| flat.descriptor("A", rep, index).unwrap().size)
                .collect();
            prop_assert!(sizes.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
