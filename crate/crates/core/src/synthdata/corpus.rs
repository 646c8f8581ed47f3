//! Corpus generation and the binary corpus container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   "HFCORPUS"
//! version  u32       1
//! hlen     u32       byte length of the header
//! header   hlen      UTF-8 JSON: counts, layout, vocabulary, build spec
//! records  repeated `records` times:
//!   mlen   u32       byte length of the record metadata
//!   meta   mlen      UTF-8 JSON: index, label, seed, text, tokens, split
//!   frames u32
//!   data   frames * joints * channels f32, frame-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::motion::{MotionSequence, CHANNELS};

use super::programs::{generate_motion, MotionLabel, Program, FPS, JOINTS, MIN_FRAMES};
use super::text::{text_condition, Vocabulary};

pub const MAGIC: &[u8; 8] = b"HFCORPUS";
pub const VERSION: u32 = 1;

/// SplitMix64 finalizer; the building block of every seed derivation.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of record `index` under `master`.
pub fn record_seed(master: u64, index: usize) -> u64 {
    splitmix64(master ^ splitmix64(index as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// 80/5/15 by a hash of the record index.
    pub fn of_index(index: usize) -> Split {
        match splitmix64(index as u64 ^ 0x5EED_5917) % 1000 {
            0..=799 => Split::Train,
            800..=849 => Split::Val,
            _ => Split::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_per_program: usize,
    #[serde(default = "all_programs")]
    pub programs: Vec<Program>,
    #[serde(default = "default_frames")]
    pub frames_min: usize,
    #[serde(default = "default_frames")]
    pub frames_max: usize,
    pub seed: u64,
}

fn all_programs() -> Vec<Program> {
    Program::ALL.to_vec()
}

fn default_frames() -> usize {
    64
}

impl CorpusSpec {
    pub fn new(n_per_program: usize, seed: u64) -> Self {
        Self {
            n_per_program,
            programs: all_programs(),
            frames_min: 64,
            frames_max: 64,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_program == 0 {
            return Err(invalid_arg!("n_per_program must be at least 1"));
        }
        if self.programs.is_empty() {
            return Err(invalid_arg!("at least one program is required"));
        }
        if self.frames_min < MIN_FRAMES || self.frames_max < self.frames_min {
            return Err(invalid_arg!(
                "frame range [{}, {}] invalid (minimum {MIN_FRAMES})",
                self.frames_min,
                self.frames_max
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub index: usize,
    pub label: Option<MotionLabel>,
    pub seed: u64,
    pub text: String,
    pub tokens: Vec<u32>,
    pub split: Split,
    pub motion: MotionSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub version: u32,
    pub skeleton: String,
    pub joints: usize,
    pub channels: usize,
    pub fps: f64,
    pub records: usize,
    pub vocabulary: Vocabulary,
    #[serde(default)]
    pub build: Option<CorpusSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordMeta {
    index: usize,
    label: Option<MotionLabel>,
    seed: u64,
    text: String,
    tokens: Vec<u32>,
    split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub records: Vec<CorpusRecord>,
}

/// Builds one record from its label, seed and length.
pub fn make_record(index: usize, label: MotionLabel, seed: u64, frames: usize, vocab: &Vocabulary) -> Result<CorpusRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x7E47));
    let (text, tokens) = text_condition(&label, vocab, &mut rng)?;
    Ok(CorpusRecord {
        index,
        label: Some(label),
        seed,
        text,
        tokens,
        split: Split::of_index(index),
        motion: generate_motion(&label, frames, seed)?,
    })
}

impl Corpus {
    /// Generates `n_per_program` records for each program, program-major.
    /// Record `i` draws its parameters, length, text and motion from
    /// `record_seed(spec.seed, i)` alone.
    pub fn generate(spec: &CorpusSpec) -> Result<Corpus> {
        spec.validate()?;
        let vocab = Vocabulary::standard();
        let mut records = Vec::with_capacity(spec.n_per_program * spec.programs.len());
        for (pi, &program) in spec.programs.iter().enumerate() {
            for i in 0..spec.n_per_program {
                let index = pi * spec.n_per_program + i;
                let seed = record_seed(spec.seed, index);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let label = MotionLabel::sample(program, &mut rng);
                let frames = rng.random_range(spec.frames_min..=spec.frames_max);
                records.push(make_record(index, label, seed, frames, &vocab)?);
            }
        }
        Ok(Corpus::from_records(records, vocab, Some(spec.clone())))
    }

    pub fn from_records(records: Vec<CorpusRecord>, vocabulary: Vocabulary, build: Option<CorpusSpec>) -> Corpus {
        let (joints, channels) = records
            .first()
            .map(|r| (r.motion.joints(), r.motion.channels()))
            .unwrap_or((JOINTS, CHANNELS));
        Corpus {
            header: CorpusHeader {
                version: VERSION,
                skeleton: "reference15".into(),
                joints,
                channels,
                fps: FPS,
                records: records.len(),
                vocabulary,
                build,
            },
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.header.vocabulary
    }

    pub fn split(&self, split: Split) -> Vec<&CorpusRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out).map_err(|e| Error::io("<memory>", e))?;
        Ok(out)
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let mut header = self.header.clone();
        header.records = self.records.len();
        let header = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for r in &self.records {
            let meta = RecordMeta {
                index: r.index,
                label: r.label,
                seed: r.seed,
                text: r.text.clone(),
                tokens: r.tokens.clone(),
                split: r.split,
            };
            let meta = serde_json::to_vec(&meta).map_err(std::io::Error::other)?;
            w.write_all(&(meta.len() as u32).to_le_bytes())?;
            w.write_all(&meta)?;
            w.write_all(&(r.motion.frames() as u32).to_le_bytes())?;
            let mut buf = Vec::with_capacity(r.motion.data().len() * 4);
            for v in r.motion.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Corpus> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Corpus::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Corpus> {
        let fmt = |m: &str| Error::Format(format!("corpus: {m}"));
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated magic"))?;
        if &magic != MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let hlen = read_u32(&mut r)? as usize;
        let header: CorpusHeader = serde_json::from_slice(take(&mut r, hlen)?).map_err(|e| fmt(&e.to_string()))?;
        let per_frame = header.joints * header.channels;
        let mut records = Vec::with_capacity(header.records);
        for _ in 0..header.records {
            let mlen = read_u32(&mut r)? as usize;
            let meta: RecordMeta = serde_json::from_slice(take(&mut r, mlen)?).map_err(|e| fmt(&e.to_string()))?;
            let frames = read_u32(&mut r)? as usize;
            let raw = take(&mut r, frames * per_frame * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            records.push(CorpusRecord {
                index: meta.index,
                label: meta.label,
                seed: meta.seed,
                text: meta.text,
                tokens: meta.tokens,
                split: meta.split,
                motion: MotionSequence::new(frames, header.joints, header.channels, data)?,
            });
        }
        if !r.is_empty() {
            return Err(fmt("trailing bytes"));
        }
        Ok(Corpus { header, records })
    }
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(Error::Format("corpus: truncated".into()));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let b = take(r, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}
