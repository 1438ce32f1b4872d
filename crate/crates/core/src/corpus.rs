//! Labeled corpus container and its binary file format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! header:  b"AMCI" | version u16 | frame count u32 | frame length u16
//!          | class count u8 | per class: name length u8, UTF-8 name
//! record:  class id u8 | snr_db f32 (+inf = clean) | seed u64
//!          | frame length x (I f32, Q f32)
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::modem::{CorpusSpec, IqFrame, ModulationClass, FRAME_LEN};

pub const MAGIC: &[u8; 4] = b"AMCI";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledCorpus {
    pub frames: Vec<IqFrame>,
}

impl LabeledCorpus {
    pub fn new(frames: Vec<IqFrame>) -> Self {
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame counts per class id.
    pub fn class_counts(&self) -> [usize; ModulationClass::COUNT] {
        let mut counts = [0; ModulationClass::COUNT];
        for f in &self.frames {
            counts[f.label.id() as usize] += 1;
        }
        counts
    }

    /// Distinct SNR tags in ascending order (clean last).
    pub fn snr_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.frames.iter().map(|f| f.snr_db).collect();
        v.sort_by(|a, b| a.total_cmp(b));
        v.dedup();
        v
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledCorpus {
        LabeledCorpus::new(indices.iter().map(|&i| self.frames[i].clone()).collect())
    }
}

/// Serializes a corpus to bytes.
pub fn encode(corpus: &LabeledCorpus) -> Result<Vec<u8>> {
    let frame_len = corpus.frames.first().map_or(FRAME_LEN, |f| f.samples.len());
    if corpus.frames.iter().any(|f| f.samples.len() != frame_len) {
        return Err(Error::Data("frames of differing length in one corpus".into()));
    }
    let frame_len16 =
        u16::try_from(frame_len).map_err(|_| Error::Data(format!("frame length {frame_len} exceeds u16")))?;
    let count =
        u32::try_from(corpus.frames.len()).map_err(|_| Error::Data("too many frames for one corpus file".into()))?;

    let mut out = Vec::with_capacity(64 + corpus.frames.len() * (13 + 8 * frame_len));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&frame_len16.to_le_bytes());
    out.push(ModulationClass::COUNT as u8);
    for class in ModulationClass::ALL {
        let name = class.name().as_bytes();
        out.push(name.len() as u8);
        out.extend_from_slice(name);
    }
    for f in &corpus.frames {
        out.push(f.label.id());
        out.extend_from_slice(&(f.snr_db as f32).to_le_bytes());
        out.extend_from_slice(&f.seed.to_le_bytes());
        for s in &f.samples {
            out.extend_from_slice(&(s.re as f32).to_le_bytes());
            out.extend_from_slice(&(s.im as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Little-endian reader over a byte buffer, shared with the checkpoint
/// format.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pub(crate) pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Data(format!("{} truncated at byte {}", self.what, self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<LabeledCorpus> {
    let mut c = Cursor::new(buf, "corpus");
    if c.take(4)? != MAGIC {
        return Err(Error::Data("not a corpus file (bad magic)".into()));
    }
    let version = c.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported corpus version {version}")));
    }
    let count = c.u32()? as usize;
    let frame_len = c.u16()? as usize;
    let n_classes = c.u8()? as usize;
    let mut table = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let len = c.u8()? as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| Error::Data("class name is not UTF-8".into()))?;
        table.push(name.parse::<ModulationClass>()?);
    }

    let record_len = 13 + 8 * frame_len;
    if c.remaining() != count * record_len {
        return Err(Error::Data(format!("header declares {count} records but payload holds {} bytes", c.remaining())));
    }
    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        let id = c.u8()? as usize;
        let label = *table.get(id).ok_or_else(|| Error::Data(format!("class id {id} outside table of {n_classes}")))?;
        let snr_db = c.f32()? as f64;
        let seed = c.u64()?;
        let mut samples = Vec::with_capacity(frame_len);
        for _ in 0..frame_len {
            let re = c.f32()? as f64;
            let im = c.f32()? as f64;
            samples.push(Complex64::new(re, im));
        }
        frames.push(IqFrame { samples, label, snr_db, seed });
    }
    Ok(LabeledCorpus::new(frames))
}

/// Writes `bytes` to `path` through a temporary sibling, removing it on
/// failure so no partial file is left behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_sibling(path);
    let res = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(bytes)?;
        w.flush()?;
        drop(w);
        fs::rename(&tmp, path)
    })();
    res.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".partial-{}", std::process::id()));
    path.with_file_name(name)
}

pub fn write(path: &Path, corpus: &LabeledCorpus) -> Result<()> {
    write_atomic(path, &encode(corpus)?)
}

pub fn read(path: &Path) -> Result<LabeledCorpus> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    decode(&buf)
}

/// Sidecar path holding the generation parameters of a corpus.
pub fn metadata_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn write_metadata(path: &Path, spec: &CorpusSpec) -> Result<()> {
    #[derive(serde::Serialize)]
    struct Meta<'a> {
        format_version: u16,
        classes: Vec<&'static str>,
        snr_grid: Vec<String>,
        frames_per_cell: usize,
        seed: u64,
        synthesis: &'a crate::modem::SynthesisConfig,
    }
    let meta = Meta {
        format_version: FORMAT_VERSION,
        classes: spec.classes.iter().map(|c| c.name()).collect(),
        // JSON has no infinity literal.
        snr_grid: spec.snr_grid.iter().map(|s| s.to_string()).collect(),
        frames_per_cell: spec.frames_per_cell,
        seed: spec.seed,
        synthesis: &spec.cfg,
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Data(e.to_string()))?;
    write_atomic(&metadata_path(path), text.as_bytes())
}
