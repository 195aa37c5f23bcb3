//! HDMD dataset files.
//!
//! Layout, little-endian: magic `HDMD`, `u32` version, `u64` metadata
//! length, UTF-8 JSON metadata (scene echo plus one index entry per
//! record with its byte offset), `u32` CRC32 of the metadata, then fixed
//! size records of raw RGB bytes, `f32` surface coordinates and a `u32`
//! CRC32 of both.

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DeformationDataset, Sample, SceneConfig, Split};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"HDMD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub state: usize,
    pub texture: usize,
    pub light: usize,
    pub camera: usize,
    pub split: Split,
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata {
    scene: SceneConfig,
    record_bytes: u64,
    records: Vec<RecordEntry>,
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

fn record_bytes(scene: &SceneConfig) -> u64 {
    (scene.image_side * scene.image_side * 3 + scene.grid_side * scene.grid_side * 3 * 4 + 4) as u64
}

/// Writes atomically: a temporary file next to `path` is renamed on success.
pub fn write_dataset(dataset: &DeformationDataset, path: &Path) -> Result<()> {
    let scene = &dataset.scene;
    let (img_len, surf_len) = (scene.image_side * scene.image_side * 3, scene.grid_side * scene.grid_side * 3);
    let rec = record_bytes(scene);

    let mut meta = Metadata {
        scene: scene.clone(),
        record_bytes: rec,
        records: dataset
            .samples
            .iter()
            .map(|s| RecordEntry {
                state: s.state,
                texture: s.texture,
                light: s.light,
                camera: s.camera,
                split: s.split,
                offset: 0,
            })
            .collect(),
    };
    // offsets depend on the metadata length, which depends on the offsets;
    // iterate until the encoded length is stable
    let mut json = serde_json::to_vec(&meta)?;
    loop {
        let start = 4 + 4 + 8 + json.len() as u64 + 4;
        for (k, r) in meta.records.iter_mut().enumerate() {
            r.offset = start + k as u64 * rec;
        }
        let next = serde_json::to_vec(&meta)?;
        if next.len() == json.len() {
            json = next;
            break;
        }
        json = next;
    }

    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        w.write_all(&crc32fast::hash(&json).to_le_bytes())?;
        let mut buf = Vec::with_capacity(rec as usize);
        for s in &dataset.samples {
            if s.image.len() != img_len || s.surface.len() != surf_len {
                return Err(Error::Dimension(format!(
                    "sample of state {} has {} image bytes and {} surface values",
                    s.state,
                    s.image.len(),
                    s.surface.len()
                )));
            }
            buf.clear();
            buf.extend_from_slice(&s.image);
            for v in &s.surface {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            let crc = crc32fast::hash(&buf);
            buf.extend_from_slice(&crc.to_le_bytes());
            w.write_all(&buf)?;
        }
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Random-access reader that keeps only the index in memory.
#[derive(Debug)]
pub struct DatasetReader {
    file: File,
    meta: Metadata,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path)?;
        let mut head = [0u8; 16];
        file.read_exact(&mut head).or_else(|_| format_err("file too short for an HDMD header"))?;
        if &head[..4] != DATASET_MAGIC {
            return format_err("not an HDMD dataset (bad magic)");
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != DATASET_VERSION {
            return format_err(format!("unsupported HDMD version {version}, expected {DATASET_VERSION}"));
        }
        let len = u64::from_le_bytes(head[8..16].try_into().unwrap());
        let file_len = file.metadata()?.len();
        if len > file_len {
            return format_err("metadata length exceeds file size");
        }
        let mut json = vec![0u8; len as usize];
        let mut crc = [0u8; 4];
        file.read_exact(&mut json).or_else(|_| format_err("truncated metadata"))?;
        file.read_exact(&mut crc).or_else(|_| format_err("truncated metadata"))?;
        if crc32fast::hash(&json) != u32::from_le_bytes(crc) {
            return format_err("metadata CRC mismatch");
        }
        let meta: Metadata = serde_json::from_slice(&json).or_else(|e| format_err(format!("bad metadata: {e}")))?;
        if meta.record_bytes != record_bytes(&meta.scene) {
            return format_err("record size disagrees with the scene");
        }
        if let Some(last) = meta.records.last() {
            if last.offset + meta.record_bytes > file_len {
                return format_err("file is truncated");
            }
        }
        Ok(Self { file, meta })
    }

    pub fn scene(&self) -> &SceneConfig {
        &self.meta.scene
    }

    pub fn len(&self) -> usize {
        self.meta.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.records.is_empty()
    }

    pub fn entries(&self) -> &[RecordEntry] {
        &self.meta.records
    }

    pub fn read_sample(&mut self, index: usize) -> Result<Sample> {
        let entry = *self
            .meta
            .records
            .get(index)
            .ok_or_else(|| Error::Parameter(format!("sample {index} out of range ({} samples)", self.len())))?;
        let scene = &self.meta.scene;
        let img_len = scene.image_side * scene.image_side * 3;
        let mut buf = vec![0u8; self.meta.record_bytes as usize];
        self.file.seek(SeekFrom::Start(entry.offset))?;
        self.file.read_exact(&mut buf).or_else(|_| format_err(format!("record {index} is truncated")))?;
        let (body, crc) = buf.split_at(buf.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return format_err(format!("record {index} CRC mismatch"));
        }
        let surface = body[img_len..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Sample {
            state: entry.state,
            texture: entry.texture,
            light: entry.light,
            camera: entry.camera,
            split: entry.split,
            image: body[..img_len].to_vec(),
            surface,
        })
    }
}

pub fn read_dataset(path: &Path) -> Result<DeformationDataset> {
    let mut reader = DatasetReader::open(path)?;
    let samples = (0..reader.len()).map(|k| reader.read_sample(k)).collect::<Result<_>>()?;
    Ok(DeformationDataset {
        scene: reader.scene().clone(),
        samples,
    })
}
