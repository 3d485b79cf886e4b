//! Clip files, manifests, segment samplers, and the synthetic dataset.

mod sampler;
mod synthetic;

pub use sampler::{sample_test_indices, sample_train_indices, segment_bounds};
pub use synthetic::{generate_synthetic, modulation_profile, patterns, render_clip, Modulation, Patterns, SyntheticConfig};

use std::fs;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CLIP_MAGIC: &[u8; 8] = b"DFERCLP1";
const HEADER_LEN: u64 = 8 + 4 * 4;

/// Frame count and per-frame shape `[C, H, W]` of a stored clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipHeader {
    pub num_frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ClipHeader {
    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Write a `[T, C, H, W]` tensor as a clip file. Values are stored as f32.
pub fn write_clip(path: impl AsRef<Path>, clip: &Tensor) -> Result<()> {
    let path = path.as_ref();
    if clip.rank() != 4 || clip.shape()[0] == 0 {
        return Err(Error::contract(format!(
            "a clip needs shape [T, C, H, W] with T ≥ 1, got {:?}",
            clip.shape()
        )));
    }
    let mut buf = Vec::with_capacity(HEADER_LEN as usize + 4 * clip.len());
    buf.extend_from_slice(CLIP_MAGIC);
    for &d in clip.shape() {
        let d = u32::try_from(d).map_err(|_| Error::format(path, "clip dimension exceeds 32 bits"))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in clip.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn read_header(path: &Path, r: &mut impl Read) -> Result<ClipHeader> {
    let mut head = [0u8; HEADER_LEN as usize];
    r.read_exact(&mut head).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(path, "truncated clip header"),
        _ => Error::io(path, e),
    })?;
    if &head[..8] != CLIP_MAGIC {
        return Err(Error::format(path, "not a clip file (bad magic)"));
    }
    let dim = |i: usize| u32::from_le_bytes(head[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let h = ClipHeader {
        num_frames: dim(0),
        channels: dim(1),
        height: dim(2),
        width: dim(3),
    };
    if h.num_frames == 0 || h.frame_len() == 0 {
        return Err(Error::format(path, format!("degenerate clip dimensions {h:?}")));
    }
    Ok(h)
}

pub fn read_clip_header(path: impl AsRef<Path>) -> Result<ClipHeader> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_header(path, &mut BufReader::new(file))
}

/// Read the frames at `indices` (in order, repeats allowed) as `[len, C, H, W]`.
/// Every index is checked against the header before any frame is read.
pub fn read_frames(path: impl AsRef<Path>, indices: &[usize]) -> Result<Tensor> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let h = read_header(path, &mut r)?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= h.num_frames) {
        return Err(Error::contract(format!(
            "{}: frame {bad} out of range for a {}-frame clip",
            path.display(),
            h.num_frames
        )));
    }
    let frame_bytes = 4 * h.frame_len();
    let mut raw = vec![0u8; frame_bytes];
    let mut data = Vec::with_capacity(indices.len() * h.frame_len());
    for &i in indices {
        r.seek(SeekFrom::Start(HEADER_LEN + (i * frame_bytes) as u64))
            .and_then(|_| r.read_exact(&mut raw))
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => Error::format(path, "clip file shorter than its header says"),
                _ => Error::io(path, e),
            })?;
        data.extend(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64));
    }
    Tensor::new([indices.len(), h.channels, h.height, h.width], data)
}

/// One clip listed in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub path: PathBuf,
    pub label: usize,
    pub num_frames: usize,
    /// Expression intensity; 0 for neutral clips, absent when unknown.
    pub intensity: Option<f64>,
}

/// Load the frames of `record` at `indices`, checking the file agrees with the record.
pub fn load_clip(record: &ClipRecord, indices: &[usize]) -> Result<Tensor> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= record.num_frames) {
        return Err(Error::contract(format!(
            "{}: frame {bad} out of range for a {}-frame clip",
            record.path.display(),
            record.num_frames
        )));
    }
    let h = read_clip_header(&record.path)?;
    if h.num_frames != record.num_frames {
        return Err(Error::format(
            &record.path,
            format!("manifest says {} frames, file has {}", record.num_frames, h.num_frames),
        ));
    }
    read_frames(&record.path, indices)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<ClipRecord>,
    pub num_classes: usize,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
struct Row {
    path: String,
    label: usize,
    num_frames: usize,
    intensity: Option<f64>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Write as CSV. Paths are stored relative to `base` when they lie under it.
    pub fn save(&self, path: impl AsRef<Path>, base: &Path) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            let rel = r.path.strip_prefix(base).unwrap_or(&r.path);
            w.serialize(Row {
                path: rel.to_string_lossy().into_owned(),
                label: r.label,
                num_frames: r.num_frames,
                intensity: r.intensity,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Read a manifest CSV. Relative paths resolve against `base`; every path
    /// must exist and every label must be below `num_classes`.
    pub fn load(path: impl AsRef<Path>, base: &Path, num_classes: usize, split: Split) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rd = csv::Reader::from_reader(BufReader::new(file));
        let header = rd.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["path", "label", "num_frames", "intensity"] {
            return Err(Error::format(path, "expected header path,label,num_frames,intensity"));
        }
        let mut records = Vec::new();
        for (i, row) in rd.deserialize::<Row>().enumerate() {
            let row = row?;
            let line = i + 2;
            let p = PathBuf::from(&row.path);
            let p = if p.is_absolute() { p } else { base.join(p) };
            if row.label >= num_classes {
                return Err(Error::format(
                    path,
                    format!("line {line}: label {} out of range for {num_classes} classes", row.label),
                ));
            }
            if row.num_frames == 0 {
                return Err(Error::format(path, format!("line {line}: clip has no frames")));
            }
            if let Some(a) = row.intensity {
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::format(path, format!("line {line}: intensity {a} outside [0, 1]")));
                }
            }
            if !p.exists() {
                return Err(Error::format(path, format!("line {line}: {} does not exist", p.display())));
            }
            records.push(ClipRecord {
                path: p,
                label: row.label,
                num_frames: row.num_frames,
                intensity: row.intensity,
            });
        }
        Ok(Manifest {
            records,
            num_classes,
            split,
        })
    }
}

/// Contents of `dataset.json` at the root of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub num_classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Generator settings, when the dataset is synthetic.
    pub synthetic: Option<SyntheticConfig>,
}

pub const DATASET_INFO: &str = "dataset.json";

/// A dataset directory: `dataset.json`, `train.csv`, `test.csv`, and clip files.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub info: DatasetInfo,
    pub train: Manifest,
    pub test: Manifest,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let info_path = root.join(DATASET_INFO);
        let text = fs::read_to_string(&info_path).map_err(|e| Error::io(&info_path, e))?;
        let info: DatasetInfo = serde_json::from_str(&text).map_err(|e| Error::format(&info_path, e.to_string()))?;
        let train = Manifest::load(root.join("train.csv"), &root, info.num_classes, Split::Train)?;
        let test = Manifest::load(root.join("test.csv"), &root, info.num_classes, Split::Test)?;
        Ok(Dataset {
            root,
            info,
            train,
            test,
        })
    }

    pub fn save_info(&self) -> Result<()> {
        let path = self.root.join(DATASET_INFO);
        let json = serde_json::to_string_pretty(&self.info).map_err(|e| Error::format(&path, e.to_string()))?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init;

    #[test]
    fn clip_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.clip");
        let mut clip = init::normal(1, "clip", &[4, 2, 3, 5], 0.0, 1.0);
        clip.round_to_f32();
        write_clip(&p, &clip).unwrap();
        let back = read_frames(&p, &[0, 1, 2, 3]).unwrap();
        assert!(back.bitwise_eq(&clip));
    }

    #[test]
    fn repeated_and_out_of_range_indices() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.clip");
        let clip = Tensor::new([3, 1, 1, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        write_clip(&p, &clip).unwrap();
        let rec = ClipRecord {
            path: p.clone(),
            label: 0,
            num_frames: 3,
            intensity: None,
        };
        let t = load_clip(&rec, &[2, 2]).unwrap();
        assert_eq!(t.data(), &[4.0, 5.0, 4.0, 5.0]);
        assert!(matches!(load_clip(&rec, &[0, 3]), Err(Error::Contract(_))));
        assert!(matches!(read_frames(&p, &[3]), Err(Error::Contract(_))));
    }

    #[test]
    fn bad_magic_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.clip");
        fs::write(&p, b"XXXXXXXX\x01\0\0\0\x01\0\0\0\x01\0\0\0\x01\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_clip_header(&p), Err(Error::Format { .. })));
        assert!(matches!(read_clip_header(dir.path().join("nope")), Err(Error::Io { .. })));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let clip_path = dir.path().join("a.clip");
        write_clip(&clip_path, &Tensor::zeros([2, 1, 2, 2])).unwrap();
        let m = Manifest {
            records: vec![
                ClipRecord {
                    path: clip_path.clone(),
                    label: 1,
                    num_frames: 2,
                    intensity: Some(0.25),
                },
                ClipRecord {
                    path: clip_path,
                    label: 0,
                    num_frames: 2,
                    intensity: None,
                },
            ],
            num_classes: 2,
            split: Split::Test,
        };
        let csv_path = dir.path().join("test.csv");
        m.save(&csv_path, dir.path()).unwrap();
        let text = fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text, "path,label,num_frames,intensity\na.clip,1,2,0.25\na.clip,0,2,\n");
        let back = Manifest::load(&csv_path, dir.path(), 2, Split::Test).unwrap();
        assert_eq!(back, m);
        assert!(Manifest::load(&csv_path, dir.path(), 1, Split::Test).is_err());
    }
}
