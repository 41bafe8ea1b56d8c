//! On-disk caches for noise panels and composed datasets.
//!
//! Panel cache layout:
//!
//! ```text
//! magic   4 bytes  "UCAN"
//! version u16 LE   currently 1
//! kind    u8       0 = sine, 1 = white
//! M       u16 LE   basis cutoff
//! count   u32 LE   number of panels
//! pixels  count x 1600 f32 LE, row-major per panel
//! ```
//!
//! A dataset cache reuses the same layout and appends `count` label bytes
//! after the pixel block. Each cache carries a JSON sidecar at
//! `<path>.json` recording the generation parameters.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::noise::BasisKind;
use crate::panel::{Panel, PANEL_PIXELS};

pub const PANEL_CACHE_MAGIC: [u8; 4] = *b"UCAN";
pub const PANEL_CACHE_VERSION: u16 = 1;

#[derive(Debug)]
pub enum CacheError {
    Io(std::io::Error),
    BadMagic { found: [u8; 4] },
    UnsupportedVersion { found: u16 },
    BadKind { code: u8 },
    Truncated { expected: usize, got: usize },
    Sidecar { path: PathBuf, reason: String },
}

impl fmt::Display for CacheError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CacheError::Io(e) => write!(f, "cache i/o error: {e}"),
            CacheError::BadMagic { found } => {
                write!(f, "bad cache magic {found:?}, expected \"UCAN\"")
            }
            CacheError::UnsupportedVersion { found } => {
                write!(f, "unsupported cache version {found}")
            }
            CacheError::BadKind { code } => write!(f, "unknown basis kind code {code}"),
            CacheError::Truncated { expected, got } => {
                write!(f, "cache truncated: expected {expected} bytes, got {got}")
            }
            CacheError::Sidecar { path, reason } => {
                write!(f, "sidecar {}: {reason}", path.display())
            }
        }
    }
}

impl std::error::Error for CacheError {}

impl From<std::io::Error> for CacheError {
    fn from(e: std::io::Error) -> Self {
        CacheError::Io(e)
    }
}

/// Generation parameters recorded next to a noise-panel cache.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NoiseSidecar {
    pub kind: BasisKind,
    pub m: u16,
    pub count: u32,
    pub seed: u64,
    pub l: f64,
    pub amplitude_scale: f64,
    pub clip_fraction: f64,
}

/// Generation parameters recorded next to a composed dataset cache.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetSidecar {
    pub variant: String,
    pub noise_fraction: f64,
    pub split_seed: u64,
    pub train: u32,
    pub val: u32,
    pub test: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSidecar>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_header<W: Write>(
    w: &mut W,
    kind: BasisKind,
    m: u16,
    count: u32,
) -> Result<(), CacheError> {
    w.write_all(&PANEL_CACHE_MAGIC)?;
    w.write_all(&PANEL_CACHE_VERSION.to_le_bytes())?;
    w.write_all(&[kind.code()])?;
    w.write_all(&m.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    Ok(())
}

fn write_panels_f32<W: Write>(w: &mut W, panels: &[Panel]) -> Result<(), CacheError> {
    let mut buf = Vec::with_capacity(PANEL_PIXELS * 4);
    for p in panels {
        buf.clear();
        for &v in p.pixels() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Write a noise-panel cache plus its JSON sidecar.
pub fn write_panel_cache(
    path: &Path,
    panels: &[Panel],
    sidecar: &NoiseSidecar,
) -> Result<(), CacheError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, sidecar.kind, sidecar.m, panels.len() as u32)?;
    write_panels_f32(&mut w, panels)?;
    w.flush()?;
    write_sidecar(path, sidecar)
}

pub fn write_sidecar<S: Serialize>(path: &Path, sidecar: &S) -> Result<(), CacheError> {
    let sc_path = sidecar_path(path);
    let json = serde_json::to_string_pretty(sidecar).map_err(|e| CacheError::Sidecar {
        path: sc_path.clone(),
        reason: e.to_string(),
    })?;
    std::fs::write(&sc_path, json)?;
    Ok(())
}

pub fn read_sidecar<S: for<'a> Deserialize<'a>>(path: &Path) -> Result<S, CacheError> {
    let sc_path = sidecar_path(path);
    let text = std::fs::read_to_string(&sc_path).map_err(|e| CacheError::Sidecar {
        path: sc_path.clone(),
        reason: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| CacheError::Sidecar {
        path: sc_path,
        reason: e.to_string(),
    })
}

struct RawCache {
    kind: BasisKind,
    m: u16,
    count: u32,
    pixels: Vec<f32>,
    rest: Vec<u8>,
}

fn read_raw(path: &Path) -> Result<RawCache, CacheError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exactly(&mut r, &mut magic, 4)?;
    if magic != PANEL_CACHE_MAGIC {
        return Err(CacheError::BadMagic { found: magic });
    }
    let mut b2 = [0u8; 2];
    read_exactly(&mut r, &mut b2, 2)?;
    let version = u16::from_le_bytes(b2);
    if version != PANEL_CACHE_VERSION {
        return Err(CacheError::UnsupportedVersion { found: version });
    }
    let mut b1 = [0u8; 1];
    read_exactly(&mut r, &mut b1, 1)?;
    let kind = BasisKind::from_code(b1[0]).ok_or(CacheError::BadKind { code: b1[0] })?;
    read_exactly(&mut r, &mut b2, 2)?;
    let m = u16::from_le_bytes(b2);
    let mut b4 = [0u8; 4];
    read_exactly(&mut r, &mut b4, 4)?;
    let count = u32::from_le_bytes(b4);

    let pixel_bytes = count as usize * PANEL_PIXELS * 4;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() < pixel_bytes {
        return Err(CacheError::Truncated {
            expected: pixel_bytes,
            got: raw.len(),
        });
    }
    let pixels = raw[..pixel_bytes]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let rest = raw[pixel_bytes..].to_vec();
    Ok(RawCache {
        kind,
        m,
        count,
        pixels,
        rest,
    })
}

fn read_exactly<R: Read>(r: &mut R, buf: &mut [u8], want: usize) -> Result<(), CacheError> {
    r.read_exact(&mut buf[..want]).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            CacheError::Truncated {
                expected: want,
                got: 0,
            }
        } else {
            CacheError::Io(e)
        }
    })
}

fn panels_from_f32(pixels: &[f32], count: usize) -> Vec<Panel> {
    pixels
        .chunks_exact(PANEL_PIXELS)
        .take(count)
        .map(|c| Panel::from_pixels(c.iter().map(|&v| v as f64).collect()))
        .collect()
}

/// Read a noise-panel cache and its sidecar.
pub fn read_panel_cache(path: &Path) -> Result<(Vec<Panel>, NoiseSidecar), CacheError> {
    let raw = read_raw(path)?;
    let sidecar: NoiseSidecar = read_sidecar(path)?;
    let panels = panels_from_f32(&raw.pixels, raw.count as usize);
    debug_assert_eq!(sidecar.kind, raw.kind);
    debug_assert_eq!(sidecar.m, raw.m);
    Ok((panels, sidecar))
}

/// Write a dataset cache: panels, then one label byte per panel.
pub fn write_dataset_cache(
    path: &Path,
    panels: &[Panel],
    labels: &[u8],
    kind: BasisKind,
    m: u16,
    sidecar: &DatasetSidecar,
) -> Result<(), CacheError> {
    assert_eq!(panels.len(), labels.len());
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, kind, m, panels.len() as u32)?;
    write_panels_f32(&mut w, panels)?;
    w.write_all(labels)?;
    w.flush()?;
    write_sidecar(path, sidecar)
}

/// Read a dataset cache back as (panels, labels, sidecar).
pub fn read_dataset_cache(
    path: &Path,
) -> Result<(Vec<Panel>, Vec<u8>, DatasetSidecar), CacheError> {
    let raw = read_raw(path)?;
    let count = raw.count as usize;
    if raw.rest.len() < count {
        return Err(CacheError::Truncated {
            expected: count,
            got: raw.rest.len(),
        });
    }
    let sidecar: DatasetSidecar = read_sidecar(path)?;
    let panels = panels_from_f32(&raw.pixels, count);
    Ok((panels, raw.rest[..count].to_vec(), sidecar))
}
