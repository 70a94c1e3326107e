//! On-disk layout of a map set: one directory per image holding one FGCT
//! file per channel plus `sidecar.json`.
//!
//! Ground-truth channels, in write order:
//!
//! - `overall`
//! - `density_<attribute>_<label>` for each attribute and each of its two
//!   classes and `unknown`
//! - `seg_<attribute>_<class>` soft segmentation
//! - `background`
//! - `mask_<attribute>` unknown-region masks (1 = masked)
//!
//! A prediction set needs the `density_<attribute>_<class>` channels of the
//! known classes and may add `overall` and `seg_<attribute>_<class|background>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attributes::{Attribute, Label, NUM_ATTRIBUTES};
use crate::error::{Error, Result};
use crate::fgct::{write_tensor, Tensor};
use crate::grid::{Grid, Mask};
use crate::mapgen::{DensityMethod, DensityStack, KernelSpec, SegmentationStack};
use crate::metrics::{GroundTruth, PredictionStack, SegGrids};

pub const SIDECAR: &str = "sidecar.json";
pub const OVERALL: &str = "overall";
pub const BACKGROUND: &str = "background";
pub const EXTENSION: &str = "fgct";

pub fn density_channel(attribute: Attribute, label: Label) -> String {
    format!("density_{}_{}", attribute.name(), attribute.label_name(label))
}

pub fn seg_channel(attribute: Attribute, label: Label) -> String {
    let name = if label.is_known() {
        attribute.label_name(label)
    } else {
        BACKGROUND
    };
    format!("seg_{}_{}", attribute.name(), name)
}

pub fn mask_channel(attribute: Attribute) -> String {
    format!("mask_{}", attribute.name())
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub image_id: String,
    /// Grid size of every channel.
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_height: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<DensityMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default = "one")]
    pub downsample: usize,
    pub channels: Vec<String>,
}

/// Directory name for an image id: ASCII alphanumerics, `-`, `_` and `.`
/// are kept, every other byte becomes `%XX`.
pub fn dir_name_for(image_id: &str) -> String {
    let mut out = String::with_capacity(image_id.len());
    for b in image_id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || (b == b'.' && !out.is_empty()) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

/// All ground-truth channels of an image in write order.
pub fn ground_truth_channels(density: &DensityStack, seg: &SegmentationStack) -> Vec<(String, Tensor)> {
    let mut out = vec![(OVERALL.to_string(), Tensor::from_grid(&density.overall))];
    for a in Attribute::ALL {
        for l in Label::ALL {
            out.push((density_channel(a, l), Tensor::from_grid(density.channel(a, l))));
        }
    }
    for a in Attribute::ALL {
        for (c, l) in Label::KNOWN.into_iter().enumerate() {
            out.push((seg_channel(a, l), Tensor::from_grid(&seg.soft[a.index()][c])));
        }
    }
    out.push((BACKGROUND.to_string(), Tensor::from_mask(&seg.background)));
    for a in Attribute::ALL {
        out.push((mask_channel(a), Tensor::from_mask(&seg.unknown_mask[a.index()])));
    }
    out
}

/// Prediction channels: known-class densities, then `overall` and the
/// segmentation triples when present.
pub fn prediction_channels(pred: &PredictionStack) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for a in Attribute::ALL {
        for (c, l) in Label::KNOWN.into_iter().enumerate() {
            out.push((density_channel(a, l), Tensor::from_grid(&pred.classes[a.index()][c])));
        }
    }
    if let Some(g) = &pred.overall {
        out.push((OVERALL.to_string(), Tensor::from_grid(g)));
    }
    if let Some(seg) = &pred.segmentation {
        for a in Attribute::ALL {
            for l in Label::ALL {
                out.push((seg_channel(a, l), Tensor::from_grid(&seg[a.index()][l.index()])));
            }
        }
    }
    out
}

/// Writes a map set into `dir`, replacing any existing directory. Files are
/// staged in a sibling temporary directory that is renamed into place.
pub fn write_map_set(dir: &Path, sidecar: &MapSidecar, channels: &[(String, Tensor)]) -> Result<()> {
    let parent = dir.parent().unwrap_or(Path::new("."));
    let name = dir
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("bad map directory {}", dir.display())))?;
    let staging = parent.join(format!(".{}.tmp", name.to_string_lossy()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::write(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::write(&staging, e))?;
    for (ch, t) in channels {
        write_tensor(&staging.join(format!("{ch}.{EXTENSION}")), t)?;
    }
    let mut sc = sidecar.clone();
    sc.channels = channels.iter().map(|(c, _)| c.clone()).collect();
    let sidecar_path = staging.join(SIDECAR);
    let mut json = serde_json::to_vec_pretty(&sc)?;
    json.push(b'\n');
    fs::write(&sidecar_path, json).map_err(|e| Error::write(&sidecar_path, e))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::write(dir, e))?;
    }
    fs::rename(&staging, dir).map_err(|e| Error::write(dir, e))
}

pub fn read_sidecar(dir: &Path) -> Result<MapSidecar> {
    let path = dir.join(SIDECAR);
    let bytes = fs::read(&path).map_err(|e| Error::read(&path, e))?;
    parse_sidecar(&path, &bytes)
}

fn parse_sidecar(path: &Path, bytes: &[u8]) -> Result<MapSidecar> {
    serde_json::from_slice(bytes).map_err(|e| Error::parse(e.line() as u64, format!("{}: {e}", path.display())))
}

fn channel_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.{EXTENSION}"))
}

fn decode_channel(path: &Path, bytes: &[u8], dims: (usize, usize)) -> Result<Grid> {
    let tensor_err = |reason: String| Error::Tensor {
        path: path.to_path_buf(),
        reason,
    };
    let grid = Tensor::decode(bytes)
        .map_err(tensor_err)?
        .into_grid()
        .map_err(|e| tensor_err(e.to_string()))?;
    if grid.dims() != dims {
        return Err(Error::DimensionMismatch(format!(
            "{} is {}x{}, sidecar says {}x{}",
            path.display(),
            grid.width(),
            grid.height(),
            dims.0,
            dims.1
        )));
    }
    Ok(grid)
}

pub fn read_channel(dir: &Path, name: &str, dims: (usize, usize)) -> Result<Grid> {
    let path = channel_path(dir, name);
    let bytes = fs::read(&path).map_err(|e| Error::read(&path, e))?;
    decode_channel(&path, &bytes, dims)
}

/// Every file of one map-set directory, read into memory.
#[derive(Clone, Debug)]
pub struct MapFiles {
    dir: PathBuf,
    files: BTreeMap<String, Vec<u8>>,
}

impl MapFiles {
    pub fn read(dir: &Path) -> Result<Self> {
        let mut files = BTreeMap::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::read(dir, e))? {
            let path = entry.map_err(|e| Error::read(dir, e))?.path();
            if path.is_file() {
                let bytes = fs::read(&path).map_err(|e| Error::read(&path, e))?;
                files.insert(path.file_name().unwrap_or_default().to_string_lossy().into_owned(), bytes);
            }
        }
        Ok(Self { dir: dir.to_path_buf(), files })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// File names and contents in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u8])> {
        self.files.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    fn file(&self, name: &str) -> Result<&[u8]> {
        let path = self.dir.join(name);
        self.files.get(name).map(Vec::as_slice).ok_or_else(|| {
            Error::read(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"))
        })
    }

    fn has_channel(&self, name: &str) -> bool {
        self.files.contains_key(&format!("{name}.{EXTENSION}"))
    }

    pub fn sidecar(&self) -> Result<MapSidecar> {
        parse_sidecar(&self.dir.join(SIDECAR), self.file(SIDECAR)?)
    }

    pub fn channel(&self, name: &str, dims: (usize, usize)) -> Result<Grid> {
        let file = format!("{name}.{EXTENSION}");
        decode_channel(&self.dir.join(&file), self.file(&file)?, dims)
    }

    fn mask(&self, name: &str, dims: (usize, usize)) -> Result<Mask> {
        Ok(self.channel(name, dims)?.map(|&v| v > 0.5))
    }

    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let sc = self.sidecar()?;
        let dims = (sc.width, sc.height);
        let mut density = DensityStack::zeros(sc.image_id.clone(), sc.width, sc.height, sc.downsample);
        density.overall = self.channel(OVERALL, dims)?;
        for a in Attribute::ALL {
            for l in Label::ALL {
                density.channels[a.index()][l.index()] = self.channel(&density_channel(a, l), dims)?;
            }
        }
        let mut masks: [Mask; NUM_ATTRIBUTES] = std::array::from_fn(|_| Mask::new(sc.width, sc.height));
        for a in Attribute::ALL {
            masks[a.index()] = self.mask(&mask_channel(a), dims)?;
        }
        Ok(GroundTruth { density, masks })
    }

    pub fn prediction(&self) -> Result<PredictionStack> {
        let sc = self.sidecar()?;
        let dims = (sc.width, sc.height);
        let mut classes: crate::metrics::ClassGrids = Default::default();
        for a in Attribute::ALL {
            for (c, l) in Label::KNOWN.into_iter().enumerate() {
                classes[a.index()][c] = self.channel(&density_channel(a, l), dims)?;
            }
        }
        let overall = if self.has_channel(OVERALL) {
            Some(self.channel(OVERALL, dims)?)
        } else {
            None
        };
        let seg_names: Vec<String> = Attribute::ALL
            .iter()
            .flat_map(|&a| Label::ALL.map(|l| seg_channel(a, l)))
            .collect();
        let segmentation = if seg_names.iter().all(|n| self.has_channel(n)) {
            let mut seg: SegGrids = Default::default();
            for a in Attribute::ALL {
                for l in Label::ALL {
                    seg[a.index()][l.index()] = self.channel(&seg_channel(a, l), dims)?;
                }
            }
            Some(seg)
        } else {
            None
        };
        Ok(PredictionStack {
            image_id: sc.image_id,
            classes,
            overall,
            segmentation,
        })
    }
}

pub fn read_ground_truth(dir: &Path) -> Result<GroundTruth> {
    MapFiles::read(dir)?.ground_truth()
}

pub fn read_prediction(dir: &Path) -> Result<PredictionStack> {
    MapFiles::read(dir)?.prediction()
}

/// Map-set directories under `root` (those containing a sidecar), sorted.
pub fn list_map_sets(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(root).map_err(|e| Error::read(root, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::read(root, e))?;
        let path = entry.path();
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if !hidden && path.is_dir() && path.join(SIDECAR).is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
