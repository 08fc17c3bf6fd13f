//! Portable dataset directory:
//!
//! ```text
//! meta.json       DatasetMeta fields, sample count, format version
//! positions.csv   index,x,y,is_nlos
//! cfr.bin         f32 LE, [sample][antenna][subcarrier][re, im]
//! adcam.bin       f32 LE, [sample][angle][delay]
//! paths.json      per-sample path lists
//! ```

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{Adcam, ComplexMatrix, DatasetMeta, PropagationPath};
use crate::error::{Error, Result};
use crate::scene::MultipathSample;

pub const FORMAT_VERSION: u32 = 1;

pub const META_FILE: &str = "meta.json";
pub const POSITIONS_FILE: &str = "positions.csv";
pub const CFR_FILE: &str = "cfr.bin";
pub const ADCAM_FILE: &str = "adcam.bin";
pub const PATHS_FILE: &str = "paths.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    num_samples: usize,
    #[serde(flatten)]
    meta: DatasetMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct PositionRow {
    index: usize,
    x: f64,
    y: f64,
    is_nlos: u8,
}

pub fn export_dataset(samples: &[MultipathSample], meta: &DatasetMeta, dir: &Path) -> Result<()> {
    let (nt, nc) = (meta.num_bs_antennas, meta.num_subcarriers);
    for (i, s) in samples.iter().enumerate() {
        if s.cfr.rows() != nt || s.cfr.cols() != nc || s.adcam.rows() != nt || s.adcam.cols() != nc {
            return Err(Error::DimensionMismatch(format!(
                "sample {i} fingerprints do not match the {nt}x{nc} meta"
            )));
        }
    }
    fs::create_dir_all(dir)?;

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        num_samples: samples.len(),
        meta: *meta,
    };
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;

    let mut writer = csv::Writer::from_path(dir.join(POSITIONS_FILE)).map_err(csv_err)?;
    for (index, s) in samples.iter().enumerate() {
        writer
            .serialize(PositionRow {
                index,
                x: s.position[0],
                y: s.position[1],
                is_nlos: s.is_nlos as u8,
            })
            .map_err(csv_err)?;
    }
    writer.flush()?;

    let mut cfr = Vec::with_capacity(samples.len() * nt * nc * 8);
    let mut adcam = Vec::with_capacity(samples.len() * nt * nc * 4);
    for s in samples {
        for z in s.cfr.data() {
            cfr.extend_from_slice(&(z.re as f32).to_le_bytes());
            cfr.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
        for v in s.adcam.data() {
            adcam.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(dir.join(CFR_FILE), cfr)?;
    fs::write(dir.join(ADCAM_FILE), adcam)?;

    let paths: Vec<&Vec<PropagationPath>> = samples.iter().map(|s| &s.paths).collect();
    fs::write(dir.join(PATHS_FILE), serde_json::to_string(&paths)? + "\n")?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::MalformedManifest(format!("{POSITIONS_FILE}: {e}"))
}

/// Reads a binary payload and checks its size. A size that is a whole
/// number of rows of some other width is reported as a dimension mismatch,
/// anything else as truncation.
fn read_payload(path: &Path, rows: usize, row_bytes: usize, cols: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let expected = (rows * row_bytes * cols) as u64;
    let found = bytes.len() as u64;
    if found == expected {
        return Ok(bytes);
    }
    let unit = (rows * row_bytes) as u64;
    if unit > 0 && found > 0 && found.is_multiple_of(unit) {
        return Err(Error::DimensionMismatch(format!(
            "{} holds {} columns per row, manifest says {cols}",
            path.display(),
            found / unit
        )));
    }
    Err(Error::TruncatedBinary {
        path: path.to_path_buf(),
        expected,
        found,
    })
}

fn f32_at(bytes: &[u8], i: usize) -> f64 {
    f32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4-byte chunk")) as f64
}

pub fn import_dataset(dir: &Path) -> Result<(Vec<MultipathSample>, DatasetMeta)> {
    let manifest_path = dir.join(META_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingManifest(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::MalformedManifest(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::MalformedManifest(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let meta = manifest.meta;
    meta.validate()
        .map_err(|e| Error::MalformedManifest(e.to_string()))?;
    let m = manifest.num_samples;
    let (nt, nc) = (meta.num_bs_antennas, meta.num_subcarriers);

    let positions_path = dir.join(POSITIONS_FILE);
    if !positions_path.is_file() {
        return Err(Error::MissingArtifact(positions_path));
    }
    let mut reader = csv::Reader::from_path(&positions_path).map_err(csv_err)?;
    let rows: Vec<PositionRow> = reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)?;
    if rows.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{POSITIONS_FILE} has {} rows, manifest says {m}",
            rows.len()
        )));
    }

    let cfr = read_payload(&dir.join(CFR_FILE), m * nt, 8, nc)?;
    let adcam = read_payload(&dir.join(ADCAM_FILE), m * nt, 4, nc)?;

    let paths_path = dir.join(PATHS_FILE);
    if !paths_path.is_file() {
        return Err(Error::MissingArtifact(paths_path));
    }
    let paths: Vec<Vec<PropagationPath>> = serde_json::from_str(&fs::read_to_string(&paths_path)?)
        .map_err(|e| Error::MalformedManifest(format!("{PATHS_FILE}: {e}")))?;
    if paths.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{PATHS_FILE} has {} samples, manifest says {m}",
            paths.len()
        )));
    }

    let per = nt * nc;
    let mut samples = Vec::with_capacity(m);
    for (i, (row, sample_paths)) in rows.into_iter().zip(paths).enumerate() {
        if row.index != i {
            return Err(Error::MalformedManifest(format!(
                "{POSITIONS_FILE} row {i} carries index {}",
                row.index
            )));
        }
        for p in &sample_paths {
            p.validate(&meta)
                .map_err(|e| Error::MalformedManifest(format!("sample {i}: {e}")))?;
        }
        let cfr_data = (0..per)
            .map(|k| {
                let base = 2 * (i * per + k);
                Complex64::new(f32_at(&cfr, base), f32_at(&cfr, base + 1))
            })
            .collect();
        let adcam_data = (0..per).map(|k| f32_at(&adcam, i * per + k)).collect();
        samples.push(MultipathSample {
            position: [row.x, row.y],
            paths: sample_paths,
            cfr: ComplexMatrix::from_vec(nt, nc, cfr_data)?,
            adcam: Adcam::from_vec(nt, nc, adcam_data)?,
            is_nlos: row.is_nlos != 0,
        });
    }
    Ok((samples, meta))
}
