//! Shard container: header (magic, version, endianness tag, record
//! count, body length), a body of records, and a trailing SHA-256 of the
//! body. Each record is a JSON manifest block followed by raw
//! little-endian arrays: f64 for field coefficients and vector-field
//! samples, f32 for trajectory states and observations.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vfield_core::{
    BoundingBox, CorruptedTrajectory, MonomialExponents, PolynomialComponent,
    PolynomialVectorField, TimeGrid, Trajectory, TrajectorySet, VectorFieldSample,
};

use crate::error::DataError;
use crate::record::{Provenance, SystemRecord};

const SHARD_MAGIC: &[u8; 8] = b"VFSHRD01";
const SHARD_VERSION: u32 = 1;
const ENDIAN_TAG: u32 = 0x0102_0304;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridManifest {
    t_start: f64,
    t_end: f64,
    n_points: usize,
    substeps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ComponentManifest {
    exponents: Vec<Vec<u32>>,
}

/// Human-readable per-record header; array payload follows it.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordManifest {
    dimension: usize,
    scale: f64,
    components: Vec<ComponentManifest>,
    grid: GridManifest,
    n_trajectories: usize,
    retained: Vec<usize>,
    n_vf: usize,
    box_low: Vec<f64>,
    box_high: Vec<f64>,
    provenance: Provenance,
}

fn push_f64(buf: &mut Vec<u8>, values: impl Iterator<Item = f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_f32(buf: &mut Vec<u8>, values: impl Iterator<Item = f64>) {
    for v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn encode_record(record: &SystemRecord) -> Result<Vec<u8>, DataError> {
    let d = record.dimension();
    let manifest = RecordManifest {
        dimension: d,
        scale: record.field.scale(),
        components: record
            .field
            .components()
            .iter()
            .map(|c| ComponentManifest {
                exponents: c.terms.iter().map(|(m, _)| m.0.clone()).collect(),
            })
            .collect(),
        grid: GridManifest {
            t_start: record.grid.t_start,
            t_end: record.grid.t_end,
            n_points: record.grid.n_points,
            substeps: record.grid.substeps,
        },
        n_trajectories: record.clean.trajectories.len(),
        retained: record.corrupted.iter().map(|c| c.len()).collect(),
        n_vf: record.vf_targets.len(),
        box_low: record.boxed.low.clone(),
        box_high: record.boxed.high.clone(),
        provenance: record.provenance,
    };
    let manifest_json =
        serde_json::to_vec(&manifest).map_err(|e| DataError::Manifest(e.to_string()))?;

    let mut blob = Vec::new();
    for comp in record.field.components() {
        push_f64(&mut blob, comp.terms.iter().map(|(_, c)| *c));
    }
    for traj in &record.clean.trajectories {
        push_f32(&mut blob, traj.states.iter().copied());
    }
    for corr in &record.corrupted {
        blob.extend(corr.keep_mask.iter().map(|&k| k as u8));
        push_f32(&mut blob, corr.observations.iter().copied());
    }
    push_f64(
        &mut blob,
        record.vf_targets.iter().flat_map(|s| s.location.iter().copied()),
    );
    push_f64(
        &mut blob,
        record.vf_targets.iter().flat_map(|s| s.value.iter().copied()),
    );

    let mut out = Vec::with_capacity(8 + manifest_json.len() + blob.len());
    out.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    out.extend_from_slice(&blob);
    Ok(out)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.data.len() {
            return Err(DataError::Truncated(self.path.to_path_buf()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, DataError> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f32s_as_f64(&mut self, n: usize) -> Result<Vec<f64>, DataError> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

fn decode_record(cur: &mut Cursor) -> Result<SystemRecord, DataError> {
    let manifest_len = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
    let blob_len = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
    let manifest: RecordManifest = serde_json::from_slice(cur.take(manifest_len)?)
        .map_err(|e| DataError::Manifest(e.to_string()))?;
    let blob_start = cur.pos;

    let d = manifest.dimension;
    let grid = TimeGrid::new(
        manifest.grid.t_start,
        manifest.grid.t_end,
        manifest.grid.n_points,
        manifest.grid.substeps,
    )
    .map_err(|e| DataError::Manifest(e.to_string()))?;
    let times = grid.times();
    let n_points = grid.n_points;

    let mut components = Vec::with_capacity(manifest.components.len());
    for comp in &manifest.components {
        let coeffs = cur.f64s(comp.exponents.len())?;
        components.push(PolynomialComponent {
            terms: comp
                .exponents
                .iter()
                .zip(coeffs)
                .map(|(e, c)| (MonomialExponents(e.clone()), c))
                .collect(),
        });
    }
    let field = PolynomialVectorField::new(d, components, manifest.scale)
        .map_err(|e| DataError::Manifest(e.to_string()))?;

    let mut trajectories = Vec::with_capacity(manifest.n_trajectories);
    for _ in 0..manifest.n_trajectories {
        let flat = cur.f32s_as_f64(n_points * d)?;
        trajectories.push(Trajectory {
            times: times.clone(),
            states: Array2::from_shape_vec((n_points, d), flat)
                .map_err(|e| DataError::Manifest(e.to_string()))?,
        });
    }

    let mut corrupted = Vec::with_capacity(manifest.retained.len());
    for &kept in &manifest.retained {
        let mask_bytes = cur.take(n_points)?;
        let keep_mask: Vec<bool> = mask_bytes.iter().map(|&b| b != 0).collect();
        if keep_mask.iter().filter(|&&k| k).count() != kept {
            return Err(DataError::Manifest(
                "keep mask disagrees with retained count".into(),
            ));
        }
        let flat = cur.f32s_as_f64(kept * d)?;
        let obs_times: Vec<f64> = keep_mask
            .iter()
            .zip(&times)
            .filter(|(&k, _)| k)
            .map(|(_, &t)| t)
            .collect();
        corrupted.push(CorruptedTrajectory {
            times: obs_times,
            observations: Array2::from_shape_vec((kept, d), flat)
                .map_err(|e| DataError::Manifest(e.to_string()))?,
            keep_mask,
        });
    }

    let locs = cur.f64s(manifest.n_vf * d)?;
    let vals = cur.f64s(manifest.n_vf * d)?;
    let vf_targets = locs
        .chunks_exact(d)
        .zip(vals.chunks_exact(d))
        .map(|(l, v)| VectorFieldSample {
            location: l.to_vec(),
            value: v.to_vec(),
        })
        .collect();

    if cur.pos - blob_start != blob_len {
        return Err(DataError::Manifest("record blob length mismatch".into()));
    }

    Ok(SystemRecord {
        field,
        grid,
        clean: TrajectorySet {
            grid,
            trajectories,
        },
        corrupted,
        boxed: BoundingBox {
            low: manifest.box_low,
            high: manifest.box_high,
        },
        vf_targets,
        provenance: manifest.provenance,
    })
}

/// Serialized shard bytes plus per-record byte offsets (into the file).
pub struct EncodedShard {
    pub bytes: Vec<u8>,
    pub record_offsets: Vec<u64>,
    pub sha256_hex: String,
}

pub fn encode_shard(records: &[SystemRecord]) -> Result<EncodedShard, DataError> {
    let mut body = Vec::new();
    let header_len = 8 + 4 + 4 + 8 + 8;
    let mut record_offsets = Vec::with_capacity(records.len());
    for r in records {
        record_offsets.push((header_len + body.len()) as u64);
        body.extend(encode_record(r)?);
    }
    let digest = Sha256::digest(&body);

    let mut bytes = Vec::with_capacity(header_len + body.len() + 32);
    bytes.extend_from_slice(SHARD_MAGIC);
    bytes.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    bytes.extend_from_slice(&ENDIAN_TAG.to_le_bytes());
    bytes.extend_from_slice(&(records.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&(body.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&body);
    bytes.extend_from_slice(&digest);
    Ok(EncodedShard {
        bytes,
        record_offsets,
        sha256_hex: hex_string(&digest),
    })
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_shard(path: &Path, records: &[SystemRecord]) -> Result<EncodedShard, DataError> {
    let encoded = encode_shard(records)?;
    let mut w = BufWriter::new(File::create(path).map_err(|e| DataError::io(path, e))?);
    w.write_all(&encoded.bytes).map_err(|e| DataError::io(path, e))?;
    w.flush().map_err(|e| DataError::io(path, e))?;
    Ok(encoded)
}

pub fn load_shard(path: &Path) -> Result<Vec<SystemRecord>, DataError> {
    let mut file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut data = Vec::new();
    file.read_to_end(&mut data).map_err(|e| DataError::io(path, e))?;

    if data.len() < 32 || &data[..8] != SHARD_MAGIC {
        return Err(DataError::BadMagic(path.to_path_buf()));
    }
    let version = u32::from_le_bytes(data[8..12].try_into().unwrap());
    if version != SHARD_VERSION {
        return Err(DataError::Version {
            path: path.to_path_buf(),
            version,
        });
    }
    let endian = u32::from_le_bytes(data[12..16].try_into().unwrap());
    if endian != ENDIAN_TAG {
        return Err(DataError::Manifest("endianness tag mismatch".into()));
    }
    let record_count = u64::from_le_bytes(data[16..24].try_into().unwrap()) as usize;
    let body_len = u64::from_le_bytes(data[24..32].try_into().unwrap()) as usize;
    let header_len = 32;
    if data.len() < header_len + body_len + 32 {
        return Err(DataError::Truncated(path.to_path_buf()));
    }
    let body = &data[header_len..header_len + body_len];
    let digest = &data[header_len + body_len..header_len + body_len + 32];
    if Sha256::digest(body).as_slice() != digest {
        return Err(DataError::Checksum(path.to_path_buf()));
    }

    let mut cur = Cursor {
        data: body,
        pos: 0,
        path,
    };
    let mut records = Vec::with_capacity(record_count);
    for _ in 0..record_count {
        records.push(decode_record(&mut cur)?);
    }
    if cur.pos != body.len() {
        return Err(DataError::Manifest("trailing bytes in shard body".into()));
    }
    Ok(records)
}
