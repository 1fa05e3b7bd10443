//! The `T4D1` binary tensor container, the interchange format between
//! every CLI subcommand.
//!
//! Layout, byte for byte:
//!
//! ```text
//! magic      4 bytes          `T4D1`
//! header_len 4 bytes          little-endian u32
//! header     header_len bytes JSON: {elem, order, dims, spacing, kind, provenance?}
//! payload    raw scalars      little-endian, row-major with the last axis fastest
//! ```
//!
//! Axis-order tags: `dhwt` (volume), `ndhwt` (volume batch), `dhwtc`
//! (latent, channel fastest), `ndhwtc` (latent batch), `rm` (generic
//! row-major tensor, used for checkpoint parameters). Volumes and latents
//! carry `f32` payloads; parameter tensors carry `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array4, Array5, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::latent::LatentVolume;
use crate::volume::{Spacing, Volume4D, VolumeKind};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"T4D1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub elem: String,
    pub order: String,
    pub dims: Vec<usize>,
    pub spacing: [f64; 4],
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Optional origin metadata carried in the header.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emb: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook_hash: Option<String>,
}

/// Everything a `T4D1` file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Container {
    Volume(Volume4D),
    VolumeBatch(Vec<Volume4D>),
    Latent(LatentVolume),
    LatentBatch(Vec<LatentVolume>),
    /// Generic row-major f64 tensor (checkpoint parameter).
    Tensor(ArrayD<f64>),
}

fn kind_str(kind: VolumeKind) -> &'static str {
    match kind {
        VolumeKind::Image => "image",
        VolumeKind::Mask => "mask",
    }
}

fn parse_kind(s: &str) -> Result<VolumeKind> {
    match s {
        "image" => Ok(VolumeKind::Image),
        "mask" => Ok(VolumeKind::Mask),
        other => Err(Error::BadHeader(format!("unknown kind `{other}` for volume order"))),
    }
}

fn check_payload_f32(data: &[f32], kind: Option<VolumeKind>) -> Result<()> {
    for (i, &v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        if kind == Some(VolumeKind::Mask) && v != 0.0 && v != 1.0 {
            return Err(Error::NotBinary { index: i, value: v });
        }
    }
    Ok(())
}

fn write_file(path: &Path, header: &Header, payload: &[u8]) -> Result<()> {
    let header_json =
        serde_json::to_vec(header).map_err(|e| Error::BadHeader(e.to_string()))?;
    let mut buf = Vec::with_capacity(8 + header_json.len() + payload.len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    buf.extend_from_slice(payload);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn f32_bytes(data: impl Iterator<Item = f32>) -> Vec<u8> {
    let mut out = Vec::new();
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn f64_bytes(data: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::new();
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_volume(v: &Volume4D, path: impl AsRef<Path>) -> Result<()> {
    v.validate()?;
    let (d, h, w, t) = v.dims();
    let header = Header {
        elem: "f32".into(),
        order: "dhwt".into(),
        dims: vec![d, h, w, t],
        spacing: v.spacing.as_array(),
        kind: kind_str(v.kind).into(),
        provenance: None,
    };
    // Standard layout iteration is row-major, t fastest.
    let standard = v.data.as_standard_layout();
    write_file(path.as_ref(), &header, &f32_bytes(standard.iter().copied()))
}

pub fn write_volume_batch(vs: &[Volume4D], path: impl AsRef<Path>) -> Result<()> {
    let first = vs.first().ok_or_else(|| Error::shape("empty batch"))?;
    let dims = first.dims();
    let mut payload = Vec::new();
    for v in vs {
        v.validate()?;
        if v.dims() != dims || v.kind != first.kind {
            return Err(Error::shape("batch members must share dims and kind"));
        }
        let standard = v.data.as_standard_layout();
        payload.extend(standard.iter().copied());
    }
    let header = Header {
        elem: "f32".into(),
        order: "ndhwt".into(),
        dims: vec![vs.len(), dims.0, dims.1, dims.2, dims.3],
        spacing: first.spacing.as_array(),
        kind: kind_str(first.kind).into(),
        provenance: None,
    };
    write_file(path.as_ref(), &header, &f32_bytes(payload.into_iter()))
}

pub fn write_latent(z: &LatentVolume, path: impl AsRef<Path>) -> Result<()> {
    z.validate()?;
    let (d, h, w, t, c) = z.data.dim();
    let header = Header {
        elem: "f32".into(),
        order: "dhwtc".into(),
        dims: vec![d, h, w, t, c],
        spacing: z.spacing.as_array(),
        kind: "latent".into(),
        provenance: Some(Provenance {
            seed: None,
            f: Some(z.f),
            emb: Some(c),
            codebook_hash: Some(z.codebook_hash.clone()),
        }),
    };
    let standard = z.data.as_standard_layout();
    write_file(path.as_ref(), &header, &f32_bytes(standard.iter().copied()))
}

/// Writes a generic row-major f64 tensor (checkpoint parameter).
pub fn write_tensor(t: &ArrayD<f64>, path: impl AsRef<Path>) -> Result<()> {
    for (i, &v) in t.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
    }
    let header = Header {
        elem: "f64".into(),
        order: "rm".into(),
        dims: t.shape().to_vec(),
        spacing: [1.0; 4],
        kind: "param".into(),
        provenance: None,
    };
    let standard = t.as_standard_layout();
    write_file(path.as_ref(), &header, &f64_bytes(standard.iter().copied()))
}

/// Reads any `T4D1` file, validating magic, header, payload length,
/// finiteness, and mask binarity.
pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    parse_container(&bytes)
}

pub fn parse_container(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < 8 {
        return Err(Error::Truncated { expected: 8, found: bytes.len() });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[0..4]);
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(Error::Truncated { expected: 8 + header_len, found: bytes.len() });
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| Error::BadHeader(e.to_string()))?;
    let payload = &bytes[8 + header_len..];

    let numel: usize = header.dims.iter().product();
    let elem_size = match header.elem.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::BadHeader(format!("unknown elem `{other}`"))),
    };
    let expected = numel * elem_size;
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected: 8 + header_len + expected,
            found: bytes.len(),
        });
    }

    let spacing = Spacing::from_array(header.spacing);
    let expect_rank = |rank: usize| -> Result<()> {
        if header.dims.len() != rank {
            return Err(Error::BadHeader(format!(
                "order `{}` needs {rank} dims, found {}",
                header.order,
                header.dims.len()
            )));
        }
        Ok(())
    };

    match header.order.as_str() {
        "dhwt" => {
            expect_rank(4)?;
            let kind = parse_kind(&header.kind)?;
            let data = read_f32s(payload);
            check_payload_f32(&data, Some(kind))?;
            let arr = Array4::from_shape_vec(
                (header.dims[0], header.dims[1], header.dims[2], header.dims[3]),
                data,
            )
            .map_err(|e| Error::shape(e.to_string()))?;
            Ok(Container::Volume(Volume4D { data: arr, spacing, kind }))
        }
        "ndhwt" => {
            expect_rank(5)?;
            let kind = parse_kind(&header.kind)?;
            let data = read_f32s(payload);
            check_payload_f32(&data, Some(kind))?;
            let n = header.dims[0];
            let per = numel / n.max(1);
            let mut volumes = Vec::with_capacity(n);
            for i in 0..n {
                let arr = Array4::from_shape_vec(
                    (header.dims[1], header.dims[2], header.dims[3], header.dims[4]),
                    data[i * per..(i + 1) * per].to_vec(),
                )
                .map_err(|e| Error::shape(e.to_string()))?;
                volumes.push(Volume4D { data: arr, spacing, kind });
            }
            Ok(Container::VolumeBatch(volumes))
        }
        "dhwtc" => {
            expect_rank(5)?;
            let data = read_f32s(payload);
            check_payload_f32(&data, None)?;
            let arr = Array5::from_shape_vec(
                (header.dims[0], header.dims[1], header.dims[2], header.dims[3], header.dims[4]),
                data,
            )
            .map_err(|e| Error::shape(e.to_string()))?;
            let prov = header.provenance.unwrap_or_default();
            Ok(Container::Latent(LatentVolume {
                data: arr,
                spacing,
                f: prov.f.unwrap_or(1),
                codebook_hash: prov.codebook_hash.unwrap_or_default(),
            }))
        }
        "ndhwtc" => {
            expect_rank(6)?;
            let data = read_f32s(payload);
            check_payload_f32(&data, None)?;
            let n = header.dims[0];
            let per = numel / n.max(1);
            let prov = header.provenance.unwrap_or_default();
            let mut latents = Vec::with_capacity(n);
            for i in 0..n {
                let arr = Array5::from_shape_vec(
                    (
                        header.dims[1],
                        header.dims[2],
                        header.dims[3],
                        header.dims[4],
                        header.dims[5],
                    ),
                    data[i * per..(i + 1) * per].to_vec(),
                )
                .map_err(|e| Error::shape(e.to_string()))?;
                latents.push(LatentVolume {
                    data: arr,
                    spacing,
                    f: prov.f.unwrap_or(1),
                    codebook_hash: prov.codebook_hash.clone().unwrap_or_default(),
                });
            }
            Ok(Container::LatentBatch(latents))
        }
        "rm" => {
            let data = read_f64s(payload);
            for (i, &v) in data.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { index: i });
                }
            }
            let arr = ArrayD::from_shape_vec(IxDyn(&header.dims), data)
                .map_err(|e| Error::shape(e.to_string()))?;
            Ok(Container::Tensor(arr))
        }
        other => Err(Error::UnknownOrder(other.into())),
    }
}

/// Reads a file that must contain a single volume.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume4D> {
    match read_container(&path)? {
        Container::Volume(v) => Ok(v),
        other => Err(Error::shape(format!(
            "{}: expected a single volume, found {}",
            path.as_ref().display(),
            container_name(&other)
        ))),
    }
}

/// Reads a file that must contain a single latent volume.
pub fn read_latent(path: impl AsRef<Path>) -> Result<LatentVolume> {
    match read_container(&path)? {
        Container::Latent(z) => Ok(z),
        other => Err(Error::shape(format!(
            "{}: expected a latent volume, found {}",
            path.as_ref().display(),
            container_name(&other)
        ))),
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<ArrayD<f64>> {
    match read_container(&path)? {
        Container::Tensor(t) => Ok(t),
        other => Err(Error::shape(format!(
            "{}: expected a parameter tensor, found {}",
            path.as_ref().display(),
            container_name(&other)
        ))),
    }
}

fn container_name(c: &Container) -> &'static str {
    match c {
        Container::Volume(_) => "volume",
        Container::VolumeBatch(_) => "volume batch",
        Container::Latent(_) => "latent",
        Container::LatentBatch(_) => "latent batch",
        Container::Tensor(_) => "tensor",
    }
}

fn read_f32s(payload: &[u8]) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn read_f64s(payload: &[u8]) -> Vec<f64> {
    payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}
