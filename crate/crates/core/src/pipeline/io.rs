//! Binary files for snapshots, bases, coefficient tables and artifacts.
//!
//! Layout: 8-byte magic, kind byte, the config hash and a JSON header as
//! length-prefixed UTF-8, then a count-prefixed block of little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::InnerProduct;
use crate::mlp::{Activation, Layer, Mlp};
use crate::online::{FieldModel, RomArtifact};
use crate::pipeline::cases::CaseId;
use crate::pipeline::config::PipelineConfig;
use crate::pod::{FieldId, PodVariant, ReducedBasis};
use crate::projection::{CoefficientTable, Normalizer};

const MAGIC: &[u8; 8] = b"BIOTROM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FileKind {
    Snapshot = 1,
    Basis = 2,
    Table = 3,
    Artifact = 4,
    Network = 5,
}

impl FileKind {
    fn from_u8(v: u8) -> Result<FileKind> {
        match v {
            1 => Ok(FileKind::Snapshot),
            2 => Ok(FileKind::Basis),
            3 => Ok(FileKind::Table),
            4 => Ok(FileKind::Artifact),
            5 => Ok(FileKind::Network),
            _ => Err(Error::Format(format!("unknown file kind {v}"))),
        }
    }
}

/// A decoded file before its header is interpreted.
pub struct RawFile {
    pub kind: FileKind,
    pub hash: String,
    pub header: String,
    pub data: Vec<f64>,
}

pub fn write_raw(path: &Path, kind: FileKind, hash: &str, header: &str, data: &[f64]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    // Write to a sibling and rename, so an interrupted run never leaves a
    // truncated file behind.
    let tmp = path.with_extension("partial");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_u8(kind as u8)?;
        for s in [hash, header] {
            w.write_u32::<LittleEndian>(s.len() as u32)?;
            w.write_all(s.as_bytes())?;
        }
        w.write_u64::<LittleEndian>(data.len() as u64)?;
        for &v in data {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_raw(path: &Path, expect: FileKind) -> Result<RawFile> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{} is not a biotrom file", path.display())));
    }
    let kind = FileKind::from_u8(r.read_u8()?)?;
    if kind != expect {
        return Err(Error::Format(format!("{} holds {kind:?} data, expected {expect:?}", path.display())));
    }
    let read_str = |r: &mut BufReader<File>| -> Result<String> {
        let n = r.read_u32::<LittleEndian>()? as usize;
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
    };
    let hash = read_str(&mut r)?;
    let header = read_str(&mut r)?;
    let n = r.read_u64::<LittleEndian>()? as usize;
    let mut data = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    if r.read_u8().is_ok() {
        return Err(Error::Format(format!("{} has trailing bytes", path.display())));
    }
    Ok(RawFile { kind, hash, header, data })
}

/// SHA-256 (hex) of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn parse_header<T: DeserializeOwned>(raw: &RawFile) -> Result<T> {
    Ok(serde_json::from_str(&raw.header)?)
}

/// Consumes `n` values from the front of a payload.
struct Cursor<'a> {
    data: &'a [f64],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [f64]> {
        if self.data.len() < n {
            return Err(Error::Format("payload shorter than its header declares".into()));
        }
        let (a, b) = self.data.split_at(n);
        self.data = b;
        Ok(a)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_column_slice(rows, cols, self.take(rows * cols)?))
    }

    fn finish(self) -> Result<()> {
        if self.data.is_empty() {
            Ok(())
        } else {
            Err(Error::Format("payload longer than its header declares".into()))
        }
    }
}

/// One FOM trajectory of both fields.
#[derive(Debug, Clone)]
pub struct StoredTrajectory {
    pub index: usize,
    pub mu: Vec<f64>,
    pub times: Vec<f64>,
    pub u: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Wall time of the solve (s).
    pub seconds: f64,
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    index: usize,
    mu: Vec<f64>,
    times: Vec<f64>,
    n_u: usize,
    n_p: usize,
    seconds: f64,
}

pub fn write_snapshot(path: &Path, hash: &str, s: &StoredTrajectory) -> Result<()> {
    let header = SnapshotHeader {
        index: s.index,
        mu: s.mu.clone(),
        times: s.times.clone(),
        n_u: s.u.nrows(),
        n_p: s.p.nrows(),
        seconds: s.seconds,
    };
    let mut data = Vec::with_capacity(s.u.len() + s.p.len());
    data.extend_from_slice(s.u.as_slice());
    data.extend_from_slice(s.p.as_slice());
    write_raw(path, FileKind::Snapshot, hash, &serde_json::to_string(&header)?, &data)
}

pub fn read_snapshot(path: &Path) -> Result<(String, StoredTrajectory)> {
    let raw = read_raw(path, FileKind::Snapshot)?;
    let h: SnapshotHeader = parse_header(&raw)?;
    let nt = h.times.len();
    let mut c = Cursor { data: &raw.data };
    let u = c.matrix(h.n_u, nt)?;
    let p = c.matrix(h.n_p, nt)?;
    c.finish()?;
    Ok((raw.hash, StoredTrajectory { index: h.index, mu: h.mu, times: h.times, u, p, seconds: h.seconds }))
}

#[derive(Serialize, Deserialize)]
struct BasisHeader {
    field: FieldId,
    n_dofs: usize,
    n_modes: usize,
    n_singular: usize,
    variant: PodVariant,
    inner: String,
}

fn basis_header(b: &ReducedBasis) -> BasisHeader {
    BasisHeader {
        field: b.field,
        n_dofs: b.n_dofs(),
        n_modes: b.n_modes(),
        n_singular: b.singular_values.len(),
        variant: b.variant,
        inner: b.inner.name().to_string(),
    }
}

fn push_basis(b: &ReducedBasis, data: &mut Vec<f64>) {
    data.extend_from_slice(b.modes.as_slice());
    data.extend_from_slice(&b.singular_values);
}

fn take_basis(h: &BasisHeader, c: &mut Cursor<'_>, inner: &InnerProduct) -> Result<ReducedBasis> {
    if inner.name() != h.inner {
        return Err(Error::Format(format!("basis uses the {} inner product, not {}", h.inner, inner.name())));
    }
    let modes = c.matrix(h.n_dofs, h.n_modes)?;
    let singular_values = c.take(h.n_singular)?.to_vec();
    Ok(ReducedBasis { field: h.field, modes, singular_values, variant: h.variant, inner: inner.clone() })
}

pub fn write_basis(path: &Path, hash: &str, b: &ReducedBasis) -> Result<()> {
    let mut data = Vec::new();
    push_basis(b, &mut data);
    write_raw(path, FileKind::Basis, hash, &serde_json::to_string(&basis_header(b))?, &data)
}

/// `inner` must be the product the basis was built with.
pub fn read_basis(path: &Path, inner: &InnerProduct) -> Result<(String, ReducedBasis)> {
    let raw = read_raw(path, FileKind::Basis)?;
    let h: BasisHeader = parse_header(&raw)?;
    let mut c = Cursor { data: &raw.data };
    let b = take_basis(&h, &mut c, inner)?;
    c.finish()?;
    Ok((raw.hash, b))
}

#[derive(Serialize, Deserialize)]
struct TableHeader {
    field: FieldId,
    n_modes: usize,
    n_params: usize,
    n_times: usize,
    in_width: usize,
    input_norm: Normalizer,
    output_norm: Normalizer,
}

pub fn write_table(path: &Path, hash: &str, t: &CoefficientTable) -> Result<()> {
    let h = TableHeader {
        field: t.field,
        n_modes: t.n_modes(),
        n_params: t.n_params,
        n_times: t.n_times,
        in_width: t.input_norm.width(),
        input_norm: t.input_norm.clone(),
        output_norm: t.output_norm.clone(),
    };
    let mut data = Vec::with_capacity(t.len() * (h.in_width + h.n_modes));
    for (x, y) in t.inputs.iter().zip(&t.theta) {
        data.extend_from_slice(x);
        data.extend_from_slice(y);
    }
    write_raw(path, FileKind::Table, hash, &serde_json::to_string(&h)?, &data)
}

pub fn read_table(path: &Path) -> Result<(String, CoefficientTable)> {
    let raw = read_raw(path, FileKind::Table)?;
    let h: TableHeader = parse_header(&raw)?;
    let rows = h.n_params * h.n_times;
    let mut c = Cursor { data: &raw.data };
    let mut inputs = Vec::with_capacity(rows);
    let mut theta = Vec::with_capacity(rows);
    for _ in 0..rows {
        inputs.push(c.take(h.in_width)?.to_vec());
        theta.push(c.take(h.n_modes)?.to_vec());
    }
    c.finish()?;
    Ok((
        raw.hash,
        CoefficientTable {
            field: h.field,
            inputs,
            theta,
            n_params: h.n_params,
            n_times: h.n_times,
            input_norm: h.input_norm,
            output_norm: h.output_norm,
        },
    ))
}

#[derive(Serialize, Deserialize)]
struct NetHeader {
    sizes: Vec<usize>,
    activation: u8,
    seed: u64,
}

fn net_header(n: &Mlp) -> NetHeader {
    NetHeader { sizes: n.sizes(), activation: n.activation.id(), seed: n.seed }
}

fn push_net(n: &Mlp, data: &mut Vec<f64>) {
    for l in &n.layers {
        data.extend_from_slice(&l.w);
        data.extend_from_slice(&l.b);
    }
}

fn take_net(h: &NetHeader, c: &mut Cursor<'_>) -> Result<Mlp> {
    if h.sizes.len() < 2 {
        return Err(Error::Format("network needs at least an input and an output layer".into()));
    }
    let layers = h
        .sizes
        .windows(2)
        .map(|s| {
            Ok(Layer { n_in: s[0], n_out: s[1], w: c.take(s[0] * s[1])?.to_vec(), b: c.take(s[1])?.to_vec() })
        })
        .collect::<Result<_>>()?;
    Ok(Mlp { layers, activation: Activation::from_id(h.activation)?, seed: h.seed })
}

/// A trained network on its own, for the `train` phase.
pub fn write_network(path: &Path, hash: &str, field: FieldId, net: &Mlp) -> Result<()> {
    let mut data = Vec::new();
    push_net(net, &mut data);
    let header = serde_json::json!({ "field": field, "net": net_header(net) });
    write_raw(path, FileKind::Network, hash, &header.to_string(), &data)
}

pub fn read_network(path: &Path) -> Result<(String, FieldId, Mlp)> {
    #[derive(Deserialize)]
    struct H {
        field: FieldId,
        net: NetHeader,
    }
    let raw = read_raw(path, FileKind::Network)?;
    let h: H = parse_header(&raw)?;
    let mut c = Cursor { data: &raw.data };
    let net = take_net(&h.net, &mut c)?;
    c.finish()?;
    Ok((raw.hash, h.field, net))
}

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    basis: BasisHeader,
    net: NetHeader,
    input_norm: Normalizer,
    output_norm: Normalizer,
}

#[derive(Serialize, Deserialize)]
struct ArtifactHeader {
    case: CaseId,
    times: Vec<f64>,
    param_box: Vec<(f64, f64)>,
    config: PipelineConfig,
    fields: Vec<FieldHeader>,
}

/// Writes the artifact with the canonical form of `config` embedded, so the
/// online phase can rebuild the discretisation.
pub fn write_artifact(path: &Path, a: &RomArtifact, config: &PipelineConfig) -> Result<()> {
    let mut data = Vec::new();
    let mut fields = Vec::new();
    for f in FieldId::BOTH {
        let m = a.field(f);
        push_basis(&m.basis, &mut data);
        push_net(&m.net, &mut data);
        fields.push(FieldHeader {
            basis: basis_header(&m.basis),
            net: net_header(&m.net),
            input_norm: m.input_norm.clone(),
            output_norm: m.output_norm.clone(),
        });
    }
    let h = ArtifactHeader {
        case: a.case,
        times: a.times.clone(),
        param_box: a.param_box.clone(),
        config: config.canonical(),
        fields,
    };
    write_raw(path, FileKind::Artifact, &a.config_hash, &serde_json::to_string(&h)?, &data)
}

/// `inner` supplies the inner product each basis was built with.
pub fn read_artifact(
    path: &Path,
    mut inner: impl FnMut(&PipelineConfig, FieldId) -> Result<InnerProduct>,
) -> Result<(RomArtifact, PipelineConfig)> {
    let raw = read_raw(path, FileKind::Artifact)?;
    let h: ArtifactHeader = parse_header(&raw)?;
    if h.fields.len() != 2 {
        return Err(Error::Format("artifact must hold a displacement and a pressure model".into()));
    }
    if raw.hash != h.config.hash() {
        return Err(Error::Provenance(format!("{} was written by a different config", path.display())));
    }
    let mut c = Cursor { data: &raw.data };
    let mut models = Vec::new();
    for fh in &h.fields {
        let ip = inner(&h.config, fh.basis.field)?;
        let basis = take_basis(&fh.basis, &mut c, &ip)?;
        let net = take_net(&fh.net, &mut c)?;
        models.push(FieldModel::new(basis, net, fh.input_norm.clone(), fh.output_norm.clone())?);
    }
    c.finish()?;
    let pressure = models.pop().expect("two models");
    let displacement = models.pop().expect("two models");
    if displacement.basis.field != FieldId::Displacement || pressure.basis.field != FieldId::Pressure {
        return Err(Error::Format("artifact fields are out of order".into()));
    }
    let artifact = RomArtifact {
        case: h.case,
        times: h.times,
        param_box: h.param_box,
        config_hash: raw.hash,
        displacement,
        pressure,
    };
    Ok((artifact, h.config))
}
