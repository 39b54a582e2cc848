//! `MFDS` dataset files.
//!
//! Layout (little-endian):
//!
//! ```text
//! header:  "MFDS" | version u16 | D u8 | dims u32 x D | records u32 | property_dim u8
//!          | hard E, hard nu, soft E, soft nu: f64 x 4
//! record:  voxels bit-packed row-major, LSB first, ceil(N / 8) bytes
//!          | properties f64 x property_dim
//!          | sigma f64 x D | seed u64 | quantile f64 | failed u8
//! ```
//!
//! `records` is the planned count; a file cut short by an interrupted run
//! can be resumed with [`read_partial`].

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use strucprop_core::homogenize::PhaseSpec;
use strucprop_core::microgen::{DatasetRecord, Provenance};
use strucprop_core::{Shape, VoxelGrid};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MFDS";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub shape: Shape,
    pub records: usize,
    pub property_dim: usize,
    pub hard: PhaseSpec,
    pub soft: PhaseSpec,
}

impl Header {
    fn voxel_bytes(&self) -> usize {
        self.shape.len().div_ceil(8)
    }

    pub fn record_bytes(&self) -> usize {
        let d = self.shape.ndim();
        self.voxel_bytes() + 8 * self.property_dim + 8 * d + 8 + 8 + 1
    }

    pub fn encoded_len(&self) -> usize {
        4 + 2 + 1 + 4 * self.shape.ndim() + 4 + 1 + 32
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.shape.ndim() as u8])?;
        for &d in self.shape.dims() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&(self.records as u32).to_le_bytes())?;
        w.write_all(&[self.property_dim as u8])?;
        for v in [self.hard.young(), self.hard.poisson(), self.soft.young(), self.soft.poisson()] {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Data("not an MFDS dataset file".into()));
        }
        let version = u16::from_le_bytes(read_array(r)?);
        if version != VERSION {
            return Err(Error::Data(format!("unsupported dataset version {version}")));
        }
        let [d] = read_array(r)?;
        let dims = (0..d).map(|_| Ok(u32::from_le_bytes(read_array(r)?) as usize)).collect::<Result<Vec<_>>>()?;
        let shape = Shape::new(&dims).map_err(|e| Error::Data(e.to_string()))?;
        let records = u32::from_le_bytes(read_array(r)?) as usize;
        let [property_dim] = read_array(r)?;
        let mut m = [0.0; 4];
        for v in &mut m {
            *v = f64::from_le_bytes(read_array(r)?);
        }
        let phase = |e, n| PhaseSpec::new(e, n).map_err(|e| Error::Data(e.to_string()));
        Ok(Header {
            shape,
            records,
            property_dim: property_dim as usize,
            hard: phase(m[0], m[1])?,
            soft: phase(m[2], m[3])?,
        })
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn pack_voxels(grid: &VoxelGrid) -> Result<Vec<u8>> {
    grid.ensure_binary()?;
    let mut out = vec![0u8; grid.len().div_ceil(8)];
    for (i, &v) in grid.values().iter().enumerate() {
        if v == 1.0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    Ok(out)
}

pub fn unpack_voxels(shape: &Shape, bytes: &[u8]) -> Result<VoxelGrid> {
    let values = (0..shape.len()).map(|i| f64::from((bytes[i / 8] >> (i % 8)) & 1)).collect();
    Ok(VoxelGrid::new(shape.clone(), values)?)
}

pub fn write_record(w: &mut impl Write, header: &Header, rec: &DatasetRecord) -> Result<()> {
    if rec.grid.shape() != &header.shape {
        return Err(Error::Data(format!(
            "record shape {:?} vs file {:?}",
            rec.grid.shape().dims(),
            header.shape.dims()
        )));
    }
    let props: Vec<f64> = if rec.properties.is_empty() && rec.failed {
        vec![f64::NAN; header.property_dim]
    } else {
        rec.properties.clone()
    };
    if props.len() != header.property_dim || rec.provenance.sigma.len() != header.shape.ndim() {
        return Err(Error::Data("record does not match the file's property or filter dimensions".into()));
    }
    w.write_all(&pack_voxels(&rec.grid)?)?;
    for p in &props {
        w.write_all(&p.to_le_bytes())?;
    }
    for s in &rec.provenance.sigma {
        w.write_all(&s.to_le_bytes())?;
    }
    w.write_all(&rec.provenance.seed.to_le_bytes())?;
    w.write_all(&rec.provenance.quantile.to_le_bytes())?;
    w.write_all(&[u8::from(rec.failed)])?;
    Ok(())
}

fn decode_record(header: &Header, buf: &[u8]) -> Result<DatasetRecord> {
    let vb = header.voxel_bytes();
    let grid = unpack_voxels(&header.shape, &buf[..vb])?;
    let mut pos = vb;
    let f64_at = |pos: &mut usize| {
        let v = f64::from_le_bytes(buf[*pos..*pos + 8].try_into().expect("8 bytes"));
        *pos += 8;
        v
    };
    let properties: Vec<f64> = (0..header.property_dim).map(|_| f64_at(&mut pos)).collect();
    let sigma: Vec<f64> = (0..header.shape.ndim()).map(|_| f64_at(&mut pos)).collect();
    let seed = u64::from_le_bytes(buf[pos..pos + 8].try_into().expect("8 bytes"));
    pos += 8;
    let quantile = f64_at(&mut pos);
    let failed = match buf[pos] {
        0 => false,
        1 => true,
        b => return Err(Error::Data(format!("bad failed flag {b}"))),
    };
    let properties = if failed { Vec::new() } else { properties };
    Ok(DatasetRecord { grid, properties, provenance: Provenance { sigma, seed, quantile }, failed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: Header,
    pub records: Vec<DatasetRecord>,
}

/// Read a complete dataset; truncated files are an error.
pub fn read(path: &Path) -> Result<Dataset> {
    let ds = read_partial(path)?;
    if ds.records.len() != ds.header.records {
        return Err(Error::Data(format!(
            "{}: {} of {} records present (interrupted gen-data? rerun it to resume)",
            path.display(),
            ds.records.len(),
            ds.header.records
        )));
    }
    Ok(ds)
}

/// Read the header and every complete record, ignoring a torn tail.
pub fn read_partial(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?);
    let header = Header::read(&mut r)?;
    let mut buf = vec![0u8; header.record_bytes()];
    let mut records = Vec::new();
    while records.len() < header.records {
        match r.read_exact(&mut buf) {
            Ok(()) => records.push(decode_record(&header, &buf)?),
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Dataset { header, records })
}

pub fn write(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    ds.header.write(&mut w)?;
    for r in &ds.records {
        write_record(&mut w, &ds.header, r)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends records to a dataset file, creating it or resuming a partial one.
pub struct Appender {
    file: BufWriter<File>,
    header: Header,
    written: usize,
}

impl Appender {
    /// Opens `path` for appending. An existing file must carry the same
    /// header; its complete records are kept and any torn tail is dropped.
    pub fn open(path: &Path, header: Header) -> Result<Self> {
        let (written, file) = if path.exists() {
            let existing = read_partial(path)?;
            if existing.header != header {
                return Err(Error::Data(format!("{} was generated with a different configuration", path.display())));
            }
            let n = existing.records.len();
            let mut f = OpenOptions::new().write(true).open(path)?;
            let len = (header.encoded_len() + n * header.record_bytes()) as u64;
            f.set_len(len)?;
            f.seek(SeekFrom::Start(len))?;
            (n, f)
        } else {
            let mut f = File::create(path)?;
            header.write(&mut f)?;
            (0, f)
        };
        Ok(Appender { file: BufWriter::new(file), header, written })
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn push(&mut self, rec: &DatasetRecord) -> Result<()> {
        write_record(&mut self.file, &self.header, rec)?;
        self.file.flush()?;
        self.written += 1;
        Ok(())
    }
}
