//! `SPCK` model checkpoints.
//!
//! ```text
//! "SPCK" | version u16 | config_len u32 | config text (UTF-8, RunConfig form)
//! | style_scale f64 | property_dim u32 | norm mean f64 x P | norm std f64 x P
//! | tensors u32 | per tensor: name_len u16, name, ndim u8, dims u32 x ndim, data f64 x len
//! ```
//!
//! All numbers little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use strucprop_core::autodiff::Tensor;
use strucprop_core::vaereg::{Model, Normalization};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPCK";
pub const VERSION: u16 = 1;

pub fn save(path: &Path, config: &RunConfig, model: &Model) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(&mut w, config, model)?;
    w.flush()?;
    Ok(())
}

pub fn write_to(w: &mut impl Write, config: &RunConfig, model: &Model) -> Result<()> {
    let scale =
        model.config().style_scale.ok_or_else(|| Error::Config("model has no style scale; was it trained?".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let text = config.to_text();
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    w.write_all(&scale.to_le_bytes())?;
    let norm = &model.normalization;
    w.write_all(&(norm.mean.len() as u32).to_le_bytes())?;
    for v in norm.mean.iter().chain(&norm.std) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(model.params().len() as u32).to_le_bytes())?;
    for (name, t) in model.params().iter() {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn bytes<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::Data(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn u32_(r: &mut impl Read) -> Result<usize> {
    Ok(u32::from_le_bytes(bytes(r)?) as usize)
}

fn f64_(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(bytes(r)?))
}

fn string(r: &mut impl Read, len: usize) -> Result<String> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(|e| Error::Data(format!("truncated checkpoint: {e}")))?;
    String::from_utf8(b).map_err(|_| Error::Data("checkpoint text is not UTF-8".into()))
}

pub fn load(path: &Path) -> Result<(RunConfig, Model)> {
    let f = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    read_from(&mut BufReader::new(f))
}

pub fn read_from(r: &mut impl Read) -> Result<(RunConfig, Model)> {
    if &bytes::<4>(r)? != MAGIC {
        return Err(Error::Data("not an SPCK checkpoint".into()));
    }
    let version = u16::from_le_bytes(bytes(r)?);
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let len = u32_(r)?;
    let config = RunConfig::parse_str(&string(r, len)?)?;
    let scale = f64_(r)?;
    let p = u32_(r)?;
    let mean = (0..p).map(|_| f64_(r)).collect::<Result<Vec<_>>>()?;
    let std = (0..p).map(|_| f64_(r)).collect::<Result<Vec<_>>>()?;
    let n = u32_(r)?;
    let mut named = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = u16::from_le_bytes(bytes(r)?) as usize;
        let name = string(r, name_len)?;
        let [nd] = bytes::<1>(r)?;
        let shape = (0..nd).map(|_| u32_(r)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let data = (0..count).map(|_| f64_(r)).collect::<Result<Vec<_>>>()?;
        named.push((name, Tensor::new(&shape, data)?));
    }
    let mut mc = config.model()?;
    mc.style_scale = Some(scale);
    if p != mc.property_dim {
        return Err(Error::Data(format!("checkpoint normalization has {p} entries, config says {}", mc.property_dim)));
    }
    let mut model = Model::new(mc)?;
    model.load_params(&named).map_err(|e| Error::Data(e.to_string()))?;
    model.normalization = Normalization { mean, std };
    Ok((config, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let rc = RunConfig::parse_str("shape = 9,9\npreset = tiny2d\nlatent_dim = 4\nbank_channels = 2,3\n").unwrap();
        let mut mc = rc.model().unwrap();
        mc.style_scale = Some(0.37);
        let mut model = Model::new(mc).unwrap();
        model.normalization = Normalization { mean: vec![50.0], std: vec![12.5] };
        let mut buf = Vec::new();
        write_to(&mut buf, &rc, &model).unwrap();
        let (rc2, m2) = read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(rc2, rc);
        assert_eq!(m2.params(), model.params());
        assert_eq!(m2.normalization, model.normalization);
        assert_eq!(m2.config().style_scale, Some(0.37));
        let mut again = Vec::new();
        write_to(&mut again, &rc2, &m2).unwrap();
        assert_eq!(again, buf);
        assert!(read_from(&mut &buf[..buf.len() - 3]).is_err());
        buf[4] = 7;
        assert!(matches!(read_from(&mut buf.as_slice()), Err(Error::Data(_))));
    }
}
