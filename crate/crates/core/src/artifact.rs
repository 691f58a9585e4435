//! Versioned little-endian binary files for controllers and adaptation maps.
//!
//! Layout: 8-byte magic, `u32` version, payload, then the SHA-256 of everything before it.
//! Matrices are stored column-major as `f64`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::adaptation::AdaptationMaps;
use crate::blt::BlockLowerTriangular;
use crate::error::{Error, Result};
use crate::sls::{Controller, Nominal};

pub const CONTROLLER_MAGIC: &[u8; 8] = b"SLSCTRL\0";
pub const MAPS_MAGIC: &[u8; 8] = b"SLSMAPS\0";
pub const FORMAT_VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 8]) -> Self {
        let mut buf = magic.to_vec();
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Self { buf }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u64(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn floats<'a>(&mut self, vals: impl IntoIterator<Item = &'a f64>) {
        for v in vals {
            self.f64(*v);
        }
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len());
        self.buf.extend_from_slice(b);
    }

    fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        self.buf
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(data: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        if data.len() < 8 + 4 + 32 {
            return Err(Error::Artifact("file too short".into()));
        }
        if &data[..8] != magic {
            return Err(Error::Artifact(format!("bad magic, expected {:?}", String::from_utf8_lossy(&magic[..7]))));
        }
        let (body, digest) = data.split_at(data.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Artifact("checksum mismatch".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Artifact(format!("unsupported version {version}")));
        }
        Ok(Self { data: body, pos: 12 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.data.len()).ok_or_else(|| Error::Artifact("truncated payload".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Artifact("size does not fit in memory".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        if n.checked_mul(8).is_none_or(|b| b > self.data.len() - self.pos) {
            return Err(Error::Artifact("truncated payload".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn vector(&mut self, n: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.floats(n)?))
    }

    fn matrix(&mut self, r: usize, c: usize) -> Result<DMatrix<f64>> {
        let n = r.checked_mul(c).ok_or_else(|| Error::Artifact("matrix too large".into()))?;
        Ok(DMatrix::from_vec(r, c, self.floats(n)?))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()?;
        self.take(n)
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Artifact("trailing bytes".into()));
        }
        Ok(())
    }
}

pub fn encode_controller(ctrl: &Controller) -> Vec<u8> {
    let gain = ctrl.gain();
    let nb = gain.nblocks();
    let mut w = Writer::new(CONTROLLER_MAGIC);
    w.u64(nb);
    w.u64(ctrl.state_dim());
    w.u64(ctrl.input_dim());
    w.u8(ctrl.nominal().is_some() as u8);
    for i in 0..nb {
        for j in 0..=i {
            w.floats(gain.block(i, j).iter());
        }
    }
    w.floats(ctrl.feedforward().iter());
    if let Some(nom) = ctrl.nominal() {
        w.floats(nom.x.iter());
        w.floats(nom.u.iter());
    }
    w.finish()
}

pub fn decode_controller(data: &[u8]) -> Result<Controller> {
    let mut r = Reader::open(data, CONTROLLER_MAGIC)?;
    let nb = r.u64()?;
    let m = r.u64()?;
    let n = r.u64()?;
    let has_nominal = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::Artifact(format!("bad nominal flag {v}"))),
    };
    if nb == 0 || m == 0 || n == 0 {
        return Err(Error::Artifact("empty dimensions".into()));
    }
    let mut gain = BlockLowerTriangular::zeros(nb, n, m);
    for i in 0..nb {
        for j in 0..=i {
            gain.set_block(i, j, r.matrix(n, m)?)?;
        }
    }
    let k = r.vector(nb * n)?;
    let nominal = if has_nominal {
        Some(Nominal {
            x: r.vector(nb * m)?,
            u: r.vector(nb * n)?,
        })
    } else {
        None
    };
    r.done()?;
    Controller::new(gain, k, nominal)
}

pub fn encode_maps(maps: &AdaptationMaps) -> Vec<u8> {
    let mut w = Writer::new(MAPS_MAGIC);
    w.u64(maps.f_x.nrows());
    w.u64(maps.x_ref.len());
    w.u64(maps.u_ref.len());
    w.u8(maps.local as u8);
    w.f64(maps.vicinity_threshold);
    w.bytes(maps.gain_fingerprint.as_bytes());
    w.floats(maps.f_x.iter());
    w.floats(maps.f_u.iter());
    w.floats(maps.x_ref.iter());
    w.floats(maps.u_ref.iter());
    w.floats(maps.k_ref.iter());
    w.finish()
}

pub fn decode_maps(data: &[u8]) -> Result<AdaptationMaps> {
    let mut r = Reader::open(data, MAPS_MAGIC)?;
    let rows = r.u64()?;
    let nx = r.u64()?;
    let nu = r.u64()?;
    let local = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::Artifact(format!("bad local flag {v}"))),
    };
    let vicinity_threshold = r.f64()?;
    let gain_fingerprint = String::from_utf8(r.bytes()?.to_vec()).map_err(|_| Error::Artifact("fingerprint is not UTF-8".into()))?;
    let maps = AdaptationMaps {
        f_x: r.matrix(rows, nx)?,
        f_u: r.matrix(rows, nu)?,
        x_ref: r.vector(nx)?,
        u_ref: r.vector(nu)?,
        k_ref: r.vector(rows)?,
        gain_fingerprint,
        local,
        vicinity_threshold,
    };
    r.done()?;
    Ok(maps)
}

pub fn save_controller(path: &Path, ctrl: &Controller) -> Result<()> {
    Ok(fs::write(path, encode_controller(ctrl))?)
}

pub fn load_controller(path: &Path) -> Result<Controller> {
    decode_controller(&fs::read(path)?)
}

pub fn save_maps(path: &Path, maps: &AdaptationMaps) -> Result<()> {
    Ok(fs::write(path, encode_maps(maps))?)
}

pub fn load_maps(path: &Path) -> Result<AdaptationMaps> {
    decode_maps(&fs::read(path)?)
}
