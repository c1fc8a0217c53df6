//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic       8 bytes  "GMACCKPT"
//! version     u32      1
//! iteration   u64
//! input       u32
//! n_hidden    u32, then n_hidden × u32 widths
//! activation  u8       0 tanh, 1 relu
//! policy      u8 tag (0 discrete, 1 gaussian), u32 actions or dim
//! value head  u8 tag (0 scalar, 1 gmm, 2 quantile), u32 K or m (0 for scalar)
//! n_params    u64, then n_params × f64
//! adam        lr, beta1, beta2, eps: f64; step: u64; m, v: n_params × f64 each
//! ```

use std::path::Path;

use gmac_core::nn::{Activation, AdamState, NetSpec, Network, PolicyKind, ValueHeadKind};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GMACCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub net: Network,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let spec = self.net.spec();
        let mut b = Vec::with_capacity(64 + 24 * self.net.parameter_count());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&self.iteration.to_le_bytes());
        put_u32(&mut b, spec.input);
        put_u32(&mut b, spec.hidden.len());
        for &h in &spec.hidden {
            put_u32(&mut b, h);
        }
        b.push(match spec.activation {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        });
        let (tag, n) = match spec.policy {
            PolicyKind::Discrete { actions } => (0, actions),
            PolicyKind::Gaussian { dim } => (1, dim),
        };
        b.push(tag);
        put_u32(&mut b, n);
        let (tag, n) = match spec.value {
            ValueHeadKind::Scalar => (0, 0),
            ValueHeadKind::Gmm { k } => (1, k),
            ValueHeadKind::Quantile { m } => (2, m),
        };
        b.push(tag);
        put_u32(&mut b, n);
        b.extend_from_slice(&(self.net.parameter_count() as u64).to_le_bytes());
        put_f64s(&mut b, self.net.params());
        let a = &self.adam;
        put_f64s(&mut b, &[a.lr, a.beta1, a.beta2, a.eps]);
        b.extend_from_slice(&a.step.to_le_bytes());
        put_f64s(&mut b, &a.m);
        put_f64s(&mut b, &a.v);
        b
    }

    /// `origin` only labels errors.
    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Cursor { b: bytes, at: 0, origin };
        if r.take(8)? != MAGIC {
            return Err(r.bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.bad(&format!("unsupported checkpoint version {version}")));
        }
        let iteration = r.u64()?;
        let input = r.u32()? as usize;
        let n_hidden = r.u32()? as usize;
        if n_hidden > 1024 {
            return Err(r.bad("implausible layer count"));
        }
        let hidden = (0..n_hidden).map(|_| r.u32().map(|h| h as usize)).collect::<Result<Vec<_>>>()?;
        let activation = match r.u8()? {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            t => return Err(r.bad(&format!("unknown activation tag {t}"))),
        };
        let policy = match (r.u8()?, r.u32()? as usize) {
            (0, actions) => PolicyKind::Discrete { actions },
            (1, dim) => PolicyKind::Gaussian { dim },
            (t, _) => return Err(r.bad(&format!("unknown policy tag {t}"))),
        };
        let value = match (r.u8()?, r.u32()? as usize) {
            (0, 0) => ValueHeadKind::Scalar,
            (1, k) => ValueHeadKind::Gmm { k },
            (2, m) => ValueHeadKind::Quantile { m },
            (t, n) => return Err(r.bad(&format!("unknown value head tag {t} with size {n}"))),
        };
        let spec = NetSpec { input, hidden, activation, policy, value };
        let n = r.u64()? as usize;
        if n != spec.parameter_count() {
            return Err(r.bad(&format!("header implies {} parameters, file says {n}", spec.parameter_count())));
        }
        let params = r.f64s(n)?;
        let net = Network::from_parts(spec, params).map_err(|e| r.bad(&e.to_string()))?;
        let [lr, beta1, beta2, eps]: [f64; 4] = r.f64s(4)?.try_into().expect("four values");
        let step = r.u64()?;
        let m = r.f64s(n)?;
        let v = r.f64s(n)?;
        if r.at != bytes.len() {
            return Err(r.bad(&format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Self { iteration, net, adam: AdamState { lr, beta1, beta2, eps, step, m, v } })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

fn put_u32(b: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("layer sizes fit in u32");
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(b: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        b.extend_from_slice(&x.to_le_bytes());
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    at: usize,
    origin: &'a Path,
}

impl Cursor<'_> {
    fn bad(&self, msg: &str) -> Error {
        Error::format(self.origin, format!("{msg} (at byte {})", self.at))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.b.len() - self.at < n {
            return Err(self.bad("truncated checkpoint"));
        }
        let s = &self.b[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.bad("length overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}
