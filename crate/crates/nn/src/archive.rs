//! A small self-describing binary container for named tensors and scalars.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic   8 bytes  "CDCMACK\0"
//! version u32
//! count   u32
//! count × entry:
//!   kind u8        0 = tensor, 1 = text, 2 = u64
//!   name u16 length + UTF-8 bytes
//!   tensor: rows u32, cols u32, rows·cols × f64
//!   text:   u32 length + UTF-8 bytes
//!   u64:    8 bytes
//! ```
//!
//! Entries are written in name order, so equal archives encode to equal bytes.

use std::collections::BTreeMap;

use crate::adam::{AdamConfig, AdamState};
use crate::error::{NnError, Result};
use crate::matrix::Matrix;
use crate::mlp::{Activation, Dense, Mlp};

pub const ARCHIVE_MAGIC: [u8; 8] = *b"CDCMACK\0";
pub const ARCHIVE_VERSION: u32 = 1;

const KIND_TENSOR: u8 = 0;
const KIND_TEXT: u8 = 1;
const KIND_U64: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Tensor(Matrix),
    Text(String),
    U64(u64),
}

fn err(msg: impl Into<String>) -> NnError {
    NnError::Archive(msg.into())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    entries: BTreeMap<String, Entry>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn insert(&mut self, name: impl Into<String>, entry: Entry) {
        self.entries.insert(name.into(), entry);
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, m: Matrix) {
        self.insert(name, Entry::Tensor(m));
    }

    pub fn insert_vec(&mut self, name: impl Into<String>, v: &[f64]) {
        self.insert(name, Entry::Tensor(Matrix::row_vector(v)));
    }

    pub fn insert_text(&mut self, name: impl Into<String>, s: impl Into<String>) {
        self.insert(name, Entry::Text(s.into()));
    }

    pub fn insert_u64(&mut self, name: impl Into<String>, v: u64) {
        self.insert(name, Entry::U64(v));
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Matrix> {
        match self.entries.get(name) {
            Some(Entry::Tensor(m)) => Ok(m),
            Some(_) => Err(err(format!("entry {name:?} is not a tensor"))),
            None => Err(err(format!("missing entry {name:?}"))),
        }
    }

    /// A tensor entry flattened, with an optional expected length.
    pub fn vec(&self, name: &str, expected_len: Option<usize>) -> Result<Vec<f64>> {
        let m = self.tensor(name)?;
        if let Some(n) = expected_len {
            if m.as_slice().len() != n {
                return Err(err(format!(
                    "entry {name:?} has {} values, expected {n}",
                    m.as_slice().len()
                )));
            }
        }
        Ok(m.as_slice().to_vec())
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.entries.get(name) {
            Some(Entry::Text(s)) => Ok(s),
            Some(_) => Err(err(format!("entry {name:?} is not text"))),
            None => Err(err(format!("missing entry {name:?}"))),
        }
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        match self.entries.get(name) {
            Some(Entry::U64(v)) => Ok(*v),
            Some(_) => Err(err(format!("entry {name:?} is not an integer"))),
            None => Err(err(format!("missing entry {name:?}"))),
        }
    }

    pub fn insert_mlp(&mut self, prefix: &str, mlp: &Mlp) {
        self.insert_u64(format!("{prefix}.layers"), mlp.layers().len() as u64);
        for (l, layer) in mlp.layers().iter().enumerate() {
            let w = Matrix::from_vec(layer.out_dim(), layer.in_dim(), layer.weights().to_vec())
                .expect("layer weights always match their shape");
            self.insert_tensor(format!("{prefix}.{l}.w"), w);
            if layer.has_bias() {
                self.insert_vec(format!("{prefix}.{l}.b"), layer.bias());
            }
            self.insert_u64(format!("{prefix}.{l}.act"), layer.activation().tag() as u64);
        }
    }

    pub fn load_mlp(&self, prefix: &str) -> Result<Mlp> {
        let n = self.u64(&format!("{prefix}.layers"))?;
        if n == 0 || n > 64 {
            return Err(err(format!("{prefix}: implausible layer count {n}")));
        }
        let mut layers = Vec::with_capacity(n as usize);
        for l in 0..n {
            let w = self.tensor(&format!("{prefix}.{l}.w"))?;
            let bias_name = format!("{prefix}.{l}.b");
            let bias = match self.get(&bias_name) {
                None => None,
                Some(_) => Some(self.vec(&bias_name, Some(w.rows()))?),
            };
            let tag = self.u64(&format!("{prefix}.{l}.act"))?;
            let act = u8::try_from(tag)
                .ok()
                .and_then(Activation::from_tag)
                .ok_or_else(|| err(format!("{prefix}.{l}: unknown activation {tag}")))?;
            layers.push(Dense::from_parts(w.cols(), w.rows(), act, w.as_slice().to_vec(), bias)?);
        }
        Mlp::from_layers(layers)
    }

    pub fn insert_adam(&mut self, prefix: &str, state: &AdamState) {
        let c = state.config;
        self.insert_vec(
            format!("{prefix}.config"),
            &[c.lr, c.beta1, c.beta2, c.eps, c.max_grad_norm.unwrap_or(f64::NAN)],
        );
        self.insert_u64(format!("{prefix}.t"), state.t);
        self.insert_u64(format!("{prefix}.slices"), state.m.len() as u64);
        for (k, (m, v)) in state.m.iter().zip(&state.v).enumerate() {
            self.insert_vec(format!("{prefix}.m.{k}"), m);
            self.insert_vec(format!("{prefix}.v.{k}"), v);
        }
    }

    pub fn load_adam(&self, prefix: &str) -> Result<AdamState> {
        let c = self.vec(&format!("{prefix}.config"), Some(5))?;
        let config = AdamConfig {
            lr: c[0],
            beta1: c[1],
            beta2: c[2],
            eps: c[3],
            max_grad_norm: if c[4].is_nan() { None } else { Some(c[4]) },
        };
        let t = self.u64(&format!("{prefix}.t"))?;
        let n = self.u64(&format!("{prefix}.slices"))?;
        if n > 4096 {
            return Err(err(format!("{prefix}: implausible slice count {n}")));
        }
        let mut m = Vec::with_capacity(n as usize);
        let mut v = Vec::with_capacity(n as usize);
        for k in 0..n {
            let mk = self.vec(&format!("{prefix}.m.{k}"), None)?;
            let vk = self.vec(&format!("{prefix}.v.{k}"), Some(mk.len()))?;
            m.push(mk);
            v.push(vk);
        }
        Ok(AdamState { config, m, v, t })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            let kind = match entry {
                Entry::Tensor(_) => KIND_TENSOR,
                Entry::Text(_) => KIND_TEXT,
                Entry::U64(_) => KIND_U64,
            };
            out.push(kind);
            let name_len = u16::try_from(name.len()).expect("entry names are short");
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::Tensor(m) => {
                    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
                    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
                    for v in m.as_slice() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Entry::Text(s) => {
                    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
                Entry::U64(v) => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        out
    }

    /// Parses an archive. Lengths are validated against the remaining input
    /// before anything is allocated.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != ARCHIVE_MAGIC {
            return Err(err("bad magic"));
        }
        let version = r.u32()?;
        if version != ARCHIVE_VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let kind = r.u8()?;
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| err("entry name is not UTF-8"))?
                .to_owned();
            let entry = match kind {
                KIND_TENSOR => {
                    let rows = r.u32()? as usize;
                    let cols = r.u32()? as usize;
                    let n = rows
                        .checked_mul(cols)
                        .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                        .ok_or_else(|| err(format!("tensor {name:?} is larger than the input")))?;
                    let raw = r.take(n * 8)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                        .collect();
                    Entry::Tensor(Matrix::from_vec(rows, cols, data)?)
                }
                KIND_TEXT => {
                    let len = r.u32()? as usize;
                    let s = std::str::from_utf8(r.take(len)?).map_err(|_| err("text entry is not UTF-8"))?;
                    Entry::Text(s.to_owned())
                }
                KIND_U64 => Entry::U64(r.u64()?),
                other => return Err(err(format!("unknown entry kind {other}"))),
            };
            if entries.insert(name.clone(), entry).is_some() {
                return Err(err(format!("duplicate entry {name:?}")));
            }
        }
        if r.remaining() != 0 {
            return Err(err(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { entries })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(err(format!(
                "truncated: need {n} bytes at offset {}, have {}",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
