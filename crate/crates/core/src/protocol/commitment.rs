use std::fs;
use std::path::Path;

use super::merkle::Hash;
use super::Backend;
use crate::codec::{put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::numeric::GroupElem;

/// A binding commitment to a model or to a Fisher matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Commitment {
    /// Root over every fixed-point value in canonical order.
    Merkle { leaves: u64, root: Hash },
    /// One group element per model block, or per Fisher-block row.
    Pedersen { elems: Vec<GroupElem> },
}

impl Commitment {
    pub fn backend(&self) -> Backend {
        match self {
            Commitment::Merkle { .. } => Backend::Merkle,
            Commitment::Pedersen { .. } => Backend::Pedersen,
        }
    }

    /// `UCOM` file bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = b"UCOM".to_vec();
        out.push(self.backend().code());
        match self {
            Commitment::Merkle { leaves, root } => {
                put_u64(&mut out, *leaves);
                out.extend_from_slice(root);
            }
            Commitment::Pedersen { elems } => {
                put_u32(&mut out, elems.len() as u32);
                for e in elems {
                    out.extend_from_slice(&e.to_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "commitment");
        r.expect_magic(b"UCOM")?;
        let code = r.u8()?;
        let com = match Backend::from_code(code) {
            Some(Backend::Merkle) => Commitment::Merkle {
                leaves: r.u64()?,
                root: r.array()?,
            },
            Some(Backend::Pedersen) => {
                let n = r.count(32)?;
                let mut elems = Vec::with_capacity(n);
                for i in 0..n {
                    let b: [u8; 32] = r.array()?;
                    elems.push(
                        GroupElem::from_bytes(&b)
                            .ok_or_else(|| Error::format("commitment", format!("element {i} is not a valid group encoding")))?,
                    );
                }
                Commitment::Pedersen { elems }
            }
            None => return r.fail(format!("unknown backend code {code}")),
        };
        r.finish()?;
        Ok(com)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Client-side secret from which every blinding factor is re-derived.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Openings {
    backend: Backend,
    seed: [u8; 32],
}

impl Openings {
    pub fn from_seed(backend: Backend, seed: u64) -> Self {
        use sha2::{Digest, Sha256};
        let seed = Sha256::new()
            .chain_update(b"edge-unlearn/openings")
            .chain_update(seed.to_le_bytes())
            .finalize()
            .into();
        Self { backend, seed }
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub(crate) fn seed(&self) -> &[u8; 32] {
        &self.seed
    }

    /// `UOPN` file bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = b"UOPN".to_vec();
        out.push(self.backend.code());
        out.extend_from_slice(&self.seed);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "openings");
        r.expect_magic(b"UOPN")?;
        let code = r.u8()?;
        let Some(backend) = Backend::from_code(code) else {
            return r.fail(format!("unknown backend code {code}"));
        };
        let seed = r.array()?;
        r.finish()?;
        Ok(Self { backend, seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
