//! Binary checkpoint files.
//!
//! All integers and floats are little-endian. Layout:
//!
//! ```text
//! magic            4 bytes   "WDNT"
//! version          u32       1
//! profile          u8        0 = paper, 1 = tiny
//! input_extent     u32
//! stages           u32       n
//! filters          n × u32
//! branch A         n × u32 kernels, n × u32 dilations
//! branch B         n × u32 kernels, n × u32 dilations
//! head_len         u32       h
//! head widths      h × u32
//! step             u64       optimizer steps taken
//! param_count      u64       P
//! parameters       P × f32   registry order, weights before bias per layer
//! has_adam         u8        0 or 1
//! [adam_t          u64
//!  adam_m          P × f32
//!  adam_v          P × f32]
//! ```
//!
//! The file must end exactly after the last field.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::config::{ArchitectureConfig, BranchConfig, Profile};
use crate::optim::AdamState;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"WDNT";
pub const CHECKPOINT_VERSION: u32 = 1;

// Generous bounds that keep a corrupt header from requesting absurd allocations.
const MAX_STAGES: usize = 64;
const MAX_HEAD: usize = 64;

/// Everything a checkpoint file holds.
#[derive(Clone)]
pub struct Checkpoint {
    pub graph: Graph<f32>,
    pub adam: Option<AdamState<f32>>,
    pub step: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cfg = self.graph.config();
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        out.push(cfg.profile.tag());
        put_u32(&mut out, cfg.input_extent as u32);
        put_u32(&mut out, cfg.stages() as u32);
        for list in [
            &cfg.filters,
            &cfg.branch_a.kernels,
            &cfg.branch_a.dilations,
            &cfg.branch_b.kernels,
            &cfg.branch_b.dilations,
        ] {
            list.iter().for_each(|&x| put_u32(&mut out, x as u32));
        }
        put_u32(&mut out, cfg.head.len() as u32);
        cfg.head.iter().for_each(|&x| put_u32(&mut out, x as u32));
        out.extend_from_slice(&self.step.to_le_bytes());

        let values = self.graph.flat_values();
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        put_f32s(&mut out, values.iter());

        match &self.adam {
            None => out.push(0),
            Some(adam) => {
                if adam.element_count() != values.len() || adam.m.len() != self.graph.parameters().len() {
                    return Err(Error::Format("optimizer state does not match the graph".into()));
                }
                out.push(1);
                out.extend_from_slice(&adam.t.to_le_bytes());
                put_f32s(&mut out, adam.m.iter().flat_map(|t| t.data()));
                put_f32s(&mut out, adam.v.iter().flat_map(|t| t.data()));
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected \"WDNT\"")));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let tag = r.u8()?;
        let profile = Profile::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown profile tag {tag}")))?;
        let input_extent = r.u32()? as usize;
        let stages = r.u32()? as usize;
        if stages == 0 || stages > MAX_STAGES {
            return Err(Error::Corruption(format!("implausible stage count {stages}")));
        }
        let filters = r.u32s(stages)?;
        let branch_a = BranchConfig { kernels: r.u32s(stages)?, dilations: r.u32s(stages)? };
        let branch_b = BranchConfig { kernels: r.u32s(stages)?, dilations: r.u32s(stages)? };
        let head_len = r.u32()? as usize;
        if head_len == 0 || head_len > MAX_HEAD {
            return Err(Error::Corruption(format!("implausible head length {head_len}")));
        }
        let head = r.u32s(head_len)?;
        let config = ArchitectureConfig { profile, input_extent, filters, branch_a, branch_b, head };
        config
            .validate()
            .map_err(|e| Error::Corruption(format!("embedded architecture is invalid: {e}")))?;

        let step = r.u64()?;
        let mut graph = Graph::<f32>::new(&config, 0)?;
        let count = r.u64()? as usize;
        if count != graph.parameter_count() {
            return Err(Error::Corruption(format!(
                "payload declares {count} parameters, architecture has {}",
                graph.parameter_count()
            )));
        }
        graph.load_flat(&r.f32s(count)?)?;

        let adam = match r.u8()? {
            0 => None,
            1 => {
                let t = r.u64()?;
                let m = r.f32s(count)?;
                let v = r.f32s(count)?;
                Some(AdamState { m: split_like(&graph, &m)?, v: split_like(&graph, &v)?, t })
            }
            other => return Err(Error::Corruption(format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Corruption(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { graph, adam, step })
    }
}

fn split_like(graph: &Graph<f32>, flat: &[f32]) -> Result<Vec<Tensor<f32>>> {
    let mut rest = flat;
    graph
        .parameters()
        .iter()
        .map(|p| {
            let (head, tail) = rest.split_at(p.value.len());
            rest = tail;
            Tensor::new(p.value.dims(), head.to_vec())
        })
        .collect()
}

/// Writes the checkpoint via a temporary file and rename, so readers never
/// observe a half-written file.
pub fn save_checkpoint(
    graph: &Graph<f32>,
    adam: Option<&AdamState<f32>>,
    step: u64,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = Checkpoint { graph: graph.clone(), adam: adam.cloned(), step }.to_bytes()?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_f32s<'a>(out: &mut Vec<u8>, xs: impl Iterator<Item = &'a f32>) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Corruption(format!("truncated at byte {}: needed {n} more bytes", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.u32().map(|x| x as usize)).collect()
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Corruption("length overflow".into()))?)?;
        let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Corruption("non-finite value in payload".into()));
        }
        Ok(values)
    }
}
