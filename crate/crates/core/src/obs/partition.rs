use crate::codec::{put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::nn::Architecture;
use crate::unlearn::PruneMask;

pub const DEFAULT_BLOCK_SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    pub layer: usize,
    /// First flat parameter index.
    pub start: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Contiguous chunks of each layer's flat parameters; block ids are positions
/// in [`BlockPartition::blocks`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPartition {
    block_size: usize,
    blocks: Vec<Block>,
}

/// Splits every layer into `block_size` chunks with a short trailing block.
pub fn make_partition(arch: &Architecture, block_size: usize) -> Result<BlockPartition> {
    if block_size < 2 {
        return Err(Error::InvalidArgument(format!("block size must be >= 2, got {block_size}")));
    }
    let mut blocks = Vec::new();
    for l in 0..arch.num_layers() {
        let range = arch.layer_range(l);
        let mut start = range.start;
        while start < range.end {
            let len = block_size.min(range.end - start);
            blocks.push(Block { layer: l, start, len });
            start += len;
        }
    }
    Ok(BlockPartition { block_size, blocks })
}

impl BlockPartition {
    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, id: usize) -> &Block {
        &self.blocks[id]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.start + b.len)
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.layer + 1)
    }

    /// Block containing a flat parameter index.
    pub fn block_of(&self, index: usize) -> Option<usize> {
        if index >= self.num_params() {
            return None;
        }
        Some(self.blocks.partition_point(|b| b.start + b.len <= index))
    }

    /// Ascending ids of blocks intersecting the mask.
    pub fn touched(&self, mask: &PruneMask) -> Result<Vec<usize>> {
        let mut out: Vec<usize> = Vec::new();
        for &c in mask.coords() {
            let b = self.block_of(c as usize).ok_or_else(|| {
                Error::InvalidArgument(format!("mask coordinate {c} outside {} parameters", self.num_params()))
            })?;
            if out.last() != Some(&b) {
                out.push(b);
            }
        }
        Ok(out)
    }

    /// Block-local positions of masked coordinates.
    pub fn local_pruned(&self, id: usize, mask: &PruneMask) -> Vec<usize> {
        let b = &self.blocks[id];
        mask.coords_in(b.start, b.start + b.len)
            .iter()
            .map(|&c| c as usize - b.start)
            .collect()
    }

    /// Whether this partition is the canonical one for `arch`.
    pub fn matches(&self, arch: &Architecture) -> bool {
        make_partition(arch, self.block_size).is_ok_and(|p| &p == self)
    }

    pub(crate) fn write(&self, out: &mut Vec<u8>) {
        put_u32(out, self.block_size as u32);
        put_u32(out, self.blocks.len() as u32);
        for b in &self.blocks {
            put_u32(out, b.layer as u32);
            put_u64(out, b.start as u64);
            put_u32(out, b.len as u32);
        }
    }

    pub(crate) fn read(r: &mut Reader) -> Result<Self> {
        let block_size = r.u32()? as usize;
        let n = r.count(16)?;
        let mut blocks = Vec::with_capacity(n);
        let mut next = 0usize;
        for _ in 0..n {
            let b = Block {
                layer: r.u32()? as usize,
                start: r.u64()? as usize,
                len: r.u32()? as usize,
            };
            if b.start != next || b.len == 0 || b.len > block_size {
                return r.fail(format!("block at {} is not a contiguous cover", b.start));
            }
            if blocks.last().is_some_and(|p: &Block| p.layer > b.layer) {
                return r.fail("block layers out of order");
            }
            next = b.start + b.len;
            blocks.push(b);
        }
        if block_size < 2 {
            return r.fail(format!("block size {block_size}"));
        }
        Ok(Self { block_size, blocks })
    }
}
