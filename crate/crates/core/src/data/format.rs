//! The `SKEL1` binary dataset layout.
//!
//! ```text
//! "SKEL1" | u16 V | u16 classes | u32 samples | u16 edges | (u16, u16)* |
//! per sample: u32 label, 3·300·V·2 f32
//! ```
//!
//! All integers and floats are little-endian. Edges are written as
//! `(child, parent)` where a kinematic tree is known.

use std::path::Path;

use super::{Dataset, SkeletonSample, BODIES, COORDS, FRAMES};
use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"SKEL1";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated {what}: expected {n} bytes, found {}",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn to_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Data(format!("{what} {v} does not fit in 16 bits")))
}

/// Edges as `(child, parent)` if a parent array exists, else as stored.
fn oriented_edges(topology: &SkeletonTopology) -> Vec<(usize, usize)> {
    match topology.parent() {
        Some(parent) => topology
            .edges()
            .iter()
            .map(|&(a, b)| if parent[b] == Some(a) { (b, a) } else { (a, b) })
            .collect(),
        None => topology.edges().to_vec(),
    }
}

/// Rebuild a topology, reading each edge as `(child, parent)` when that
/// yields a forest and falling back to breadth-first parents otherwise.
fn topology_from_edges(v: usize, edges: Vec<(usize, usize)>) -> Result<SkeletonTopology> {
    let topo = SkeletonTopology::new(v, edges.clone())?;
    let mut parent = vec![None; v];
    for &(c, p) in &edges {
        if parent[c].is_some() {
            return Ok(topo.with_bfs_parents());
        }
        parent[c] = Some(p);
    }
    match topo.clone().with_parents(parent) {
        Ok(t) => Ok(t),
        Err(_) => Ok(topo.with_bfs_parents()),
    }
}

impl Dataset {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let v = self.num_joints();
        let edges = oriented_edges(&self.topology);
        let per_sample = 4 + 4 * COORDS * FRAMES * v * BODIES;
        let mut out = Vec::with_capacity(15 + 4 * edges.len() + self.len() * per_sample);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&to_u16(v, "joint count")?.to_le_bytes());
        out.extend_from_slice(&to_u16(self.num_classes, "class count")?.to_le_bytes());
        let n = u32::try_from(self.len()).map_err(|_| Error::Data("too many samples".into()))?;
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&to_u16(edges.len(), "edge count")?.to_le_bytes());
        for (a, b) in edges {
            out.extend_from_slice(&(a as u16).to_le_bytes());
            out.extend_from_slice(&(b as u16).to_le_bytes());
        }
        for s in &self.samples {
            out.extend_from_slice(&(s.label as u32).to_le_bytes());
            for &x in s.data.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let magic = r.take(MAGIC.len(), "magic")?;
        if magic != MAGIC {
            return Err(Error::format(
                0,
                format!("bad magic {:?}, expected \"SKEL1\"", String::from_utf8_lossy(magic)),
            ));
        }
        let v = r.u16("joint count")? as usize;
        let classes = r.u16("class count")? as usize;
        let n = r.u32("sample count")? as usize;
        let e = r.u16("edge count")? as usize;
        if v == 0 {
            return Err(Error::format(5, "joint count is zero"));
        }
        let mut edges = Vec::with_capacity(e);
        for _ in 0..e {
            let at = r.pos as u64;
            let a = r.u16("edge list")? as usize;
            let b = r.u16("edge list")? as usize;
            if a >= v || b >= v || a == b {
                return Err(Error::format(at, format!("invalid edge ({a}, {b}) for {v} joints")));
            }
            edges.push((a, b));
        }
        let header_end = r.pos;
        let topology = topology_from_edges(v, edges).map_err(|err| Error::format(15, err.to_string()))?;
        let values = COORDS * FRAMES * v * BODIES;
        let per_sample = 4 + 4 * values;
        let expected = header_end + n * per_sample;
        if buf.len() != expected {
            return Err(Error::format(
                header_end as u64,
                format!(
                    "header declares {n} samples ({expected} bytes in total) but the file has {} bytes",
                    buf.len()
                ),
            ));
        }
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let at = r.pos as u64;
            let label = r.u32("label")? as usize;
            if label >= classes {
                return Err(Error::format(at, format!("label {label} with {classes} classes")));
            }
            let raw = r.take(4 * values, "sample payload")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            samples.push(SkeletonSample {
                data: Tensor::new([COORDS, FRAMES, v, BODIES], data)?,
                label,
            });
        }
        Dataset::new(topology, classes, samples)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
