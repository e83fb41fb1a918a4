//! Flat record files for boundary trees and boundary sets.
//!
//! Both formats are little-endian with `f32` coordinates so that external
//! tools can render them without this crate.
//!
//! Tree file:
//!
//! ```text
//! magic          4 bytes "BTRE"
//! version        u32     1
//! count          u32     number of nodes
//! dim            u32     coordinates per node
//! max_children   u32     0 = unlimited
//! count × { index u32, parent u32 (0xFFFF_FFFF for the root), label u32, dim × f32 }
//! ```
//!
//! Set file: magic `"BSET"`, version, count, dim, then
//! `count × { index u32, label u32, dim × f32 }`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metric::{LabeledPoint, Vector};
use crate::nn::checkpoint::read_u32;
use crate::set::BoundarySet;
use crate::tree::BoundaryTree;

const TREE_MAGIC: &[u8; 4] = b"BTRE";
const SET_MAGIC: &[u8; 4] = b"BSET";
const VERSION: u32 = 1;
pub const NO_PARENT: u32 = u32::MAX;

pub fn write_tree<W: Write>(tree: &BoundaryTree, w: &mut W) -> Result<()> {
    let dim = tree.dim().ok_or(Error::Empty("boundary tree"))?;
    w.write_all(TREE_MAGIC)?;
    for v in [
        VERSION,
        tree.len() as u32,
        dim as u32,
        tree.max_children().unwrap_or(0) as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for (i, node) in tree.nodes().iter().enumerate() {
        let parent = tree.parent(i).map_or(NO_PARENT, |p| p as u32);
        for v in [i as u32, parent, node.label as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        write_coords(w, &node.point)?;
    }
    Ok(())
}

pub fn read_tree<R: Read>(r: &mut R) -> Result<BoundaryTree> {
    expect_header(r, TREE_MAGIC)?;
    let count = read_u32(r)? as usize;
    let dim = read_u32(r)? as usize;
    let max_children = match read_u32(r)? {
        0 => None,
        c => Some(c as usize),
    };
    let mut nodes = Vec::with_capacity(count);
    let mut parents = Vec::with_capacity(count);
    for i in 0..count {
        let index = read_u32(r)? as usize;
        if index != i {
            return Err(Error::Format(format!("record {i} carries index {index}")));
        }
        let parent = match read_u32(r)? {
            NO_PARENT => None,
            p => Some(p as usize),
        };
        let label = read_u32(r)? as usize;
        nodes.push(LabeledPoint::new(read_coords(r, dim)?, label));
        parents.push(parent);
    }
    BoundaryTree::from_parts(nodes, parents, max_children)
}

pub fn write_set<W: Write>(set: &BoundarySet, w: &mut W) -> Result<()> {
    w.write_all(SET_MAGIC)?;
    for v in [VERSION, set.len() as u32, set.dim() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for (i, m) in set.members().iter().enumerate() {
        w.write_all(&(i as u32).to_le_bytes())?;
        w.write_all(&(m.label as u32).to_le_bytes())?;
        write_coords(w, &m.point)?;
    }
    Ok(())
}

pub fn read_set<R: Read>(r: &mut R) -> Result<BoundarySet> {
    expect_header(r, SET_MAGIC)?;
    let count = read_u32(r)? as usize;
    let dim = read_u32(r)? as usize;
    let mut members = Vec::with_capacity(count);
    for i in 0..count {
        if read_u32(r)? as usize != i {
            return Err(Error::Format(format!("record {i} out of order")));
        }
        let label = read_u32(r)? as usize;
        members.push(LabeledPoint::new(read_coords(r, dim)?, label));
    }
    BoundarySet::from_members(members)
}

pub fn save_tree(tree: &BoundaryTree, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tree(tree, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_tree(path: impl AsRef<Path>) -> Result<BoundaryTree> {
    read_tree(&mut BufReader::new(File::open(path)?))
}

pub fn save_set(set: &BoundarySet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_set(set, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_set(path: impl AsRef<Path>) -> Result<BoundarySet> {
    read_set(&mut BufReader::new(File::open(path)?))
}

fn expect_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

fn write_coords<W: Write>(w: &mut W, coords: &[f64]) -> Result<()> {
    for &x in coords {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_coords<R: Read>(r: &mut R, dim: usize) -> Result<Vector> {
    let mut buf = vec![0u8; dim * 4];
    r.read_exact(&mut buf)?;
    Vector::new(
        buf.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(x: &[f64], label: usize) -> LabeledPoint {
        LabeledPoint::from_slice(x, label).unwrap()
    }

    #[test]
    fn tree_round_trip() {
        let data = [lp(&[0.0, 0.5], 0), lp(&[2.0, 1.0], 1), lp(&[-2.0, 0.25], 2), lp(&[2.5, 1.5], 0)];
        let tree = BoundaryTree::build(&data, Some(3)).unwrap();
        let mut bytes = Vec::new();
        write_tree(&tree, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 20 + tree.len() * (12 + 8));
        // root record: index 0, no parent
        assert_eq!(&bytes[20..24], &0u32.to_le_bytes());
        assert_eq!(&bytes[24..28], &NO_PARENT.to_le_bytes());
        let back = read_tree(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.nodes(), tree.nodes());
        assert_eq!(back.edges().collect::<Vec<_>>(), tree.edges().collect::<Vec<_>>());
        assert_eq!(back.max_children(), Some(3));
    }

    #[test]
    fn set_round_trip() {
        let set = BoundarySet::build(&[lp(&[0.0], 0), lp(&[1.0], 1), lp(&[0.5], 0)]).unwrap();
        let mut bytes = Vec::new();
        write_set(&set, &mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"BSET");
        assert_eq!(read_set(&mut bytes.as_slice()).unwrap(), set);
    }

    #[test]
    fn truncated_file_fails() {
        let tree = BoundaryTree::build(&[lp(&[1.0], 0), lp(&[3.0], 1)], None).unwrap();
        let mut bytes = Vec::new();
        write_tree(&tree, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 2);
        assert!(read_tree(&mut bytes.as_slice()).is_err());
        assert!(read_set(&mut &b"BTRE"[..]).is_err());
    }
}
