//! Per-interaction hard-negative candidate lists.
//!
//! Spill file layout, little-endian:
//!
//! ```text
//! magic "HNCACHE\0" | version u32 | built_in_epoch u64 (u64::MAX if never)
//! entries u64, then per entry: ordinal u64 | length u32 | node ids u32*
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::graph::NodeId;

use super::SamplingError;

const MAGIC: &[u8; 8] = b"HNCACHE\0";
const VERSION: u32 = 1;

/// Candidate lists keyed by interaction ordinal, which identifies an
/// interaction within its graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidateCache {
    lists: BTreeMap<usize, Vec<NodeId>>,
    built_in_epoch: Option<usize>,
}

impl CandidateCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn built_in_epoch(&self) -> Option<usize> {
        self.built_in_epoch
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn get(&self, ordinal: usize) -> Option<&[NodeId]> {
        self.lists.get(&ordinal).map(Vec::as_slice)
    }

    /// Stores the list for one interaction, checking it avoids `endpoints`.
    pub fn insert(&mut self, ordinal: usize, endpoints: [NodeId; 2], list: Vec<NodeId>, epoch: usize) {
        assert!(!list.is_empty(), "candidate lists are nonempty");
        assert!(list.iter().all(|c| !endpoints.contains(c)), "candidate list contains an endpoint");
        self.lists.insert(ordinal, list);
        self.built_in_epoch = Some(epoch);
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[NodeId])> {
        self.lists.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.built_in_epoch.map_or(u64::MAX, |e| e as u64).to_le_bytes())?;
        w.write_all(&(self.lists.len() as u64).to_le_bytes())?;
        for (ord, list) in &self.lists {
            w.write_all(&(*ord as u64).to_le_bytes())?;
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            for c in list {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self, SamplingError> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], SamplingError> {
            let mut b = [0u8; N];
            r.read_exact(&mut b).map_err(|e| SamplingError::Spill(format!("truncated: {e}")))?;
            Ok(b)
        }
        if &take::<8, _>(r)? != MAGIC {
            return Err(SamplingError::Spill("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(r)?);
        if version != VERSION {
            return Err(SamplingError::Spill(format!("unsupported version {version}")));
        }
        let epoch = u64::from_le_bytes(take(r)?);
        let built_in_epoch = (epoch != u64::MAX).then_some(epoch as usize);
        let n = u64::from_le_bytes(take(r)?);
        let mut lists = BTreeMap::new();
        for _ in 0..n {
            let ord = u64::from_le_bytes(take(r)?) as usize;
            let len = u32::from_le_bytes(take(r)?) as usize;
            let list = (0..len).map(|_| take(r).map(u32::from_le_bytes)).collect::<Result<Vec<_>, _>>()?;
            lists.insert(ord, list);
        }
        Ok(Self { lists, built_in_epoch })
    }

    pub fn save(&self, path: &Path) -> Result<(), SamplingError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SamplingError> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spill_round_trip() {
        let mut c = CandidateCache::new();
        c.insert(3, [0, 1], vec![4, 2, 9], 2);
        c.insert(7, [5, 6], vec![1], 2);
        let bytes = c.to_bytes();
        assert_eq!(CandidateCache::read(&mut bytes.as_slice()).unwrap(), c);
        assert_eq!(CandidateCache::read(&mut CandidateCache::new().to_bytes().as_slice()).unwrap(), CandidateCache::new());
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(CandidateCache::read(&mut b"NOTCACHE\x01\0\0\0".as_slice()).is_err());
    }

    #[test]
    #[should_panic(expected = "endpoint")]
    fn endpoints_rejected() {
        CandidateCache::new().insert(0, [1, 2], vec![3, 2], 0);
    }
}
