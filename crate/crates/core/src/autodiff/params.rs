use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::Array;
use crate::autodiff::{NodeId, Tape};

/// Optimizer grouping: the context encoder gets its own learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    ContextEncoder,
    Other,
}

impl ParamGroup {
    pub fn label(self) -> &'static str {
        match self {
            ParamGroup::ContextEncoder => "context_encoder",
            ParamGroup::Other => "other",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "context_encoder" => Some(ParamGroup::ContextEncoder),
            "other" => Some(ParamGroup::Other),
            _ => None,
        }
    }
}

/// Named, grouped collection of arrays. Every entry belongs to exactly one
/// group by construction; iteration order is name order (BTreeMap), which
/// also fixes the serialized payload order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: BTreeMap<String, (ParamGroup, Array)>,
}

#[derive(Debug, Error)]
pub enum ParamIoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic (not a parameter file)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("payload length mismatch: header wants {want} values, file has {got}")]
    Payload { want: usize, got: usize },
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
    group: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    entries: Vec<HeaderEntry>,
}

const MAGIC: &[u8; 4] = b"RRLP";
const VERSION: u32 = 1;

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, group: ParamGroup, value: Array) {
        let prev = self.entries.insert(name.to_string(), (group, value));
        assert!(prev.is_none(), "ParameterSet: duplicate entry {name}");
    }

    pub fn get(&self, name: &str) -> &Array {
        &self.entries.get(name).unwrap_or_else(|| panic!("ParameterSet: no entry {name}")).1
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array {
        &mut self.entries.get_mut(name).unwrap_or_else(|| panic!("ParameterSet: no entry {name}")).1
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn group_of(&self, name: &str) -> ParamGroup {
        self.entries.get(name).unwrap_or_else(|| panic!("ParameterSet: no entry {name}")).0
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ParamGroup, &Array)> {
        self.entries.iter().map(|(n, (g, a))| (n.as_str(), *g, a))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, ParamGroup, &mut Array)> {
        self.entries.iter_mut().map(|(n, (g, a))| (n.as_str(), *g, a))
    }

    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|(_, a)| a.numel()).sum()
    }

    /// Merge another set under a name prefix; groups carry over.
    pub fn adopt(&mut self, prefix: &str, other: ParameterSet) {
        for (name, (g, a)) in other.entries {
            self.insert(&format!("{prefix}.{name}"), g, a);
        }
    }

    pub fn same_schema(&self, other: &ParameterSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.iter().zip(other.iter()).all(|((n1, g1, a1), (n2, g2, a2))| {
                n1 == n2 && g1 == g2 && a1.shape() == a2.shape()
            })
    }

    /// Flat file: magic, version, JSON header (names, shapes, groups),
    /// then little-endian f64 payload in name order.
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), ParamIoError> {
        let header = Header {
            version: VERSION,
            entries: self
                .iter()
                .map(|(n, g, a)| HeaderEntry {
                    name: n.to_string(),
                    shape: a.shape().to_vec(),
                    group: g.label().to_string(),
                })
                .collect(),
        };
        let hjson = serde_json::to_vec(&header).expect("header serializes");
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(hjson.len() as u32).to_le_bytes())?;
        w.write_all(&hjson)?;
        for (_, _, a) in self.iter() {
            for v in a.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, ParamIoError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ParamIoError::BadMagic);
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let version = u32::from_le_bytes(buf4);
        if version != VERSION {
            return Err(ParamIoError::Version(version));
        }
        r.read_exact(&mut buf4)?;
        let hlen = u32::from_le_bytes(buf4) as usize;
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf)?;
        let header: Header =
            serde_json::from_slice(&hbuf).map_err(|e| ParamIoError::Header(e.to_string()))?;
        let mut set = ParameterSet::new();
        for he in &header.entries {
            let group = ParamGroup::from_label(&he.group)
                .ok_or_else(|| ParamIoError::Header(format!("unknown group {}", he.group)))?;
            let numel: usize = he.shape.iter().product();
            let mut data = vec![0.0f64; numel];
            let mut b8 = [0u8; 8];
            for v in data.iter_mut() {
                r.read_exact(&mut b8).map_err(|_| ParamIoError::Payload {
                    want: numel,
                    got: 0,
                })?;
                *v = f64::from_le_bytes(b8);
            }
            set.insert(&he.name, group, Array::new(he.shape.clone(), data));
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamIoError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: &Path) -> Result<Self, ParamIoError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

/// Binds ParameterSet entries to tape leaves on demand, so backward results
/// can be collected back by name. Parameters never touched by the graph get
/// zero gradients of matching shape.
pub struct ParamBinder<'p> {
    params: &'p ParameterSet,
    bound: BTreeMap<String, NodeId>,
    trainable: bool,
}

impl<'p> ParamBinder<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        ParamBinder { params, bound: BTreeMap::new(), trainable: true }
    }

    /// Parameters enter the graph as constants: values flow, gradients don't.
    /// Used for frozen networks (e.g. the critic inside the policy loss).
    pub fn frozen(params: &'p ParameterSet) -> Self {
        ParamBinder { params, bound: BTreeMap::new(), trainable: false }
    }

    pub fn params(&self) -> &ParameterSet {
        self.params
    }

    pub fn node(&mut self, tape: &mut Tape, name: &str) -> NodeId {
        if let Some(&id) = self.bound.get(name) {
            return id;
        }
        let value = self.params.get(name).clone();
        let id = if self.trainable { tape.leaf(value) } else { tape.constant(value) };
        self.bound.insert(name.to_string(), id);
        id
    }

    /// Gather per-name gradients from a backward sweep; unbound or unreached
    /// parameters get zeros.
    pub fn collect(&self, grads: &[Option<Array>]) -> BTreeMap<String, Array> {
        let mut out = BTreeMap::new();
        for (name, _, arr) in self.params.iter() {
            let g = self
                .bound
                .get(name)
                .and_then(|id| grads.get(id.0).and_then(|s| s.clone()))
                .unwrap_or_else(|| Array::zeros(arr.shape()));
            out.insert(name.to_string(), g);
        }
        out
    }
}
