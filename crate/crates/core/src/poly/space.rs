use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};

use serde::{Deserialize, Serialize};

static NEXT_SPACE: AtomicU32 = AtomicU32::new(1);

/// Identity of a [`VariableSpace`]; polynomials carry it to detect mixing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpaceId(u32);

/// Ordinal position of a variable within its space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Bijective name <-> index registry. Indices are dense `0..len`.
#[derive(Debug, Clone)]
pub struct VariableSpace {
    id: SpaceId,
    names: Vec<String>,
    index: HashMap<String, VarId>,
}

impl Default for VariableSpace {
    fn default() -> Self {
        Self::new()
    }
}

impl VariableSpace {
    pub fn new() -> Self {
        Self {
            id: SpaceId(NEXT_SPACE.fetch_add(1, Ordering::Relaxed)),
            names: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn with_vars<S: AsRef<str>>(names: &[S]) -> Self {
        let mut s = Self::new();
        for n in names {
            s.add(n.as_ref()).expect("duplicate variable name");
        }
        s
    }

    pub fn id(&self) -> SpaceId {
        self.id
    }

    /// Registers a new variable. Fails when the name is taken or not an identifier.
    pub fn add(&mut self, name: &str) -> Result<VarId, String> {
        if !is_identifier(name) {
            return Err(format!("invalid variable name `{name}`"));
        }
        if self.index.contains_key(name) {
            return Err(format!("duplicate variable name `{name}`"));
        }
        let v = VarId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn get(&self, name: &str) -> Option<VarId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, v: VarId) -> &str {
        &self.names[v.index()]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        (0..self.names.len() as u32).map(VarId)
    }
}

pub(crate) fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
