use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hin::{Dir, Hin, Schema, TypeId};

/// One hop of a meta-path: which edge type is crossed and in which
/// direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub edge: usize,
    pub dir: Dir,
}

/// A composite relation from the user type to the item type, e.g. `UMUM`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPath {
    pub name: String,
    pub types: Vec<TypeId>,
    pub steps: Vec<Step>,
}

impl MetaPath {
    /// Parse `U-M-U-M`, or `UMUM` when type names can be matched greedily
    /// (longest name first).
    pub fn parse(spec: &str, schema: &Schema) -> Result<MetaPath> {
        let names: Vec<String> = if spec.contains('-') {
            spec.split('-').map(|s| s.trim().to_string()).collect()
        } else {
            let mut by_len: Vec<&str> = schema.node_types.iter().map(|t| t.name.as_str()).collect();
            by_len.sort_by_key(|n| std::cmp::Reverse(n.len()));
            let mut rest = spec;
            let mut out = Vec::new();
            while !rest.is_empty() {
                let hit = by_len.iter().find(|n| rest.starts_with(**n)).ok_or_else(|| {
                    Error::Schema(format!("meta-path {spec:?}: cannot match {rest:?} to a node type"))
                })?;
                out.push(hit.to_string());
                rest = &rest[hit.len()..];
            }
            out
        };
        let types = names
            .iter()
            .map(|n| schema.type_id(n))
            .collect::<Result<Vec<_>>>()?;
        Self::from_types(spec, &types, schema)
    }

    pub fn from_types(name: &str, types: &[TypeId], schema: &Schema) -> Result<MetaPath> {
        if types.len() < 2 {
            return Err(Error::Schema(format!("meta-path {name:?} needs at least two types")));
        }
        let inter = &schema.edge_types[schema.edge_index(&schema.interaction)?];
        let user = schema.type_id(&inter.src)?;
        let item = schema.type_id(&inter.dst)?;
        if types[0] != user || *types.last().unwrap() != item {
            return Err(Error::Schema(format!(
                "meta-path {name:?} must start at the user type and end at the item type"
            )));
        }
        let steps = types
            .windows(2)
            .map(|w| find_step(schema, w[0], w[1]).ok_or_else(|| {
                Error::Schema(format!(
                    "meta-path {name:?}: no edge type between {:?} and {:?}",
                    schema.node_types[w[0] as usize].name, schema.node_types[w[1] as usize].name
                ))
            }))
            .collect::<Result<Vec<_>>>()?;
        Ok(MetaPath {
            name: name.to_string(),
            types: types.to_vec(),
            steps,
        })
    }

    /// Number of nodes on an instance.
    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// Step used to wrap from the last type back to the first when a walk
    /// cycles the pattern, if such an edge type exists.
    pub fn wrap_step(&self, schema: &Schema) -> Option<Step> {
        find_step(schema, *self.types.last().unwrap(), self.types[0])
    }

    pub fn check_against(&self, hin: &Hin) -> Result<()> {
        for (w, s) in self.types.windows(2).zip(&self.steps) {
            let (src, dst) = hin.edge_endpoints(s.edge);
            let ok = match s.dir {
                Dir::Forward => src == w[0] && dst == w[1],
                Dir::Backward => dst == w[0] && src == w[1],
            };
            if !ok {
                return Err(Error::Schema(format!(
                    "meta-path {:?} is inconsistent with the network schema",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

fn find_step(schema: &Schema, a: TypeId, b: TypeId) -> Option<Step> {
    let ids = |e: &crate::hin::EdgeType| (schema.type_id(&e.src).ok(), schema.type_id(&e.dst).ok());
    schema
        .edge_types
        .iter()
        .position(|e| ids(e) == (Some(a), Some(b)))
        .map(|edge| Step { edge, dir: Dir::Forward })
        .or_else(|| {
            schema
                .edge_types
                .iter()
                .position(|e| ids(e) == (Some(b), Some(a)))
                .map(|edge| Step { edge, dir: Dir::Backward })
        })
}
