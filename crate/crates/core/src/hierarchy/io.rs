//! Hierarchy container:
//!
//! ```text
//! magic    8 bytes  "HMAMLHIE"
//! version  u32 LE
//! meta_len u32 LE, followed by JSON {route_on, threshold_log, nodes}
//! models   initial, then per node: layer model, easy model, [hard model]
//! ```
//!
//! Each model is a complete model container.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{RouteOn, SplitNode, TaskHierarchy, ThresholdEntry};
use crate::autodiff::{encode_model, model_io::decode_from, PredictiveModel};
use crate::error::{Error, Result};

pub const HIERARCHY_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"HMAMLHIE";

#[derive(Serialize, Deserialize)]
struct NodeMeta {
    layer: usize,
    gamma: f64,
    easy_ids: Vec<u64>,
    hard_ids: Vec<u64>,
    has_hard_model: bool,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    route_on: RouteOn,
    threshold_log: Vec<ThresholdEntry>,
    nodes: Vec<NodeMeta>,
}

pub fn encode_hierarchy(h: &TaskHierarchy) -> Vec<u8> {
    let chain = h.root.chain();
    let meta = Meta {
        route_on: h.route_on,
        threshold_log: h.threshold_log.clone(),
        nodes: chain
            .iter()
            .map(|n| NodeMeta {
                layer: n.layer,
                gamma: n.gamma,
                easy_ids: n.easy_ids.clone(),
                hard_ids: n.hard_ids.clone(),
                has_hard_model: n.hard_model.is_some(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&meta).expect("hierarchy metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(HIERARCHY_FORMAT_VERSION).unwrap();
    out.write_u32::<LittleEndian>(json.len() as u32).unwrap();
    out.extend_from_slice(&json);
    out.extend(encode_model(&h.initial_model));
    for n in chain {
        out.extend(encode_model(&n.layer_model));
        out.extend(encode_model(&n.easy_model));
        if let Some(m) = &n.hard_model {
            out.extend(encode_model(m));
        }
    }
    out
}

pub fn decode_hierarchy(bytes: &[u8], origin: &Path) -> Result<TaskHierarchy> {
    let bad = |detail: &str| Error::format(origin, detail);
    let mut cursor = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    cursor.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a hierarchy file"));
    }
    let version = cursor.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    if version != HIERARCHY_FORMAT_VERSION {
        return Err(bad(&format!("unsupported hierarchy format version {version}")));
    }
    let len = cursor.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    if len > bytes.len() - cursor.position() as usize {
        return Err(bad("truncated metadata"));
    }
    let mut json = vec![0u8; len];
    cursor.read_exact(&mut json).map_err(|_| bad("truncated metadata"))?;
    let meta: Meta = serde_json::from_slice(&json).map_err(|e| bad(&format!("metadata: {e}")))?;
    if meta.nodes.is_empty() {
        return Err(bad("hierarchy has no layers"));
    }
    let initial_model = decode_from(&mut cursor, origin)?;
    let mut nodes: Vec<SplitNode> = Vec::with_capacity(meta.nodes.len());
    for nm in meta.nodes {
        let layer_model = decode_from(&mut cursor, origin)?;
        let easy_model = decode_from(&mut cursor, origin)?;
        let hard_model: Option<PredictiveModel> = if nm.has_hard_model {
            Some(decode_from(&mut cursor, origin)?)
        } else {
            None
        };
        nodes.push(SplitNode {
            layer: nm.layer,
            gamma: nm.gamma,
            layer_model,
            easy_model,
            easy_ids: nm.easy_ids,
            hard_ids: nm.hard_ids,
            child: None,
            hard_model,
        });
    }
    if cursor.position() as usize != bytes.len() {
        return Err(bad("trailing bytes after the last model"));
    }
    let depth = nodes.len();
    let mut root = nodes.pop().unwrap();
    while let Some(mut parent) = nodes.pop() {
        parent.child = Some(Box::new(root));
        root = parent;
    }
    let h = TaskHierarchy {
        initial_model,
        root,
        threshold_log: meta.threshold_log,
        route_on: meta.route_on,
    };
    h.validate(depth).map_err(|e| bad(&e.to_string()))?;
    Ok(h)
}

pub fn save_hierarchy(h: &TaskHierarchy, path: &Path) -> Result<()> {
    std::fs::write(path, encode_hierarchy(h)).map_err(|e| Error::io(path, e))
}

pub fn load_hierarchy(path: &Path) -> Result<TaskHierarchy> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_hierarchy(&bytes, path)
}
