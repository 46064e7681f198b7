//! Knowledge pack manifests: the reusable unit of knowledge.
//!
//! A pack is a JSON manifest plus, for learned mappings, a parameter blob
//! stored next to it. Reading and writing files is left to the caller.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ActionSpace, KnowledgeEntry, KnowledgeMapping, LearnedPolicy, ScriptedRule};
use crate::actor::nets::InnerNetSpec;
use crate::approx::ParameterStore;
use crate::{Error, Result};

pub const PACK_FORMAT_VERSION: u32 = 1;

/// `(name, shape, values)` per parameter, as stored in a blob.
pub type BlobEntries = Vec<(String, Vec<usize>, Vec<f32>)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PackKind {
    Scripted { rule: ScriptedRule },
    Learned { architecture: InnerNetSpec, blob: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackManifest {
    pub format_version: u32,
    pub name: String,
    pub kind: PackKind,
    pub d_k: usize,
    pub action_space: ActionSpace,
    pub obs_layout: String,
    pub key: Vec<f32>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl KnowledgeEntry {
    /// Manifest (and blob contents for learned mappings) for this entry with `key`.
    pub fn to_pack(
        &self,
        key: &[f64],
        blob_file: &str,
        metadata: BTreeMap<String, String>,
    ) -> (PackManifest, Option<BlobEntries>) {
        let (kind, blob) = match &self.mapping {
            KnowledgeMapping::Scripted(rule) => (PackKind::Scripted { rule: *rule }, None),
            KnowledgeMapping::Learned(p) => (
                PackKind::Learned {
                    architecture: p.spec().clone(),
                    blob: blob_file.to_string(),
                },
                Some(p.params().export_f32()),
            ),
        };
        let space = self.mapping.space();
        let manifest = PackManifest {
            format_version: PACK_FORMAT_VERSION,
            name: self.name.clone(),
            kind,
            d_k: key.len(),
            action_space: space,
            obs_layout: space.obs_layout().to_string(),
            key: key.iter().map(|&x| x as f32).collect(),
            metadata,
        };
        (manifest, blob)
    }

    /// Rebuilds an entry, checking version, key width against `d_k` and the
    /// observation layout against this build.
    pub fn from_pack(manifest: &PackManifest, blob: Option<&BlobEntries>, d_k: usize) -> Result<Self> {
        if manifest.format_version != PACK_FORMAT_VERSION {
            return Err(Error::Layout(alloc::format!(
                "pack `{}` has format version {}, this build reads {PACK_FORMAT_VERSION}",
                manifest.name,
                manifest.format_version
            )));
        }
        if manifest.d_k != d_k || manifest.key.len() != d_k {
            return Err(Error::Layout(alloc::format!(
                "pack `{}` has d_k = {} (key of {}), the actor uses d_k = {d_k}",
                manifest.name,
                manifest.d_k,
                manifest.key.len()
            )));
        }
        if manifest.obs_layout != manifest.action_space.obs_layout() {
            return Err(Error::Layout(alloc::format!(
                "pack `{}` expects observation layout `{}`, this build produces `{}`",
                manifest.name,
                manifest.obs_layout,
                manifest.action_space.obs_layout()
            )));
        }
        let mapping = match &manifest.kind {
            PackKind::Scripted { rule } => KnowledgeMapping::Scripted(*rule),
            PackKind::Learned { architecture, .. } => {
                let entries = blob.ok_or_else(|| {
                    Error::Layout(alloc::format!("learned pack `{}` has no parameter blob", manifest.name))
                })?;
                let params = ParameterStore::from_f32(entries)?;
                KnowledgeMapping::Learned(Box::new(LearnedPolicy::new(architecture.clone(), params)?))
            }
        };
        if mapping.space() != manifest.action_space {
            return Err(Error::Layout(alloc::format!(
                "pack `{}` declares {:?} but its mapping acts in {:?}",
                manifest.name,
                manifest.action_space,
                mapping.space()
            )));
        }
        Ok(Self {
            name: manifest.name.clone(),
            mapping,
            key: Some(manifest.key.iter().map(|&x| x as f64).collect()),
        })
    }
}
