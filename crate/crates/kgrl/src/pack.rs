//! Knowledge packs on disk: `<name>.pack.json` plus, for learned mappings,
//! a `<name>.kgrlpb` parameter blob in the same directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use kgrl_core::knowledge::{KnowledgeEntry, PackKind, PackManifest};
use sha2::{Digest, Sha256};

use crate::{blob, io_err, Error, Result};

pub const MANIFEST_SUFFIX: &str = ".pack.json";
pub const BLOB_SUFFIX: &str = ".kgrlpb";

/// Writes `entry` with `key` into `dir` and returns the manifest path.
pub fn save_pack(
    dir: &Path,
    entry: &KnowledgeEntry,
    key: &[f64],
    metadata: BTreeMap<String, String>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let blob_file = format!("{}{BLOB_SUFFIX}", entry.name);
    let (manifest, params) = entry.to_pack(key, &blob_file, metadata);
    if let Some(params) = params {
        let path = dir.join(&blob_file);
        fs::write(&path, blob::encode(&params)).map_err(io_err(&path))?;
    }
    let path = dir.join(format!("{}{MANIFEST_SUFFIX}", entry.name));
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<PackManifest> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        file: path.display().to_string(),
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn blob_path(manifest_path: &Path, manifest: &PackManifest) -> Option<PathBuf> {
    match &manifest.kind {
        PackKind::Learned { blob, .. } => Some(manifest_path.parent().unwrap_or(Path::new(".")).join(blob)),
        PackKind::Scripted { .. } => None,
    }
}

/// Loads a pack for an actor with key width `d_k`.
pub fn load_pack(path: &Path, d_k: usize) -> Result<KnowledgeEntry> {
    let manifest = read_manifest(path)?;
    let params = match blob_path(path, &manifest) {
        Some(p) => Some(blob::decode(&fs::read(&p).map_err(io_err(&p))?)?),
        None => None,
    };
    Ok(KnowledgeEntry::from_pack(&manifest, params.as_ref(), d_k)?)
}

/// Files making up the pack at `path`: the manifest and its blob, if any.
pub fn pack_files(path: &Path) -> Result<Vec<PathBuf>> {
    let manifest = read_manifest(path)?;
    Ok(std::iter::once(path.to_path_buf())
        .chain(blob_path(path, &manifest))
        .collect())
}

/// Hex SHA-256 over the given files' contents, in order.
pub fn digest(files: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for f in files {
        let bytes = fs::read(f).map_err(io_err(f))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(format!("{:x}", h.finalize()))
}
