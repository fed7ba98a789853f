//! Checkpoints: a JSON manifest (spec, spec hash, normalization statistics)
//! next to one raw NCHW `f64` file per named array.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::ComputeGraph;
use crate::blocks::{build_model, ModelSpec};
use crate::data::{read_raw_nchw, write_raw_nchw, NormStats, RawDtype};
use crate::error::{Error, Result};
use crate::tensor::Rng;

use super::specfile::spec_hash;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub file: String,
    pub len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub spec_hash: String,
    pub spec: ModelSpec,
    pub seed: u64,
    pub norm: Option<NormStats>,
    pub params: Vec<ArrayEntry>,
    pub buffers: Vec<ArrayEntry>,
}

fn file_name(kind: &str, i: usize, name: &str) -> String {
    format!("{kind}_{i:03}_{}.nchw", name.replace(['/', '\\'], "_"))
}

fn write_arrays<'a>(
    dir: &Path,
    kind: &str,
    arrays: impl Iterator<Item = (String, &'a [f64])>,
) -> Result<Vec<ArrayEntry>> {
    arrays
        .enumerate()
        .map(|(i, (name, values))| {
            let file = file_name(kind, i, &name);
            write_raw_nchw(&dir.join(&file), [values.len(), 1, 1, 1], values, RawDtype::F64)?;
            Ok(ArrayEntry {
                name,
                file,
                len: values.len(),
            })
        })
        .collect()
}

pub fn save_checkpoint(
    dir: &Path,
    spec: &ModelSpec,
    seed: u64,
    graph: &ComputeGraph,
    norm: Option<&NormStats>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let params = write_arrays(dir, "param", graph.param_names().into_iter().zip(graph.params()))?;
    let buffers = write_arrays(dir, "buffer", graph.buffers().into_iter())?;
    let manifest = Manifest {
        spec_hash: spec_hash(spec),
        spec: spec.clone(),
        seed,
        norm: norm.cloned(),
        params,
        buffers,
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

fn read_into(dir: &Path, entries: &[ArrayEntry], targets: Vec<(String, &mut [f64])>) -> Result<()> {
    if entries.len() != targets.len() {
        return Err(Error::Compat(format!(
            "checkpoint has {} arrays, model has {}",
            entries.len(),
            targets.len()
        )));
    }
    for (entry, (name, target)) in entries.iter().zip(targets) {
        if entry.name != name || entry.len != target.len() {
            return Err(Error::Compat(format!(
                "checkpoint array {} ({}) does not match model array {name} ({})",
                entry.name,
                entry.len,
                target.len()
            )));
        }
        let raw = read_raw_nchw(&dir.join(&entry.file))?;
        if raw.values.len() != target.len() {
            return Err(Error::format(dir.join(&entry.file), "length differs from manifest"));
        }
        target.copy_from_slice(&raw.values);
    }
    Ok(())
}

/// Rebuilds the model from `spec` and restores every array. The spec must
/// hash to the value stored in the manifest.
pub fn load_checkpoint(dir: &Path, spec: &ModelSpec) -> Result<(ComputeGraph, Manifest)> {
    let manifest = read_manifest(dir)?;
    let expected = spec_hash(spec);
    if manifest.spec_hash != expected {
        return Err(Error::Compat(format!(
            "checkpoint spec hash {} does not match spec hash {expected}",
            manifest.spec_hash
        )));
    }
    let mut graph = build_model(spec, &mut Rng::new(manifest.seed))?;
    let names = graph.param_names();
    read_into(
        dir,
        &manifest.params,
        names.into_iter().zip(graph.params_mut()).collect(),
    )?;
    let buffers = graph
        .buffers_mut()
        .into_iter()
        .map(|(n, b)| (n, b.as_mut_slice()))
        .collect();
    read_into(dir, &manifest.buffers, buffers)?;
    Ok((graph, manifest))
}
