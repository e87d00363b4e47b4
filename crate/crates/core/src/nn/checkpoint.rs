//! Checkpoint directories: `weights.bin` + `manifest.json` (array index) +
//! `meta.json` (free-form run state).

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::adam::{Adam, Moments};
use super::params::ParamStore;
use crate::blob::{ArrayEntry, BlobReader, BlobWriter};
use crate::error::{Error, Result};
use crate::media_io::write_atomic;
use crate::tensor::Tensor;

const WEIGHTS: &str = "weights.bin";
const MANIFEST: &str = "manifest.json";
const META: &str = "meta.json";

#[derive(Serialize, Deserialize)]
struct Manifest {
    arrays: Vec<ArrayEntry>,
    /// Optimizer step counts by parameter name.
    #[serde(default)]
    adam_steps: IndexMap<String, u64>,
}

#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub params: IndexMap<String, Tensor>,
    pub moments: IndexMap<String, Moments>,
    pub meta: Value,
}

impl Checkpoint {
    pub fn capture(store: &ParamStore, adam: Option<&Adam>, meta: Value) -> Self {
        let mut params = IndexMap::new();
        let mut moments = IndexMap::new();
        for (id, name, p) in store.iter() {
            params.insert(name.to_string(), p.value.clone());
            if let Some(m) = adam.and_then(|a| a.moments(id)) {
                moments.insert(name.to_string(), m.clone());
            }
        }
        Checkpoint { params, moments, meta }
    }

    /// Writes into a sibling staging directory, then swaps it into place.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut w = BlobWriter::new();
        for (name, t) in &self.params {
            w.push_f64(&format!("param/{name}"), t.shape(), t.data());
        }
        let mut adam_steps = IndexMap::new();
        for (name, m) in &self.moments {
            w.push_f64(&format!("adam.m/{name}"), m.m.shape(), m.m.data());
            w.push_f64(&format!("adam.v/{name}"), m.v.shape(), m.v.data());
            adam_steps.insert(name.clone(), m.steps);
        }
        let (bytes, arrays) = w.finish();
        let manifest = Manifest { arrays, adam_steps };

        let stage = dir.with_extension("staging");
        if stage.exists() {
            fs::remove_dir_all(&stage).map_err(|e| Error::io(&stage, e))?;
        }
        fs::create_dir_all(&stage).map_err(|e| Error::io(&stage, e))?;
        write_atomic(&stage.join(WEIGHTS), &bytes)?;
        write_atomic(
            &stage.join(MANIFEST),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )?;
        write_atomic(&stage.join(META), serde_json::to_string_pretty(&self.meta)?.as_bytes())?;
        let old = dir.with_extension("old");
        if dir.exists() {
            if old.exists() {
                fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
            }
            fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
        }
        fs::rename(&stage, dir).map_err(|e| Error::io(dir, e))?;
        if old.exists() {
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| Error::io(p, e))
        };
        let manifest: Manifest = serde_json::from_slice(&read(MANIFEST)?)
            .map_err(|e| Error::Manifest(format!("{}: {e}", dir.join(MANIFEST).display())))?;
        let bytes = read(WEIGHTS)?;
        let meta: Value = serde_json::from_slice(&read(META)?)?;
        let reader = BlobReader::new(&bytes, &manifest.arrays)?;
        let mut params = IndexMap::new();
        let mut moments = IndexMap::new();
        for e in &manifest.arrays {
            if let Some(name) = e.name.strip_prefix("param/") {
                let (shape, data) = reader.f64(&e.name)?;
                params.insert(name.to_string(), Tensor::from_vec(&shape, data));
            }
        }
        for (name, &steps) in &manifest.adam_steps {
            let (ms, md) = reader.f64(&format!("adam.m/{name}"))?;
            let (vs, vd) = reader.f64(&format!("adam.v/{name}"))?;
            moments.insert(
                name.clone(),
                Moments {
                    m: Tensor::from_vec(&ms, md),
                    v: Tensor::from_vec(&vs, vd),
                    steps,
                },
            );
        }
        Ok(Checkpoint { params, moments, meta })
    }

    /// Copy every store parameter whose name starts with `prefix`; each must
    /// be present with an identical shape.
    pub fn restore_params(&self, store: &mut ParamStore, prefix: &str) -> Result<usize> {
        let ids: Vec<_> = store
            .iter()
            .filter(|(_, n, _)| n.starts_with(prefix))
            .map(|(id, n, _)| (id, n.to_string()))
            .collect();
        for (id, name) in &ids {
            let t = self
                .params
                .get(name)
                .ok_or_else(|| Error::Manifest(format!("parameter {name} missing from checkpoint")))?;
            if t.shape() != store.value(*id).shape() {
                return Err(Error::Manifest(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    store.value(*id).shape()
                )));
            }
            *store.value_mut(*id) = t.clone();
        }
        Ok(ids.len())
    }

    pub fn restore_adam(&self, store: &ParamStore, adam: &mut Adam) -> Result<()> {
        for (name, m) in &self.moments {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Manifest(format!("optimizer state for unknown parameter {name}")))?;
            adam.set_moments(id, m.clone());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::adam::AdamConfig;

    #[test]
    fn round_trip_with_optimizer_state() {
        let mut store = ParamStore::new();
        let a = store.add("enc.a", Tensor::from_vec(&[2, 1], vec![0.1, -0.25]));
        store.add("dec.b", Tensor::from_vec(&[1], vec![3.0]));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.step(&mut store, &[(a, Tensor::from_vec(&[2, 1], vec![1.0, 2.0]))], |_| 0.1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        Checkpoint::capture(&store, Some(&adam), serde_json::json!({"iteration": 7}))
            .save(&path)
            .unwrap();
        Checkpoint::capture(&store, Some(&adam), serde_json::json!({"iteration": 8}))
            .save(&path)
            .unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.meta["iteration"], 8);
        let mut other = store.clone();
        *other.value_mut(a) = Tensor::zeros(&[2, 1]);
        assert_eq!(ck.restore_params(&mut other, "enc.").unwrap(), 1);
        assert_eq!(other.value(a), store.value(a));
        let mut adam2 = Adam::new(AdamConfig::default(), &store);
        ck.restore_adam(&store, &mut adam2).unwrap();
        assert_eq!(adam2.moments(a), adam.moments(a));

        let mut wrong = ParamStore::new();
        wrong.add("enc.a", Tensor::zeros(&[3]));
        assert!(matches!(ck.restore_params(&mut wrong, ""), Err(Error::Manifest(_))));
    }
}
