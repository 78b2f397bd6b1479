//! Parameter files.
//!
//! Parameters are stored in the `.acfb` container: each tensor is flattened
//! row-major, zero-padded to a multiple of [`PARAM_CHUNK`] and split into
//! records named `<param>#<chunk>` with role `param`. Shapes are implied by
//! the configuration that registers the parameters, so a file written for one
//! configuration loads into any model built from the same configuration.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_feature_store, record_id_for_name, write_feature_store, FeatureStore, ManifestEntry, Role};
use crate::kernel::{ParamId, ParamSet, Real};

pub const PARAM_CHUNK: usize = 64;

pub fn save_params<T: Real>(params: &ParamSet<T>, ids: &[ParamId]) -> Result<FeatureStore> {
    let mut store = FeatureStore::new(PARAM_CHUNK);
    for &id in ids {
        let data = params.get(id).data();
        for (k, chunk) in data.chunks(PARAM_CHUNK).enumerate() {
            let mut v: Vec<f32> = chunk.iter().map(|x| x.to_f64_lossy() as f32).collect();
            v.resize(PARAM_CHUNK, 0.0);
            store.insert(ManifestEntry::for_name(Role::Param, &format!("{}#{k}", params.name(id))), v)?;
        }
    }
    Ok(store)
}

/// Overwrites the listed parameters with values from `store`.
pub fn load_params<T: Real>(params: &mut ParamSet<T>, ids: &[ParamId], store: &FeatureStore) -> Result<()> {
    if store.dim() != PARAM_CHUNK {
        return Err(Error::format(
            "ACFB",
            format!("parameter chunks must be {PARAM_CHUNK} wide, found {}", store.dim()),
        ));
    }
    for &id in ids {
        let name = params.name(id).to_string();
        let n = params.get(id).len();
        let mut values = Vec::with_capacity(n.div_ceil(PARAM_CHUNK) * PARAM_CHUNK);
        for k in 0..n.div_ceil(PARAM_CHUNK) {
            let chunk = store
                .get(record_id_for_name(Role::Param, &format!("{name}#{k}")))
                .ok_or_else(|| Error::MissingRecord(format!("parameter `{name}` chunk {k}")))?;
            values.extend(chunk.iter().map(|&x| T::of(x as f64)));
        }
        values.truncate(n);
        params.get_mut(id).data_mut().copy_from_slice(&values);
    }
    Ok(())
}

pub fn write_params<T: Real>(params: &ParamSet<T>, ids: &[ParamId], path: &Path) -> Result<()> {
    write_feature_store(&save_params(params, ids)?, path)
}

pub fn read_params<T: Real>(params: &mut ParamSet<T>, ids: &[ParamId], path: &Path) -> Result<()> {
    load_params(params, ids, &read_feature_store(path)?)
}
