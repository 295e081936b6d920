//! Parameter checkpoints: one tensor file per parameter plus a manifest.
//!
//! Each manifest line is `name relative-path dims` with dims written as
//! `NxCxHxW`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Dims, Tensor};

pub const MANIFEST: &str = "manifest.txt";

fn dims_text(d: Dims) -> String {
    format!("{}x{}x{}x{}", d.n, d.c, d.h, d.w)
}

fn parse_dims(s: &str) -> Result<Dims> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format(format!("manifest: bad dims `{s}`")))?;
    match parts[..] {
        [n, c, h, w] => Dims::new(n, c, h, w),
        _ => Err(Error::Format(format!("manifest: bad dims `{s}`"))),
    }
}

pub fn save(store: &ParamStore, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for p in store.params() {
        let file = format!("{}.tnsr", p.name);
        p.value.save(dir.join(&file))?;
        manifest.push_str(&format!("{} {} {}\n", p.name, file, dims_text(p.value.dims())));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Named tensors in manifest order; each file's dims must match its line.
pub fn load(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, rel, dims] = fields[..] else {
            return Err(Error::Format(format!("manifest: bad line `{line}`")));
        };
        let want = parse_dims(dims)?;
        let t = Tensor::load(dir.join(rel))?;
        if t.dims() != want {
            return Err(Error::Format(format!("{rel}: dims {} but manifest says {want}", t.dims())));
        }
        out.push((name.to_string(), t));
    }
    Ok(out)
}

/// Replaces every parameter of `store` from the checkpoint. Missing,
/// extra or differently shaped parameters are config errors.
pub fn load_into(store: &mut ParamStore, dir: &Path) -> Result<()> {
    let entries = load(dir)?;
    if entries.len() != store.len() {
        return Err(Error::config(
            "checkpoint",
            format!("{} tensors in checkpoint, model has {}", entries.len(), store.len()),
        ));
    }
    for (name, t) in entries {
        let id = store
            .find(&name)
            .ok_or_else(|| Error::config("checkpoint", format!("model has no parameter `{name}`")))?;
        let have = store.get(id).dims();
        if have != t.dims() {
            return Err(Error::config(
                "checkpoint",
                format!("`{name}` is {} in checkpoint but {have} in model", t.dims()),
            ));
        }
        store.set(id, t)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a.weight", Tensor::from_shape([2, 1, 1, 3], vec![1.0, -2.0, 0.5, 3.25, 1e-300, -0.0]).unwrap(), true);
        s.add("a.bias", Tensor::scalar(7.0), false);
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = store();
        save(&s, dir.path()).unwrap();
        let m = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert_eq!(m, "a.weight a.weight.tnsr 2x1x1x3\na.bias a.bias.tnsr 1x1x1x1\n");
        let mut t = store();
        t.params_mut()[0].value = Tensor::zeros(t.params()[0].value.dims());
        load_into(&mut t, dir.path()).unwrap();
        assert_eq!(t, s);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        save(&store(), dir.path()).unwrap();
        let mut other = ParamStore::new();
        other.add("a.weight", Tensor::zeros(Dims::new(1, 1, 1, 3).unwrap()), true);
        other.add("a.bias", Tensor::scalar(0.0), false);
        assert!(matches!(load_into(&mut other, dir.path()), Err(Error::Config { .. })));
    }
}
