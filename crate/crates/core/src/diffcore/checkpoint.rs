//! Text manifest plus little-endian f32 blob.
//!
//! Manifest lines are `name dtype shape byte_offset`, the shape written as
//! `2x32`. Lines starting with `# meta ` carry `key value` pairs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::params::ParameterStore;
use crate::error::{Error, Result};

pub const CKPT_VERSION_LINE: &str = "# sspfield-ckpt v1";

#[derive(Debug, Clone, PartialEq)]
pub struct CkptEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub entries: Vec<CkptEntry>,
}

fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("manifest")
}

fn blob_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, name: &str, shape: &[usize], values: &[f64]) {
        self.entries.push(CkptEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            values: values.iter().map(|v| *v as f32).collect(),
        });
    }

    pub fn push_store(&mut self, store: &ParameterStore) {
        for e in store.entries() {
            self.push(&e.name, &e.shape, &e.values);
        }
    }

    pub fn get(&self, name: &str) -> Option<&CkptEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn values_f64(&self, name: &str) -> Result<Vec<f64>> {
        self.get(name)
            .map(|e| e.values.iter().map(|v| *v as f64).collect())
            .ok_or_else(|| Error::Contract(format!("checkpoint has no entry {name}")))
    }

    /// Overwrite every parameter of `store` from matching entries.
    pub fn restore_into(&self, store: &mut ParameterStore) -> Result<()> {
        for p in store.entries_mut() {
            let e = self
                .get(&p.name)
                .ok_or_else(|| Error::Contract(format!("checkpoint has no entry {}", p.name)))?;
            if e.shape != p.shape {
                return Err(Error::shape(format!(
                    "checkpoint entry {} has shape {:?}, model expects {:?}",
                    p.name, e.shape, p.shape
                )));
            }
            p.values = e.values.iter().map(|v| *v as f64).collect();
        }
        Ok(())
    }

    /// Writes `{stem}.manifest` and `{stem}.bin`, each through a temp file and rename.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut manifest = String::new();
        manifest.push_str(CKPT_VERSION_LINE);
        manifest.push('\n');
        for (k, v) in &self.meta {
            manifest.push_str(&format!("# meta {k} {v}\n"));
        }
        let mut blob = Vec::new();
        for e in &self.entries {
            let shape: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!("{} f32 {} {}\n", e.name, shape.join("x"), blob.len()));
            for v in &e.values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_atomic(&blob_path(stem), &blob)?;
        write_atomic(&manifest_path(stem), manifest.as_bytes())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let mpath = manifest_path(stem);
        let bpath = blob_path(stem);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: mpath.clone(),
            line,
            msg,
        };
        let mut ck = Checkpoint::new();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == CKPT_VERSION_LINE => {}
            _ => return Err(parse_err(1, "missing checkpoint version line".into())),
        }
        for (i, line) in lines {
            let lineno = i + 1;
            if let Some(rest) = line.strip_prefix("# meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ck.push_meta(k, v);
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 || f[1] != "f32" {
                return Err(parse_err(lineno, format!("expected `name f32 shape offset`, got {line:?}")));
            }
            let shape = f[2]
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(lineno, format!("bad shape {:?}: {e}", f[2])))?;
            let offset: usize = f[3]
                .parse()
                .map_err(|e| parse_err(lineno, format!("bad offset {:?}: {e}", f[3])))?;
            let n: usize = shape.iter().product();
            let end = offset + 4 * n;
            if end > blob.len() {
                return Err(parse_err(lineno, format!("entry {} runs past the end of the blob", f[0])));
            }
            let values = blob[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            ck.entries.push(CkptEntry {
                name: f[0].to_string(),
                shape,
                values,
            });
        }
        Ok(ck)
    }
}
