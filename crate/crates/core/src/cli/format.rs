//! The `PSAW` tensor container.
//!
//! ```text
//! "PSAW"                    magic, 4 bytes
//! version: u32              currently 1
//! count:   u32              number of entries
//! count × entry:
//!   name_len: u32, name: UTF-8 bytes
//!   dtype: u8               0 = float64
//!   rank:  u8               1..=4
//!   dims:  rank × u64
//!   payload: 8·Π dims bytes
//! ```
//!
//! All integers and floats are little-endian. Files are written to a
//! temporary sibling and renamed into place.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::{Dataset, Task};
use crate::tape::ParamStore;
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: [u8; 4] = *b"PSAW";
pub const VERSION: u32 = 1;
pub const DTYPE_F64: u8 = 0;

/// Named tensors in container order.
pub type Entries = Vec<(String, Tensor)>;

pub fn encode(entries: &[(String, Tensor)]) -> Vec<u8> {
    let payload: usize = entries
        .iter()
        .map(|(n, t)| 4 + n.len() + 2 + 8 * t.rank() + 8 * t.numel())
        .sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Truncated(format!(
                    "{what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Entries> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version > VERSION || version == 0 {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let count = r.u32("entry count")?;
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for i in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::MalformedContainer(format!("entry {i}: name is not UTF-8")))?
            .to_string();
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F64 {
            return Err(Error::MalformedContainer(format!(
                "`{name}`: unknown dtype code {dtype}"
            )));
        }
        let rank = r.u8("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::MalformedContainer(format!(
                "`{name}`: rank {rank} outside 1..={MAX_RANK}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = usize::try_from(r.u64("dims")?)
                .map_err(|_| Error::MalformedContainer(format!("`{name}`: dim overflows")))?;
            shape.push(d);
        }
        let bytes_len = shape
            .iter()
            .try_fold(8usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::MalformedContainer(format!("`{name}`: payload overflows")))?;
        let data = r
            .take(bytes_len, &format!("payload of `{name}`"))?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !seen.insert(name.clone()) {
            return Err(Error::MalformedContainer(format!(
                "duplicate entry `{name}`"
            )));
        }
        let t = Tensor::new(shape, data)
            .map_err(|e| Error::MalformedContainer(format!("`{name}`: {e}")))?;
        entries.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::MalformedContainer(format!(
            "{} trailing bytes after last entry",
            bytes.len() - r.pos
        )));
    }
    Ok(entries)
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn save_entries(entries: &[(String, Tensor)], path: &Path) -> Result<()> {
    write_atomic(path, &encode(entries))
}

pub fn load_entries(path: &Path) -> Result<Entries> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// All parameters of `store`, in store order.
pub fn store_entries(store: &ParamStore) -> Entries {
    store
        .iter()
        .map(|p| (p.name().to_string(), p.value().clone()))
        .collect()
}

pub fn save_weights(store: &ParamStore, path: &Path) -> Result<()> {
    save_entries(&store_entries(store), path)
}

pub fn load_weights(path: &Path) -> Result<Entries> {
    load_entries(path)
}

/// Copies `entries` into `store`. Names must match one to one and shapes
/// must agree; nothing is written unless every entry binds.
pub fn bind_weights(store: &mut ParamStore, entries: &[(String, Tensor)]) -> Result<()> {
    let mut plan = Vec::with_capacity(entries.len());
    for (name, t) in entries {
        let id = store.id(name).ok_or_else(|| Error::BindMismatch {
            name: name.clone(),
            message: "no such parameter in the target network".into(),
        })?;
        let expected = store.value(id).shape();
        if expected != t.shape() {
            return Err(Error::BindMismatch {
                name: name.clone(),
                message: format!("shape {:?} does not match {:?}", t.shape(), expected),
            });
        }
        plan.push((id, t));
    }
    let provided: HashSet<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
    if let Some(missing) = store.iter().find(|p| !provided.contains(p.name())) {
        return Err(Error::BindMismatch {
            name: missing.name().to_string(),
            message: "missing from the weights file".into(),
        });
    }
    for (id, t) in plan {
        store.get_mut(id).set_value(t.clone())?;
    }
    Ok(())
}

fn task_code(task: Task) -> f64 {
    match task {
        Task::Heatmap => 0.0,
        Task::Mask => 1.0,
    }
}

/// Stores `task` (`[1]`: 0 heatmap, 1 mask), `images`, `targets` and,
/// for heatmaps, `keypoints` (`[N, K, 2]`).
pub fn dataset_entries(data: &Dataset) -> Result<Entries> {
    let mut entries = vec![
        ("task".to_string(), Tensor::scalar(task_code(data.task))),
        ("images".to_string(), data.images.clone()),
        ("targets".to_string(), data.targets.clone()),
    ];
    if data.task == Task::Heatmap {
        let (n, k) = (data.len(), data.maps());
        let flat = data
            .keypoints
            .iter()
            .flat_map(|row| row.iter().flat_map(|&(r, c)| [r as f64, c as f64]))
            .collect();
        entries.push(("keypoints".to_string(), Tensor::new([n, k, 2], flat)?));
    }
    Ok(entries)
}

pub fn dataset_from_entries(entries: Entries) -> Result<Dataset> {
    let get = |name: &str| {
        entries
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| entries[i].1.clone())
    };
    let missing = |name: &str| Error::MalformedContainer(format!("dataset lacks `{name}`"));
    let task = match get("task").ok_or_else(|| missing("task"))?.data() {
        [c] if *c == 0.0 => Task::Heatmap,
        [c] if *c == 1.0 => Task::Mask,
        other => {
            return Err(Error::MalformedContainer(format!(
                "unknown task code {other:?}"
            )))
        }
    };
    let images = get("images").ok_or_else(|| missing("images"))?;
    let targets = get("targets").ok_or_else(|| missing("targets"))?;
    let (ir, tr) = (images.shape(), targets.shape());
    if ir.len() != 4 || tr.len() != 4 || ir[0] != tr[0] || ir[2..] != tr[2..] {
        return Err(Error::MalformedContainer(format!(
            "images {ir:?} and targets {tr:?} do not pair up"
        )));
    }
    let keypoints = match task {
        Task::Mask => Vec::new(),
        Task::Heatmap => {
            let kp = get("keypoints").ok_or_else(|| missing("keypoints"))?;
            if kp.shape() != [tr[0], tr[1], 2] {
                return Err(Error::MalformedContainer(format!(
                    "keypoints {:?} do not match targets {tr:?}",
                    kp.shape()
                )));
            }
            kp.data()
                .chunks_exact(2 * tr[1])
                .map(|row| {
                    row.chunks_exact(2)
                        .map(|p| (p[0] as usize, p[1] as usize))
                        .collect()
                })
                .collect()
        }
    };
    Ok(Dataset {
        task,
        images,
        targets,
        keypoints,
    })
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    save_entries(&dataset_entries(data)?, path)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_entries(load_entries(path)?)
}
