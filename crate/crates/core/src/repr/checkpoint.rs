//! Parameter checkpoints: a little-endian `f64` blob plus a text manifest
//! listing `name offset length` per segment.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Representation, Segment};
use crate::{Error, Result};

fn manifest_path(blob: &Path) -> PathBuf {
    let mut p = blob.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

impl Representation {
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kind {}", self.spec.name());
        let _ = writeln!(s, "params {}", self.n_params());
        for seg in &self.params.segments {
            let _ = writeln!(s, "segment {} {} {}", seg.name, seg.offset, seg.len);
        }
        s
    }

    /// Write the parameters to `path` and the manifest next to it.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let blob: Vec<u8> = self.params.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, blob)?;
        fs::write(manifest_path(path), self.manifest())?;
        Ok(())
    }

    /// Load parameters saved by [`Representation::save_checkpoint`] for the
    /// same architecture.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(manifest_path(path))?;
        let mut kind = None;
        let mut count = None;
        let mut segments = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                ["kind", k] => kind = Some(k.to_string()),
                ["params", n] => count = Some(n.parse::<usize>().map_err(|_| Error::format(format!("bad count `{n}`")))?),
                ["segment", name, off, len] => {
                    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format(format!("bad number `{s}`")));
                    segments.push(Segment { name: name.to_string(), offset: parse(off)?, len: parse(len)? });
                }
                _ => return Err(Error::format(format!("unrecognised manifest line `{line}`"))),
            }
        }
        if kind.as_deref() != Some(self.spec.name()) {
            return Err(Error::format(format!("checkpoint is for {:?}, expected {}", kind, self.spec.name())));
        }
        if count != Some(self.n_params()) || segments != self.params.segments {
            return Err(Error::format("checkpoint layout does not match the architecture"));
        }
        let bytes = fs::read(path)?;
        if bytes.len() != 8 * self.n_params() {
            return Err(Error::format(format!("expected {} bytes, found {}", 8 * self.n_params(), bytes.len())));
        }
        let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("checkpoint holds non-finite parameters"));
        }
        self.params.values = values;
        Ok(())
    }
}
