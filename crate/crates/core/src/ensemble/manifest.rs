use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::rpl::{load_rpl, save_rpl};
use super::Ensemble;
use crate::error::{Error, Result};
use crate::io::{content_lines, write_atomic};
use crate::model_io::{fmt_f64, load_model, save_model};

const MAGIC: &str = "nnam-ensemble";
const VERSION: &str = "v1";

/// Member file list of an ensemble. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub master: Option<PathBuf>,
    pub folds: Vec<PathBuf>,
    pub rpl: Option<PathBuf>,
    pub master_weight: f64,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC} {VERSION}");
        let _ = writeln!(s, "master_weight {}", fmt_f64(self.master_weight));
        if let Some(m) = &self.master {
            let _ = writeln!(s, "master {}", m.display());
        }
        for f in &self.folds {
            let _ = writeln!(s, "fold {}", f.display());
        }
        if let Some(r) = &self.rpl {
            let _ = writeln!(s, "rpl {}", r.display());
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = content_lines(text);
        match lines.next() {
            Some((_, l)) if l.split_whitespace().eq([MAGIC, VERSION]) => {}
            Some((no, _)) => return Err(Error::parse(path, no, format!("expected `{MAGIC} {VERSION}`"))),
            None => return Err(Error::parse(path, 0, "empty manifest")),
        }
        let mut m = Manifest {
            master: None,
            folds: Vec::new(),
            rpl: None,
            master_weight: 0.5,
        };
        for (no, line) in lines {
            let (key, value) = line
                .split_once(char::is_whitespace)
                .map(|(k, v)| (k, v.trim()))
                .ok_or_else(|| Error::parse(path, no, format!("expected `<key> <value>`, found `{line}`")))?;
            let dup = |what: &str| Error::parse(path, no, format!("duplicate `{what}` entry"));
            match key {
                "master_weight" => {
                    m.master_weight = value
                        .parse()
                        .map_err(|_| Error::parse(path, no, format!("bad weight `{value}`")))?
                }
                "master" if m.master.is_some() => return Err(dup("master")),
                "master" => m.master = Some(PathBuf::from(value)),
                "fold" => m.folds.push(PathBuf::from(value)),
                "rpl" if m.rpl.is_some() => return Err(dup("rpl")),
                "rpl" => m.rpl = Some(PathBuf::from(value)),
                _ => return Err(Error::parse(path, no, format!("unknown manifest key `{key}`"))),
            }
        }
        Ok(m)
    }
}

/// Writes `master.model`, `fold<j>.model`, `rpl.txt` (as present) and the
/// manifest into `dir`; returns the manifest path.
pub fn save_ensemble(dir: &Path, ensemble: &Ensemble, manifest_name: &str) -> Result<PathBuf> {
    let mut m = Manifest {
        master: None,
        folds: Vec::new(),
        rpl: None,
        master_weight: ensemble.master_weight,
    };
    if let Some(net) = &ensemble.master {
        save_model(net, &dir.join("master.model"))?;
        m.master = Some("master.model".into());
    }
    for (j, net) in ensemble.folds.iter().enumerate() {
        let name = format!("fold{j}.model");
        save_model(net, &dir.join(&name))?;
        m.folds.push(name.into());
    }
    if let Some(r) = &ensemble.rpl {
        save_rpl(&dir.join("rpl.txt"), r)?;
        m.rpl = Some("rpl.txt".into());
    }
    let path = dir.join(manifest_name);
    write_atomic(&path, m.to_text().as_bytes())?;
    Ok(path)
}

pub fn load_ensemble(manifest: &Path) -> Result<Ensemble> {
    let m = Manifest::parse(&fs::read_to_string(manifest)?, manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let master = m.master.as_deref().map(|p| load_model(&resolve(p))).transpose()?;
    let folds = m.folds.iter().map(|p| load_model(&resolve(p))).collect::<Result<Vec<_>>>()?;
    let rpl = m.rpl.as_deref().map(|p| load_rpl(&resolve(p))).transpose()?;
    Ensemble::new(master, folds, rpl, m.master_weight)
}
