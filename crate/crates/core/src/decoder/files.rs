use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{BigramLm, DecodeGraph, HmmState, PhoneHmm, PhoneSet};
use crate::error::{Error, Result};
use crate::io::{content_lines, write_atomic};
use crate::model_io::fmt_f64;

pub const PHONES_FILE: &str = "phones.txt";
pub const PHONE_MAP_FILE: &str = "phonemap.txt";
pub const HMM_FILE: &str = "hmm.txt";
pub const BIGRAM_FILE: &str = "bigram.txt";

const INITIAL: &str = "<s>";

fn parse_num<T: std::str::FromStr>(tok: &str, path: &Path, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::parse(path, line, format!("bad {what} `{tok}`")))
}

fn fields<'a>(line: &'a str, n: usize, path: &Path, no: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != n {
        return Err(Error::parse(path, no, format!("expected {n} fields, found {}", f.len())));
    }
    Ok(f)
}

/// One symbol per line; order defines the phone indices.
pub fn load_phones(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (no, line) in content_lines(&text) {
        let f = fields(line, 1, path, no)?;
        out.push(f[0].to_string());
    }
    if out.is_empty() {
        return Err(Error::parse(path, 0, "no phone symbols"));
    }
    Ok(out)
}

pub fn save_phones(path: &Path, symbols: &[String]) -> Result<()> {
    let mut s = String::new();
    for sym in symbols {
        let _ = writeln!(s, "{sym}");
    }
    write_atomic(path, s.as_bytes())
}

/// Lines `<source> <target>`.
pub fn load_phone_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (no, line) in content_lines(&text) {
        let f = fields(line, 2, path, no)?;
        if map.insert(f[0].to_string(), f[1].to_string()).is_some() {
            return Err(Error::parse(path, no, format!("duplicate source phone `{}`", f[0])));
        }
    }
    Ok(map)
}

pub fn save_phone_map(path: &Path, map: &BTreeMap<String, String>) -> Result<()> {
    let mut s = String::new();
    for (a, b) in map {
        let _ = writeln!(s, "{a} {b}");
    }
    write_atomic(path, s.as_bytes())
}

/// Lines `<phone> <state-index> <class-index> <selfloop-logprob> <forward-logprob>`.
pub fn load_hmms(path: &Path, phones: &PhoneSet) -> Result<Vec<PhoneHmm>> {
    let text = fs::read_to_string(path)?;
    let mut states: Vec<BTreeMap<usize, HmmState>> = vec![BTreeMap::new(); phones.len()];
    for (no, line) in content_lines(&text) {
        let f = fields(line, 5, path, no)?;
        let p = phones
            .index_of(f[0])
            .map_err(|_| Error::parse(path, no, format!("unknown phone `{}`", f[0])))?;
        let idx: usize = parse_num(f[1], path, no, "state index")?;
        let st = HmmState {
            class: parse_num(f[2], path, no, "class index")?,
            self_loop: parse_num(f[3], path, no, "log-probability")?,
            forward: parse_num(f[4], path, no, "log-probability")?,
        };
        if states[p].insert(idx, st).is_some() {
            return Err(Error::parse(path, no, format!("duplicate state {idx} of `{}`", f[0])));
        }
    }
    let mut hmms = Vec::with_capacity(phones.len());
    for (p, table) in states.into_iter().enumerate() {
        let sym = phones.symbol(p);
        if table.keys().copied().ne(0..table.len()) {
            return Err(Error::parse(path, 0, format!("states of `{sym}` are not numbered 0..S")));
        }
        let hmm = PhoneHmm::new(table.into_values().collect())
            .map_err(|e| Error::parse(path, 0, format!("phone `{sym}`: {e}")))?;
        hmms.push(hmm);
    }
    Ok(hmms)
}

pub fn save_hmms(path: &Path, phones: &PhoneSet, hmms: &[PhoneHmm]) -> Result<()> {
    let mut s = String::new();
    for (p, h) in hmms.iter().enumerate() {
        for (k, st) in h.states.iter().enumerate() {
            let _ = writeln!(
                s,
                "{} {k} {} {} {}",
                phones.symbol(p),
                st.class,
                fmt_f64(st.self_loop),
                fmt_f64(st.forward)
            );
        }
    }
    write_atomic(path, s.as_bytes())
}

/// Lines `<prev> <next> <logprob>`, with `<s>` as `<prev>` for initial probabilities.
pub fn load_bigram(path: &Path, phones: &PhoneSet) -> Result<BigramLm> {
    let text = fs::read_to_string(path)?;
    let n = phones.len();
    let mut initial = vec![None; n];
    let mut trans = vec![vec![None; n]; n];
    for (no, line) in content_lines(&text) {
        let f = fields(line, 3, path, no)?;
        let lookup = |s: &str| {
            phones
                .index_of(s)
                .map_err(|_| Error::parse(path, no, format!("unknown phone `{s}`")))
        };
        let next = lookup(f[1])?;
        let v: f64 = parse_num(f[2], path, no, "log-probability")?;
        let slot = if f[0] == INITIAL {
            &mut initial[next]
        } else {
            &mut trans[lookup(f[0])?][next]
        };
        if slot.replace(v).is_some() {
            return Err(Error::parse(path, no, format!("duplicate entry `{} {}`", f[0], f[1])));
        }
    }
    let complete = |row: Vec<Option<f64>>, from: &str| -> Result<Vec<f64>> {
        row.into_iter()
            .enumerate()
            .map(|(j, v)| {
                v.ok_or_else(|| {
                    Error::parse(path, 0, format!("missing entry `{from} {}`", phones.symbol(j)))
                })
            })
            .collect()
    };
    let initial = complete(initial, INITIAL)?;
    let trans = trans
        .into_iter()
        .enumerate()
        .map(|(i, row)| complete(row, phones.symbol(i)))
        .collect::<Result<Vec<_>>>()?;
    BigramLm::new(initial, trans).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn save_bigram(path: &Path, phones: &PhoneSet, lm: &BigramLm) -> Result<()> {
    let mut s = String::new();
    for (j, v) in lm.initial.iter().enumerate() {
        let _ = writeln!(s, "{INITIAL} {} {}", phones.symbol(j), fmt_f64(*v));
    }
    for (i, row) in lm.trans.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let _ = writeln!(s, "{} {} {}", phones.symbol(i), phones.symbol(j), fmt_f64(*v));
        }
    }
    write_atomic(path, s.as_bytes())
}

/// Reads the phone list, phone map (identity when absent), HMM table and
/// bigram from `dir`.
pub fn load_graph(dir: &Path) -> Result<DecodeGraph> {
    let symbols = load_phones(&dir.join(PHONES_FILE))?;
    let map_path = dir.join(PHONE_MAP_FILE);
    let phones = if map_path.exists() {
        PhoneSet::with_mapping(symbols, load_phone_map(&map_path)?)?
    } else {
        PhoneSet::new(symbols)?
    };
    let hmms = load_hmms(&dir.join(HMM_FILE), &phones)?;
    let lm = load_bigram(&dir.join(BIGRAM_FILE), &phones)?;
    DecodeGraph::new(phones, hmms, lm)
}

pub fn save_graph(dir: &Path, graph: &DecodeGraph) -> Result<()> {
    save_phones(&dir.join(PHONES_FILE), graph.phones.symbols())?;
    save_phone_map(&dir.join(PHONE_MAP_FILE), graph.phones.mapping())?;
    save_hmms(&dir.join(HMM_FILE), &graph.phones, &graph.hmms)?;
    save_bigram(&dir.join(BIGRAM_FILE), &graph.phones, &graph.lm)
}
