//! Flat `section.key` settings: built-in defaults, then a TOML file, then
//! command-line overrides. Every value is checked against its key's type
//! as soon as it is set, so a bad or unknown key stops a command before it
//! touches any file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    Count,
    Seed,
    Real,
    Flag,
    /// Comma-separated positive counts, or `auto`.
    Sizes,
    /// Free-form string checked where it is used.
    Text,
    OneOf(&'static [&'static str]),
}

pub struct KeyDef {
    pub name: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    pub doc: &'static str,
}

const fn key(name: &'static str, kind: Kind, default: &'static str, doc: &'static str) -> KeyDef {
    KeyDef {
        name,
        kind,
        default,
        doc,
    }
}

pub const KEYS: &[KeyDef] = &[
    key("seed", Kind::Seed, "0", "root seed of every random stream"),
    key("synth.phones", Kind::Count, "10", "phone inventory size"),
    key("synth.states", Kind::Count, "2", "HMM states per phone"),
    key("synth.feature_dim", Kind::Count, "12", "feature dimension"),
    key("synth.train", Kind::Count, "120", "training utterances"),
    key("synth.dev", Kind::Count, "20", "dev utterances"),
    key("synth.test", Kind::Count, "20", "test utterances"),
    key("synth.min_frames", Kind::Count, "30", "shortest utterance"),
    key("synth.max_frames", Kind::Count, "80", "longest utterance"),
    key("synth.noise", Kind::Real, "1.5", "feature noise standard deviation"),
    key("synth.self_loop", Kind::Real, "0.5", "HMM self-loop probability"),
    key(
        "net.cell",
        Kind::OneOf(&["lstm", "gru", "zoneout", "ff"]),
        "lstm",
        "cell kind",
    ),
    key("net.hidden", Kind::Sizes, "auto", "layer widths; auto = 4x512 recurrent, 8x2048 ff"),
    key("net.zoneout_c", Kind::Real, "0.5", "zoneout probability of the cell state"),
    key("net.zoneout_h", Kind::Real, "0.5", "zoneout probability of the hidden state"),
    key("train.context", Kind::Count, "11", "stacked input frames (odd)"),
    key("train.delay", Kind::Count, "5", "output delay of recurrent nets, frames"),
    key(
        "train.stages",
        Kind::Text,
        "auto",
        "`opt:batch:lr,...` (opt sgd|adam); auto = cell's default plan",
    ),
    key("train.batch", Kind::Count, "0", "if > 0, batch size of every stage"),
    key("train.lr", Kind::Real, "0", "if > 0, first-stage learning rate (ff: start of the x0.1 ladder)"),
    key("train.momentum", Kind::Real, "0.9", "SGD momentum"),
    key("train.seed", Kind::Text, "auto", "training seed; auto = --seed"),
    key("train.max_epochs", Kind::Count, "20", "epoch cap per stage"),
    key("train.clip_norm", Kind::Real, "5", "global gradient-norm clip; 0 = off"),
    key("train.scale_batches", Kind::Flag, "true", "shrink batches by train size / 3696"),
    key("train.dev_fraction", Kind::Real, "0.1", "dev share split off train when the corpus has no dev set"),
    key("dropout.kind", Kind::OneOf(&["constant", "dynamic"]), "constant", "dropout schedule"),
    key("dropout.p", Kind::Real, "0.2", "constant dropout probability"),
    key("dropout.peak", Kind::Real, "0.15", "dynamic schedule peak"),
    key("dropout.total_epochs", Kind::Count, "20", "dynamic schedule length"),
    key("ensemble.folds", Kind::Count, "5", "number of folds"),
    key("ensemble.master", Kind::Flag, "false", "also train a master net on all training data"),
    key("ensemble.rpl", Kind::Flag, "false", "train a post-layer on held-out fold predictions"),
    key("ensemble.master_weight", Kind::Real, "0.5", "master share in master+folds"),
    key("rpl.lr", Kind::Real, "0.1", "post-layer gradient step"),
    key("rpl.max_iters", Kind::Count, "200", "post-layer iteration cap"),
    key("rpl.held_aside", Kind::Real, "0.1", "share of frames held aside for early stopping"),
    key(
        "decode.scenario",
        Kind::OneOf(&["master", "folds", "master+folds"]),
        "master",
        "ensemble members to decode with",
    ),
    key("decode.rpl", Kind::Flag, "false", "apply the ensemble's post-layer"),
    key("decode.split", Kind::OneOf(&["train", "dev", "test"]), "test", "split to decode or score"),
    key("decode.lm_weight", Kind::Real, "1", "bigram weight"),
    key("decode.acoustic_scale", Kind::Real, "1", "acoustic score scale"),
    key("decode.use_priors", Kind::Flag, "true", "divide posteriors by class priors"),
    key("decode.uniform", Kind::Flag, "false", "ignore the model: uniform acoustic scores"),
    key("gradcheck.seeds", Kind::Count, "20", "random cases per cell kind"),
    key("gradcheck.hidden", Kind::Count, "8", "units per layer"),
    key("gradcheck.frames", Kind::Count, "7", "sequence length"),
    key("gradcheck.tolerance", Kind::Real, "1e-4", "max relative error"),
    key("gradcheck.step", Kind::Real, "1e-5", "central-difference step"),
    key("experiment.runs", Kind::Count, "10", "repetitions R"),
];

/// Bad command line or configuration; exit status 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

fn lookup(name: &str) -> Option<&'static KeyDef> {
    KEYS.iter().find(|k| k.name == name)
}

fn check(def: &KeyDef, value: &str) -> Result<(), UsageError> {
    let bad = |what: &str| usage(format!("`{}`: expected {what}, got `{value}`", def.name));
    match def.kind {
        Kind::Count => value.parse::<usize>().map(drop).map_err(|_| bad("a non-negative integer")),
        Kind::Seed => value.parse::<u64>().map(drop).map_err(|_| bad("an unsigned 64-bit integer")),
        Kind::Real => match value.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(()),
            _ => Err(bad("a finite number")),
        },
        Kind::Flag => value.parse::<bool>().map(drop).map_err(|_| bad("true or false")),
        Kind::Sizes => {
            if value == "auto" || parse_sizes(value).is_some() {
                Ok(())
            } else {
                Err(bad("`auto` or comma-separated positive integers"))
            }
        }
        Kind::Text => Ok(()),
        Kind::OneOf(options) => {
            if options.contains(&value) {
                Ok(())
            } else {
                Err(bad(&format!("one of {}", options.join(", "))))
            }
        }
    }
}

fn parse_sizes(s: &str) -> Option<Vec<usize>> {
    let v: Option<Vec<usize>> = s.split(',').map(|t| t.trim().parse().ok().filter(|&n| n > 0)).collect();
    v.filter(|v| !v.is_empty())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<&'static str, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|k| (k.name, k.default.to_string())).collect(),
        }
    }
}

impl Config {
    pub fn set(&mut self, name: &str, value: &str) -> Result<(), UsageError> {
        let def = lookup(name).ok_or_else(|| usage(format!("unknown config key `{name}`")))?;
        check(def, value)?;
        self.values.insert(def.name, value.to_string());
        Ok(())
    }

    /// Applies `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), UsageError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("expected KEY=VALUE, got `{pair}`")))?;
        self.set(k.trim(), v.trim())
    }

    /// Applies a TOML document; tables become key prefixes.
    pub fn merge_toml(&mut self, text: &str, origin: &Path) -> Result<(), UsageError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| usage(format!("{}: {e}", origin.display())))?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat).map_err(|e| usage(format!("{}: {e}", origin.display())))?;
        for (k, v) in flat {
            self.set(&k, &v).map_err(|e| usage(format!("{}: {e}", origin.display())))?;
        }
        Ok(())
    }

    pub fn str(&self, name: &str) -> &str {
        self.values
            .get(name)
            .unwrap_or_else(|| panic!("config key `{name}` is not declared"))
    }

    pub fn count(&self, name: &str) -> usize {
        self.str(name).parse().expect("checked on set")
    }

    pub fn seed(&self, name: &str) -> u64 {
        self.str(name).parse().expect("checked on set")
    }

    pub fn real(&self, name: &str) -> f64 {
        self.str(name).parse().expect("checked on set")
    }

    pub fn flag(&self, name: &str) -> bool {
        self.str(name).parse().expect("checked on set")
    }

    /// `None` for `auto`.
    pub fn sizes(&self, name: &str) -> Option<Vec<usize>> {
        parse_sizes(self.str(name))
    }

    /// Every key with its current value, one `key = value` line each.
    pub fn dump(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, String)>) -> Result<(), String> {
    for (k, v) in table {
        let name = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&name, t, out)?,
            other => out.push((name.clone(), scalar(&name, other)?)),
        }
    }
    Ok(())
}

fn scalar(name: &str, v: &toml::Value) -> Result<String, String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(items) => items
            .iter()
            .map(|x| scalar(name, x))
            .collect::<Result<Vec<_>, _>>()?
            .join(","),
        _ => return Err(format!("`{name}`: unsupported value")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_default_is_valid() {
        for k in KEYS {
            check(k, k.default).unwrap_or_else(|e| panic!("{e}"));
        }
        let mut names: Vec<&str> = KEYS.iter().map(|k| k.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), KEYS.len());
    }

    #[test]
    fn unknown_and_malformed_values_are_rejected() {
        let mut c = Config::default();
        assert!(c.set("train.lrr", "1").is_err());
        assert!(c.set("train.max_epochs", "-1").is_err());
        assert!(c.set("net.cell", "rnn").is_err());
        assert!(c.set("net.hidden", "32,0").is_err());
        assert!(c.set("synth.noise", "nan").is_err());
        assert!(c.set_pair("seed").is_err());
        c.set_pair("net.hidden = 32,16").unwrap();
        assert_eq!(c.sizes("net.hidden"), Some(vec![32, 16]));
        assert_eq!(Config::default().sizes("net.hidden"), None);
    }

    #[test]
    fn toml_tables_flatten_to_dotted_keys() {
        let mut c = Config::default();
        let text = "seed = 3\n[train]\nlr = 0.5\nscale_batches = false\n[net]\nhidden = [8, 4]\n";
        c.merge_toml(text, Path::new("x.toml")).unwrap();
        assert_eq!(c.seed("seed"), 3);
        assert_eq!(c.real("train.lr"), 0.5);
        assert!(!c.flag("train.scale_batches"));
        assert_eq!(c.str("net.hidden"), "8,4");
        let err = c.merge_toml("[train]\nbogus = 1\n", Path::new("y.toml")).unwrap_err();
        assert!(err.0.contains("y.toml") && err.0.contains("train.bogus"), "{err}");
    }
}
