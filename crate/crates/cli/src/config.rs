//! Flat `key = value` configuration files, presets and grids.
//!
//! One setting per line; `#` starts a comment. A comma-separated value on any
//! key turns the run into a grid: every combination becomes one row group.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ura_core::feedback_bs::FeedbackScheme;
use ura_core::harness::{CodeConfig, ExperimentConfig, PowerSpec, SweepConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy)]
enum Kind {
    Int { min: u64, max: u64 },
    Real { min: f64, max: f64 },
    /// A real number or the literal `auto`.
    RealOrAuto { min: f64, max: f64 },
    Bool,
    Choice(&'static [&'static str]),
    Text,
}

impl Kind {
    fn describe(&self) -> String {
        match self {
            Kind::Int { min, max } => format!("an integer in [{min}, {max}]"),
            Kind::Real { min, max } => format!("a number in [{min}, {max}]"),
            Kind::RealOrAuto { min, max } => format!("`auto` or a number in [{min}, {max}]"),
            Kind::Bool => "true or false".into(),
            Kind::Choice(c) => format!("one of {}", c.join(", ")),
            Kind::Text => "text without commas".into(),
        }
    }

    fn check(&self, v: &str) -> bool {
        match *self {
            Kind::Int { min, max } => v.parse::<u64>().is_ok_and(|x| (min..=max).contains(&x)),
            Kind::Real { min, max } => v.parse::<f64>().is_ok_and(|x| (min..=max).contains(&x)),
            Kind::RealOrAuto { min, max } => v == "auto" || v.parse::<f64>().is_ok_and(|x| (min..=max).contains(&x)),
            Kind::Bool => parse_bool(v).is_some(),
            Kind::Choice(c) => c.contains(&v),
            Kind::Text => !v.is_empty(),
        }
    }
}

struct KeySpec {
    name: &'static str,
    kind: Kind,
    /// `None` marks a key without a default.
    default: Option<&'static str>,
}

const fn key(name: &'static str, kind: Kind, default: Option<&'static str>) -> KeySpec {
    KeySpec { name, kind, default }
}

const BIG: u64 = 1 << 40;

const SCHEMES: &[&str] = &["none", "positive_only", "negative_only", "single_threshold", "double_threshold"];

static KEYS: &[KeySpec] = &[
    key("name", Kind::Text, Some("experiment")),
    key("k_a", Kind::Int { min: 1, max: 100_000 }, None),
    key("n_p", Kind::Int { min: 1, max: 100_000 }, None),
    key("n_d", Kind::Int { min: 1, max: 10_000_000 }, None),
    key("preamble_bits", Kind::Int { min: 1, max: 24 }, None),
    key("repetition", Kind::Int { min: 1, max: 100_000 }, None),
    key("code", Kind::Choice(&["hamming", "polar"]), None),
    key("coded_len", Kind::Int { min: 2, max: 1 << 16 }, Some("511")),
    key("crc_len", Kind::Int { min: 0, max: 32 }, Some("11")),
    key("list_size", Kind::Int { min: 1, max: 64 }, Some("8")),
    key("design_snr_db", Kind::Real { min: -30.0, max: 30.0 }, Some("0")),
    key("power", Kind::Choice(&["split", "uniform"]), None),
    key("preamble_ebn0_db", Kind::Real { min: -50.0, max: 80.0 }, None),
    key("payload_ebn0_db", Kind::Real { min: -50.0, max: 80.0 }, None),
    key("total_ebn0_db", Kind::Real { min: -50.0, max: 80.0 }, None),
    key("feedback_ebn0_db", Kind::Real { min: -50.0, max: 80.0 }, Some("20")),
    key("scheme", Kind::Choice(SCHEMES), Some("none")),
    key("c_tilde", Kind::Real { min: 0.01, max: 1000.0 }, Some("8")),
    key("c_tilde_1", Kind::Real { min: 0.01, max: 1000.0 }, Some("12")),
    key("c_tilde_2", Kind::Real { min: 0.01, max: 1000.0 }, Some("24")),
    key("gamma_bar", Kind::Real { min: 1e-6, max: 1000.0 }, Some("0.5")),
    key("signature_fraction", Kind::Real { min: 1e-6, max: 1.0 }, Some("1")),
    key("pilot_len", Kind::Int { min: 1, max: 1_000_000 }, Some("64")),
    key("amp_c", Kind::Real { min: 0.01, max: 100.0 }, Some("3")),
    key("amp_max_iters", Kind::Int { min: 1, max: 10_000 }, Some("25")),
    key("mud_max_iters", Kind::Int { min: 1, max: 10_000 }, Some("100")),
    key("alpha_db", Kind::RealOrAuto { min: -100.0, max: 100.0 }, Some("auto")),
    key("higher_layer_check", Kind::Bool, Some("false")),
    key("genie_feedback", Kind::Bool, Some("false")),
    key("max_retransmissions", Kind::Int { min: 0, max: 64 }, Some("1")),
    key("slots", Kind::Int { min: 1, max: BIG }, Some("1")),
    key("trials", Kind::Int { min: 1, max: BIG }, Some("1")),
    key("seed", Kind::Int { min: 0, max: u64::MAX }, Some("1")),
    key("dictionary_seed", Kind::Int { min: 0, max: u64::MAX }, Some("2023")),
    key("sweep", Kind::Bool, Some("false")),
    key("sweep_target_pupe", Kind::Real { min: 1e-9, max: 1.0 }, Some("0.05")),
    key("sweep_tolerance", Kind::Real { min: 0.0, max: 1.0 }, Some("0.005")),
    key("sweep_center_db", Kind::RealOrAuto { min: -50.0, max: 80.0 }, Some("auto")),
    key("sweep_span_db", Kind::Real { min: 0.0, max: 60.0 }, Some("6")),
    key("sweep_max_iters", Kind::Int { min: 2, max: 100 }, Some("10")),
];

/// Keys that must be set when no preset supplies them.
pub fn required_keys() -> Vec<&'static str> {
    KEYS.iter()
        .filter(|k| k.default.is_none() && !matches!(k.name, "preamble_ebn0_db" | "payload_ebn0_db" | "total_ebn0_db"))
        .map(|k| k.name)
        .collect()
}

pub fn known_keys() -> impl Iterator<Item = &'static str> {
    KEYS.iter().map(|k| k.name)
}

fn spec(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.name == name)
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

/// Raw settings, one entry per key; list values are kept as written.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parses the text of a configuration file.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Syntax { line: i + 1, msg: format!("expected `key = value`, found `{line}`") });
            };
            let k = k.trim();
            if s.values.contains_key(k) {
                return Err(CliError::Syntax { line: i + 1, msg: format!("key `{k}` set twice") });
            }
            s.set(k, v.trim())?;
        }
        Ok(s)
    }

    /// Sets one key, checking its name and every listed value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let spec = spec(key).ok_or_else(|| CliError::UnknownKey(key.to_string()))?;
        let parts: Vec<&str> = value.split(',').map(str::trim).collect();
        for p in &parts {
            if !spec.kind.check(p) {
                return Err(CliError::Value {
                    key: key.to_string(),
                    msg: format!("expected {}, got `{p}`", spec.kind.describe()),
                });
            }
        }
        self.values.insert(key.to_string(), parts.join(","));
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Value { key: assignment.to_string(), msg: "expected key=value".into() })?;
        self.set(k.trim(), v.trim())
    }

    /// Later settings win.
    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let pairs: &[(&str, &str)] = match name {
            "system-a" => SYSTEM_A,
            "system-b" => SYSTEM_B,
            "iv-a-hamming" => IV_A_HAMMING,
            _ => return Err(CliError::UnknownPreset(name.to_string())),
        };
        let mut s = Settings::default();
        for (k, v) in pairs {
            s.set(k, v)?;
        }
        Ok(s)
    }

    /// Canonical text: every key in table order with defaults filled in.
    pub fn render(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        for k in KEYS {
            if let Some(v) = self.get(k.name).or(k.default) {
                let _ = writeln!(out, "{} = {}", k.name, v);
            }
        }
        out
    }

    /// Expands grids and builds one validated configuration per row group.
    pub fn resolve(&self) -> Result<Vec<Group>> {
        let missing: Vec<String> =
            required_keys().into_iter().filter(|k| !self.values.contains_key(*k)).map(String::from).collect();
        if !missing.is_empty() {
            return Err(CliError::Missing(missing));
        }
        let axes: Vec<(&str, Vec<&str>)> = KEYS
            .iter()
            .filter_map(|k| self.get(k.name).map(|v| (k.name, v.split(',').collect::<Vec<_>>())))
            .filter(|(_, vs)| vs.len() > 1)
            .collect();
        let mut combos: Vec<Vec<(&str, &str)>> = vec![Vec::new()];
        for (k, vs) in &axes {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    vs.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((*k, *v));
                        c
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .map(|combo| {
                let label = if combo.is_empty() {
                    "base".to_string()
                } else {
                    combo.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
                };
                let mut single = self.clone();
                for (k, v) in &combo {
                    single.values.insert(k.to_string(), v.to_string());
                }
                let (config, sweep) = single.build()?;
                Ok(Group { label, config, sweep })
            })
            .collect()
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.get(key)
            .or_else(|| spec(key).and_then(|s| s.default))
            .ok_or_else(|| CliError::Missing(vec![key.to_string()]))
    }

    fn int<T: TryFrom<u64>>(&self, key: &str) -> Result<T> {
        let v: u64 = self.raw(key)?.parse().map_err(|_| CliError::Value { key: key.into(), msg: "not an integer".into() })?;
        T::try_from(v).map_err(|_| CliError::Value { key: key.into(), msg: "out of range for this platform".into() })
    }

    fn real(&self, key: &str) -> Result<f64> {
        self.raw(key)?.parse().map_err(|_| CliError::Value { key: key.into(), msg: "not a number".into() })
    }

    fn real_or_auto(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key)? {
            "auto" => Ok(None),
            _ => self.real(key).map(Some),
        }
    }

    fn flag(&self, key: &str) -> Result<bool> {
        parse_bool(self.raw(key)?).ok_or_else(|| CliError::Value { key: key.into(), msg: "not a boolean".into() })
    }

    fn build(&self) -> Result<(ExperimentConfig, Option<SweepConfig>)> {
        let code = match self.raw("code")? {
            "hamming" => CodeConfig::Hamming,
            _ => CodeConfig::Polar {
                coded_len: self.int("coded_len")?,
                crc_len: self.int("crc_len")?,
                list_size: self.int("list_size")?,
                design_snr_db: self.real("design_snr_db")?,
            },
        };
        let power = match self.raw("power")? {
            "split" => PowerSpec::Split {
                preamble_db: self.real("preamble_ebn0_db")?,
                payload_db: self.real("payload_ebn0_db")?,
            },
            _ => PowerSpec::Uniform { total_db: self.real("total_ebn0_db")? },
        };
        let scheme = match self.raw("scheme")? {
            "none" => None,
            "positive_only" => Some(FeedbackScheme::PositiveOnly),
            "negative_only" => Some(FeedbackScheme::NegativeOnly),
            "single_threshold" => Some(FeedbackScheme::SingleThreshold { c_tilde: self.real("c_tilde")? }),
            _ => Some(FeedbackScheme::DoubleThreshold {
                c_tilde_1: self.real("c_tilde_1")?,
                c_tilde_2: self.real("c_tilde_2")?,
            }),
        };
        let sweep = if self.flag("sweep")? {
            Some(SweepConfig {
                target_pupe: self.real("sweep_target_pupe")?,
                tolerance: self.real("sweep_tolerance")?,
                center_db: self.real_or_auto("sweep_center_db")?.unwrap_or(power.sweep_value()),
                span_db: self.real("sweep_span_db")?,
                max_iters: self.int("sweep_max_iters")?,
            })
        } else {
            None
        };
        let cfg = ExperimentConfig {
            name: self.raw("name")?.to_string(),
            k_a: self.int("k_a")?,
            n_p: self.int("n_p")?,
            n_d: self.int("n_d")?,
            preamble_bits: self.int("preamble_bits")?,
            repetition: self.int("repetition")?,
            code,
            power,
            feedback_ebn0_db: self.real("feedback_ebn0_db")?,
            scheme,
            gamma_bar: self.real("gamma_bar")?,
            signature_fraction: self.real("signature_fraction")?,
            pilot_len: self.int("pilot_len")?,
            amp_c: self.real("amp_c")?,
            amp_max_iters: self.int("amp_max_iters")?,
            mud_max_iters: self.int("mud_max_iters")?,
            alpha_db: self.real_or_auto("alpha_db")?,
            higher_layer_check: self.flag("higher_layer_check")?,
            genie_feedback: self.flag("genie_feedback")?,
            max_retransmissions: self.int("max_retransmissions")?,
            slots: self.int("slots")?,
            trials: self.int("trials")?,
            seed: self.int("seed")?,
            dictionary_seed: self.int("dictionary_seed")?,
            sweep,
        };
        cfg.validate()?;
        Ok((cfg, sweep))
    }
}

/// One point of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub label: String,
    pub config: ExperimentConfig,
    pub sweep: Option<SweepConfig>,
}

const SYSTEM_A: &[(&str, &str)] = &[
    ("name", "system-a"),
    ("k_a", "50"),
    ("n_p", "2000"),
    ("n_d", "5500"),
    ("preamble_bits", "15"),
    ("repetition", "22"),
    ("code", "polar"),
    ("coded_len", "511"),
    ("crc_len", "11"),
    ("power", "split"),
    ("preamble_ebn0_db", "12"),
    ("payload_ebn0_db", "6"),
    ("feedback_ebn0_db", "20"),
    ("scheme", "single_threshold"),
    ("max_retransmissions", "1"),
    ("slots", "10"),
    ("trials", "4"),
];

const SYSTEM_B: &[(&str, &str)] = &[
    ("name", "system-b"),
    ("k_a", "200"),
    ("n_p", "6500"),
    ("n_d", "23500"),
    ("preamble_bits", "15"),
    ("repetition", "89"),
    ("code", "polar"),
    ("coded_len", "511"),
    ("crc_len", "11"),
    ("power", "split"),
    ("preamble_ebn0_db", "15"),
    ("payload_ebn0_db", "6"),
    ("feedback_ebn0_db", "20"),
    ("scheme", "single_threshold"),
    ("max_retransmissions", "1"),
    ("slots", "10"),
    ("trials", "2"),
];

const IV_A_HAMMING: &[(&str, &str)] = &[
    ("name", "iv-a-hamming"),
    ("k_a", "300"),
    ("n_p", "2000"),
    ("n_d", "5500"),
    ("preamble_bits", "15"),
    ("repetition", "117"),
    ("code", "hamming"),
    ("power", "uniform"),
    ("total_ebn0_db", "17.6"),
    ("scheme", "single_threshold"),
    ("c_tilde", "8"),
    ("alpha_db", "-20"),
    ("higher_layer_check", "true"),
    ("genie_feedback", "true"),
    ("max_retransmissions", "1"),
    ("slots", "1"),
    ("trials", "20"),
];
