use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Precision, ReinitMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Bidaf,
    Docqa,
    Albert,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Bidaf => "bidaf",
            Architecture::Docqa => "docqa",
            Architecture::Albert => "albert",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bidaf" => Ok(Architecture::Bidaf),
            "docqa" => Ok(Architecture::Docqa),
            "albert" => Ok(Architecture::Albert),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

/// How DocumentQA makes span scores comparable across paragraphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    /// Per-paragraph softmax; no cross-paragraph calibration.
    #[default]
    None,
    /// Raw start + end logit.
    Original,
    /// One softmax normalizer over every paragraph of the document.
    SharedNorm,
    /// Paragraphs concatenated with separators and read as one sequence.
    Merge,
}

impl ConfidenceMode {
    pub const ALL: [ConfidenceMode; 4] = [
        ConfidenceMode::None,
        ConfidenceMode::Original,
        ConfidenceMode::SharedNorm,
        ConfidenceMode::Merge,
    ];
}

impl fmt::Display for ConfidenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfidenceMode::None => "none",
            ConfidenceMode::Original => "original",
            ConfidenceMode::SharedNorm => "shared_norm",
            ConfidenceMode::Merge => "merge",
        })
    }
}

impl FromStr for ConfidenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(ConfidenceMode::None),
            "original" => Ok(ConfidenceMode::Original),
            "shared_norm" | "sharednorm" => Ok(ConfidenceMode::SharedNorm),
            "merge" => Ok(ConfidenceMode::Merge),
            other => Err(Error::Config(format!("unknown confidence mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Adadelta,
}

/// Network dimensions. `hidden` is `d` for the recurrent readers and the
/// transformer width `H` for ALBERT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub word_dim: usize,
    pub char_dim: usize,
    pub cnn_width: usize,
    pub use_chars: bool,
    /// Largest word vocabulary kept, reserved tokens included.
    pub vocab_cap: usize,
    pub embed: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Longest decoded answer, in tokens.
    pub max_span: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Packed length for ALBERT, context cap for the recurrent readers.
    pub seq_len: usize,
    pub dropout_keep: f64,
    pub ema_decay: f64,
    pub confidence_mode: ConfidenceMode,
    /// Answerability threshold; may be infinite.
    #[serde(with = "extended_float")]
    pub na_threshold: f64,
    pub reinit_last_linear: bool,
    pub reinit_mode: ReinitMode,
    /// Distractor paragraphs sampled per question for shared_norm/merge.
    pub negatives: usize,
    pub seed: u64,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    pub precision: Precision,
}

/// Everything a run needs; written to `config.json` in the output
/// directory so the run can be repeated from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub arch: Architecture,
    pub preset: Option<String>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data_train: Option<PathBuf>,
    pub data_dev: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

mod extended_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl RunConfig {
    pub fn defaults(arch: Architecture) -> Self {
        let model = ModelConfig {
            hidden: 100,
            word_dim: 100,
            char_dim: 100,
            cnn_width: 5,
            use_chars: true,
            vocab_cap: 50_000,
            embed: 32,
            layers: 4,
            heads: 4,
            ffn: 256,
            max_span: 17,
        };
        let train = TrainConfig {
            batch_size: 60,
            epochs: 15,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            seq_len: 400,
            dropout_keep: 0.8,
            ema_decay: 0.999,
            confidence_mode: ConfidenceMode::None,
            na_threshold: 0.0,
            reinit_last_linear: false,
            reinit_mode: ReinitMode::Initializer,
            negatives: 1,
            seed: 42,
            max_steps: None,
            precision: Precision::F64,
        };
        let mut cfg = RunConfig {
            arch,
            preset: None,
            model,
            train,
            data_train: None,
            data_dev: None,
            out: None,
        };
        match arch {
            Architecture::Bidaf => {}
            Architecture::Docqa => {
                cfg.train.batch_size = 45;
                cfg.train.epochs = 26;
                cfg.train.lr = 1.0;
                cfg.train.optimizer = OptimizerKind::Adadelta;
            }
            Architecture::Albert => {
                cfg.model.hidden = 64;
                cfg.model.vocab_cap = 2000;
                cfg.model.ffn = 128;
                cfg.model.max_span = 30;
                cfg.train.batch_size = 16;
                cfg.train.epochs = 4;
                cfg.train.lr = 2e-5;
                cfg.train.seq_len = 128;
                cfg.train.dropout_keep = 0.9;
            }
        }
        cfg
    }

    /// Named configuration. See [`PRESETS`].
    pub fn preset(name: &str) -> Result<Self> {
        let bidaf_rows = [(40, 15), (40, 18), (60, 15), (60, 18)];
        let mut cfg = if let Some(rest) = name.strip_prefix("table2-row") {
            let row: usize = rest.parse().map_err(|_| unknown_preset(name))?;
            let &(b, e) = bidaf_rows.get(row.wrapping_sub(1)).ok_or_else(|| unknown_preset(name))?;
            let mut c = Self::defaults(Architecture::Bidaf);
            c.train.batch_size = b;
            c.train.epochs = e;
            c
        } else if let Some(rest) = name.strip_prefix("bidaf-squad") {
            let (_, be) = rest.split_once('-').filter(|(v, _)| *v == "1" || *v == "2").ok_or_else(|| unknown_preset(name))?;
            let &(b, e) = bidaf_rows
                .iter()
                .find(|(b, e)| format!("b{b}e{e}") == be)
                .ok_or_else(|| unknown_preset(name))?;
            let mut c = Self::defaults(Architecture::Bidaf);
            c.train.batch_size = b;
            c.train.epochs = e;
            c
        } else if let Some(rest) = name.strip_prefix("docqa-") {
            let mut c = Self::defaults(Architecture::Docqa);
            let (mode, variant) = match rest.split_once('-') {
                Some((m, v)) => (m, Some(v)),
                None => (rest, None),
            };
            c.train.confidence_mode = match mode {
                "mini" => ConfidenceMode::None,
                m => m.parse().map_err(|_| unknown_preset(name))?,
            };
            match (mode, variant) {
                ("mini", None) => mini(&mut c),
                (_, None) => {}
                ("none", Some("ema0.9")) => c.train.ema_decay = 0.9,
                ("sharednorm", Some("keep0.7")) => c.train.dropout_keep = 0.7,
                _ => return Err(unknown_preset(name)),
            }
            c
        } else if let Some(lr) = name.strip_prefix("albert-lr") {
            if !ALBERT_LR_GRID.contains(&lr) {
                return Err(unknown_preset(name));
            }
            let mut c = Self::defaults(Architecture::Albert);
            c.train.lr = lr.parse().expect("grid entries are numbers");
            c
        } else {
            match name {
                "bidaf-mini" | "albert-mini" => {
                    let mut c = Self::defaults(name.split('-').next().unwrap_or_default().parse()?);
                    mini(&mut c);
                    c
                }
                _ => return Err(unknown_preset(name)),
            }
        };
        cfg.preset = Some(name.to_string());
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        let fail = |m: String| Err(Error::Config(m));
        if t.batch_size == 0 || t.epochs == 0 {
            return fail("batch size and epochs must be positive".into());
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return fail(format!("learning rate {} must be positive", t.lr));
        }
        if !(t.dropout_keep > 0.0 && t.dropout_keep <= 1.0) {
            return fail(format!("dropout keep {} outside (0, 1]", t.dropout_keep));
        }
        if !(0.0..1.0).contains(&t.ema_decay) {
            return fail(format!("EMA decay {} outside [0, 1)", t.ema_decay));
        }
        if t.na_threshold.is_nan() {
            return fail("no-answer threshold is NaN".into());
        }
        if t.reinit_last_linear && self.arch != Architecture::Albert {
            return fail(format!("--reinit-last-linear needs the albert architecture, not {}", self.arch));
        }
        if t.seq_len < 8 || self.model.max_span == 0 || self.model.hidden == 0 {
            return fail("sequence length below 8 or empty model dimensions".into());
        }
        if self.model.vocab_cap < 8 {
            return fail(format!("vocabulary cap {} is too small", self.model.vocab_cap));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            msg: e.inner().to_string(),
        })
    }
}

fn mini(c: &mut RunConfig) {
    let m = &mut c.model;
    m.hidden = 8;
    m.word_dim = 8;
    m.char_dim = 4;
    m.cnn_width = 3;
    m.vocab_cap = 500;
    m.embed = 8;
    m.layers = 2;
    m.heads = 2;
    m.ffn = 16;
    let t = &mut c.train;
    t.batch_size = 4;
    t.epochs = 100;
    t.dropout_keep = 1.0;
    t.ema_decay = 0.9;
    t.optimizer = OptimizerKind::Adam;
    t.lr = 1e-2;
    match c.arch {
        Architecture::Albert => {
            m.hidden = 16;
            t.seq_len = 48;
            t.lr = 3e-3;
        }
        _ => t.seq_len = 64,
    }
}

fn unknown_preset(name: &str) -> Error {
    Error::Config(format!("unknown preset `{name}` (known: {})", PRESETS.join(", ")))
}

pub const ALBERT_LR_GRID: [&str; 4] = ["2e-6", "6e-6", "2e-5", "6e-5"];

pub const PRESETS: &[&str] = &[
    "bidaf-squad1-b40e15",
    "bidaf-squad1-b40e18",
    "bidaf-squad1-b60e15",
    "bidaf-squad1-b60e18",
    "bidaf-squad2-b40e15",
    "bidaf-squad2-b40e18",
    "bidaf-squad2-b60e15",
    "bidaf-squad2-b60e18",
    "table2-row1",
    "table2-row2",
    "table2-row3",
    "table2-row4",
    "docqa-none",
    "docqa-none-ema0.9",
    "docqa-sharednorm",
    "docqa-sharednorm-keep0.7",
    "docqa-merge",
    "docqa-original",
    "albert-lr2e-6",
    "albert-lr6e-6",
    "albert-lr2e-5",
    "albert-lr6e-5",
    "bidaf-mini",
    "docqa-mini",
    "albert-mini",
];

/// The four runs of the ALBERT learning-rate grid.
pub fn albert_lr_grid() -> Vec<RunConfig> {
    ALBERT_LR_GRID
        .iter()
        .map(|lr| RunConfig::preset(&format!("albert-lr{lr}")).expect("grid presets exist"))
        .collect()
}

/// Values given explicitly on the command line; each one replaces the
/// preset's value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub arch: Option<Architecture>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub seq_len: Option<usize>,
    pub dropout_keep: Option<f64>,
    pub ema_decay: Option<f64>,
    pub confidence_mode: Option<ConfidenceMode>,
    pub na_threshold: Option<f64>,
    pub reinit_last_linear: Option<bool>,
    pub seed: Option<u64>,
    pub max_steps: Option<usize>,
    pub data_train: Option<PathBuf>,
    pub data_dev: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Preset (or architecture defaults) with `overrides` applied on top.
    pub fn resolve(preset: Option<&str>, o: &Overrides) -> Result<Self> {
        let mut c = match (preset, o.arch) {
            (Some(p), arch) => {
                let c = Self::preset(p)?;
                if let Some(a) = arch.filter(|a| *a != c.arch) {
                    return Err(Error::Config(format!("preset `{p}` is for {}, not {a}", c.arch)));
                }
                c
            }
            (None, Some(a)) => Self::defaults(a),
            (None, None) => return Err(Error::Config("either --arch or --preset is required".into())),
        };
        let t = &mut c.train;
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = o.$field { t.$field = v; })* };
        }
        set!(batch_size, epochs, lr, seq_len, dropout_keep, ema_decay, confidence_mode, na_threshold, reinit_last_linear, seed);
        if o.max_steps.is_some() {
            t.max_steps = o.max_steps;
        }
        for (dst, src) in [
            (&mut c.data_train, &o.data_train),
            (&mut c.data_dev, &o.data_dev),
            (&mut c.out, &o.out),
        ] {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listed_preset_resolves() {
        for p in PRESETS {
            let c = RunConfig::preset(p).unwrap();
            c.validate().unwrap();
            assert_eq!(c.preset.as_deref(), Some(*p));
        }
        assert!(RunConfig::preset("table2-row5").is_err());
        assert!(RunConfig::preset("docqa-merge-keep0.7").is_err());
        assert!(RunConfig::preset("albert-lr1e-3").is_err());
    }

    #[test]
    fn table_rows() {
        let c = RunConfig::preset("table2-row3").unwrap();
        assert_eq!((c.arch, c.train.batch_size, c.train.epochs), (Architecture::Bidaf, 60, 15));
        let c = RunConfig::preset("bidaf-squad2-b40e18").unwrap();
        assert_eq!((c.train.batch_size, c.train.epochs), (40, 18));
        let c = RunConfig::preset("docqa-sharednorm-keep0.7").unwrap();
        assert_eq!(c.train.confidence_mode, ConfidenceMode::SharedNorm);
        assert_eq!((c.train.batch_size, c.train.epochs, c.train.lr), (45, 26, 1.0));
        assert_eq!(c.train.dropout_keep, 0.7);
        assert_eq!(RunConfig::preset("docqa-none-ema0.9").unwrap().train.ema_decay, 0.9);
        assert_eq!(RunConfig::preset("docqa-none").unwrap().train.ema_decay, 0.999);
    }

    #[test]
    fn lr_grid_has_four_runs() {
        let lrs: Vec<f64> = albert_lr_grid().iter().map(|c| c.train.lr).collect();
        assert_eq!(lrs, [2e-6, 6e-6, 2e-5, 6e-5]);
    }

    #[test]
    fn explicit_values_win() {
        let o = Overrides {
            batch_size: Some(7),
            seed: Some(9),
            na_threshold: Some(f64::INFINITY),
            ..Default::default()
        };
        let c = RunConfig::resolve(Some("albert-mini"), &o).unwrap();
        assert_eq!((c.train.batch_size, c.train.seed), (7, 9));
        assert_eq!(c.train.epochs, RunConfig::preset("albert-mini").unwrap().train.epochs);

        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);

        let clash = Overrides {
            arch: Some(Architecture::Docqa),
            ..Default::default()
        };
        assert!(RunConfig::resolve(Some("bidaf-mini"), &clash).is_err());
        assert!(RunConfig::resolve(None, &Overrides::default()).is_err());
        let bad = Overrides {
            arch: Some(Architecture::Bidaf),
            reinit_last_linear: Some(true),
            ..Default::default()
        };
        assert!(RunConfig::resolve(None, &bad).is_err());
    }
}
