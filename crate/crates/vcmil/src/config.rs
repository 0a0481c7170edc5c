//! Flat key=value run configuration shared by the CLI subcommands.
//!
//! One namespace covers synthesis, training, and scoring so a single file can
//! drive a whole experiment. Unknown keys are rejected, and [`RunConfig::resolved`]
//! echoes every effective value in a form this parser reads back verbatim, so
//! re-running from an echoed config reproduces the run.

use std::path::Path;

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::evaluation::Granularity;
use crate::losses::{LossConfig, LossMode};
use crate::model::{AggregatorKind, BertConfig, MilInput, ModelConfig};
use crate::training::TrainConfig;

/// Every tunable the CLI exposes, with defaults sized for the self-contained
/// synthetic workflow (64-dim features, 40/20 videos). Real-feature runs
/// override `feature_dim` (and usually `input_fc_dim`) to match their files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: LossMode,
    pub aggregator: AggregatorKind,
    pub mil_input: MilInput,
    pub feature_dim: usize,
    pub input_fc_dim: Option<usize>,
    pub layers: usize,
    pub heads: usize,
    pub dim_model: Option<usize>,
    pub ff_mult: usize,
    pub dropout_p: f32,
    pub mil_dropout: f32,
    pub lr: f32,
    pub epochs: usize,
    pub eval_every: usize,
    pub freeze_aggregator: bool,
    pub lambda_smooth: f32,
    pub lambda_sparse: f32,
    pub beta: f32,
    pub rtfm_k: usize,
    pub rtfm_margin: f32,
    pub granularity: Granularity,
    pub n_train: usize,
    pub n_test: usize,
    pub anomaly_rate: f64,
    pub snippets_min: usize,
    pub snippets_max: usize,
    pub noise_sigma: f64,
    pub crops: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        let bert = BertConfig::default();
        let synth = SynthConfig::default();
        RunConfig {
            seed: 0,
            mode: LossMode::MilBert,
            aggregator: AggregatorKind::Bert,
            mil_input: MilInput::Segment,
            feature_dim: synth.d,
            input_fc_dim: None,
            layers: bert.layers,
            heads: bert.heads,
            dim_model: None,
            ff_mult: bert.ff_mult,
            dropout_p: bert.dropout_p,
            mil_dropout: 0.6,
            lr: 1e-4,
            epochs: 100,
            eval_every: 0,
            freeze_aggregator: false,
            lambda_smooth: loss.lambda_smooth,
            lambda_sparse: loss.lambda_sparse,
            beta: loss.beta,
            rtfm_k: loss.rtfm_k,
            rtfm_margin: loss.rtfm_margin,
            granularity: Granularity::Snippet,
            n_train: synth.n_train,
            n_test: synth.n_test,
            anomaly_rate: synth.anomaly_rate,
            snippets_min: synth.snippets_min,
            snippets_max: synth.snippets_max,
            noise_sigma: synth.noise_sigma,
            crops: synth.crops,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{}' for key '{}'", value, key)))
}

fn parse_opt_usize(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "none" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "bad value '{}' for key '{}' (expected true or false)",
            value, key
        ))),
    }
}

impl RunConfig {
    /// Apply one `key = value` assignment. Every CLI flag funnels through
    /// here too, so the config file and the flags accept the same spellings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "mode" => self.mode = LossMode::parse(value)?,
            "aggregator" => self.aggregator = AggregatorKind::parse(value)?,
            "mil_input" => self.mil_input = MilInput::parse(value)?,
            "feature_dim" => self.feature_dim = parse_num(key, value)?,
            "input_fc_dim" => self.input_fc_dim = parse_opt_usize(key, value)?,
            "layers" => self.layers = parse_num(key, value)?,
            "heads" => self.heads = parse_num(key, value)?,
            "dim_model" => self.dim_model = parse_opt_usize(key, value)?,
            "ff_mult" => self.ff_mult = parse_num(key, value)?,
            "dropout_p" => self.dropout_p = parse_num(key, value)?,
            "mil_dropout" => self.mil_dropout = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "freeze_aggregator" => self.freeze_aggregator = parse_bool(key, value)?,
            "lambda_smooth" => self.lambda_smooth = parse_num(key, value)?,
            "lambda_sparse" => self.lambda_sparse = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "rtfm_k" => self.rtfm_k = parse_num(key, value)?,
            "rtfm_margin" => self.rtfm_margin = parse_num(key, value)?,
            "granularity" => self.granularity = Granularity::parse(value)?,
            "n_train" => self.n_train = parse_num(key, value)?,
            "n_test" => self.n_test = parse_num(key, value)?,
            "anomaly_rate" => self.anomaly_rate = parse_num(key, value)?,
            "snippets_min" => self.snippets_min = parse_num(key, value)?,
            "snippets_max" => self.snippets_max = parse_num(key, value)?,
            "noise_sigma" => self.noise_sigma = parse_num(key, value)?,
            "crops" => self.crops = parse_num(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown config key '{}'", other)));
            }
        }
        Ok(())
    }

    /// Parse `key = value` lines. Blank lines and `#` comments (full-line or
    /// trailing) are ignored. Errors carry the file and line number.
    pub fn apply_str(&mut self, text: &str, origin: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key = value", origin, idx + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{}:{}: {}", origin, idx + 1, e)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_str(&text, &path.display().to_string())
    }

    /// The fully resolved configuration, printable and re-parseable. Float
    /// formatting is shortest-roundtrip, so values survive the trip exactly.
    pub fn resolved(&self) -> String {
        let opt = |v: Option<usize>| match v {
            Some(n) => n.to_string(),
            None => "none".into(),
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("seed", self.seed.to_string());
        kv("mode", self.mode.name().into());
        kv("aggregator", self.aggregator.name().into());
        kv("mil_input", self.mil_input.name().into());
        kv("feature_dim", self.feature_dim.to_string());
        kv("input_fc_dim", opt(self.input_fc_dim));
        kv("layers", self.layers.to_string());
        kv("heads", self.heads.to_string());
        kv("dim_model", opt(self.dim_model));
        kv("ff_mult", self.ff_mult.to_string());
        kv("dropout_p", self.dropout_p.to_string());
        kv("mil_dropout", self.mil_dropout.to_string());
        kv("lr", self.lr.to_string());
        kv("epochs", self.epochs.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("freeze_aggregator", self.freeze_aggregator.to_string());
        kv("lambda_smooth", self.lambda_smooth.to_string());
        kv("lambda_sparse", self.lambda_sparse.to_string());
        kv("beta", self.beta.to_string());
        kv("rtfm_k", self.rtfm_k.to_string());
        kv("rtfm_margin", self.rtfm_margin.to_string());
        kv("granularity", self.granularity.name().into());
        kv("n_train", self.n_train.to_string());
        kv("n_test", self.n_test.to_string());
        kv("anomaly_rate", self.anomaly_rate.to_string());
        kv("snippets_min", self.snippets_min.to_string());
        kv("snippets_max", self.snippets_max.to_string());
        kv("noise_sigma", self.noise_sigma.to_string());
        kv("crops", self.crops.to_string());
        s
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            feature_dim: self.feature_dim,
            input_fc_dim: self.input_fc_dim,
            aggregator: self.aggregator,
            bert: BertConfig {
                dim_model: self.dim_model,
                layers: self.layers,
                heads: self.heads,
                ff_mult: self.ff_mult,
                dropout_p: self.dropout_p,
                ..Default::default()
            },
            mil_input: self.mil_input,
            mil_dropout: self.mil_dropout,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda_smooth: self.lambda_smooth,
            lambda_sparse: self.lambda_sparse,
            beta: self.beta,
            rtfm_k: self.rtfm_k,
            rtfm_margin: self.rtfm_margin,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            model: self.model_config(),
            lr: self.lr,
            epochs: self.epochs,
            seed: self.seed,
            loss: self.loss_config(),
            eval_every: self.eval_every,
            freeze_aggregator: self.freeze_aggregator,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_train: self.n_train,
            n_test: self.n_test,
            d: self.feature_dim,
            anomaly_rate: self.anomaly_rate,
            snippets_min: self.snippets_min,
            snippets_max: self.snippets_max,
            noise_sigma: self.noise_sigma,
            crops: self.crops,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_the_echo() {
        let cfg = RunConfig::default();
        let mut reparsed = RunConfig::default();
        reparsed.lr = 0.0;
        reparsed.apply_str(&cfg.resolved(), "echo").unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn awkward_floats_round_trip_exactly() {
        let mut cfg = RunConfig::default();
        cfg.lr = 1.0 / 3.0;
        cfg.beta = 0.1;
        cfg.noise_sigma = std::f64::consts::PI;
        let mut reparsed = RunConfig::default();
        reparsed.apply_str(&cfg.resolved(), "echo").unwrap();
        assert_eq!(cfg.lr.to_bits(), reparsed.lr.to_bits());
        assert_eq!(cfg.beta.to_bits(), reparsed.beta.to_bits());
        assert_eq!(cfg.noise_sigma.to_bits(), reparsed.noise_sigma.to_bits());
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let mut cfg = RunConfig::default();
        let err = cfg
            .apply_str("lr = 0.001\nlearning_rate = 5\n", "run.cfg")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("run.cfg:2"), "{}", msg);
        assert!(msg.contains("learning_rate"), "{}", msg);
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let mut cfg = RunConfig::default();
        cfg.apply_str("# full line\n\nbeta = 0.7 # trailing\n", "t")
            .unwrap();
        assert_eq!(cfg.beta, 0.7);
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("epochs", "ten").unwrap_err();
        assert!(err.to_string().contains("epochs"));
        let err = cfg.set("mode", "bilstm").unwrap_err();
        assert!(err.to_string().contains("bilstm"));
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn option_keys_accept_none_and_numbers() {
        let mut cfg = RunConfig::default();
        cfg.set("input_fc_dim", "1024").unwrap();
        assert_eq!(cfg.input_fc_dim, Some(1024));
        cfg.set("input_fc_dim", "none").unwrap();
        assert_eq!(cfg.input_fc_dim, None);
    }

    #[test]
    fn derived_configs_carry_the_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_str(
            "mode = rtfm_bert\nbeta = 0.7\nfeature_dim = 32\nheads = 4\nepochs = 3\n",
            "t",
        )
        .unwrap();
        let tc = cfg.train_config();
        assert_eq!(tc.mode, LossMode::RtfmBert);
        assert_eq!(tc.loss.beta, 0.7);
        assert_eq!(tc.model.feature_dim, 32);
        assert_eq!(tc.model.bert.heads, 4);
        assert_eq!(tc.epochs, 3);
        assert_eq!(cfg.synth_config().d, 32);
        tc.model.validate().unwrap();
    }
}
