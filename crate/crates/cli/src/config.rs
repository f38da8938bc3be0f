//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key can also be
//! set from the command line; flags are applied after the file, so they win.

use std::path::{Path, PathBuf};

use flashmhf_core::Precision;

use crate::error::{CliError, CliResult};

/// Keys accepted in a config file, with a one-line description each. Printed
/// by `--help`.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "u64 master seed for parameters, data and sampling"),
    ("precision", "single | double"),
    ("scale", "divisor applied to the benchmark grid's L and widths"),
    ("out", "output directory"),
    ("block_seq", "kernel tile height over the sequence"),
    ("block_inter", "kernel tile width over the sub-network dimension"),
    ("batch", "sequences folded into L for each bench cell"),
    ("reps", "timed repetitions per bench cell (median reported)"),
    ("warmups", "untimed repetitions before timing"),
    ("naive_budget", "element budget above which naive cells are OOM"),
    ("steps", "Adam steps for train-toy"),
    ("lr", "Adam learning rate"),
    ("train_seeds", "number of consecutive seeds trained by train-toy"),
    ("tokens", "toy dataset size N"),
    ("seq_len", "tokens per training step"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub precision: Precision,
    pub scale: usize,
    pub out: PathBuf,
    pub block_seq: usize,
    pub block_inter: usize,
    pub batch: usize,
    pub reps: usize,
    pub warmups: usize,
    pub naive_budget: usize,
    pub steps: usize,
    pub lr: f64,
    pub train_seeds: usize,
    pub tokens: usize,
    pub seq_len: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            precision: Precision::Double,
            scale: 16,
            out: PathBuf::from("out"),
            block_seq: 64,
            block_inter: 64,
            batch: 1,
            reps: 5,
            warmups: 2,
            naive_budget: 1 << 24,
            steps: 2000,
            lr: 1e-3,
            train_seeds: 4,
            tokens: 8192,
            seq_len: 64,
        }
    }
}

pub fn parse_precision(s: &str) -> Option<Precision> {
    match s {
        "single" => Some(Precision::Single),
        "double" => Some(Precision::Double),
        _ => None,
    }
}

impl Config {
    /// Sets one key. The error string is suitable for a usage message.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        fn positive(key: &str, v: &str) -> Result<usize, String> {
            match num::<usize>(key, v)? {
                0 => Err(format!("{key} must be positive")),
                n => Ok(n),
            }
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "precision" => {
                self.precision =
                    parse_precision(value).ok_or_else(|| format!("precision must be single or double, got {value:?}"))?
            }
            "scale" => self.scale = positive(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "block_seq" => self.block_seq = positive(key, value)?,
            "block_inter" => self.block_inter = positive(key, value)?,
            "batch" => self.batch = positive(key, value)?,
            "reps" => self.reps = positive(key, value)?,
            "warmups" => self.warmups = num(key, value)?,
            "naive_budget" => self.naive_budget = positive(key, value)?,
            "steps" => self.steps = positive(key, value)?,
            "lr" => {
                let lr: f64 = num(key, value)?;
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(format!("lr must be positive, got {value}"));
                }
                self.lr = lr;
            }
            "train_seeds" => self.train_seeds = positive(key, value)?,
            "tokens" => self.tokens = positive(key, value)?,
            "seq_len" => self.seq_len = positive(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, path: &Path) -> CliResult<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| CliError::ConfigLine { path: path.to_path_buf(), line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            self.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Config::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let precision = match self.precision {
            Precision::Single => "single",
            Precision::Double => "double",
        };
        format!(
            "seed = {}\nprecision = {}\nscale = {}\nout = {}\nblock_seq = {}\nblock_inter = {}\nbatch = {}\n\
             reps = {}\nwarmups = {}\nnaive_budget = {}\nsteps = {}\nlr = {:e}\ntrain_seeds = {}\ntokens = {}\nseq_len = {}\n",
            self.seed,
            precision,
            self.scale,
            self.out.display(),
            self.block_seq,
            self.block_inter,
            self.batch,
            self.reps,
            self.warmups,
            self.naive_budget,
            self.steps,
            self.lr,
            self.train_seeds,
            self.tokens,
            self.seq_len,
        )
    }
}
