//! Subcommand bodies. Each returns the text printed on stdout and whether the
//! run succeeded; files go under `cfg.out`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use flashmhf_core::TileSpec;

use crate::bench::{run_bench, scaled_grid, write_csv, BenchSettings, Status};
use crate::check::{render_report, run_suite};
use crate::config::Config;
use crate::container::save_params;
use crate::error::{CliError, CliResult};
use crate::report::{read_records, render_markdown};
use crate::train::{toy_data, train_student, Student, StudentKind, ToyShape, TrainSettings};

#[derive(Debug, Clone, PartialEq)]
pub struct CmdOutput {
    pub stdout: String,
    pub success: bool,
}

fn out_dir(cfg: &Config) -> CliResult<&Path> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    Ok(&cfg.out)
}

fn write_file(path: PathBuf, bytes: &[u8]) -> CliResult<()> {
    fs::write(&path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn cmd_check(cfg: &Config) -> CmdOutput {
    let outcomes = run_suite(cfg, |o, t| eprintln!("{:>8.2}s {}", t.as_secs_f64(), o.name));
    CmdOutput { stdout: render_report(cfg, &outcomes), success: outcomes.iter().all(|o| o.passed) }
}

pub fn cmd_bench(cfg: &Config) -> CliResult<CmdOutput> {
    let tiles = TileSpec::new(cfg.block_seq, cfg.block_inter)?;
    let grid = scaled_grid(cfg.scale, cfg.batch, tiles);
    let settings = BenchSettings {
        reps: cfg.reps,
        warmups: cfg.warmups,
        naive_budget: cfg.naive_budget,
        precision: cfg.precision,
        seed: cfg.seed,
    };
    let records = run_bench(&grid, &settings, |r| {
        eprintln!("{:<12} L={:<6} {:>10.3} ms {:>12} elements {:?}", r.method, r.l, r.wall_ms, r.peak_elements, r.status)
    })?;
    let mut csv = Vec::new();
    write_csv(&mut csv, &records)?;
    let dir = out_dir(cfg)?;
    write_file(dir.join("bench.csv"), &csv)?;
    let failed = records.iter().filter(|r| r.status == Status::Fail).count();
    Ok(CmdOutput {
        stdout: String::from_utf8(csv).expect("csv output is UTF-8"),
        success: failed == 0,
    })
}

pub fn cmd_train_toy(cfg: &Config) -> CliResult<CmdOutput> {
    let shape = ToyShape::default();
    let settings = TrainSettings { steps: cfg.steps, seq_len: cfg.seq_len, lr: cfg.lr };
    let dir = out_dir(cfg)?.to_path_buf();
    let mut log = String::from("method,seed,step,train_mse\n");
    let mut summary = String::from("method,seed,params,initial_eval_mse,final_eval_mse,ratio,diverged\n");
    let mut any_diverged = false;
    for i in 0..cfg.train_seeds as u64 {
        let seed = cfg.seed.wrapping_add(i);
        let data = toy_data(&shape, cfg.tokens, seed)?;
        for kind in StudentKind::ALL {
            let (out, student) = train_student(kind, &shape, &data, settings, seed)?;
            for (step, loss) in out.curve.iter().enumerate() {
                log.push_str(&format!("{},{seed},{},{loss:e}\n", kind.name(), step + 1));
            }
            summary.push_str(&format!(
                "{},{seed},{},{:e},{:e},{:e},{}\n",
                kind.name(),
                out.params,
                out.initial_eval,
                out.final_eval,
                out.ratio(),
                out.diverged
            ));
            if out.diverged {
                eprintln!("diverged: {} seed {seed} at step {}", kind.name(), out.curve.len());
                any_diverged = true;
            }
            if let Student::FlashMhf { params, .. } = &student {
                save_params(&dir.join(format!("flashmhf_seed{seed}.fmhf")), params)?;
            }
        }
    }
    write_file(dir.join("train_log.csv"), log.as_bytes())?;
    write_file(dir.join("train_summary.csv"), summary.as_bytes())?;
    Ok(CmdOutput { stdout: summary, success: !any_diverged })
}

pub fn cmd_report(cfg: &Config, inputs: &[PathBuf]) -> CliResult<CmdOutput> {
    let records = read_records(inputs)?;
    let md = render_markdown(&records);
    let dir = out_dir(cfg)?;
    write_file(dir.join("report.md"), md.as_bytes())?;
    let mut sorted = records;
    crate::report::sort_records(&mut sorted);
    let mut csv = Vec::new();
    write_csv(&mut csv, &sorted)?;
    let mut f = fs::File::create(dir.join("merged.csv")).map_err(|e| CliError::io(dir.join("merged.csv"), e))?;
    f.write_all(&csv).map_err(|e| CliError::io(dir.join("merged.csv"), e))?;
    Ok(CmdOutput { stdout: md, success: true })
}
