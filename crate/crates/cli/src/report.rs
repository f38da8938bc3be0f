//! Merges bench CSVs into a markdown summary with ratios against FlashMHF.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::bench::{BenchRecord, Status};
use crate::error::{CliError, CliResult};

pub const TABLE_HEADER: &str =
    "| method | L | d_model | H | E | d_e | d_h | wall_ms | peak_elements | status | peak_ratio | time_ratio |";

pub fn read_records(paths: &[PathBuf]) -> CliResult<Vec<BenchRecord>> {
    let missing: Vec<PathBuf> = paths.iter().filter(|p| !p.is_file()).cloned().collect();
    if !missing.is_empty() {
        return Err(CliError::MissingFiles(missing));
    }
    let mut out = Vec::new();
    for p in paths {
        let mut rdr = csv::Reader::from_path(p)?;
        for rec in rdr.deserialize() {
            out.push(rec?);
        }
    }
    Ok(out)
}

/// Sort key: method name, then L, then the remaining shape columns so the
/// order is total.
pub fn sort_records(records: &mut [BenchRecord]) {
    records.sort_by(|a, b| {
        (&a.method, a.l, a.d_model, a.h, a.e, a.d_e, a.d_h, a.block_seq, a.block_inter)
            .cmp(&(&b.method, b.l, b.d_model, b.h, b.e, b.d_e, b.d_h, b.block_seq, b.block_inter))
    });
}

type ShapeKey = (usize, usize, usize, usize, usize, usize);

fn shape_key(r: &BenchRecord) -> ShapeKey {
    (r.l, r.d_model, r.h, r.e, r.d_e, r.d_h)
}

/// `(peak_ratio, time_ratio)` of `r` over the FlashMHF record with the same
/// shape. A ratio is absent when either side did not run successfully.
pub fn ratios(r: &BenchRecord, flash: &BTreeMap<ShapeKey, &BenchRecord>) -> (Option<f64>, Option<f64>) {
    let Some(f) = flash.get(&shape_key(r)) else { return (None, None) };
    if f.status != Status::Ok {
        return (None, None);
    }
    let peak = (r.status != Status::Fail && f.peak_elements > 0)
        .then(|| r.peak_elements as f64 / f.peak_elements as f64);
    let time = (r.status == Status::Ok && f.wall_ms > 0.0).then(|| r.wall_ms / f.wall_ms);
    (peak, time)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_else(|| "-".to_string())
}

/// Markdown table in (method, L) order. Ratios are printed in shortest
/// round-trip form so they can be recomputed exactly from the raw columns.
pub fn render_markdown(records: &[BenchRecord]) -> String {
    let mut recs = records.to_vec();
    sort_records(&mut recs);
    let mut flash = BTreeMap::new();
    for r in records.iter().filter(|r| r.method == "flashmhf") {
        flash.entry(shape_key(r)).or_insert(r);
    }
    let mut md = String::from("# Benchmark report\n\n");
    md.push_str(TABLE_HEADER);
    md.push_str("\n|---|---|---|---|---|---|---|---|---|---|---|---|\n");
    for r in &recs {
        let (peak, time) = ratios(r, &flash);
        let status = match r.status {
            Status::Ok => "ok",
            Status::Fail => "fail",
            Status::Oom => "oom",
        };
        let wall = if r.status == Status::Oom { "-".to_string() } else { format!("{}", r.wall_ms) };
        writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.method,
            r.l,
            r.d_model,
            r.h,
            r.e,
            r.d_e,
            r.d_h,
            wall,
            r.peak_elements,
            status,
            cell(peak),
            cell(time)
        )
        .unwrap();
    }
    md
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: &str, l: usize, wall: f64, peak: usize, status: Status) -> BenchRecord {
        BenchRecord {
            method: method.into(),
            l,
            d_model: 8,
            h: 2,
            e: 3,
            d_e: 5,
            d_h: 4,
            block_seq: 4,
            block_inter: 4,
            wall_ms: wall,
            peak_elements: peak,
            status,
        }
    }

    #[test]
    fn empty_input_is_a_valid_table() {
        let md = render_markdown(&[]);
        assert!(md.contains(TABLE_HEADER));
        assert_eq!(md.lines().filter(|l| l.starts_with('|')).count(), 2);
    }

    #[test]
    fn ratios_round_trip_from_raw_columns() {
        let recs = vec![
            rec("swiglu", 12, 0.37, 1000, Status::Ok),
            rec("flashmhf", 12, 0.11, 321, Status::Ok),
            rec("naive_mhffn", 12, 0.0, 99999, Status::Oom),
            rec("flashmhf", 24, 0.2, 500, Status::Ok),
            rec("swiglu", 24, 0.7, 1700, Status::Ok),
        ];
        let md = render_markdown(&recs);
        for line in md.lines().skip(4) {
            let cols: Vec<&str> = line.trim_matches('|').split('|').map(str::trim).collect();
            let l: usize = cols[1].parse().unwrap();
            let flash = recs.iter().find(|r| r.method == "flashmhf" && r.l == l).unwrap();
            let peak: f64 = cols[10].parse().unwrap();
            let want = cols[8].parse::<f64>().unwrap() / flash.peak_elements as f64;
            assert!((peak - want).abs() < 1e-12);
            if cols[11] != "-" {
                let time: f64 = cols[11].parse().unwrap();
                assert!((time - cols[7].parse::<f64>().unwrap() / flash.wall_ms).abs() < 1e-12);
            } else {
                assert_eq!(cols[9], "oom");
            }
        }
    }

    #[test]
    fn ordering_is_by_method_then_length() {
        let recs = vec![
            rec("swiglu", 24, 1.0, 1, Status::Ok),
            rec("flashmhf", 24, 1.0, 1, Status::Ok),
            rec("swiglu", 12, 1.0, 1, Status::Ok),
            rec("flashmhf", 12, 1.0, 1, Status::Ok),
        ];
        let md = render_markdown(&recs);
        let order: Vec<String> = md
            .lines()
            .skip(4)
            .map(|l| {
                let c: Vec<&str> = l.split('|').map(str::trim).collect();
                format!("{}@{}", c[1], c[2])
            })
            .collect();
        assert_eq!(order, ["flashmhf@12", "flashmhf@24", "swiglu@12", "swiglu@24"]);
        let mut shuffled = recs.clone();
        shuffled.reverse();
        assert_eq!(render_markdown(&shuffled), md);
    }

    #[test]
    fn missing_files_are_listed() {
        let err = read_records(&[PathBuf::from("/nonexistent/a.csv"), PathBuf::from("/nonexistent/b.csv")])
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("a.csv") && msg.contains("b.csv"), "{msg}");
    }
}
