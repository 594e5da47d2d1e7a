//! Result files: JSON lines, summary documents and plot-ready CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::campaign::CampaignRecord;
use crate::error::{LoadgenError, LoadgenResult};
use crate::study::ScalingRow;
use crate::summary::CampaignSummary;

fn create(path: &Path) -> LoadgenResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| LoadgenError::io(format!("creating {}", dir.display()), e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| LoadgenError::io(format!("creating {}", path.display()), e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> LoadgenResult<()> {
    w.flush().map_err(|e| LoadgenError::io(format!("writing {}", path.display()), e))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> LoadgenError + '_ {
    move |e| LoadgenError::io(format!("writing {}", path.display()), e)
}

/// One JSON object per record.
pub fn write_records_jsonl(path: &Path, records: &[CampaignRecord]) -> LoadgenResult<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io_err(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    finish(w, path)
}

pub fn read_records_jsonl(path: &Path) -> LoadgenResult<Vec<CampaignRecord>> {
    let raw = std::fs::read_to_string(path).map_err(|e| LoadgenError::io(format!("reading {}", path.display()), e))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LoadgenError::Config(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> LoadgenResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path)(e.into()))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    finish(w, path)
}

pub fn write_histogram_csv(path: &Path, summary: &CampaignSummary) -> LoadgenResult<()> {
    let mut w = create(path)?;
    writeln!(w, "lower_us,upper_us,count").map_err(io_err(path))?;
    let mut lower = 0;
    for b in &summary.response_time_histogram {
        let upper = b.upper_us.map(|u| u.to_string()).unwrap_or_else(|| "inf".into());
        writeln!(w, "{lower},{upper},{}", b.count).map_err(io_err(path))?;
        lower = b.upper_us.unwrap_or(lower);
    }
    finish(w, path)
}

pub fn write_per_second_csv(path: &Path, summary: &CampaignSummary) -> LoadgenResult<()> {
    let mut w = create(path)?;
    writeln!(w, "second,response_frequency_hz").map_err(io_err(path))?;
    for b in &summary.per_second_response_frequency {
        writeln!(w, "{},{}", b.second, b.response_frequency_hz).map_err(io_err(path))?;
    }
    finish(w, path)
}

pub fn write_scaling_csv(path: &Path, rows: &[ScalingRow]) -> LoadgenResult<()> {
    let mut w = create(path)?;
    writeln!(
        w,
        "scenario,n_types,iovs_per_type,total_rows,seed,strategy,repetitions,mean_response_frequency_hz,rel_spread,mean_response_time_ms,errors"
    )
    .map_err(io_err(path))?;
    for r in rows {
        let s = &r.scenario;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{:.3},{:.4},{:.3},{}",
            s.name,
            s.n_types,
            s.iovs_per_type,
            s.total_rows(),
            s.seed,
            r.strategy,
            r.repetitions,
            r.mean_response_frequency_hz,
            r.rel_spread,
            r.mean_response_time_ms,
            r.errors
        )
        .map_err(io_err(path))?;
    }
    finish(w, path)
}
