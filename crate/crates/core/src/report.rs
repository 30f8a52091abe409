//! CSV and `key=value` output.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sim::{run, GatewayKind, SimConfig, SimStats};

pub const CSV_HEADER: &str = "step,arrivals,drops,overflow_drops,queue_len,avg";

/// One row per step. Floats use Rust's shortest round-trip formatting.
pub fn write_step_csv_to<W: Write>(stats: &SimStats, out: W) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{CSV_HEADER}")?;
    for r in &stats.records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.arrivals, r.drops, r.overflow_drops, r.queue_len_end, r.avg_end
        )?;
    }
    out.flush()
}

pub fn write_step_csv(stats: &SimStats, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_step_csv_to(stats, file).map_err(|e| Error::io(path, e))
}

/// Summary lines for a single run.
pub fn summary_lines(label: &str, stats: &SimStats) -> Vec<String> {
    let prefix = if label.is_empty() {
        String::new()
    } else {
        format!("{label}_")
    };
    vec![
        format!("{prefix}gateway={}", stats.gateway),
        format!("{prefix}seed={}", stats.seed),
        format!("{prefix}steps={}", stats.records.len()),
        format!("{prefix}total_traffic={}", stats.total_traffic),
        format!("{prefix}total_drops={}", stats.total_drops),
        format!("{prefix}overflow_drops={}", stats.overflow_drops),
        format!("{prefix}utilisation={}", stats.utilisation),
    ]
}

/// RED and mRED on one traffic schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub seed: u64,
    pub red: SimStats,
    pub mred: SimStats,
}

impl Comparison {
    /// mRED utilisation minus RED utilisation.
    pub fn utilisation_difference(&self) -> f64 {
        self.mred.utilisation - self.red.utilisation
    }

    pub fn summary_lines(&self) -> Vec<String> {
        let mut lines = vec![format!("seed={}", self.seed), "labels=red,mred".to_string()];
        lines.extend(summary_lines("red", &self.red));
        lines.extend(summary_lines("mred", &self.mred));
        lines.push(format!(
            "utilisation_difference={}",
            self.utilisation_difference()
        ));
        lines
    }
}

/// Runs both gateways concurrently with the same seed.
pub fn compare_runs(config: &SimConfig, seed: u64) -> Result<Comparison> {
    let with = |gateway| SimConfig {
        gateway,
        seed,
        ..config.clone()
    };
    let red_config = with(GatewayKind::Red);
    let mred_config = with(GatewayKind::Mred);
    red_config.validate()?;
    mred_config.validate()?;

    let (red, mred) = std::thread::scope(|s| {
        let red = s.spawn(|| run(&red_config));
        let mred = run(&mred_config);
        (red.join().expect("red run panicked"), mred)
    });
    Ok(Comparison {
        seed,
        red: red?,
        mred: mred?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    #[test]
    fn csv_shape() {
        let config = SimConfig {
            steps: 25,
            service_rate: 100,
            ..SimConfig::default()
        };
        let stats = run(&config).unwrap();
        let mut buf = Vec::new();
        write_step_csv_to(&stats, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with('\n'));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 26);
        assert!(lines[1..].iter().all(|l| l.split(',').nth(2) == Some("0")));
    }

    #[test]
    fn write_error_names_path() {
        let stats = run(&SimConfig {
            steps: 1,
            ..SimConfig::default()
        })
        .unwrap();
        let err = write_step_csv(&stats, "/nonexistent-dir/out.csv").unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/out.csv"));
    }

    #[test]
    fn uncongested_comparison() {
        let config = SimConfig {
            steps: 500,
            service_rate: 18,
            ..preset("network1").unwrap()
        };
        let cmp = compare_runs(&config, 3).unwrap();
        assert_eq!(cmp.red.utilisation, 1.0);
        assert_eq!(cmp.mred.utilisation, 1.0);
        assert_eq!(cmp.utilisation_difference(), 0.0);
        let lines = cmp.summary_lines();
        assert!(lines.contains(&"seed=3".to_string()));
        assert!(lines.contains(&"red_gateway=red".to_string()));
        assert!(lines.contains(&"mred_gateway=mred".to_string()));
    }
}
