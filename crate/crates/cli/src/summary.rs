//! Per-arm final-return statistics.

use std::fmt::Write as _;

use relodkit::MetricRecord;

/// One finished run as read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RunData {
    pub seed: u64,
    pub records: Vec<MetricRecord>,
    /// From the stats sidecar, when there is one.
    pub mean_staleness: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmSummary {
    pub arm: String,
    pub runs: usize,
    pub final_mean: f64,
    pub final_se: f64,
    pub ratio_to_best: f64,
    pub missed_rate: f64,
    pub staleness: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub arms: Vec<ArmSummary>,
    /// Episodes compared per run when run lengths differed.
    pub common_prefix: Option<usize>,
    pub warnings: Vec<String>,
}

/// Mean return over the last 10% of episodes (at least one).
pub fn final_return(records: &[MetricRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let n = records.len().div_ceil(10);
    Some(records[records.len() - n..].iter().map(|r| r.episodic_return).sum::<f64>() / n as f64)
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn missed_rate(records: &[MetricRecord]) -> f64 {
    let steps: u64 = records.iter().map(|r| r.episode_length_steps).sum();
    let missed: u64 = records.iter().map(|r| r.missed_deadlines).sum();
    if steps == 0 {
        0.0
    } else {
        missed as f64 / steps as f64
    }
}

/// Arms keep the order given. Runs without a single finished episode are
/// left out; if the rest differ in length, all are cut to the shortest.
pub fn summarize(arms: &[(String, Vec<RunData>)]) -> Summary {
    let mut summary = Summary::default();
    let lengths: Vec<usize> = arms.iter().flat_map(|(_, runs)| runs.iter().map(|r| r.records.len())).filter(|&n| n > 0).collect();
    let shortest = lengths.iter().copied().min().unwrap_or(0);
    if lengths.iter().any(|&n| n != shortest) {
        summary.common_prefix = Some(shortest);
        summary.warnings.push(format!(
            "runs differ in length ({} to {} episodes); comparing the first {shortest}",
            shortest,
            lengths.iter().max().unwrap_or(&0)
        ));
    }
    for (arm, runs) in arms {
        let mut finals = Vec::new();
        let mut missed = Vec::new();
        let mut stale = Vec::new();
        for r in runs {
            if r.records.is_empty() {
                summary.warnings.push(format!("{arm} seed {}: no finished episodes, skipped", r.seed));
                continue;
            }
            let recs = &r.records[..shortest];
            finals.extend(final_return(recs));
            missed.push(missed_rate(recs));
            stale.extend(r.mean_staleness);
        }
        if finals.is_empty() {
            summary.warnings.push(format!("{arm}: no usable runs"));
            continue;
        }
        let (final_mean, final_se) = mean_se(&finals);
        summary.arms.push(ArmSummary {
            arm: arm.clone(),
            runs: finals.len(),
            final_mean,
            final_se,
            ratio_to_best: f64::NAN,
            missed_rate: mean_se(&missed).0,
            staleness: (stale.len() == finals.len()).then(|| mean_se(&stale).0),
        });
    }
    let best = summary.arms.iter().map(|a| a.final_mean).fold(f64::NEG_INFINITY, f64::max);
    for a in &mut summary.arms {
        a.ratio_to_best = a.final_mean / best;
    }
    summary
}

impl Summary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>4} {:>14} {:>10} {:>7} {:>11} {:>10}", "arm", "runs", "final_return", "stderr", "ratio", "missed_rate", "staleness");
        for a in &self.arms {
            let stale = a.staleness.map_or("-".to_string(), |v| format!("{v:.2}"));
            let _ = writeln!(
                s,
                "{:<20} {:>4} {:>14.1} {:>10.1} {:>7.3} {:>11.4} {:>10}",
                a.arm, a.runs, a.final_mean, a.final_se, a.ratio_to_best, a.missed_rate, stale
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("arm,runs,final_return_mean,final_return_se,ratio_to_best,missed_rate,mean_staleness\n");
        for a in &self.arms {
            let stale = a.staleness.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(s, "{},{},{},{},{},{},{}", a.arm, a.runs, a.final_mean, a.final_se, a.ratio_to_best, a.missed_rate, stale);
        }
        s
    }
}
