//! Static SVG learning curves: one thin line per seed and one wide mean
//! line per arm, return against experience time.

use std::fmt::Write as _;

use crate::summary::RunData;

const W: f64 = 800.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const GRID_POINTS: usize = 200;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Trailing moving average; early points average what exists so far.
pub fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        sum += xs[i];
        if i >= window {
            sum -= xs[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// (cumulative experience time at episode end, smoothed return).
pub fn curve(run: &RunData, window: usize) -> Vec<(f64, f64)> {
    let rets: Vec<f64> = run.records.iter().map(|r| r.episodic_return).collect();
    let mut t = 0.0;
    run.records
        .iter()
        .zip(smooth(&rets, window))
        .map(|(r, y)| {
            t += r.real_experience_time_s;
            (t, y)
        })
        .collect()
}

/// Mean over curves on a common grid; each curve holds its latest value
/// and contributes only once it has started.
fn mean_curve(curves: &[Vec<(f64, f64)>], x_max: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 0..=GRID_POINTS {
        let x = x_max * i as f64 / GRID_POINTS as f64;
        let ys: Vec<f64> = curves
            .iter()
            .filter_map(|c| {
                let k = c.partition_point(|p| p.0 <= x);
                (k > 0).then(|| c[k - 1].1)
            })
            .collect();
        if !ys.is_empty() {
            out.push((x, ys.iter().sum::<f64>() / ys.len() as f64));
        }
    }
    out
}

struct Frame {
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (W - LEFT - RIGHT) * if self.x_max > 0.0 { x / self.x_max } else { 0.0 }
    }

    fn py(&self, y: f64) -> f64 {
        TOP + (H - TOP - BOTTOM) * (1.0 - (y - self.y_min) / (self.y_max - self.y_min))
    }

    fn path(&self, pts: &[(f64, f64)]) -> String {
        let mut d = String::new();
        for (i, &(x, y)) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, self.px(x), self.py(y));
        }
        // A lone point still leaves a visible mark.
        if pts.len() == 1 {
            let _ = write!(d, " h0.01");
        }
        d
    }
}

/// Renders `arms` (name, runs) over `[0, x_max]` seconds. Arms without any
/// episodes are left out and reported in the returned warnings.
pub fn render(title: &str, arms: &[(String, Vec<RunData>)], x_max: f64, window: usize) -> (String, Vec<String>) {
    let mut warnings = Vec::new();
    let mut drawn = Vec::new();
    for (name, runs) in arms {
        let curves: Vec<Vec<(f64, f64)>> = runs.iter().map(|r| curve(r, window)).filter(|c| !c.is_empty()).collect();
        if curves.is_empty() {
            warnings.push(format!("{name}: no episodes, not plotted"));
            continue;
        }
        let mean = mean_curve(&curves, x_max);
        drawn.push((name.as_str(), curves, mean));
    }
    let ys = drawn.iter().flat_map(|(_, c, _)| c.iter().flatten().map(|p| p.1));
    let (mut lo, mut hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        (lo, hi) = (lo - 1.0, hi + 1.0);
    }
    let f = Frame { x_max, y_min: lo, y_max: hi };

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{LEFT}" y="14">{}</text>"#, escape(title));
    let (x0, x1, y0, y1) = (f.px(0.0), f.px(x_max), f.py(lo), f.py(hi));
    let _ = writeln!(s, r#"<g class="axes" stroke="black" fill="none"><line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}"/><line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}"/></g>"#);
    for i in 0..=4 {
        let xv = x_max * i as f64 / 4.0;
        let yv = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, f.px(xv), y0 + 18.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, f.py(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">experience time (s)</text>"#, (x0 + x1) / 2.0, H - 8.0);
    let _ = writeln!(s, r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">return</text>"#, (y0 + y1) / 2.0, (y0 + y1) / 2.0);

    for (i, (name, curves, mean)) in drawn.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let _ = writeln!(s, r#"<g class="arm" data-arm="{}">"#, escape(name));
        for cv in curves {
            let _ = writeln!(s, r#"<path class="seed" d="{}" stroke="{c}" stroke-width="0.8" stroke-opacity="0.45" fill="none"/>"#, f.path(cv));
        }
        let _ = writeln!(s, r#"<path class="mean" d="{}" stroke="{c}" stroke-width="3" fill="none"/>"#, f.path(mean));
        let ly = TOP + 16.0 + 18.0 * i as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="3"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(name));
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    (s, warnings)
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use relodkit::MetricRecord;

    fn run(rets: &[f64]) -> RunData {
        let records = rets
            .iter()
            .enumerate()
            .map(|(i, &r)| MetricRecord {
                run_id: "t".into(),
                seed: 0,
                mode: "local_only".into(),
                algorithm: "sac".into(),
                episode_index: i as u64,
                episodic_return: r,
                episode_length_steps: 100,
                real_experience_time_s: 4.0,
                missed_deadlines: 0,
                policy_version_at_episode_start: 0,
            })
            .collect();
        RunData { seed: 0, records, mean_staleness: None }
    }

    #[test]
    fn smoothing_is_trailing() {
        assert_eq!(smooth(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        assert_eq!(smooth(&[2.0; 5], 20), vec![2.0; 5]);
    }

    #[test]
    fn curves_advance_by_episode_time() {
        let c = curve(&run(&[1.0, 2.0, 3.0]), 1);
        assert_eq!(c, vec![(4.0, 1.0), (8.0, 2.0), (12.0, 3.0)]);
    }

    #[test]
    fn path_counts_per_arm() {
        let runs: Vec<RunData> = (0..5).map(|i| run(&[i as f64, 2.0, 3.0])).collect();
        let (svg, w) = render("t", &[("a".into(), runs.clone()), ("b".into(), runs)], 12.0, 20);
        assert!(w.is_empty());
        assert_eq!(svg.matches(r#"class="seed""#).count(), 10);
        assert_eq!(svg.matches(r#"class="mean""#).count(), 2);
    }

    #[test]
    fn single_point_and_empty_arms() {
        let (svg, w) = render("t", &[("one".into(), vec![run(&[5.0])]), ("none".into(), vec![run(&[])])], 4.0, 20);
        assert_eq!(w.len(), 1);
        assert_eq!(svg.matches(r#"class="seed""#).count(), 1);
        assert!(svg.contains("h0.01"));
    }

    #[test]
    fn x_axis_spans_the_full_budget() {
        let (svg, _) = render("t", &[("a".into(), vec![run(&[1.0, 2.0])])], 40.0, 20);
        // Axis line runs from the left margin to the right edge of the plot area.
        let expect = format!(r#"x1="{LEFT:.2}" y1="{:.2}" x2="{:.2}""#, H - BOTTOM, W - RIGHT);
        assert!(svg.contains(&expect), "{svg}");
        assert!(svg.contains(">40</text>"));
    }
}
