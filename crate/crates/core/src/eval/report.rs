//! Report rendering: CSV, a plain-text table, improvement scores,
//! per-variant statistics and an SVG bar chart.

use std::fmt::Write as _;

use super::metrics::{improvement_scores, welch_t_test};
use super::{EvalReport, Metric, Row};

fn cell(v: Option<&f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// One line per (group, subject) plus an `all` line; every metric column is
/// followed by its noise-input counterpart.
pub fn report_csv(report: &EvalReport) -> String {
    let mut s = String::from("group,subject,n,padded_texts");
    for m in Metric::ALL {
        let _ = write!(s, ",{k},{k}_nin", k = m.key());
    }
    s.push('\n');
    for row in report.rows.iter().chain(std::iter::once(&report.overall)) {
        let _ = write!(s, "{},{},{},{}", row.group, row.subject, row.n, row.padded_texts);
        for m in Metric::ALL {
            let _ = write!(s, ",{},{}", cell(row.eeg.get(&m)), cell(row.noise.get(&m)));
        }
        s.push('\n');
    }
    s
}

fn present(report: &EvalReport) -> Vec<Metric> {
    Metric::ALL
        .into_iter()
        .filter(|m| report.overall.eeg.contains_key(m) || report.overall.noise.contains_key(m))
        .collect()
}

/// Human-readable table, `score (noise score)` per cell.
pub fn table(report: &EvalReport) -> String {
    let metrics = present(report);
    let mut s = format!("{:<6} {:<12} {:>4}", "group", "subject", "n");
    for m in &metrics {
        let _ = write!(s, " {:>17}", m.label());
    }
    s.push('\n');
    let fmt_row = |s: &mut String, row: &Row| {
        let _ = write!(s, "{:<6} {:<12} {:>4}", row.group, row.subject, row.n);
        for m in &metrics {
            let v = match (row.eeg.get(m), row.noise.get(m)) {
                (Some(a), Some(b)) => format!("{a:.4} ({b:.4})"),
                (Some(a), None) => format!("{a:.4}"),
                (None, Some(b)) => format!("- ({b:.4})"),
                (None, None) => "-".into(),
            };
            let _ = write!(s, " {v:>17}");
        }
        s.push('\n');
    };
    for row in &report.rows {
        fmt_row(&mut s, row);
    }
    fmt_row(&mut s, &report.overall);
    s
}

/// Absolute and relative improvement over noise inputs for the overall row.
pub fn improvements_csv(report: &EvalReport) -> String {
    let mut s = String::from("metric,score,score_nin,absolute,relative\n");
    for m in Metric::ALL {
        if let (Some(&a), Some(&b)) = (report.overall.eeg.get(&m), report.overall.noise.get(&m)) {
            let (abs, rel) = improvement_scores(a, b);
            let rel = rel.map(|r| format!("{r:.4}")).unwrap_or_default();
            let _ = writeln!(s, "{},{a:.4},{b:.4},{abs:.4},{rel}", m.key());
        }
    }
    s
}

/// Per-variant-type BLEU-1 with Welch's test of EEG against noise inputs.
pub fn variants_csv(report: &EvalReport) -> String {
    let mut s = String::from("variant,n,bleu1,bleu1_nin,absolute,t,p\n");
    for v in &report.variants {
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len().max(1) as f64;
        let (a, b) = (mean(&v.eeg), mean(&v.noise));
        let (t, p) = match welch_t_test(&v.eeg, &v.noise) {
            Ok((t, p)) => (format!("{t:.4}"), format!("{p:.4e}")),
            Err(_) => (String::new(), String::new()),
        };
        let _ = writeln!(s, "{},{},{a:.4},{b:.4},{:.4},{t},{p}", v.tag.name(), v.eeg.len(), a - b);
    }
    s
}

/// Generated text per sample, EEG then noise input.
pub fn generations_txt(report: &EvalReport) -> String {
    let mut s = String::new();
    for e in &report.samples {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            e.id,
            e.group,
            e.subject,
            e.generation.as_deref().unwrap_or(""),
            e.noise_generation.as_deref().unwrap_or("")
        );
    }
    s
}

/// Paired bars of every overall metric under EEG and noise inputs.
pub fn svg_bars(report: &EvalReport) -> String {
    let metrics = present(report);
    let (bar, gap, h, top) = (14.0, 18.0, 200.0, 20.0);
    let width = 60.0 + metrics.len() as f64 * (2.0 * bar + gap);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{:.0}\" font-family=\"sans-serif\" font-size=\"9\">\n",
        h + top + 90.0
    );
    let _ = writeln!(s, "<line x1=\"50\" y1=\"{y}\" x2=\"{width:.0}\" y2=\"{y}\" stroke=\"black\"/>", y = top + h);
    for (i, m) in metrics.iter().enumerate() {
        let x0 = 55.0 + i as f64 * (2.0 * bar + gap);
        for (j, (v, color)) in [(report.overall.eeg.get(m), "#3a6ea5"), (report.overall.noise.get(m), "#c8c8c8")]
            .into_iter()
            .enumerate()
        {
            if let Some(&v) = v {
                let bh = v.clamp(0.0, 1.0) * h;
                let _ = writeln!(
                    s,
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bar}\" height=\"{bh:.1}\" fill=\"{color}\"><title>{} {:.4}</title></rect>",
                    x0 + j as f64 * bar,
                    top + h - bh,
                    m.key(),
                    v
                );
            }
        }
        let _ = writeln!(
            s,
            "<text transform=\"translate({:.1},{:.1}) rotate(60)\">{}</text>",
            x0 + bar / 2.0,
            top + h + 10.0,
            m.label()
        );
    }
    let _ = writeln!(s, "<text x=\"50\" y=\"12\">EEG (blue) vs noise input (grey)</text>\n</svg>");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{Scores, VariantScores};
    use crate::mtv::VariantType;

    fn row(g: &str, v: f64) -> Row {
        let mut eeg = Scores::new();
        let mut noise = Scores::new();
        eeg.insert(Metric::RetrievalAcc1, v);
        noise.insert(Metric::RetrievalAcc1, 0.1449);
        Row {
            group: g.into(),
            subject: "s".into(),
            n: 3,
            padded_texts: 0,
            eeg,
            noise,
        }
    }

    fn report() -> EvalReport {
        EvalReport {
            rows: vec![row("I", 0.3245)],
            overall: row("all", 0.3245),
            samples: vec![],
            variants: vec![VariantScores {
                tag: VariantType::Gr,
                eeg: vec![0.5, 0.6, 0.7],
                noise: vec![0.1, 0.2, 0.1],
            }],
        }
    }

    #[test]
    fn csv_pairs_every_metric_with_its_noise_column() {
        let csv = report_csv(&report());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        let header: Vec<&str> = lines[0].split(',').collect();
        assert_eq!(header.len(), 4 + 2 * Metric::ALL.len());
        for m in Metric::ALL {
            let i = header.iter().position(|h| *h == m.key()).unwrap();
            assert_eq!(header[i + 1], format!("{}_nin", m.key()));
        }
        assert!(lines[2].starts_with("all,s,3,0"));
    }

    #[test]
    fn improvements_and_variants_render() {
        let imp = improvements_csv(&report());
        assert!(imp.contains("retrieval_acc1,0.3245,0.1449,0.1796,1.2395"));
        let var = variants_csv(&report());
        assert!(var.lines().nth(1).unwrap().starts_with("GR,3,0.6000,0.1333,0.4667,"));
        assert!(svg_bars(&report()).starts_with("<svg"));
        assert!(table(&report()).contains("0.3245 (0.1449)"));
    }
}
